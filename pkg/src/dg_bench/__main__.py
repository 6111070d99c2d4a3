from dg_bench.experiments.cli import main

raise SystemExit(main())
