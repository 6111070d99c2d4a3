"""dg-bench: measuring distributional generalization of interpolating classifiers.

The toolkit bundles

* sampleable and exactly enumerable data sources (:mod:`dg_bench.distributions`),
* label-noise channels (:mod:`dg_bench.noise`),
* from-scratch interpolating learners (:mod:`dg_bench.classifiers`),
* feature-calibration / agreement metrics (:mod:`dg_bench.metrics`),
* exact 1-NN enumeration oracles (:mod:`dg_bench.nn_oracle`),
* an experiment runner with a ``dg-bench`` command line (:mod:`dg_bench.experiments`).
"""

__version__ = "0.1.0"

from dg_bench.errors import (  # noqa: F401
    ConfigError,
    CsvFormatError,
    DGBenchError,
    EnumerationBudgetError,
    SingularSystemError,
    TheoremViolation,
)
