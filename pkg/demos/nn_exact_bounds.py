"""Exact enumeration of 1-NN on a small finite domain.

Prints the calibration gap next to its bound eps + delta, and the
accuracy/agreement gap next to the coupling delta, for growing n.
"""
from dg_bench import nn_oracle as oracle

src, L = oracle.random_instance(2024, n_atoms=5, K=3)
print(" n    tv     eps+delta   |acc-agr|  coupling")
for n in range(1, 7):
    fc = oracle.exact_feature_calibration_tv(src, n, L)
    ag = oracle.exact_agreement_vs_accuracy(src, n)
    print(f"{n:2d}  {fc.tv:.4f}   {fc.eps + fc.delta:.4f}     {ag.gap:.4f}     {ag.delta:.4f}")
