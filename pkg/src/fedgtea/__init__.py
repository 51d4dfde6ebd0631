"""Desk-scale federated class-incremental learning simulator.

Clients train an AC-GAN plus a cardinality-agnostic task encoder on a
stream of disjoint class-incremental tasks; the server aggregates client
parameters, synthesizes a replay dataset from client generators, and
consolidates the aggregate under a distillation + Wasserstein + anchor
loss.  Everything runs in-process on a hand-rolled float64 autodiff core.
"""

__version__ = "0.1.0"
