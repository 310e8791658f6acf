"""Hyper-reduced Galerkin reduced-order models for nonlinear finite element problems.

Interpolation (oversampled DEIM, GappyPOD+E, S-OPT) and empirical quadrature
hyper-reduction on two desk-scale benchmarks, with a file-based
offline/merge/online/report pipeline.
"""

from .eqp import SparseQuadratureRule, build_rule, evaluate_sparse
from .interpolation import build_projector, deim_oversampled, gappypod_e, sample, sopt
from .pod import ReducedBasis, SnapshotMatrix, assemble_snapshots, pod_basis
from .rom import (ReducedModel, TimeWindowSchedule, project_operators, reduced_force,
                  relative_l2_error, solve_backward_euler, solve_rk4, solve_windowed)

__version__ = "0.1.0"
