"""Numerical laboratory for elliptic equations degenerating on a hypersurface.

Model problem: ``omega(x) F(D^2 u, x) = f`` with ``omega = dist(x, Gamma)**a``.
"""

from .errors import (ConfigError, InconsistentRowError, PreconditionError,
                     SamplingError, StencilError)
from .lattice import (Field, Grid, WeightSpec, build_grid, eval_weight,
                      read_field_csv, sample_field, write_field_csv)
from .operators import (EllipticityPair, OperatorSpec, PowerCoefficient,
                        StencilSet, pucci, rescale_operator, weighted_residual)
from .solver import (DirichletProblem, SolveReport, extremal_membership,
                     nonuniqueness_demo, regularization_ladder, solve_dirichlet)
from .envelopes import (EnvelopeParams, convex_envelope, envelope_audit,
                        eps_envelope)
from .estimates import (abp_estimate, build_barrier, harnack_ratio_probe,
                        measure_estimate_check, verify_barrier)
from .regularity import (best_affine_fit, exponent_estimate, exponent_map,
                         iteration_audit)

__all__ = [
    "ConfigError", "InconsistentRowError", "PreconditionError", "SamplingError",
    "StencilError", "Field", "Grid", "WeightSpec", "build_grid", "eval_weight",
    "read_field_csv", "sample_field", "write_field_csv", "EllipticityPair", "OperatorSpec",
    "PowerCoefficient", "StencilSet", "pucci", "rescale_operator", "weighted_residual",
    "DirichletProblem", "SolveReport", "extremal_membership", "nonuniqueness_demo",
    "regularization_ladder", "solve_dirichlet", "EnvelopeParams", "convex_envelope",
    "envelope_audit", "eps_envelope", "abp_estimate", "build_barrier",
    "harnack_ratio_probe", "measure_estimate_check", "verify_barrier", "best_affine_fit",
    "exponent_estimate", "exponent_map", "iteration_audit",
]

__version__ = "0.1.0"
