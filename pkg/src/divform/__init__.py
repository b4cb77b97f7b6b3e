"""Numerical conservativeness (non-explosion) checks for diffusions generated
by perturbed divergence forms, with Monte Carlo cross-checks.

The library covers: expression-backed coefficient fields with forward-mode
derivatives, the symmetric/antisymmetric coefficient split and the induced
drift, oblique reflection geometry in wedges and the 3-D upper half-space,
Lyapunov gauges with the Erfc martingale tail bound, the structural and drift
condition checks feeding an overall verdict, and an Euler-Maruyama simulator
with boundary pushback.  See the demos/ directory for worked examples and the
``divform`` command-line driver for scenario files.
"""

__version__ = "0.1.0"

from .coeff import (CoefficientMatrix, ConditionEvidence, DriftField, SingularSet,
                    check_divergence_free, check_ellipticity_bounds,
                    check_sectoriality, compute_beta, decompose)
from .criteria import (CriterionReport, assemble_verdict, check_boundary_S3,
                       check_growth_cons_b, check_S1, check_S2, estimate_poincare)
from .errors import (ConstructionError, DivformError, EvaluationError,
                     ExpressionSyntaxError, NumericalError, SamplingError,
                     ScenarioError)
from .expr import Expression, ScalarField, evaluate, parse, render
from .gauge import (LyapunovGauge, TailBoundCurve, erfc, estimate_sup_energy,
                    estimate_volume, make_custom_gauge, make_log_gauge,
                    make_sum_gauge, martingale_tail_bound)
from .geometry import (Domain, ReflectionData, build_halfspace_example,
                       build_wedge_example, full_space, halfspace_reflection,
                       make_wedge, oblique_pushback, upper_half_space,
                       wedge_reflection_angles)
from .sim import (DiffusionFactor, PathEnsemble, SimulationConfig, build_drift,
                  em_simulate, explosion_statistics, read_paths, write_paths)

__all__ = [name for name in dir() if not name.startswith("_")]
