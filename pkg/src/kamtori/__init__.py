"""kamtori: a numerical KAM iteration engine on sparse Fourier-Taylor
series, with certified Diophantine frequencies, quantitative per-step
margins, invariant-torus reconstruction, and torus-distance scaling
experiments."""

__version__ = "1.0.0"

from .diophantine import (FrequencyVector, certified_frequency, certify,
                          max_alpha, quadratic_irrational_frequency,
                          small_divisor)
from .errors import (CertificationError, DimensionMismatchError,
                     DivergenceError, DomainError, GridTooSmallError,
                     KamError, NewtonError, ParameterDomainError,
                     ResonanceError, ScheduleInfeasibleError,
                     StepInfeasibleError)
from .series import (CoefficientJet, DomainParams, FourierTaylorSeries,
                     lie_transform, poisson_bracket)
from .step import (KamTransform, NormalForm, StepParams, StepReport,
                   frequency_correction, kam_step, kam_step_q,
                   russmann_truncate, solve_homological)
from .scheduler import (ConvergenceReport, IterationSchedule, TorusResult,
                        build_schedule, compose_embedding,
                        conservative_eta, embedding_by_lie_series, run_iteration,
                        verify_invariance)
from .application import (IntegrableSystem, choose_radius, parameterize,
                          run_case, scaling_experiment, torus_distance)

__all__ = [
    "CertificationError", "CoefficientJet", "ConvergenceReport",
    "DimensionMismatchError", "DivergenceError", "DomainError",
    "DomainParams", "FourierTaylorSeries", "FrequencyVector",
    "GridTooSmallError", "IntegrableSystem", "IterationSchedule",
    "KamError", "KamTransform", "NewtonError", "NormalForm",
    "ParameterDomainError", "ResonanceError", "ScheduleInfeasibleError",
    "StepInfeasibleError", "StepParams", "StepReport", "TorusResult",
    "build_schedule", "certified_frequency", "certify", "choose_radius",
    "compose_embedding", "embedding_by_lie_series", "frequency_correction",
    "kam_step", "kam_step_q", "conservative_eta", "lie_transform", "max_alpha",
    "parameterize", "poisson_bracket", "quadratic_irrational_frequency",
    "run_case", "run_iteration", "russmann_truncate", "scaling_experiment",
    "small_divisor", "solve_homological", "torus_distance",
    "verify_invariance",
]
