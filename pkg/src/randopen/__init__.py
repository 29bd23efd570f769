"""Simulation and verification toolkit for random open interval maps."""

from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateSystemError,
    HorizonError,
    MissingArtifactError,
    PreconditionError,
    RandOpenError,
    SamplingError,
    UnsupportedSystemError,
)
from .system import (
    BranchMap,
    CylinderSet,
    Environment,
    HoleSpec,
    OpenSystem,
    Realization,
    orbit,
    preset,
    step,
    surviving_cylinders,
    survives,
)

__version__ = "0.1.0"
from .transfer import GridFunction, OperatorCache, OperatorMatrix, ulam_closed, ulam_open
from .spectral import (
    ConditionReport,
    conformal_measure,
    equivariant_density,
    escape_rate,
    lasota_yorke_check,
    q_decay,
    spectral_triple,
    verify_conditions,
)
from .observables import Observable, PiecewiseAffine, parse_observable
from .measures import ConditionalMeasure, ConditionalSample, RandomDensity, eta, sample_conditional
from .limits import (
    CenteredArray,
    PathSample,
    VarianceProfile,
    centered_observables,
    dist_kolmogorov,
    dist_wasserstein,
    fcb_gap_estimate,
    normalized_sum,
    path_process,
    sigma_infinity,
    variance_profile,
)
from .bounds import (
    RateBoundInputs,
    RateFunction,
    functional_bound,
    kolmogorov_bound,
    kolmogorov_bound_geometric,
    rate_hats,
    wasserstein_bound,
)
