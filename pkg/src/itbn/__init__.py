"""Irregular-time Bayesian networks."""

from .infer import (
    FilterSession,
    GaussianBelief,
    exact_joint,
    filtered_beliefs,
    likelihood_weighting,
    predict,
    sample_paths,
    smooth,
)
from .learn import FitResult, fit_fully_observed, log_likelihood, search_offsets, select_knot_count
from .model import (
    EdgeDecl,
    GaussianInitial,
    BernoulliInitial,
    GaussianLinearCpd,
    BernoulliLogitCpd,
    ItbnStructure,
    ProcessDecl,
    ProcessParams,
    ProcessSpec,
    SplineConfig,
    unroll,
    validate,
)
from .observations import EntityData, ObservationSet
from .splines import SplineSpec
from .timefind import Exact, FreeSlice, MonteCarlo, TimeQuery, find_time, find_time_quantile
from .timegrid import Timeline, compression_ratio, discrete_expansion_size, gaps

__version__ = "0.1.0"
