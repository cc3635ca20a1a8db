"""Oblivious multi-level sketches for logistic and l1 regression."""

from .baselines import SGDParams, cauchy_sketch, sgd_one_pass, uniform_sample
from .complexity import MuEstimate, estimate_mu, lower_bound_mu, mu_ratio
from .data_io import Dataset, augment_l1, fold_labels, gen_l1_exact, gen_lower_bound, gen_synthetic_heavy, load, write
from .errors import (
    ConfigError,
    DataError,
    IncompatibleSketchError,
    NoCompressionError,
    ObsketchError,
    ParseError,
    SketchFormatError,
    UndefinedRatioError,
)
from .objectives import ObjectiveSpec, f_full, grad_f, logit_loss
from .sketch import (
    SketchConfig,
    SketchState,
    deserialize,
    init,
    merge,
    plan_budget,
    plan_theory,
    serialize,
    sketch_matrix,
    sketching_matrix,
    update,
)
from .solvers import FitResult, SolverOptions, approx_ratio, solve_l1, solve_logistic

__version__ = "0.1.0"
