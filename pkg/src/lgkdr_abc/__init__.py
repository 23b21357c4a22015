"""Likelihood-free (simulation-based) Bayesian inference with locally
weighted kernel dimension reduction of summary statistics.

The pieces compose bottom-up:

* :mod:`lgkdr_abc.linalg` — Gaussian kernels, Gram matrices, factorizations;
* :mod:`lgkdr_abc.gkdr` — the gradient-based projection estimator and its
  observation-local weighting;
* :mod:`lgkdr_abc.summaries` — summary-statistic constructors (identity,
  linear posterior mean, projection-based, per-parameter composite);
* :mod:`lgkdr_abc.models` — bundled simulators (queueing, population
  dynamics, Gaussian toy) and their priors;
* :mod:`lgkdr_abc.samplers` — rejection and sequential ABC;
* :mod:`lgkdr_abc.crossval` — kernel-parameter selection;
* :mod:`lgkdr_abc.harness` / :mod:`lgkdr_abc.config` — configured
  experiments with deterministic, verifiable artifacts;
* :mod:`lgkdr_abc.cli` — the ``lgkdr-abc`` command.
"""

from .config import CvSettings, ExperimentConfig, KernelChoice, SmcSettings, load_config
from .crossval import CvGrid, CvReport, cv_select, knn_regress, median_heuristic
from .errors import ConfigError, DegeneracyError, NumericalError
from .gkdr import (
    GkdrConfig,
    GkdrSolver,
    ProjectionMatrix,
    WeightedTrainingSet,
    choose_dimension,
    compute_weights,
    estimate_projection,
    estimate_projection_separated,
    load_projection,
    local_gradient_matrix,
    project,
    save_projection,
    triweight,
)
from .harness import (
    build_pool,
    build_training_set,
    compare_report,
    draw_observations,
    evaluate,
    pool_digest,
    run_experiment,
)
from .linalg import (
    KernelParams,
    SpdFactor,
    Standardizer,
    SymmetricMatrix,
    gaussian_kernel,
    gram_matrix,
    kernel_gradient,
    pairwise_sq_dists,
    regularized_factor,
    sym_eig_top_d,
)
from .models import (
    GaussianToyModel,
    Mg1Model,
    Model,
    RickerModel,
    gaussian_toy_posterior,
    make_model,
    poisson_draw,
    ricker_features,
)
from .samplers import (
    RejectionResult,
    SimulationPool,
    SmcState,
    distance,
    ess,
    rejection_abc,
    smc_abc,
    systematic_indices,
    systematic_resample,
)
from .seeding import derive_seed, stream
from .summaries import (
    IdentityConstructor,
    LgkdrConstructor,
    LinearPosteriorMeanConstructor,
    SeparatedConstructor,
    SummaryConstructor,
    TrainingSet,
    fit_identity,
    fit_lgkdr,
    fit_lgkdr_many,
    fit_linear_posterior_mean,
    fit_separated,
    load_constructor,
    save_constructor,
)

__version__ = "0.1.0"
