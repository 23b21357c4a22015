"""Simulators, priors and initial summary statistics.

Three models are bundled:

* ``mg1`` — a single-server queue observed through inter-departure times.
  Service times are Uniform[theta1, theta2], inter-arrival times are
  Exponential with rate theta3, and the initial summaries are 20 evenly
  spaced quantiles of the departure gaps.
* ``ricker`` — the stochastic Ricker map observed through Poisson counts of
  the latent population, with three nested feature sets (13 / 28 / 426
  statistics).
* ``gauss-toy`` — Normal mean inference with known noise variance and a
  conjugate Normal prior; its exact posterior anchors sampler correctness
  tests.

Determinism contract: a model draws only from the generator handed to
``simulate``, in a pinned order, and Poisson sampling uses the pinned
algorithms below rather than numpy's, so identical (theta, seed) pairs give
bitwise-identical raw output on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "BoxPrior",
    "GaussianPrior",
    "GaussianToyModel",
    "Mg1Model",
    "Mg1Prior",
    "Model",
    "RickerModel",
    "gaussian_toy_posterior",
    "make_model",
    "mg1_recursion",
    "mg1_summaries",
    "poisson_draw",
    "ricker_features",
    "ricker_latent_path",
]

RICKER_FEATURE_DIMS = {"E0": 13, "E1": 28, "E2": 426}


# ---------------------------------------------------------------------------
# pinned Poisson sampler


def poisson_draw(rng: np.random.Generator, mean: float) -> int:
    """One Poisson draw using pinned algorithms.

    Sequential inversion below mean 10 and transformed rejection above; both
    consume nothing but uniforms from ``rng``. Library Poisson samplers are
    avoided on purpose: their internals may change between releases, which
    would silently break byte-level reproducibility of persisted pools.
    """
    mean = float(mean)
    if not np.isfinite(mean) or mean < 0.0:
        raise ValueError(f"Poisson mean must be finite and >= 0, got {mean!r}")
    if mean == 0.0:
        return 0
    if mean < 10.0:
        return _poisson_inversion(rng, mean)
    return _poisson_transformed_rejection(rng, mean)


def _poisson_inversion(rng: np.random.Generator, mean: float) -> int:
    p = math.exp(-mean)
    cum = p
    k = 0
    u = rng.random()
    while u > cum:
        k += 1
        p *= mean / k
        cum += p
    return k


def _poisson_transformed_rejection(rng: np.random.Generator, mean: float) -> int:
    # Hoermann's transformed rejection with squeeze, valid for mean >= 10.
    b = 0.931 + 2.53 * math.sqrt(mean)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_mean = math.log(mean)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        if us <= 0.0:
            continue
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
        rhs = k * log_mean - mean - math.lgamma(k + 1.0)
        if lhs <= rhs:
            return int(k)


# ---------------------------------------------------------------------------
# priors


class GaussianPrior:
    """Independent Normal(mean, var) coordinates."""

    def __init__(self, means, variances, names):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)
        self.names = list(names)
        if np.any(self.variances <= 0.0):
            raise ValueError("prior variances must be positive")
        self._sds = np.sqrt(self.variances)

    @property
    def dim(self) -> int:
        return self.means.shape[0]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.means + self._sds * rng.standard_normal(self.dim)

    def log_pdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        z = (theta - self.means) / self._sds
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(self._sds)) - 0.5 * self.dim * math.log(2 * math.pi))

    def interior(self, margin: float) -> "GaussianPrior":
        # Unbounded support: nothing to trim.
        return self


class BoxPrior:
    """Product of independent coordinates, each uniform either on its native
    scale or on the log scale (``kinds`` entries "uniform" / "log-uniform").
    Bounds are stated on the native scale in both cases."""

    def __init__(self, lows, highs, kinds, names):
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        self.kinds = list(kinds)
        self.names = list(names)
        if not (self.lows.shape == self.highs.shape and len(self.kinds) == self.lows.shape[0] == len(self.names)):
            raise ValueError("prior component lists must have equal lengths")
        if np.any(self.lows >= self.highs):
            raise ValueError("prior bounds must satisfy low < high")
        for kind, lo in zip(self.kinds, self.lows):
            if kind not in ("uniform", "log-uniform"):
                raise ValueError(f"unknown prior kind {kind!r}")
            if kind == "log-uniform" and lo <= 0.0:
                raise ValueError("log-uniform components need positive bounds")

    @property
    def dim(self) -> int:
        return self.lows.shape[0]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(self.dim)
        for i, kind in enumerate(self.kinds):
            if kind == "uniform":
                out[i] = rng.uniform(self.lows[i], self.highs[i])
            else:
                out[i] = math.exp(rng.uniform(math.log(self.lows[i]), math.log(self.highs[i])))
        return out

    def log_pdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        total = 0.0
        for i, kind in enumerate(self.kinds):
            x = theta[i]
            if not self.lows[i] <= x <= self.highs[i]:
                return -math.inf
            if kind == "uniform":
                total -= math.log(self.highs[i] - self.lows[i])
            else:
                total -= math.log(x) + math.log(math.log(self.highs[i]) - math.log(self.lows[i]))
        return total

    def interior(self, margin: float) -> "BoxPrior":
        """Same prior with each range shrunk by ``margin`` per side (on the
        log scale for log-uniform components); used to draw observed
        parameters away from support boundaries."""
        if not 0.0 <= margin < 0.5:
            raise ValueError(f"margin must be in [0, 0.5), got {margin}")
        lows = self.lows.copy()
        highs = self.highs.copy()
        for i, kind in enumerate(self.kinds):
            if kind == "uniform":
                width = highs[i] - lows[i]
                lows[i] += margin * width
                highs[i] -= margin * width
            else:
                llo, lhi = math.log(lows[i]), math.log(highs[i])
                width = lhi - llo
                lows[i] = math.exp(llo + margin * width)
                highs[i] = math.exp(lhi - margin * width)
        return BoxPrior(lows, highs, self.kinds, self.names)


class Mg1Prior:
    """Queue prior: theta1 ~ U[1, 10], theta2 - theta1 ~ U[1, 10] and
    theta3 ~ U[0, 1/3], expressed over (theta1, theta2, theta3)."""

    names = ["theta1", "theta2", "theta3"]

    def __init__(self, t1_range=(1.0, 10.0), gap_range=(1.0, 10.0), rate_range=(0.0, 1.0 / 3.0)):
        for lo, hi in (t1_range, gap_range, rate_range):
            if not lo < hi:
                raise ValueError("prior bounds must satisfy low < high")
        self.t1_range = (float(t1_range[0]), float(t1_range[1]))
        self.gap_range = (float(gap_range[0]), float(gap_range[1]))
        self.rate_range = (float(rate_range[0]), float(rate_range[1]))

    dim = 3

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        t1 = rng.uniform(*self.t1_range)
        gap = rng.uniform(*self.gap_range)
        rate = rng.uniform(*self.rate_range)
        return np.array([t1, t1 + gap, rate])

    def log_pdf(self, theta) -> float:
        t1, t2, rate = (float(x) for x in np.asarray(theta, dtype=float))
        gap = t2 - t1
        if not (
            self.t1_range[0] <= t1 <= self.t1_range[1]
            and self.gap_range[0] <= gap <= self.gap_range[1]
            and self.rate_range[0] <= rate <= self.rate_range[1]
        ):
            return -math.inf
        vol = (
            (self.t1_range[1] - self.t1_range[0])
            * (self.gap_range[1] - self.gap_range[0])
            * (self.rate_range[1] - self.rate_range[0])
        )
        return -math.log(vol)

    def interior(self, margin: float) -> "Mg1Prior":
        if not 0.0 <= margin < 0.5:
            raise ValueError(f"margin must be in [0, 0.5), got {margin}")

        def shrink(rg):
            width = rg[1] - rg[0]
            return (rg[0] + margin * width, rg[1] - margin * width)

        return Mg1Prior(shrink(self.t1_range), shrink(self.gap_range), shrink(self.rate_range))


# ---------------------------------------------------------------------------
# models


class Model:
    """Common surface: a prior over the inferred parameter vector, a
    simulator producing a fixed-length raw output, and the initial-summary
    extractor shared by every strategy."""

    name: str
    param_names: list[str]
    raw_len: int
    summary_dim: int

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def summaries(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def simulate_summaries(self, theta, rng: np.random.Generator) -> np.ndarray:
        return self.summaries(self.simulate(theta, rng))

    def describe(self) -> dict:
        raise NotImplementedError

    def _check_support(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.param_names),):
            raise ValueError(
                f"expected a parameter vector of length {len(self.param_names)}, got shape {theta.shape}"
            )
        if self.prior.log_pdf(theta) == -math.inf:
            raise ValueError(f"parameters {theta.tolist()} are outside the prior support")
        return theta


def mg1_recursion(service: np.ndarray, arrivals: np.ndarray) -> np.ndarray:
    """Inter-departure times of the single-server queue.

    Customer n leaves ``service[n]`` after either the previous departure (if
    already waiting) or its own arrival: the gap is
    ``service[n] + max(0, sum(arrivals[:n+1]) - sum(gaps[:n]))``, evaluated
    with running sums.
    """
    service = np.asarray(service, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    if service.shape != arrivals.shape or service.ndim != 1:
        raise ValueError("service and arrival arrays must be 1-d with equal length")
    y = np.empty_like(service)
    arrived = 0.0
    departed = 0.0
    for i in range(service.shape[0]):
        arrived += arrivals[i]
        gap = service[i] + max(0.0, arrived - departed)
        y[i] = gap
        departed += gap
    return y


def mg1_summaries(y: np.ndarray, n_quantiles: int = 20) -> np.ndarray:
    """Evenly spaced quantiles (linear interpolation) of the departure gaps."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] < n_quantiles:
        raise ValueError(f"need at least {n_quantiles} observations, got shape {y.shape}")
    return np.quantile(y, np.linspace(0.0, 1.0, n_quantiles))


class Mg1Model(Model):
    name = "mg1"

    def __init__(self, n_customers: int = 50, n_quantiles: int = 20, prior: Mg1Prior | None = None):
        n_customers = int(n_customers)
        n_quantiles = int(n_quantiles)
        if n_customers < n_quantiles:
            raise ValueError("n_customers must be at least n_quantiles")
        self.n_customers = n_customers
        self.n_quantiles = n_quantiles
        self.prior = prior if prior is not None else Mg1Prior()
        self.param_names = list(self.prior.names)
        self.raw_len = n_customers
        self.summary_dim = n_quantiles

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        t1, t2, rate = self._check_support(theta)
        if rate <= 0.0:
            raise ValueError("arrival rate must be strictly positive to simulate")
        # Pinned draw order: all service times, then all inter-arrival times.
        service = rng.uniform(t1, t2, self.n_customers)
        arrivals = rng.exponential(1.0 / rate, self.n_customers)
        return mg1_recursion(service, arrivals)

    def summaries(self, y: np.ndarray) -> np.ndarray:
        return mg1_summaries(y, self.n_quantiles)

    def describe(self) -> dict:
        return {
            "model": self.name,
            "n_customers": self.n_customers,
            "n_quantiles": self.n_quantiles,
            "t1_range": list(self.prior.t1_range),
            "gap_range": list(self.prior.gap_range),
            "rate_range": list(self.prior.rate_range),
        }


def ricker_latent_path(log_r: float, sigma_e: float, shocks: np.ndarray) -> np.ndarray:
    """Latent populations n_1..n_T from n_0 = 1 under multiplicative noise
    ``n_{t+1} = r n_t exp(-n_t + sigma_e * shocks[t])``."""
    shocks = np.asarray(shocks, dtype=float)
    r = math.exp(float(log_r))
    out = np.empty(shocks.shape[0])
    n = 1.0
    for t in range(shocks.shape[0]):
        try:
            n = r * n * math.exp(-n + float(sigma_e) * shocks[t])
        except OverflowError:
            n = math.inf
        if not math.isfinite(n):
            raise NumericalError(f"latent population overflowed at step {t + 1}")
        out[t] = n
    return out


class RickerModel(Model):
    """Chaotic population map observed through Poisson counts.

    By default only the environmental noise scale is inferred
    (log sigma_e ~ U[log 0.1, 0]) while log r and phi stay fixed; passing
    ``log_r_range`` / ``phi_range`` adds them to the inferred vector with
    uniform priors, giving the parameter order (log_r, sigma_e, phi).
    """

    name = "ricker"

    def __init__(
        self,
        log_r: float = 3.8,
        phi: float = 10.0,
        sigma_e_range: tuple[float, float] = (0.1, 1.0),
        log_r_range: tuple[float, float] | None = None,
        phi_range: tuple[float, float] | None = None,
        burn_in: int = 50,
        n_counts: int = 50,
        feature_set: str = "E0",
    ):
        if feature_set not in RICKER_FEATURE_DIMS:
            raise ValueError(f"unknown feature set {feature_set!r}")
        self.log_r = float(log_r)
        self.phi = float(phi)
        self.burn_in = int(burn_in)
        self.n_counts = int(n_counts)
        if self.n_counts < 7:
            raise ValueError("need at least 7 counts for the feature set")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        self.feature_set = feature_set
        lows, highs, kinds, names = [], [], [], []
        if log_r_range is not None:
            lows.append(log_r_range[0])
            highs.append(log_r_range[1])
            kinds.append("uniform")
            names.append("log_r")
        lows.append(sigma_e_range[0])
        highs.append(sigma_e_range[1])
        kinds.append("log-uniform")
        names.append("sigma_e")
        if phi_range is not None:
            lows.append(phi_range[0])
            highs.append(phi_range[1])
            kinds.append("uniform")
            names.append("phi")
        self.prior = BoxPrior(lows, highs, kinds, names)
        self.param_names = names
        self.raw_len = self.n_counts
        self.summary_dim = RICKER_FEATURE_DIMS[feature_set]

    def _unpack(self, theta) -> tuple[float, float, float]:
        theta = self._check_support(theta)
        vals = dict(zip(self.param_names, theta))
        return (
            vals.get("log_r", self.log_r),
            vals["sigma_e"],
            vals.get("phi", self.phi),
        )

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        log_r, sigma_e, phi = self._unpack(theta)
        total = self.burn_in + self.n_counts
        # Pinned draw order: the whole shock vector first, then one Poisson
        # draw per observed step in time order.
        shocks = rng.standard_normal(total)
        latents = ricker_latent_path(log_r, sigma_e, shocks)
        y = np.empty(self.n_counts)
        for t in range(self.burn_in, total):
            y[t - self.burn_in] = poisson_draw(rng, phi * latents[t])
        return y

    def summaries(self, y: np.ndarray) -> np.ndarray:
        return ricker_features(y, self.feature_set)

    def describe(self) -> dict:
        return {
            "model": self.name,
            "log_r": self.log_r,
            "phi": self.phi,
            "inferred": list(self.param_names),
            "lows": self.prior.lows.tolist(),
            "highs": self.prior.highs.tolist(),
            "burn_in": self.burn_in,
            "n_counts": self.n_counts,
            "feature_set": self.feature_set,
        }


def _autocovariances(y: np.ndarray, max_lag: int) -> np.ndarray:
    n = y.shape[0]
    centered = y - y.mean()
    return np.array([float(centered[: n - k] @ centered[k:]) / n for k in range(max_lag + 1)])


_LOG_GUARD = 1e-8


def ricker_features(y: np.ndarray, feature_set: str = "E0") -> np.ndarray:
    """Initial summary vector for count series.

    The three sets are nested prefixes: the base 13 statistics (mean, five
    autocovariances, cubic fit to the sorted first differences, two
    power-regression coefficients, zero count), 15 additions (small-count
    indicators, guarded log variance and log power sums, autocorrelations)
    and finally the raw/sorted series blocks with squares, logs and
    differences (426 total).
    """
    if feature_set not in RICKER_FEATURE_DIMS:
        raise ValueError(f"unknown feature set {feature_set!r}")
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] < 7:
        raise ValueError(f"expected a series of at least 7 counts, got shape {y.shape}")

    acv = _autocovariances(y, 5)
    diffs = np.diff(y)
    sorted_diffs = np.sort(diffs)
    idx = np.arange(sorted_diffs.shape[0], dtype=float)
    t = (idx - idx.mean()) / idx.std()
    cubic_design = np.column_stack([np.ones_like(t), t, t**2, t**3])
    cubic_coef = np.linalg.lstsq(cubic_design, sorted_diffs, rcond=None)[0]
    x03 = y[:-1] ** 0.3
    x06 = y[:-1] ** 0.6
    power_design = np.column_stack([x03, x06])
    power_coef = np.linalg.lstsq(power_design, y[1:] ** 0.3, rcond=None)[0]
    features = [y.mean(), *acv[1:], *cubic_coef, *power_coef, float(np.sum(y == 0.0))]
    if feature_set == "E0":
        return np.asarray(features)

    counts = [float(np.sum(y == j)) for j in (1, 2, 3, 4)]
    log_var = math.log(float(np.var(y, ddof=1)) + _LOG_GUARD)
    log_pows = [math.log(float(np.sum(y**j)) + _LOG_GUARD) for j in (2, 3, 4, 5, 6)]
    c0 = acv[0]
    acorr = [float(acv[k] / c0) if c0 > 0.0 else 0.0 for k in range(1, 6)]
    features.extend([*counts, log_var, *log_pows, *acorr])
    if feature_set == "E1":
        return np.asarray(features)

    ys = np.sort(y)
    features.extend(y)
    features.extend(ys)
    features.extend(y**2)
    features.extend(ys**2)
    features.extend(np.log1p(y))
    features.extend(np.log1p(ys))
    features.extend(np.diff(y))
    features.extend(np.diff(ys))
    return np.asarray(features)


def gaussian_toy_posterior(prior_var: float, ybar: float, n: int) -> tuple[float, float]:
    """Exact conjugate posterior (mean, variance) of a Normal mean with unit
    noise variance and a Normal(0, prior_var) prior given n observations."""
    prior_var = float(prior_var)
    if prior_var <= 0.0:
        raise ValueError("prior_var must be positive")
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0, prior_var
    denom = 1.0 + n * prior_var
    return prior_var * n * float(ybar) / denom, prior_var / denom


class GaussianToyModel(Model):
    name = "gauss-toy"

    def __init__(self, prior_var: float = 1.0, n_obs: int = 10):
        self.prior_var = float(prior_var)
        if self.prior_var <= 0.0:
            raise ValueError("prior_var must be positive")
        self.n_obs = int(n_obs)
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        self.prior = GaussianPrior([0.0], [self.prior_var], ["mu"])
        self.param_names = ["mu"]
        self.raw_len = self.n_obs
        self.summary_dim = 1

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = self._check_support(theta)
        return theta[0] + rng.standard_normal(self.n_obs)

    def summaries(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != self.n_obs:
            raise ValueError(f"expected {self.n_obs} observations, got shape {y.shape}")
        return np.array([y.mean()])

    def posterior(self, ybar: float) -> tuple[float, float]:
        return gaussian_toy_posterior(self.prior_var, ybar, self.n_obs)

    def describe(self) -> dict:
        return {"model": self.name, "prior_var": self.prior_var, "n_obs": self.n_obs}


_MODEL_BUILDERS = {
    "mg1": Mg1Model,
    "ricker": RickerModel,
    "gauss-toy": GaussianToyModel,
}


def make_model(model_id: str, overrides: dict | None = None) -> Model:
    """Instantiate a bundled model by id, applying keyword overrides."""
    builder = _MODEL_BUILDERS.get(model_id)
    if builder is None:
        raise ConfigError(f"unknown model {model_id!r}; available: {sorted(_MODEL_BUILDERS)}")
    overrides = dict(overrides or {})
    for key in ("sigma_e_range", "log_r_range", "phi_range", "t1_range", "gap_range", "rate_range"):
        if key in overrides and overrides[key] is not None:
            overrides[key] = tuple(overrides[key])
    if model_id == "mg1":
        ranges = {k: overrides.pop(k) for k in ("t1_range", "gap_range", "rate_range") if k in overrides}
        if ranges:
            overrides["prior"] = Mg1Prior(**ranges)
    try:
        return builder(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad overrides for model {model_id!r}: {exc}") from exc
