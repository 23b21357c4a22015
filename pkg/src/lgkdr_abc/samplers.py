"""Approximate Bayesian computation samplers.

Two samplers share the constructed-summary distance:

* :func:`rejection_abc` keeps the ``n_acc`` pool entries closest to the
  observation (ties broken by pool index, ascending);
* :func:`smc_abc` runs a sequential sampler whose tolerance shrinks
  adaptively, with indicator reweighting, Metropolis-Hastings particle
  moves and systematic resampling.

Both are deterministic functions of their seed arguments: every random
draw comes from a generator derived from (master seed, channel, indices),
so results do not depend on call order or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError
from .seeding import derive_seed, stream

__all__ = [
    "Particle",
    "RejectionResult",
    "SimulationPool",
    "SmcState",
    "TraceRow",
    "distance",
    "ess",
    "rejection_abc",
    "smc_abc",
    "systematic_indices",
    "systematic_resample",
]


@dataclass(frozen=True, eq=False)
class SimulationPool:
    """Frozen bank of prior simulations shared by rejection runs.

    ``seeds[i]`` reproduces row i: it is the seed of the generator that drew
    ``thetas[i]`` from the prior and then ``raws[i]`` from the simulator.
    """

    seeds: np.ndarray
    thetas: np.ndarray
    raws: np.ndarray
    summaries: np.ndarray

    def __post_init__(self):
        seeds = np.asarray(self.seeds, dtype=np.int64)
        thetas = np.asarray(self.thetas, dtype=float)
        raws = np.asarray(self.raws, dtype=float)
        summaries = np.asarray(self.summaries, dtype=float)
        n = seeds.shape[0]
        if seeds.ndim != 1 or thetas.ndim != 2 or raws.ndim != 2 or summaries.ndim != 2:
            raise ValueError("pool arrays have wrong ranks")
        if not (thetas.shape[0] == raws.shape[0] == summaries.shape[0] == n):
            raise ValueError("pool arrays disagree on the number of simulations")
        if n == 0:
            raise ValueError("pool must not be empty")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "raws", raws)
        object.__setattr__(self, "summaries", summaries)

    @property
    def n(self) -> int:
        return self.seeds.shape[0]


def distance(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Euclidean distance along the last axis (broadcasting)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class RejectionResult:
    pool_indices: np.ndarray
    thetas: np.ndarray
    distances: np.ndarray
    epsilon_effective: float
    n_pool: int


def rejection_abc(constructor, s_obs: np.ndarray, pool: SimulationPool, n_acc: int) -> RejectionResult:
    """Accept the ``n_acc`` pool rows whose constructed summaries are closest
    to the observation's.

    ``s_obs`` is the observation's *initial* summary vector; the constructor
    is applied to it and to every pool row. Equal distances are resolved in
    favor of the smaller pool index, so the result is unique.
    """
    n_acc = int(n_acc)
    if not 1 <= n_acc <= pool.n:
        raise ValueError(f"n_acc must be in [1, {pool.n}], got {n_acc}")
    z_pool = constructor.transform(pool.summaries)
    z_obs = constructor.transform(np.asarray(s_obs, dtype=float))
    d = np.asarray(distance(z_pool, z_obs), dtype=float)
    order = np.argsort(d, kind="stable")[:n_acc]
    return RejectionResult(
        pool_indices=order,
        thetas=pool.thetas[order],
        distances=d[order],
        epsilon_effective=float(d[order[-1]]),
        n_pool=pool.n,
    )


# ---------------------------------------------------------------------------
# weights and resampling


def ess(weights: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum(w^2)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = float(np.sum(w))
    if total == 0.0:
        raise ValueError("all weights are zero")
    return total * total / float(np.sum(w * w))


def systematic_indices(weights: np.ndarray, offset: float, n_out: int) -> np.ndarray:
    """Systematic-resampling ancestor indices for the evenly spaced positions
    ``(k + offset) / n_out``; a zero-weight entry is never selected."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = float(np.sum(w))
    if total == 0.0:
        raise ValueError("all weights are zero")
    if not 0.0 <= offset < 1.0:
        raise ValueError(f"offset must be in [0, 1), got {offset}")
    n_out = int(n_out)
    if n_out < 1:
        raise ValueError("n_out must be >= 1")
    cum = np.cumsum(w / total)
    # Pin the tail to exactly 1 from the last positive weight on, so rounding
    # can neither push a position past the end nor select a dead particle.
    last_pos = int(np.nonzero(w)[0][-1])
    cum[last_pos:] = 1.0
    positions = (np.arange(n_out) + float(offset)) / n_out
    return np.searchsorted(cum, positions, side="right").astype(np.int64)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator, n_out: int) -> np.ndarray:
    """Systematic resampling with one shared uniform offset from ``rng``."""
    return systematic_indices(weights, float(rng.random()), n_out)


# ---------------------------------------------------------------------------
# sequential sampler


@dataclass(frozen=True)
class Particle:
    theta: np.ndarray
    z: np.ndarray
    dist: float
    weight: float
    seed: int


@dataclass(frozen=True)
class TraceRow:
    round: int
    epsilon: float
    ess: float
    acceptance_rate: float
    n_sims: int
    resampled: bool


@dataclass
class SmcState:
    """Mutable particle-system state of the sequential sampler."""

    thetas: np.ndarray
    zs: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    seeds: np.ndarray
    epsilon: float
    iteration: int = 0
    n_sims: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def n_particles(self) -> int:
        return self.thetas.shape[0]

    def particle(self, i: int) -> Particle:
        return Particle(
            theta=self.thetas[i].copy(),
            z=self.zs[i].copy(),
            dist=float(self.distances[i]),
            weight=float(self.weights[i]),
            seed=int(self.seeds[i]),
        )

    def alive(self) -> np.ndarray:
        return self.weights > 0.0


def _init_state(model, constructor, z_obs: np.ndarray, n_particles: int, seed: int) -> SmcState:
    n_params = len(model.param_names)
    thetas = np.empty((n_particles, n_params))
    zs = np.empty((n_particles, z_obs.shape[0]))
    dists = np.empty(n_particles)
    seeds = np.empty(n_particles, dtype=np.int64)
    for i in range(n_particles):
        seeds[i] = derive_seed(seed, "smc-init", i)
        rng = np.random.default_rng(int(seeds[i]))
        theta = model.prior.sample(rng)
        z = constructor.transform(model.simulate_summaries(theta, rng))
        thetas[i] = theta
        zs[i] = z
        dists[i] = distance(z, z_obs)
    return SmcState(
        thetas=thetas,
        zs=zs,
        distances=dists,
        weights=np.ones(n_particles),
        seeds=seeds,
        epsilon=float(np.max(dists)),
        n_sims=n_particles,
    )


def _weighted_std(thetas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    total = float(np.sum(weights))
    mean = (weights @ thetas) / total
    var = (weights @ (thetas - mean) ** 2) / total
    return np.maximum(np.sqrt(var), 1e-8)


def move_particles(state: SmcState, model, constructor, z_obs: np.ndarray, seed: int, repeats: int = 1) -> tuple[int, int]:
    """One Metropolis-Hastings refresh of every live particle.

    Per particle and repeat: draw a Normal step scaled by the weighted
    per-coordinate spread of the live cloud, check prior support, draw the
    acceptance uniform, then simulate; the proposal is kept only when the new
    distance is within the current tolerance and the uniform passes the prior
    ratio. Proposal noise comes from a (seed, round, particle) stream and the
    simulation from its own derived seed, so moves are order-independent.
    Returns (accepted, attempted).
    """
    alive = np.nonzero(state.alive())[0]
    if alive.size == 0:
        raise ValueError("cannot move particles when every weight is zero")
    step = _weighted_std(state.thetas[alive], state.weights[alive])
    accepted = 0
    attempted = 0
    for i in alive:
        rng = stream(seed, "smc-move", state.iteration, int(i))
        log_p = model.prior.log_pdf(state.thetas[i])
        for r in range(int(repeats)):
            attempted += 1
            proposal = state.thetas[i] + step * rng.standard_normal(step.shape[0])
            log_q = model.prior.log_pdf(proposal)
            if log_q == -math.inf:
                continue
            u = rng.random()
            sim_seed = derive_seed(seed, "smc-move-sim", state.iteration, int(i), r)
            state.n_sims += 1
            z = constructor.transform(
                model.simulate_summaries(proposal, np.random.default_rng(sim_seed))
            )
            d = float(distance(z, z_obs))
            if d <= state.epsilon and u < math.exp(min(0.0, log_q - log_p)):
                state.thetas[i] = proposal
                state.zs[i] = z
                state.distances[i] = d
                state.seeds[i] = sim_seed
                log_p = log_q
                accepted += 1
    return accepted, attempted


def smc_abc(
    model,
    constructor,
    z_obs: np.ndarray,
    n_particles: int,
    eps_target: float,
    seed: int,
    ess_fraction: float = 0.5,
    max_rounds: int = 30,
    move_repeats: int = 1,
    eps_quantile: float = 0.9,
    stall_tol: float = 1e-4,
    eps_schedule=None,
) -> SmcState:
    """Sequential ABC sampler targeting prior x indicator(distance <= eps).

    ``z_obs`` is the observation's *constructed* summary vector. Each round
    proposes a tolerance cut (the ``eps_quantile``-quantile of live-particle
    distances, or ``eps_schedule(state)`` when given, never below
    ``eps_target``), reweights by the tolerance indicator, refreshes live
    particles with Metropolis-Hastings moves, and resamples systematically
    when the effective sample size drops below ``ess_fraction * n_particles``.

    The loop stops when the tolerance reaches ``eps_target``, stalls (relative
    decrease below ``stall_tol``), or ``max_rounds`` is exhausted. If a cut
    would kill every particle it is retried once at the midpoint between the
    old and proposed tolerance; a second total kill raises
    :class:`DegeneracyError`.
    """
    n_particles = int(n_particles)
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if not 0.0 < ess_fraction <= 1.0:
        raise ValueError(f"ess_fraction must be in (0, 1], got {ess_fraction}")
    if not 0.0 < eps_quantile < 1.0:
        raise ValueError(f"eps_quantile must be in (0, 1), got {eps_quantile}")
    eps_target = float(eps_target)
    if not eps_target >= 0.0:
        raise ValueError(f"eps_target must be >= 0, got {eps_target}")
    z_obs = np.asarray(z_obs, dtype=float)

    state = _init_state(model, constructor, z_obs, n_particles, seed)
    for round_index in range(1, int(max_rounds) + 1):
        state.iteration = round_index
        alive = state.alive()
        if eps_schedule is not None:
            cut = float(eps_schedule(state))
        else:
            cut = float(np.quantile(state.distances[alive], eps_quantile))
        eps_new = max(cut, eps_target)
        if eps_new > eps_target and (state.epsilon - eps_new) < stall_tol * state.epsilon:
            break
        new_weights = state.weights * (state.distances <= eps_new)
        if not np.any(new_weights > 0.0):
            eps_new = 0.5 * (state.epsilon + eps_new)
            new_weights = state.weights * (state.distances <= eps_new)
            if not np.any(new_weights > 0.0):
                raise DegeneracyError(
                    f"round {round_index}: no particle survives the tolerance cut to "
                    f"{eps_new:.6g} (previous {state.epsilon:.6g})"
                )
        state.weights = new_weights
        state.epsilon = float(eps_new)

        accepted, attempted = move_particles(
            state, model, constructor, z_obs, seed, repeats=move_repeats
        )

        current_ess = ess(state.weights)
        resample = current_ess < ess_fraction * n_particles
        if resample:
            offset_rng = stream(seed, "smc-resample", round_index)
            idx = systematic_resample(state.weights, offset_rng, n_particles)
            state.thetas = state.thetas[idx]
            state.zs = state.zs[idx]
            state.distances = state.distances[idx]
            state.seeds = state.seeds[idx]
            state.weights = np.ones(n_particles)
        state.trace.append(
            TraceRow(
                round=round_index,
                epsilon=state.epsilon,
                ess=float(current_ess),
                acceptance_rate=accepted / attempted if attempted else 0.0,
                n_sims=state.n_sims,
                resampled=resample,
            )
        )
        if state.epsilon <= eps_target:
            break
    return state
