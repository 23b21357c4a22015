import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgkdr_abc.errors import DegeneracyError
from lgkdr_abc.models import BoxPrior, GaussianToyModel
from lgkdr_abc.samplers import (
    SimulationPool,
    SmcState,
    distance,
    ess,
    move_particles,
    rejection_abc,
    smc_abc,
    systematic_indices,
    systematic_resample,
)


class PassThroughConstructor:
    """Constructed summary == raw summary."""

    def transform(self, s):
        return np.asarray(s, dtype=float)


class FirstCoordinateConstructor:
    """Keeps only the first summary coordinate."""

    def transform(self, s):
        return np.asarray(s, dtype=float)[..., :1]


class LineModel:
    """Summary equals the (single) parameter, noise-free."""

    param_names = ["x"]

    def __init__(self, low=0.0, high=10.0):
        self.prior = BoxPrior([low], [high], ["uniform"], ["x"])

    def simulate_summaries(self, theta, rng):
        return np.asarray(theta, dtype=float)


class RiggedMoveModel:
    """Behaves like LineModel while the particle system initializes, then
    returns far-away summaries so Metropolis-Hastings moves never accept."""

    param_names = ["x"]

    def __init__(self, n_init):
        self.prior = BoxPrior([1.0], [2.0], ["uniform"], ["x"])
        self._calls = 0
        self._n_init = n_init

    def simulate_summaries(self, theta, rng):
        self._calls += 1
        if self._calls <= self._n_init:
            return np.asarray(theta, dtype=float)
        return np.asarray(theta, dtype=float) + 100.0


def make_pool(summaries, thetas=None):
    s = np.asarray(summaries, dtype=float)
    n = s.shape[0]
    if thetas is None:
        thetas = np.arange(n, dtype=float)[:, None]
    return SimulationPool(seeds=np.arange(n), thetas=thetas, raws=s.copy(), summaries=s)


# ---------------------------------------------------------------------------
# distances and rejection


def test_distance_broadcasts_over_rows():
    a = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    b = np.array([0.0, 0.0])
    assert np.allclose(distance(a, b), [0.0, 5.0, np.sqrt(2.0)])
    assert distance(np.array([1.0, 1.0]), b) == pytest.approx(np.sqrt(2.0))


def test_simulation_pool_validation():
    with pytest.raises(ValueError, match="wrong ranks"):
        SimulationPool(seeds=np.zeros((2, 2)), thetas=np.zeros((2, 1)),
                       raws=np.zeros((2, 1)), summaries=np.zeros((2, 1)))
    with pytest.raises(ValueError, match="disagree"):
        SimulationPool(seeds=np.zeros(2), thetas=np.zeros((3, 1)),
                       raws=np.zeros((2, 1)), summaries=np.zeros((2, 1)))
    with pytest.raises(ValueError, match="empty"):
        SimulationPool(seeds=np.zeros(0), thetas=np.zeros((0, 1)),
                       raws=np.zeros((0, 1)), summaries=np.zeros((0, 1)))


def test_rejection_keeps_nearest_and_breaks_ties_by_index():
    pool = make_pool([[0.0], [1.0], [1.0], [2.0]])
    res = rejection_abc(PassThroughConstructor(), np.array([0.0]), pool, 2)
    assert res.pool_indices.tolist() == [0, 1]  # index 1 beats the tied index 2
    assert res.distances.tolist() == [0.0, 1.0]
    assert res.epsilon_effective == 1.0
    assert res.n_pool == 4
    res3 = rejection_abc(PassThroughConstructor(), np.array([0.0]), pool, 3)
    assert res3.pool_indices.tolist() == [0, 1, 2]


def test_rejection_applies_constructor_to_both_sides():
    pool = make_pool([[0.0, 100.0], [1.0, 0.0]])
    s_obs = np.array([0.4, 0.0])
    raw = rejection_abc(PassThroughConstructor(), s_obs, pool, 1)
    assert raw.pool_indices.tolist() == [1]  # the huge second coordinate dominates
    projected = rejection_abc(FirstCoordinateConstructor(), s_obs, pool, 1)
    assert projected.pool_indices.tolist() == [0]


def test_rejection_n_acc_bounds():
    pool = make_pool([[0.0], [1.0]])
    with pytest.raises(ValueError, match="n_acc"):
        rejection_abc(PassThroughConstructor(), np.array([0.0]), pool, 0)
    with pytest.raises(ValueError, match="n_acc"):
        rejection_abc(PassThroughConstructor(), np.array([0.0]), pool, 3)


# ---------------------------------------------------------------------------
# weights and resampling


def test_ess_values_and_validation():
    assert ess(np.array([0.5, 0.25, 0.25])) == pytest.approx(8.0 / 3.0)
    assert ess(np.ones(7)) == pytest.approx(7.0)
    assert ess(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="all weights are zero"):
        ess(np.zeros(3))
    with pytest.raises(ValueError, match="finite and non-negative"):
        ess(np.array([0.5, -0.1]))


def test_systematic_indices_frozen_example():
    idx = systematic_indices(np.array([0.75, 0.25]), offset=0.1, n_out=4)
    assert idx.tolist() == [0, 0, 0, 1]


def test_systematic_indices_exact_proportions():
    # weights 1:3 over 8 positions split exactly 2:6 for any offset
    for offset in (0.0, 0.3, 0.7, 0.999):
        idx = systematic_indices(np.array([1.0, 3.0]), offset=offset, n_out=8)
        counts = np.bincount(idx, minlength=2)
        assert counts.tolist() == [2, 6]


def test_systematic_indices_validation():
    with pytest.raises(ValueError, match="offset"):
        systematic_indices(np.array([1.0]), offset=1.0, n_out=2)
    with pytest.raises(ValueError, match="all weights are zero"):
        systematic_indices(np.zeros(2), offset=0.5, n_out=2)
    with pytest.raises(ValueError, match="n_out"):
        systematic_indices(np.array([1.0]), offset=0.5, n_out=0)


@given(
    st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]), min_size=1, max_size=12).filter(
        lambda w: sum(w) > 0.0
    ),
    st.floats(0.0, 0.999),
    st.integers(1, 25),
)
def test_systematic_indices_never_select_dead_particles(weights, offset, n_out):
    w = np.array(weights)
    idx = systematic_indices(w, offset=offset, n_out=n_out)
    assert idx.shape == (n_out,)
    assert np.all(w[idx] > 0.0)
    assert np.all(np.diff(idx) >= 0)  # systematic ancestors are sorted


def test_systematic_resample_uses_one_uniform():
    w = np.array([0.2, 0.8])
    rng = np.random.default_rng(5)
    idx = systematic_resample(w, rng, 10)
    want = systematic_indices(w, np.random.default_rng(5).random(), 10)
    assert np.array_equal(idx, want)


# ---------------------------------------------------------------------------
# particle moves


def test_move_particles_accepts_and_updates_state():
    model = LineModel()
    state = SmcState(
        thetas=np.full((4, 1), 5.0),
        zs=np.full((4, 1), 5.0),
        distances=np.full(4, 5.0),
        weights=np.ones(4),
        seeds=np.zeros(4, dtype=np.int64),
        epsilon=10.0,
        iteration=1,
    )
    accepted, attempted = move_particles(state, model, PassThroughConstructor(), np.array([0.0]), seed=5)
    # identical particles give a floored (1e-8) proposal spread: every proposal
    # stays in support, within tolerance, and the flat prior always accepts
    assert (accepted, attempted) == (4, 4)
    assert np.all(state.seeds != 0)
    assert np.allclose(state.zs, state.thetas)
    assert np.allclose(state.distances, np.abs(state.thetas[:, 0]))
    assert state.n_sims == 4


def test_move_particles_requires_a_live_particle():
    state = SmcState(
        thetas=np.zeros((2, 1)),
        zs=np.zeros((2, 1)),
        distances=np.zeros(2),
        weights=np.zeros(2),
        seeds=np.zeros(2, dtype=np.int64),
        epsilon=1.0,
    )
    with pytest.raises(ValueError, match="every weight is zero"):
        move_particles(state, LineModel(), PassThroughConstructor(), np.array([0.0]), seed=1)


def test_smc_keeps_particles_inside_prior_support():
    model = LineModel(low=0.0, high=1.0)
    state = smc_abc(model, PassThroughConstructor(), np.array([0.2]), 32,
                    eps_target=0.05, seed=7, max_rounds=10)
    alive = state.alive()
    assert alive.any()
    assert np.all(state.thetas[alive] >= 0.0)
    assert np.all(state.thetas[alive] <= 1.0)
    assert state.epsilon <= state.trace[0].epsilon


# ---------------------------------------------------------------------------
# full sequential sampler


def toy_problem():
    model = GaussianToyModel(prior_var=1.0, n_obs=8)
    y_obs = model.simulate(np.array([0.5]), np.random.default_rng(100))
    return model, model.summaries(y_obs)


def test_smc_reaches_target_with_decreasing_tolerances():
    model, z_obs = toy_problem()
    state = smc_abc(model, PassThroughConstructor(), z_obs, 64,
                    eps_target=0.4, seed=3, max_rounds=30)
    eps_path = [row.epsilon for row in state.trace]
    assert state.epsilon <= 0.4
    assert eps_path[-1] == state.epsilon
    assert all(a > b for a, b in zip(eps_path, eps_path[1:]))
    assert any(row.resampled for row in state.trace)
    rounds = [row.round for row in state.trace]
    assert rounds == list(range(1, len(rounds) + 1))
    sims = [row.n_sims for row in state.trace]
    assert all(a <= b for a, b in zip(sims, sims[1:]))
    assert state.n_sims == sims[-1]
    for row in state.trace:
        assert 0.0 <= row.acceptance_rate <= 1.0
        assert 1.0 <= row.ess <= 64.0


def test_smc_is_deterministic_in_its_seed():
    model, z_obs = toy_problem()
    a = smc_abc(model, PassThroughConstructor(), z_obs, 32, eps_target=0.5, seed=3, max_rounds=15)
    b = smc_abc(model, PassThroughConstructor(), z_obs, 32, eps_target=0.5, seed=3, max_rounds=15)
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.seeds, b.seeds)
    assert a.epsilon == b.epsilon
    assert a.trace == b.trace
    c = smc_abc(model, PassThroughConstructor(), z_obs, 32, eps_target=0.5, seed=4, max_rounds=15)
    assert not np.array_equal(a.thetas, c.thetas)


def test_smc_stall_stops_before_any_round():
    model, z_obs = toy_problem()
    state = smc_abc(model, PassThroughConstructor(), z_obs, 64, eps_target=0.0,
                    seed=3, max_rounds=10, eps_schedule=lambda s: s.epsilon * (1 - 1e-5))
    assert state.trace == []
    assert state.iteration == 1
    assert state.epsilon == np.max(state.distances)  # untouched initial tolerance


def test_smc_degeneracy_after_single_midpoint_retry():
    # Tolerance schedule jumps straight to the target, far below every
    # distance. Round 1 survives via the midpoint retry; in round 2 even the
    # midpoint kills all particles, which must abort the run.
    n = 32
    model = RiggedMoveModel(n_init=n)
    with pytest.raises(DegeneracyError, match="round 2: no particle survives"):
        smc_abc(model, PassThroughConstructor(), np.array([0.0]), n,
                eps_target=0.4, seed=9, max_rounds=10, eps_schedule=lambda s: 0.4)


def test_smc_particle_view_copies_state():
    model, z_obs = toy_problem()
    state = smc_abc(model, PassThroughConstructor(), z_obs, 16, eps_target=1.0, seed=3, max_rounds=5)
    p = state.particle(0)
    p.theta[0] = 1e9
    assert state.thetas[0, 0] != 1e9
    assert p.weight == state.weights[0]


def test_smc_argument_validation():
    model, z_obs = toy_problem()
    cons = PassThroughConstructor()
    with pytest.raises(ValueError, match="at least 2 particles"):
        smc_abc(model, cons, z_obs, 1, eps_target=0.1, seed=0)
    with pytest.raises(ValueError, match="ess_fraction"):
        smc_abc(model, cons, z_obs, 8, eps_target=0.1, seed=0, ess_fraction=0.0)
    with pytest.raises(ValueError, match="eps_quantile"):
        smc_abc(model, cons, z_obs, 8, eps_target=0.1, seed=0, eps_quantile=1.0)
    with pytest.raises(ValueError, match="eps_target"):
        smc_abc(model, cons, z_obs, 8, eps_target=-1.0, seed=0)
