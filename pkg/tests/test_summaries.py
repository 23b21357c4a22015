import json

import numpy as np
import pytest

from lgkdr_abc.gkdr import GkdrConfig
from lgkdr_abc.linalg import KernelParams
from lgkdr_abc.summaries import (
    TrainingSet,
    fit_identity,
    fit_lgkdr,
    fit_lgkdr_many,
    fit_linear_posterior_mean,
    fit_separated,
    fit_separated_many,
    load_constructor,
    save_constructor,
)

KERNEL = KernelParams(sigma_s=1.3, sigma_theta=0.8, eps_n=1e-2)


def make_training_set(n=60, m=4, p=2, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n, m))
    theta = np.column_stack([s[:, 0] + 0.1 * s[:, 1], s[:, 2] ** 2])
    return TrainingSet(summaries=s, parameters=theta)


def test_training_set_validation():
    with pytest.raises(ValueError, match="2-d"):
        TrainingSet(summaries=np.zeros(3), parameters=np.zeros((3, 1)))
    with pytest.raises(ValueError, match="row counts disagree"):
        TrainingSet(summaries=np.zeros((3, 2)), parameters=np.zeros((4, 1)))
    with pytest.raises(ValueError, match="empty"):
        TrainingSet(summaries=np.zeros((0, 2)), parameters=np.zeros((0, 1)))


def test_identity_constructor_standardizes():
    ts = make_training_set()
    cons = fit_identity(ts)
    z = cons.transform(ts.summaries)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-12)
    assert cons.input_dim == cons.output_dim == 4
    # single-vector and batch calls agree
    assert np.array_equal(cons.transform(ts.summaries[3]), z[3])


def test_linear_constructor_recovers_exact_linear_map():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(50, 3))
    theta = (2.0 + s @ np.array([3.0, -1.0, 0.5]))[:, None]
    cons = fit_linear_posterior_mean(TrainingSet(summaries=s, parameters=theta))
    assert cons.output_dim == 1
    pred = cons.transform(s)
    assert np.allclose(pred, theta, atol=1e-9)
    # the fit is exact on unseen points too
    s_new = rng.normal(size=(5, 3))
    assert np.allclose(cons.transform(s_new)[:, 0], 2.0 + s_new @ np.array([3.0, -1.0, 0.5]), atol=1e-9)


def test_local_linear_requires_observation():
    ts = make_training_set()
    with pytest.raises(ValueError, match="requires the observed summary"):
        fit_linear_posterior_mean(ts, local=True)


def test_local_linear_weights_concentrate_fit():
    rng = np.random.default_rng(2)
    s = np.sort(rng.uniform(-2, 2, size=(200, 1)), axis=0)
    theta = (s[:, 0] ** 3)[:, None]  # curved response; local fit beats global near 0
    ts = TrainingSet(summaries=s, parameters=theta)
    x_obs = np.array([0.0])
    glob = fit_linear_posterior_mean(ts)
    loc = fit_linear_posterior_mean(ts, local=True, weight_quantile=0.10, x_obs=x_obs)
    assert loc.local and loc.weight_quantile == 0.10
    err_glob = abs(glob.transform(x_obs)[0] - 0.0)
    err_loc = abs(loc.transform(x_obs)[0] - 0.0)
    assert err_loc <= err_glob


def test_linear_rank_deficiency_warns_and_recovers():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(40, 2))
    s = np.column_stack([base, base[:, 1]])  # duplicated column
    theta = (base @ np.array([1.0, 2.0]))[:, None]
    ts = TrainingSet(summaries=s, parameters=theta)
    with pytest.warns(RuntimeWarning, match="rank-deficient regression design"):
        cons = fit_linear_posterior_mean(ts)
    assert np.allclose(cons.transform(s), theta, atol=1e-4)


def test_lgkdr_positive_weight_floor():
    rng = np.random.default_rng(4)
    s = rng.normal(size=(300, 2))
    theta = s[:, :1].copy()
    ts = TrainingSet(summaries=s, parameters=theta)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=1, weight_quantile=0.01)
    # a 1% quantile keeps ~3 of 300 points, below the floor of max(10, 3)
    with pytest.raises(ValueError, match="positive weight near the observation"):
        fit_lgkdr(ts, s[0], cfg)


def test_fit_lgkdr_matches_fit_lgkdr_many():
    ts = make_training_set(seed=5)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=2, weight_quantile=0.5)
    obs = [ts.summaries[0], ts.summaries[10]]
    many = fit_lgkdr_many(ts, obs, cfg)
    one = fit_lgkdr(ts, obs[1], cfg)
    assert np.array_equal(one.projection.b, many[1].projection.b)
    assert np.array_equal(one.eigenvalues, many[1].eigenvalues)
    # distinct observations produce distinct local projections
    assert not np.array_equal(many[0].projection.b, many[1].projection.b)
    assert many[0].output_dim == 2
    assert many[0].eigenvalues.shape == (4,)


def test_fit_lgkdr_response_index_validation():
    ts = make_training_set(seed=6)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=1, weight_quantile=0.5, response_index=7)
    with pytest.raises(ValueError, match="response_index 7 out of range"):
        fit_lgkdr(ts, ts.summaries[0], cfg)


def test_separated_constructor_concatenates_children():
    ts = make_training_set(seed=7)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=1, weight_quantile=0.5)
    cons = fit_separated(ts, ts.summaries[2], cfg, which=[1, 0])
    assert cons.output_dim == 2
    assert cons.focus == [1, 0]
    z = cons.transform(ts.summaries)
    c1 = cons.child(1).transform(ts.summaries)
    c0 = cons.child(0).transform(ts.summaries)
    assert np.array_equal(z, np.concatenate([c1, c0], axis=1))
    with pytest.raises(KeyError, match="no child fitted for parameter 5"):
        cons.child(5)


def test_separated_focus_validation():
    ts = make_training_set(seed=8)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=1, weight_quantile=0.5)
    with pytest.raises(ValueError, match="at least one focused parameter"):
        fit_separated(ts, ts.summaries[0], cfg, which=[])
    with pytest.raises(ValueError, match="distinct"):
        fit_separated(ts, ts.summaries[0], cfg, which=[0, 0])
    with pytest.raises(ValueError, match="out of range"):
        fit_separated(ts, ts.summaries[0], cfg, which=[2])


def test_separated_many_matches_single_fit():
    ts = make_training_set(seed=9)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=1, weight_quantile=0.5)
    obs = [ts.summaries[0], ts.summaries[5]]
    many = fit_separated_many(ts, obs, cfg, which=[0, 1])
    one = fit_separated(ts, obs[0], cfg, which=[0, 1])
    assert np.array_equal(one.transform(ts.summaries), many[0].transform(ts.summaries))


@pytest.mark.parametrize("maker", ["identity", "linear", "linear-local", "lgkdr", "separated"])
def test_constructor_persistence_round_trip(tmp_path, maker):
    ts = make_training_set(seed=11)
    cfg = GkdrConfig(kernel=KERNEL, target_dim=2, weight_quantile=0.5)
    x_obs = ts.summaries[1]
    if maker == "identity":
        cons = fit_identity(ts)
    elif maker == "linear":
        cons = fit_linear_posterior_mean(ts)
    elif maker == "linear-local":
        cons = fit_linear_posterior_mean(ts, local=True, weight_quantile=0.5, x_obs=x_obs)
    elif maker == "lgkdr":
        cons = fit_lgkdr(ts, x_obs, cfg)
    else:
        cons = fit_separated(ts, x_obs, cfg, which=[1, 0])
    path = tmp_path / "constructor.json"
    save_constructor(path, cons)
    loaded = load_constructor(path)
    assert loaded.kind == cons.kind
    assert loaded.output_dim == cons.output_dim
    rng = np.random.default_rng(42)
    probe = rng.normal(size=(7, ts.summaries.shape[1]))
    assert np.array_equal(loaded.transform(probe), cons.transform(probe))


def test_load_constructor_rejects_tampered_files(tmp_path):
    ts = make_training_set(seed=12)
    path = tmp_path / "constructor.json"
    save_constructor(path, fit_identity(ts))
    doc = json.loads(path.read_text())

    bad = dict(doc, format="something-else")
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError, match="not a summary-constructor file"):
        load_constructor(path)

    bad = dict(doc, version=99)
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError, match="unsupported constructor version"):
        load_constructor(path)

    bad = dict(doc, kind="mystery")
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError, match="unknown constructor kind"):
        load_constructor(path)

    bad = dict(doc, kind="linear-posterior-mean")  # payload lacks coef
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError, match="malformed constructor file"):
        load_constructor(path)
