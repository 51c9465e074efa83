import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowtune.errors import DimensionMismatch, EmptySampleSet, NonFiniteObservation
from flowtune.paramspace import expand_features, expand_matrix, n_features
from flowtune.regression import OnlineRegressor, RegressorConfig, batch_objective, cumulative_loss, \
    fit_offline, project_ball, regret, run_online


def flat(gamma=0.0, tube=0.0, eta0=0.1, radius=100.0, degree=1):
    return RegressorConfig(gamma=gamma, tube=tube, eta0=eta0, radius=radius, degree=degree)


def test_zero_model_predicts_zero():
    m = OnlineRegressor(3, RegressorConfig())
    assert m.predict(expand_features([0.2, 0.5, 0.9], 3)) == 0.0


def test_constant_model():
    w = np.zeros(n_features(2, 3))
    w[0] = 0.05
    m = OnlineRegressor(2, RegressorConfig(), w)
    for x in ([0, 0], [1, -1], [0.3, 0.7]):
        assert m.predict(expand_features(x, 3)) == pytest.approx(0.05, abs=1e-15)


def test_dot_product():
    assert OnlineRegressor(1, flat(), [0.1, 0.2]).predict([1, 2]) == pytest.approx(0.5)


def test_loss_at_zero_residual_is_penalty():
    m = OnlineRegressor(1, flat(gamma=0.3), [0.5, 0.25])
    y = m.predict([1, 2])
    assert m.loss([1, 2], y) == pytest.approx(0.3 * (0.25 + 0.0625))


def test_loss_outside_tube():
    m = OnlineRegressor(1, flat(tube=0.1), [0.5, 0.0])
    assert m.loss([1, 0], 0.0) == pytest.approx(0.4)


def test_loss_inside_tube():
    m = OnlineRegressor(1, flat(tube=0.1), [0.05, 0.0])
    assert m.loss([1, 0], 0.0) == 0.0


def test_one_step_hand_computation():
    m = OnlineRegressor(1, flat(eta0=0.1))
    rec = m.update([1, 2], 1.0)
    assert m.weights.tolist() == pytest.approx([0.1, 0.2], abs=1e-15)
    assert rec.loss == 1.0 and m.steps_taken == 1


def test_step_size_decays_with_sqrt_t():
    m = OnlineRegressor(1, flat(eta0=0.1))
    m.update([1, 0], 10.0)
    m.update([1, 0], 10.0)
    assert m.weights[0] == pytest.approx(0.1 + 0.1 / np.sqrt(2))


def test_no_move_inside_tube():
    m = OnlineRegressor(1, flat(tube=0.1), [0.3, 0.1])
    m.update([1, 1], 0.35)
    assert m.weights.tolist() == [0.3, 0.1]


def test_boundary_residual_takes_zero_subgradient():
    m = OnlineRegressor(1, flat(tube=0.25), [0.5, 0.0])
    assert m.gradient([1, 0], 0.25).tolist() == [0.0, 0.0]


def test_projection_lands_on_sphere():
    m = OnlineRegressor(1, flat(eta0=10.0, radius=1.0))
    m.update([3, 4], 100.0)
    assert np.linalg.norm(m.weights) == pytest.approx(1.0, rel=1e-12)


def test_dimension_and_observation_errors():
    m = OnlineRegressor(2, RegressorConfig())
    with pytest.raises(DimensionMismatch):
        m.predict([1, 2, 3])
    with pytest.raises(NonFiniteObservation):
        m.update(expand_features([0.1, 0.2], 3), float("nan"))
    with pytest.raises(EmptySampleSet):
        fit_offline([], RegressorConfig(), 2)


def test_config_validation():
    with pytest.raises(ValueError):
        RegressorConfig(degree=4)
    with pytest.raises(ValueError):
        RegressorConfig(eta0=0)
    with pytest.raises(ValueError):
        RegressorConfig(tube=-1)


def test_serialization_round_trip():
    m = OnlineRegressor(2, RegressorConfig(), np.arange(10) / 10, 7)
    back = OnlineRegressor.from_dict(m.to_dict())
    assert back.weights.tolist() == m.weights.tolist() and back.steps_taken == 7
    d = m.to_dict()
    d["basis"] = d["basis"][::-1]
    with pytest.raises(DimensionMismatch):
        OnlineRegressor.from_dict(d)


def _realizable(seed, n=100, d=3, degree=3):
    rng = np.random.default_rng(seed)
    X = expand_matrix(rng.uniform(-1, 1, (n, d)), degree)
    w = rng.normal(0, 0.5, X.shape[1])
    return X, X @ w


def test_offline_fits_realizable_target():
    X, y = _realizable(0)
    m = fit_offline((X, y), RegressorConfig(gamma=0, tube=0, eta0=0.03), 3, max_epochs=3000)
    assert np.mean(np.abs(X @ m.weights - y)) < 1e-3


def test_offline_single_sample_inside_tube():
    m = fit_offline([([1.0, 0.5], 0.01)], flat(tube=0.1))
    assert m.weights.tolist() == [0.0, 0.0]


def test_duplicated_samples_same_objective_and_model():
    X, y = _realizable(1, n=60, d=2, degree=2)
    cfg = RegressorConfig(gamma=0, tube=0.001, eta0=0.03, degree=2)
    X2, y2 = np.vstack([X, X]), np.concatenate([y, y])
    w = np.random.default_rng(0).normal(size=X.shape[1])
    assert batch_objective(w, X, y, cfg) == pytest.approx(batch_objective(w, X2, y2, cfg), rel=1e-12)
    a = fit_offline((X, y), cfg, 2, max_epochs=2000)
    b = fit_offline((X2, y2), cfg, 2, max_epochs=1000)
    assert np.max(np.abs(X @ a.weights - X @ b.weights)) < 0.01


def test_fit_accepts_pairs_and_arrays():
    X, y = _realizable(2, n=20, d=2, degree=1)
    a = fit_offline((X, y), flat(), 2, max_epochs=20)
    b = fit_offline(list(zip(X, y)), flat(), 2, max_epochs=20)
    assert a.weights.tolist() == b.weights.tolist()


def test_regret_arithmetic():
    assert regret([0.5, 0.25], 0.75) == 0
    assert regret([1, 1], 1) == 1


def test_regret_is_sublinear():
    ratios = []
    cfg = RegressorConfig(gamma=0.0, tube=0.001, eta0=0.1)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = expand_matrix(rng.uniform(-1, 1, (1000, 3)), 3)
        y = X @ rng.normal(0, 0.5, X.shape[1]) + rng.normal(0, 0.05, 1000)
        r = []
        for T in (500, 1000):
            _, losses = run_online(X[:T], y[:T], cfg, 3)
            r.append(regret(losses, cumulative_loss(fit_offline((X[:T], y[:T]), cfg, 3), X[:T], y[:T])))
        ratios.append(r[1] / r[0])
    assert np.mean(ratios) < 1.9


def test_online_error_falls_on_realizable_stream():
    worse = 0
    for seed in range(20):
        X, y = _realizable(seed, n=5000)
        m = OnlineRegressor(3, RegressorConfig(gamma=0, tube=0, eta0=0.3))
        errs = np.array([abs(m.update(x, t).prediction - t) for x, t in zip(X, y)])
        cum = np.cumsum(errs) / np.arange(1, len(errs) + 1)
        worse += cum[-1] >= 0.5 * cum[len(errs) // 10 - 1]
    assert worse == 0


@given(st.integers(0, 2**31), st.integers(1, 3))
def test_gradient_matches_finite_differences(seed, degree):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 3)
    phi = expand_features(x, degree).values
    w = rng.normal(0, 1, len(phi))
    cfg = RegressorConfig(gamma=0.05, tube=0.001, degree=degree)
    y = float(w @ phi) + rng.choice([-1, 1]) * rng.uniform(0.1, 1.0)
    m = OnlineRegressor(3, cfg, w)
    g = m.gradient(phi, y)
    h = 1e-6
    for j in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        fd = (OnlineRegressor(3, cfg, wp).loss(phi, y) - OnlineRegressor(3, cfg, wm).loss(phi, y)) / (2 * h)
        assert abs(fd - g[j]) <= 1e-4 * max(abs(g[j]), abs(fd), 1e-8) + 1e-9


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(0.1, 10))
def test_projection_idempotent(w, radius):
    w = np.array(w)
    p = project_ball(w, radius)
    assert np.linalg.norm(p) <= radius * (1 + 1e-12)
    assert np.allclose(project_ball(p, radius), p, rtol=1e-12, atol=0)


@given(st.integers(0, 2**31), st.floats(0.01, 5))
def test_updates_stay_in_ball_and_are_deterministic(seed, radius):
    rng = np.random.default_rng(seed)
    cfg = RegressorConfig(eta0=1.0, radius=radius, degree=2)
    a = OnlineRegressor(2, cfg)
    for _ in range(20):
        phi = expand_features(rng.uniform(-1, 1, 2), 2)
        y = float(rng.normal(0, 10))
        b = a.copy()
        a.update(phi, y)
        b.update(phi, y)
        assert a.weights.tolist() == b.weights.tolist()
        assert np.linalg.norm(a.weights) <= radius * (1 + 1e-12)
