import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import spearmanr

from flowtune.dataflow import DataFlowGraph, all_paths, critical_path
from flowtune.errors import EmptySamples, InsufficientVariation, UntrainedStage
from flowtune.paramspace import Configuration, ParamSpec, n_features
from flowtune.regression import OnlineRegressor, RegressorConfig
from flowtune.sim.generator import GESTURE_GRAPH, GESTURE_SPECS, GESTURE_STAGE_PARAMS
from flowtune.structured import CompositionNode, MonolithicLatencyModel, MovingAverage, RegressorStage, \
    StageSample, StructuredLatencyModel, build, composition_tree, dependency_analysis, \
    identify_critical_stages, pearson, rank_correlation

from conftest import random_sp

CHAIN = DataFlowGraph.chain(("a", "b", "c"))
FORK = DataFlowGraph(("src", "l", "r", "snk"), (("src", "l"), ("src", "r"), ("l", "snk"), ("r", "snk")))
ONE = [ParamSpec("k", "continuous", 0, 1)]


def samples_for(graph, rows):
    return [StageSample(i, i, dict(zip(graph.stages, r))) for i, r in enumerate(rows)]


# --- critical stages ----------------------------------------------------------

def test_single_heavy_stage():
    s = samples_for(CHAIN, [(0.0, 0.5, 0.0), (0.0, 0.7, 0.0)])
    assert identify_critical_stages(s, CHAIN) == {"b"}


def test_equal_shares_all_critical():
    n = 3
    s = samples_for(CHAIN, [(0.1, 0.1, 0.1)] * 4)
    assert identify_critical_stages(s, CHAIN, 1 / (2 * n)) == {"a", "b", "c"}


def test_dominant_branch_only():
    g = DataFlowGraph(("src", "h1", "h2", "l1", "snk"),
                      (("src", "h1"), ("h1", "h2"), ("src", "l1"), ("h2", "snk"), ("l1", "snk")))
    rng = np.random.default_rng(3)
    rows = [(0.001, h1, h2, 0.004, 0.001) for h1, h2 in rng.uniform(0.02, 0.06, (20, 2))]
    s = samples_for(g, rows)
    # shares from brute-force path enumeration
    paths = all_paths(g)
    e2e = np.mean([max(sum(dict(zip(g.stages, r))[v] for v in p) for p in paths) for r in rows])
    shares = {v: np.mean([r[i] for r in rows]) / e2e for i, v in enumerate(g.stages)}
    expect = {v for v, sh in shares.items() if sh > 0.05}
    assert expect == {"h1", "h2"}
    assert identify_critical_stages(s, g) == expect


def test_no_samples():
    with pytest.raises(EmptySamples):
        identify_critical_stages([], CHAIN)


# --- dependency analysis --------------------------------------------------------

def _dep_samples(configs, law):
    return [StageSample(i, c.id, {"x": law(c.params), "y": 0.5}) for i, c in enumerate(configs)]


def test_linear_dependence():
    configs = [Configuration(i, (float(i + 1), 3.0 * (i % 2))) for i in range(8)]
    deps = dependency_analysis(_dep_samples(configs, lambda k: 2 * k[0]), configs)
    assert deps["x"] == [0] and deps["y"] == []
    assert dependency_analysis(_dep_samples(configs, lambda k: 2 * k[0]), configs, method="pearson")["x"] == [0]


def test_constant_latency_no_association():
    configs = [Configuration(i, (float(i),)) for i in range(5)]
    assert dependency_analysis(_dep_samples(configs, lambda k: 0.3), configs) == {"x": [], "y": []}


def test_inverse_parallelism_is_associated():
    rng = np.random.default_rng(8)
    configs = [Configuration(i, (int(p),)) for i, p in enumerate(rng.integers(1, 9, 30))]
    samples = [StageSample(i, c.id, {"x": 0.4 / c.params[0] + rng.normal(0, 0.002)}) for i, c in enumerate(configs)]
    # independent statistics oracle on the per-config means
    ids = sorted({c.id for c in configs})
    p = [configs[i].params[0] for i in ids]
    m = [np.mean([s.per_stage["x"] for s in samples if s.config_id == i]) for i in ids]
    assert abs(spearmanr(p, m).statistic) > 0.9
    assert dependency_analysis(samples, configs)["x"] == [0]


def test_raw_correlation_misses_inverse_law():
    p = np.arange(1, 9, dtype=float)
    assert abs(pearson(p, 1 / p)) < 0.9
    assert rank_correlation(p, 1 / p) == pytest.approx(-1.0)


def test_too_few_configurations():
    configs = [Configuration(0, (1.0,)), Configuration(1, (2.0,))]
    with pytest.raises(InsufficientVariation):
        dependency_analysis(_dep_samples(configs, lambda k: k[0]), configs)


# --- composition ------------------------------------------------------------------

def test_gesture_tree():
    assert str(composition_tree(GESTURE_GRAPH)) == \
        "sum(source, copy, max(sum(face_scale, face_detect), sum(motion_scale, motion_extract)), classify, sink)"


def test_degenerate_trees():
    assert composition_tree(DataFlowGraph(("a",), ())) == CompositionNode.leaf("a")
    t = composition_tree(CHAIN)
    assert t.op == "sum" and [c.stage for c in t.children] == ["a", "b", "c"]


def test_bridge_is_not_series_parallel():
    g = DataFlowGraph(("s", "a", "b", "t"), (("s", "a"), ("s", "b"), ("a", "b"), ("a", "t"), ("b", "t")))
    assert composition_tree(g) is None


def test_tree_arithmetic():
    assert composition_tree(CHAIN).evaluate({"a": 0, "b": 0, "c": 0}) == 0
    assert composition_tree(CHAIN).evaluate({"a": 0.01, "b": 0.02, "c": 0.03}) == pytest.approx(0.06)
    assert composition_tree(FORK).evaluate({"src": 0.01, "l": 0.05, "r": 0.03, "snk": 0.0}) == pytest.approx(0.06)


def test_tree_round_trip():
    t = composition_tree(GESTURE_GRAPH)
    assert CompositionNode.from_dict(t.to_dict()) == t


@given(st.integers(0, 2**31))
def test_tree_equals_critical_path(seed):
    rng = np.random.default_rng(seed)
    stages, conns, _, _ = random_sp(rng)
    g = DataFlowGraph(tuple(stages), tuple(sorted(set(conns))))
    tree = composition_tree(g)
    assert tree is not None
    w = {s: float(rng.uniform(0, 1)) for s in stages}
    assert tree.evaluate(w) == critical_path(g, w)[1]


def test_tree_equals_critical_path_on_100_graphs():
    rng = np.random.default_rng(77)
    for _ in range(100):
        stages, conns, _, _ = random_sp(rng)
        g = DataFlowGraph(tuple(stages), tuple(sorted(set(conns))))
        w = {s: float(rng.uniform(0, 1)) for s in stages}
        assert composition_tree(g).evaluate(w) == critical_path(g, w)[1]


# --- stage models and the composed model ----------------------------------------------

def test_moving_average():
    m = MovingAverage(1)
    with pytest.raises(UntrainedStage):
        m.value("a")
    m.push(0.042)
    assert m.value() == 0.042
    m2 = MovingAverage(2)
    for x in (1.0, 2.0, 4.0):
        m2.push(x)
    assert m2.value() == 3.0


def _single_regressor_model(cfg, weights=None):
    g = DataFlowGraph(("a",), ())
    return StructuredLatencyModel(g, ONE, {"a": RegressorStage(OnlineRegressor(1, cfg, weights), (0,))})


def test_regressor_leaf_step_matches_plain_regressor():
    cfg = RegressorConfig(gamma=0, tube=0, eta0=0.1, degree=1)
    model = _single_regressor_model(cfg)
    model.update(StageSample(0, 0, {"a": 1.0}), (1.0,))
    plain = OnlineRegressor(1, cfg)
    plain.update([1.0, 1.0], 1.0)  # input 1.0 maps to feature vector (1, 1)
    assert model.stage_models["a"].regressor.weights.tolist() == plain.weights.tolist() == \
        pytest.approx([0.1, 0.1])


def test_in_tube_sample_leaves_model_unchanged():
    cfg = RegressorConfig(tube=0.01, degree=1, gamma=0)
    model = _single_regressor_model(cfg, [0.2, 0.1])
    pred = model.predict_end_to_end((0.5,))
    model.update(StageSample(0, 0, {"a": pred + 0.005}), (0.5,))
    assert model.stage_models["a"].regressor.weights.tolist() == [0.2, 0.1]


def test_negative_leaf_predictions_clamped():
    model = _single_regressor_model(RegressorConfig(degree=1), [-1.0, 0.0])
    assert model.predict_end_to_end((0.3,)) == 0.0


def _toy_fork_model():
    specs = [ParamSpec("p", "discrete", 1, 8), ParamSpec("q", "discrete", 1, 8)]
    cfg = RegressorConfig(degree=1)
    models = {"src": MovingAverage(4), "snk": MovingAverage(4),
              "l": RegressorStage(OnlineRegressor(1, cfg, [0.05, 0.0]), (0,)),
              "r": RegressorStage(OnlineRegressor(1, cfg, [0.03, 0.0]), (1,))}
    models["src"].push(0.01)
    models["snk"].push(0.0)
    return StructuredLatencyModel(FORK, specs, models), specs


def test_fork_prediction():
    model, _ = _toy_fork_model()
    assert model.predict_end_to_end((3, 5)) == pytest.approx(0.06)


def test_batch_predictions_match_single():
    model, specs = _toy_fork_model()
    configs = [Configuration(i, (i % 8 + 1, (3 * i) % 8 + 1)) for i in range(10)]
    assert model.predict_configs(configs).tolist() == pytest.approx(
        [model.predict_end_to_end(c.params) for c in configs], abs=1e-15)


@given(st.dictionaries(st.sampled_from(GESTURE_GRAPH.stages), st.floats(0, 1), min_size=8),
       st.sampled_from(GESTURE_GRAPH.stages), st.floats(0, 1))
def test_raising_a_leaf_never_lowers_prediction(values, stage, delta):
    tree = composition_tree(GESTURE_GRAPH)
    before = tree.evaluate(values)
    values = dict(values)
    values[stage] += delta
    assert tree.evaluate(values) >= before


@given(st.lists(st.floats(0, 0.5), min_size=8, max_size=8), st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_exactly_trained_leaves_give_zero_error(lat, x):
    # each stage a constant regressor equal to its observed latency
    cfg = RegressorConfig(degree=1)
    specs = [ParamSpec(f"k{i}", "continuous", -1, 1) for i in range(5)]
    models = {s: RegressorStage(OnlineRegressor(5, cfg, [l, 0, 0, 0, 0, 0]), (0, 1, 2, 3, 4))
              for s, l in zip(GESTURE_GRAPH.stages, lat)}
    model = StructuredLatencyModel(GESTURE_GRAPH, specs, models)
    sample = dict(zip(GESTURE_GRAPH.stages, lat))
    assert model.predict_end_to_end(x) == critical_path(GESTURE_GRAPH, sample)[1]


# --- build ---------------------------------------------------------------------------

def test_build_feature_split(gesture_trace):
    ts = gesture_trace
    boot = [ts.stage_sample(t, ts.configs[t % ts.n_configs].id) for t in range(30)]
    model = build(ts.graph, boot, ts.configs, ts.specs, RegressorConfig(), stage_params=GESTURE_STAGE_PARAMS)
    kinds = {s: m.kind for s, m in model.stage_models.items()}
    assert kinds["face_detect"] == kinds["motion_extract"] == "regressor"
    assert sum(k == "regressor" for k in kinds.values()) == 2
    assert model.n_features == n_features(3, 3) + n_features(2, 3) == 30
    assert MonolithicLatencyModel(GESTURE_SPECS, RegressorConfig()).n_features == 56


def test_build_infers_dependencies(gesture_trace):
    ts = gesture_trace
    boot = [ts.stage_sample(t, ts.configs[t % ts.n_configs].id) for t in range(30)]
    model = build(ts.graph, boot, ts.configs, ts.specs, RegressorConfig())
    for s in ("face_detect", "motion_extract"):
        assert model.stage_models[s].kind == "regressor"


def test_model_round_trips(gesture_trace):
    ts = gesture_trace
    boot = [ts.stage_sample(t, ts.configs[t % ts.n_configs].id) for t in range(30)]
    model = build(ts.graph, boot, ts.configs, ts.specs, RegressorConfig(), stage_params=GESTURE_STAGE_PARAMS)
    back = StructuredLatencyModel.from_dict(model.to_dict())
    assert back.to_dict() == model.to_dict()
    assert back.predict_configs(list(ts.configs)).tolist() == model.predict_configs(list(ts.configs)).tolist()
    mono = MonolithicLatencyModel(ts.specs, RegressorConfig())
    mono.update(boot[0], ts.configs[0].params, 0.1)
    assert MonolithicLatencyModel.from_dict(mono.to_dict()).to_dict() == mono.to_dict()
