import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import best_root_split, grow_reference, predict_reference, root_sse

from bikecast.errors import DimensionMismatch, EmptyDataset, UnfittedModel
from bikecast.learners import (
    HyperParams,
    feature_importance,
    fit_lsboost,
    fit_model,
    fit_plsr,
    fit_random_forest,
    fit_regression_tree,
    predict,
    select_n_components,
    truncate,
)
from bikecast.learners.io import dumps, load_model, loads, save_model
from bikecast.learners.tree import code_features, grow

# -- single tree ---------------------------------------------------------------


def test_constant_target_is_one_leaf():
    tree = fit_regression_tree(np.arange(20.0).reshape(10, 2), np.full(10, 4.0), min_samples_leaf=1)
    assert tree.n_nodes == 1 and tree.value[0] == 4.0


def test_step_example():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    tree = fit_regression_tree(X, y, min_samples_leaf=1)
    assert tree.feature[0] == 0 and 1.0 < tree.threshold[0] < 2.0
    assert sorted(tree.value[tree.feature < 0]) == [0.0, 10.0]
    assert np.array_equal(tree.predict(X), y)
    assert tree.predict([[2.5]])[0] == 10.0


def test_min_leaf_binds():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    tree = fit_regression_tree(X, np.array([1.0, 2.0, 7.0, 9.0]), min_samples_leaf=4)
    assert tree.n_nodes == 1 and tree.value[0] == 4.75


def test_bad_inputs():
    with pytest.raises(EmptyDataset):
        fit_regression_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(DimensionMismatch):
        fit_regression_tree(np.ones((3, 2)), np.ones(4))
    tree = fit_regression_tree(np.ones((3, 2)), np.ones(3))
    with pytest.raises(DimensionMismatch):
        tree.predict(np.ones((2, 3)))


small_instances = st.tuples(st.integers(2, 12), st.integers(1, 3), st.integers(0, 2**32 - 1))


@settings(max_examples=60, deadline=None)
@given(small_instances, st.booleans())
def test_root_split_is_optimal(shape, discrete):
    n, p, seed = shape
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, p)).astype(float) if discrete else rng.normal(size=(n, p))
    y = rng.normal(size=n)
    tree = fit_regression_tree(X, y, max_depth=1, min_samples_leaf=1)
    assert root_sse(tree, X, y) == best_root_split(X, y)[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_tree_matches_reference_grower(n, p, min_leaf, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, rng.integers(2, 40), size=(n, p)).astype(float)
    y = rng.integers(0, 20, size=n).astype(float)
    w = rng.integers(0, 4, size=n).astype(float)
    if w.sum() == 0:
        w[0] = 1.0
    rows = np.flatnonzero(w)
    tree, leaf_of = grow(code_features(X), y, w, rows, p, 30, min_leaf, 0)
    ref = grow_reference(X[rows], y[rows], w[rows], 30, min_leaf)
    probe = rng.integers(-1, 41, size=(50, p)).astype(float)
    assert tree.predict(probe).tolist() == [predict_reference(ref, x) for x in probe]
    assert np.all(leaf_of[w == 0] == -1)
    assert np.array_equal(leaf_of[rows], tree.apply(X[rows]))


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 40), st.integers(0, 2**32 - 1))
def test_weights_equal_duplicated_rows(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3)).round(1)
    # integer targets keep every sum exact, so both growers see identical scores
    y = rng.integers(-9, 10, size=n).astype(float)
    w = rng.integers(0, 3, size=n)
    w[0] = max(w[0], 1)
    rows = np.flatnonzero(w)
    weighted, _ = grow(code_features(X), y, w.astype(float), rows, 3, 30, 2, 0)
    expanded = fit_regression_tree(np.repeat(X, w, axis=0), np.repeat(y, w), min_samples_leaf=2)
    assert np.array_equal(weighted.feature, expanded.feature)
    assert np.array_equal(weighted.threshold, expanded.threshold)
    assert np.array_equal(weighted.value, expanded.value)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_leaf_mean_property(n, depth, leaf, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = rng.normal(size=n)
    tree = fit_regression_tree(X, y, max_depth=depth, min_samples_leaf=leaf, mtry=2, seed=seed)
    leaves = tree.apply(X)
    for k in np.unique(leaves):
        assert tree.feature[k] == -1
        assert tree.value[k] == pytest.approx(y[leaves == k].mean(), abs=1e-12)
        assert tree.n_samples[k] == (leaves == k).sum() >= min(leaf, n)
    internal = tree.feature >= 0
    assert np.all(tree.left[internal] > 0) and np.all(tree.right[internal] > 0)
    assert tree.depth <= depth


def test_wide_value_range_uses_sparse_scan():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 2))
    y = np.sin(3 * X[:, 0]) + rng.normal(scale=0.1, size=300)
    tree = fit_regression_tree(X, y, min_samples_leaf=3)
    ref = grow_reference(X, y, np.ones(300), 30, 3)
    probe = rng.normal(size=(100, 2))
    assert np.allclose(tree.predict(probe), [predict_reference(ref, x) for x in probe], rtol=0, atol=1e-12)


# -- forest --------------------------------------------------------------------


def regression_data(n=150, p=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = 2 * X[:, 1] + np.where(X[:, 3] > 0, 1.0, -1.0) + rng.normal(scale=0.3, size=n)
    return X, y


def same_tree(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("feature", "threshold", "left", "right", "value"))


def test_forest_degenerates_to_tree():
    X, y = regression_data()
    forest = fit_random_forest(X, y, n_trees=1, bootstrap=False, mtry=5)
    tree = fit_regression_tree(X, y)
    assert same_tree(forest.trees[0], tree)
    assert forest.predict(X).tobytes() == tree.predict(X).tobytes()


def test_forest_determinism_and_jobs():
    X, y = regression_data()
    a = fit_random_forest(X, y, n_trees=12, seed=4)
    b = fit_random_forest(X, y, n_trees=12, seed=4, jobs=3)
    assert all(same_tree(s, t) for s, t in zip(a.trees, b.trees))
    c = fit_random_forest(X, y, n_trees=12, seed=5)
    assert not np.array_equal(a.predict(X), c.predict(X))


def test_forest_truncation_equals_smaller_fit():
    X, y = regression_data()
    big = fit_random_forest(X, y, n_trees=10, seed=2)
    small = fit_random_forest(X, y, n_trees=4, seed=2)
    assert big.truncate(4).predict(X).tobytes() == small.predict(X).tobytes()
    assert truncate(big, 4).n_trees == 4


def test_forest_of_constants():
    X = np.random.default_rng(0).normal(size=(30, 2))
    assert np.all(fit_random_forest(X, np.full(30, 3.0), n_trees=5).predict(X) == 3.0)


def test_forest_prediction_is_tree_mean():
    X, y = regression_data()
    forest = fit_random_forest(X, y, n_trees=7, seed=1)
    assert np.allclose(forest.predict(X), np.mean([t.predict(X) for t in forest.trees], axis=0), rtol=0, atol=1e-12)


def test_forest_beats_mean_out_of_sample():
    X, y = regression_data(400)
    forest = fit_random_forest(X[:300], y[:300], n_trees=30, seed=0)
    err = np.mean((forest.predict(X[300:]) - y[300:]) ** 2)
    assert err < 0.5 * np.var(y[300:])


# -- boosting ------------------------------------------------------------------


def stage_trace(model, X, y):
    """Residuals before each stage and the stage's tree output, recomputed from the stored model."""
    F = np.full(len(y), model.f0)
    out = []
    for tree, beta in zip(model.trees, model.betas):
        h = tree.predict(X)
        out.append((y - F, h, beta))
        F = F + model.shrinkage * beta * h
    return out, F


@pytest.mark.parametrize("seed", range(5))
def test_boosting_descent_and_orthogonality(seed):
    X, y = regression_data(120, seed=seed)
    model = fit_lsboost(X, y, n_stages=50, shrinkage=1.0, seed=seed)
    trace, F = stage_trace(model, X, y)
    sse = [float(((y - model.f0) ** 2).sum())] + [float(((r - beta * h) ** 2).sum()) for r, h, beta in trace]
    assert all(b <= a + 1e-12 * sse[0] for a, b in zip(sse, sse[1:]))
    for r, h, beta in trace:
        assert abs(np.dot(r - beta * h, h)) <= 1e-10
    assert np.allclose(F, model.predict(X), rtol=0, atol=1e-12)


def test_boosting_shrinkage_orthogonality():
    X, y = regression_data(100, seed=9)
    model = fit_lsboost(X, y, n_stages=30, shrinkage=0.1, seed=9)
    for r, h, beta in stage_trace(model, X, y)[0]:
        assert abs(np.dot(r - beta * h, h)) <= 1e-10


def test_boosting_constant_target():
    X = np.random.default_rng(0).normal(size=(40, 3))
    model = fit_lsboost(X, np.full(40, 2.5), n_stages=5)
    assert model.f0 == 2.5 and model.inert.all() and np.all(model.betas == 0)
    assert np.all(model.predict(X) == 2.5)


def test_boosting_zero_stages():
    X, y = regression_data()
    model = fit_lsboost(X, y, n_stages=0)
    assert np.all(model.predict(X) == y.mean())
    assert np.array_equal(fit_lsboost(X, y, n_stages=5).truncate(0).predict(X), model.predict(X))


def test_boosting_staged_and_truncated():
    X, y = regression_data()
    model = fit_lsboost(X, y, n_stages=12, seed=1)
    staged = list(model.staged_predict(X))
    assert len(staged) == 13 and staged[-1].tobytes() == model.predict(X).tobytes()
    assert model.truncate(5).predict(X).tobytes() == fit_lsboost(X, y, n_stages=5, seed=1).predict(X).tobytes()


# -- PLSR ----------------------------------------------------------------------


def linear_data(n=200, p=8, q=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 3, size=p) + rng.normal(size=p)
    B = rng.normal(size=(p, q))
    return X, X @ B + rng.normal(size=q), B


def lstsq_coef(X, Y):
    Xc = X - X.mean(axis=0)
    return np.linalg.solve(Xc.T @ Xc, Xc.T @ (Y - Y.mean(axis=0)))


@pytest.mark.parametrize("scale", [True, False])
def test_plsr_full_rank_is_least_squares(scale):
    X, Y, B = linear_data()
    model = fit_plsr(X, Y, 8, scale=scale)
    assert np.max(np.abs(model.coef - lstsq_coef(X, Y))) <= 1e-8
    assert np.max(np.abs(model.coef - B)) <= 1e-8
    T = model.transform(X)
    G = T.T @ T
    d = np.sqrt(np.diag(G))
    off = G / np.outer(d, d) - np.eye(8)
    assert np.max(np.abs(off)) <= 1e-8


def test_plsr_two_feature_example():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    model = fit_plsr(X, 2 * X[:, 0] - X[:, 1], 2)
    assert np.allclose(model.coef[:, 0], [2.0, -1.0], rtol=0, atol=1e-8)


def test_plsr_single_column_is_simple_regression():
    rng = np.random.default_rng(2)
    x = rng.normal(size=40)
    y = 0.7 * x + 3 + rng.normal(scale=0.2, size=40)
    model = fit_plsr(x[:, None], y, 1)
    slope = np.sum((x - x.mean()) * (y - y.mean())) / np.sum((x - x.mean()) ** 2)
    intercept = y.mean() - slope * x.mean()
    probe = np.linspace(-2, 2, 7)
    assert np.allclose(model.predict(probe[:, None])[:, 0], intercept + slope * probe, rtol=0, atol=1e-10)


def test_plsr_errors():
    X, Y, _ = linear_data()
    with pytest.raises(DimensionMismatch):
        fit_plsr(X, Y[:10], 2)
    with pytest.raises(ValueError):
        fit_plsr(X, Y, 9)
    with pytest.raises(DimensionMismatch):
        fit_plsr(X, Y, 2).predict(X[:, :3])


def test_select_n_components_in_range():
    X, Y, _ = linear_data(seed=3)
    a = select_n_components(X, Y + np.random.default_rng(0).normal(scale=0.1, size=Y.shape))
    assert 1 <= a <= 8
    assert fit_model(X, Y, HyperParams(kind="plsr", seed=0)).n_components == select_n_components(X, Y)



def test_select_n_components_skips_unreachable_components(monkeypatch):
    from bikecast.errors import ConvergenceFailure
    from bikecast.learners import plsr

    real = plsr.fit_plsr

    def stalls_after_three(X, Y, n_components, **kw):
        if n_components > 3:
            raise ConvergenceFailure("component 4 did not converge")
        return real(X, Y, n_components, **kw)

    X, Y, _ = linear_data(seed=3)
    monkeypatch.setattr(plsr, "fit_plsr", stalls_after_three)
    assert 1 <= select_n_components(X, Y) <= 3
    monkeypatch.setattr(plsr, "fit_plsr", lambda *a, **k: (_ for _ in ()).throw(ConvergenceFailure("never")))
    with pytest.raises(ConvergenceFailure):
        select_n_components(X, Y)


def test_nipals_reports_slow_convergence():
    from bikecast.errors import ConvergenceFailure

    # close leading singular values slow the power iteration down
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.normal(size=(500, 2)))
    c, s = np.cos(0.7), np.sin(0.7)
    X = (U * np.array([1.0, 0.999]) * 30) @ np.array([[c, -s], [s, c]])
    with pytest.raises(ConvergenceFailure):
        fit_plsr(X, X, 2, scale=False, max_iter=1_000)
    m = fit_plsr(X, X, 2, scale=False)
    np.testing.assert_allclose(m.predict(X), X, atol=1e-8)


# -- unified interface, importance, serialisation -------------------------------


@pytest.mark.parametrize("kind", ["tree", "forest", "lsboost", "plsr"])
def test_predict_shape_and_round_trip(kind, tmp_path):
    X, y = regression_data(80)
    params = HyperParams(kind=kind, n_trees=6, n_components=3, seed=3)
    model = fit_model(X, y, params)
    out = predict(model, X)
    assert out.shape == (80, 1)
    save_model(model, tmp_path / "m.json", params.to_dict())
    back = load_model(tmp_path / "m.json")
    assert predict(back, X).tobytes() == out.tobytes()
    assert dumps(back, params.to_dict()) == dumps(model, params.to_dict())
    assert type(loads(dumps(model))) is type(model)


def test_importance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 4))
    X[:, 2] = 1.0
    y = 3 * X[:, 1] + rng.normal(scale=0.05, size=200)
    forest = fit_random_forest(X, y, n_trees=20, mtry=2, seed=0)
    imp = feature_importance(forest, ["a", "b", "c", "d"])
    assert max(imp, key=imp.get) == "b"
    assert imp["c"] == 0.0
    assert abs(sum(imp.values()) - 1.0) <= 1e-12
    with pytest.raises(UnfittedModel):
        feature_importance(fit_plsr(X[:, [0, 1, 3]], y, 2))


def test_importance_is_gain_bookkeeping():
    X, y = regression_data(60)
    tree = fit_regression_tree(X, y, max_depth=3, min_samples_leaf=1)
    # gain at each split recomputed from the routed training rows
    leaves_at = {0: np.arange(60)}
    totals = np.zeros(5)
    for k in range(tree.n_nodes):
        rows = leaves_at[k]
        if tree.feature[k] < 0:
            continue
        go_left = X[rows, tree.feature[k]] <= tree.threshold[k]
        leaves_at[tree.left[k]], leaves_at[tree.right[k]] = rows[go_left], rows[~go_left]

        def sse(r):
            return ((y[r] - y[r].mean()) ** 2).sum()

        totals[tree.feature[k]] += sse(rows) - sse(rows[go_left]) - sse(rows[~go_left])
    imp = feature_importance(tree)
    assert np.allclose(list(imp.values()), totals / totals.sum(), rtol=0, atol=1e-9)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        HyperParams(kind="svm")
    with pytest.raises(ValueError):
        HyperParams(n_trees=0)
    with pytest.raises(ValueError):
        HyperParams(shrinkage=1.5)
    assert HyperParams().resolved_mtry(22) == 8
    assert HyperParams(kind="lsboost").resolved_max_depth() == 4
