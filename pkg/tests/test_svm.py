import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dual_qp_oracle, gram, platt_grid_min, platt_nll
from stackvad.errors import DimensionMismatch, EmptyDataset, InvalidConfig, SingleClass
from stackvad.features import LabeledDataset
from stackvad.svm import (GridSpec, KernelCache, Scaler, SvmHyperparams, SvmModel,
                          decision, dual_objective, fit_platt, grid_search, load_svm,
                          predict_prob, rbf_kernel, rbf_matrix, save_svm, smo_solve,
                          standardize_apply, standardize_fit, stratified_folds, train_svm)


def standardized(X):
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def kkt_violations(model, X, y):
    """Largest violation of the tolerance-banded KKT conditions over the training set."""
    f = model.decision_function(X) * y
    Xs = model.scaler.apply(X)
    worst = 0.0
    C = model.hyperparams.C
    for i in range(len(y)):
        hit = np.flatnonzero(np.all(model.support_vectors == Xs[i], axis=1))
        a = abs(model.dual_coeffs[hit[0]]) if hit.size else 0.0
        if a == 0:
            worst = max(worst, 1 - f[i])
        elif a >= C:
            worst = max(worst, f[i] - 1)
        else:
            worst = max(worst, abs(f[i] - 1))
    return worst


# --- kernel --------------------------------------------------------------------

def test_rbf_examples():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0], 3.7) == 1.0
    assert rbf_kernel([0, 0], [1, 0], 1.0) == pytest.approx(math.exp(-1), abs=1e-7)
    assert abs(rbf_kernel([0.0], [1.0], 1e-12) - (1 - 1e-12)) <= 1e-15
    with pytest.raises(DimensionMismatch):
        rbf_kernel([0, 0], [0, 0, 0], 1.0)


def test_rbf_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 4))
    K = rbf_matrix(X, X, 0.7)
    assert np.array_equal(K, K.T)
    assert np.all((K > 0) & (K <= 1))
    assert np.linalg.eigvalsh(K).min() >= -1e-8
    assert K[3, 5] == pytest.approx(rbf_kernel(X[3], X[5], 0.7), abs=1e-15)


def test_kernel_cache_lru():
    X = np.random.default_rng(0).normal(size=(10, 3))
    cache = KernelCache(X, 0.5, capacity=3)
    for i in (0, 1, 2, 0, 3):
        cache.row(i)
    assert list(cache.rows) == [2, 0, 3]
    assert cache.hits == 1 and cache.misses == 4
    np.testing.assert_array_equal(cache.row(0), rbf_matrix(X[:1], X, 0.5)[0])


# --- scaler --------------------------------------------------------------------

def test_scaler_examples():
    sc = standardize_fit([[0.0], [2.0]])
    assert sc.means[0] == 1 and sc.stds[0] == 1
    assert standardize_apply(sc, [2.0])[0] == 1
    const = standardize_fit([[5.0, 1.0], [5.0, 3.0]])
    assert const.stds[0] == 1.0
    assert standardize_apply(const, [5.0, 2.0])[0] == 0.0
    rows = np.random.default_rng(1).normal(3, 2, size=(50, 4))
    np.testing.assert_allclose(standardize_fit(rows).apply(rows).mean(axis=0), 0, atol=1e-9)
    with pytest.raises(EmptyDataset):
        standardize_fit(np.empty((0, 3)))


# --- training ------------------------------------------------------------------

def test_symmetric_pair():
    m = train_svm(([[-1.0], [1.0]], [-1, 1]), SvmHyperparams(C=10, gamma=0.5))
    assert m.bias == pytest.approx(0, abs=1e-6)
    assert decision(m, [0.0]) == pytest.approx(0, abs=1e-6)
    assert m.predict([[2.0], [-2.0]]).tolist() == [1, -1]


def test_xor_against_qp_oracle():
    X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    y = np.array([1, 1, -1, -1])
    m = train_svm((X, y), SvmHyperparams(C=10, gamma=1))
    assert np.all(m.predict(X) == y)
    alpha = np.zeros(4)
    Xs = m.scaler.apply(X)
    for sv, c in zip(m.support_vectors, m.dual_coeffs):
        alpha[np.flatnonzero(np.all(Xs == sv, axis=1))[0]] = abs(c)
    _, oracle_obj, _ = dual_qp_oracle(standardized(X), y, 10, 1)
    assert dual_objective(alpha, y, gram(standardized(X), 1)) == pytest.approx(oracle_obj, abs=1e-3)


def test_single_class_rejected():
    with pytest.raises(SingleClass):
        train_svm(([[0.0], [1.0], [2.0]], [1, 1, 1]))


def test_hyperparam_validation():
    with pytest.raises(InvalidConfig):
        SvmHyperparams(C=0)
    with pytest.raises(InvalidConfig):
        SvmHyperparams(gamma=-1)


def test_iteration_cap_flags_model(blobs):
    data = blobs(40, dim=3, sep=0.5)
    m = train_svm(data, SvmHyperparams(C=100, gamma=1, max_iter=2))
    assert not m.converged and m.n_iter == 2


def test_decision_equals_hand_expansion(blobs):
    data = blobs(30, dim=4, sep=1.0, seed=4)
    m = train_svm(data, SvmHyperparams(C=3, gamma=0.4))
    x = np.random.default_rng(7).normal(size=4)
    xs = (x - m.scaler.means) / m.scaler.stds
    total = m.bias
    for sv, c in zip(m.support_vectors, m.dual_coeffs):
        total += c * math.exp(-0.4 * sum((a - b) ** 2 for a, b in zip(sv, xs)))
    assert decision(m, x) == pytest.approx(total, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        decision(m, np.zeros(5))


def test_support_vectors_classified_by_their_label(blobs):
    data = blobs(25, dim=2, sep=8.0, seed=1, spread=0.5)
    m = train_svm(data, SvmHyperparams(C=100, gamma=0.5))
    Xs = m.scaler.apply(data.vectors)
    for sv, c in zip(m.support_vectors, m.dual_coeffs):
        i = np.flatnonzero(np.all(Xs == sv, axis=1))[0]
        assert np.sign(decision(m, data.vectors[i])) == data.labels[i] == np.sign(c)


def test_model_invariants_and_kkt(blobs):
    data = blobs(60, dim=5, sep=1.5, seed=2)
    hp = SvmHyperparams(C=2.0, gamma=0.3)
    m = train_svm(data, hp)
    assert m.converged
    assert np.all(np.abs(m.dual_coeffs) <= hp.C)
    assert np.all(m.dual_coeffs != 0)
    assert abs(m.dual_coeffs.sum()) <= 1e-8
    assert kkt_violations(m, data.vectors, data.labels) <= hp.tol


def test_dual_objective_monotone(blobs):
    data = blobs(50, dim=3, sep=1.0, seed=3)
    hist = []
    train_svm(data, SvmHyperparams(C=5, gamma=0.5), history=hist)
    assert len(hist) > 5
    assert np.all(np.diff(hist) >= -1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 20), d=st.integers(1, 4),
       C=st.floats(0.1, 10), gamma=st.floats(0.1, 2))
def test_smo_matches_qp_oracle(seed, n, d, C, gamma):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.choice([-1, 1], n)
    y[0], y[1] = 1, -1
    res = smo_solve(standardized(X), y, C, gamma)
    K = gram(standardized(X), gamma)
    alpha, obj, b = dual_qp_oracle(standardized(X), y, C, gamma)
    assert dual_objective(res.alpha, y, K) == pytest.approx(obj, abs=1e-3)
    assert np.all(res.alpha >= 0) and np.all(res.alpha <= C)
    assert abs(res.alpha @ y) <= 1e-8


# --- Platt ------------------------------------------------------------------------

def test_platt_symmetric_separable():
    s = np.r_[np.linspace(0.5, 3, 20), -np.linspace(0.5, 3, 20)]
    y = np.r_[np.ones(20), -np.ones(20)]
    a, b = fit_platt(s, y)
    assert a < 0
    assert 1 / (1 + math.exp(b)) == pytest.approx(0.5, abs=1e-6)
    best, _, _ = platt_grid_min(s, y, a_range=(-50, 0), b_range=(-5, 5))
    assert platt_nll(a, b, s, y) <= best + 1e-4


def test_platt_constant_scores():
    y = np.r_[np.ones(10), -np.ones(10)]
    a, b = fit_platt(np.zeros(20), y)
    assert 1 / (1 + math.exp(b)) == pytest.approx(0.5, abs=1e-6)
    best, _, _ = platt_grid_min(np.zeros(20), y)
    assert platt_nll(a, b, np.zeros(20), y) == pytest.approx(best, abs=1e-4)


def test_platt_single_class_gives_prior_target():
    s = np.random.default_rng(0).normal(size=30)
    a, b = fit_platt(s, np.ones(30))
    p = 1 / (1 + np.exp(a * s + b))
    np.testing.assert_allclose(p, 31 / 32, atol=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_platt_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    y = rng.choice([-1, 1], 60)
    s = y * rng.uniform(0, 2) + rng.normal(0, 1, 60)
    a, b = fit_platt(s, y)
    best, _, _ = platt_grid_min(s, y)
    assert abs(platt_nll(a, b, s, y) - best) <= 1e-4


def test_predict_prob_closed_form_and_monotone():
    model = SvmModel(np.zeros((1, 1)), np.array([1.0]), 0.0, SvmHyperparams(gamma=1.0),
                     Scaler(np.zeros(1), np.ones(1)), platt_a=-2.0, platt_b=0.3)
    # x far away: kernel vanishes, decision = bias = 0
    assert predict_prob(model, [1e3]) == pytest.approx(1 / (1 + math.exp(0.3)), abs=1e-15)
    xs = np.linspace(0, 3, 50)[:, None]
    f = model.decision_function(xs)
    p = model.predict_proba(xs)
    order = np.argsort(f)
    assert np.all(np.diff(p[order]) > 0)
    assert np.all((p > 0) & (p < 1))
    huge = SvmModel(np.zeros((1, 1)), np.array([1.0]), 1e6, SvmHyperparams(gamma=1.0),
                    Scaler(np.zeros(1), np.ones(1)), platt_a=-5.0, platt_b=0.0)
    assert 0 < predict_prob(huge, [0.0]) < 1


def test_symmetric_pair_probabilities_sum_to_one():
    m = train_svm(([[-1.0], [1.0]], [-1, 1]), SvmHyperparams(C=10, gamma=0.5))
    assert abs(m.platt_b) < 1e-6
    assert predict_prob(m, [0.7]) + predict_prob(m, [-0.7]) == pytest.approx(1, abs=1e-3)
    assert predict_prob(m, [0.0]) == pytest.approx(0.5, abs=1e-6)


# --- grid search -------------------------------------------------------------------

def test_grid_single_cell(blobs):
    data = blobs(30, dim=3, sep=3.0)
    hp, acc = grid_search(data, GridSpec((2.0,), (0.5,), 2), seed=1)
    assert (hp.C, hp.gamma) == (2.0, 0.5)
    assert 0 <= acc <= 1


def test_grid_tie_prefers_smaller_c(blobs):
    data = blobs(20, dim=2, sep=20.0, spread=0.3)
    hp, acc = grid_search(data, GridSpec((64.0, 1.0, 8.0), (0.5,), 2), seed=0)
    assert acc == 1.0 and hp.C == 1.0
    hp, _ = grid_search(data, GridSpec((1.0,), (0.25, 0.125), 2), seed=0)
    assert hp.gamma == 0.125


def test_grid_separable_gaussians(blobs):
    data = blobs(60, dim=4, sep=5.0, seed=3)
    grid = GridSpec(tuple(2.0 ** k for k in (-3, 1, 5)), tuple(2.0 ** k for k in (-7, -3, 1)))
    _, acc = grid_search(data, grid, seed=0)
    assert acc >= 0.95


def test_grid_deterministic(blobs):
    data = blobs(40, dim=3, sep=1.0, seed=8)
    grid = GridSpec((0.5, 4.0), (0.1, 1.0))
    assert grid_search(data, grid, seed=5) == grid_search(data, grid, seed=5)
    f1, f2 = stratified_folds(data.labels, 2, 5), stratified_folds(data.labels, 2, 5)
    assert np.array_equal(f1, f2)
    for k in range(2):
        assert set(np.unique(data.labels[f1 == k])) == {-1, 1}


def test_grid_parallel_matches_serial(blobs):
    data = blobs(30, dim=3, sep=1.0, seed=9)
    grid = GridSpec((0.5, 4.0), (0.1, 1.0))
    assert grid_search(data, grid, seed=2, jobs=2) == grid_search(data, grid, seed=2)


def test_grid_rejects_single_class():
    with pytest.raises(SingleClass):
        grid_search(LabeledDataset(np.zeros((4, 2)), [1, 1, 1, 1]))
    with pytest.raises(InvalidConfig):
        GridSpec(folds=1)


def test_default_grid():
    g = GridSpec()
    assert g.c_values[0] == 2 ** -5 and g.c_values[-1] == 2 ** 15 and len(g.c_values) == 11
    assert g.gamma_values[0] == 2 ** -15 and g.gamma_values[-1] == 2 ** 3
    assert g.folds == 2


# --- persistence --------------------------------------------------------------------

def test_model_json_roundtrip_bit_exact(tmp_path, blobs):
    m = train_svm(blobs(30, dim=13, sep=2.0, seed=11), SvmHyperparams(C=1.5, gamma=0.05))
    save_svm(tmp_path / "m.json", m)
    raw = json.loads((tmp_path / "m.json").read_text())
    for key in ("version", "gamma", "C", "bias", "platt_a", "platt_b", "scaler",
                "support_vectors", "dual_coeffs"):
        assert key in raw
    back = load_svm(tmp_path / "m.json")
    assert back.bias == m.bias and back.platt_a == m.platt_a and back.platt_b == m.platt_b
    assert back.support_vectors.tobytes() == m.support_vectors.tobytes()
    assert back.dual_coeffs.tobytes() == m.dual_coeffs.tobytes()
    assert back.scaler.stds.tobytes() == m.scaler.stds.tobytes()
    x = np.random.default_rng(0).normal(size=(5, 13))
    assert np.array_equal(back.predict_proba(x), m.predict_proba(x))
