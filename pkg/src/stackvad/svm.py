"""Soft-margin RBF SVM trained by SMO, with Platt probability outputs.

The solver works on the standard dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum(a_i y_i) = 0

using maximal-violating-pair selection for the first index and the
second-order gain rule for the second one.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, InvalidConfig, SingleClass

log = logging.getLogger(__name__)

MODEL_VERSION = 1
_TAU = 1e-12
_CHUNK = 512


@dataclass(frozen=True)
class SvmHyperparams:
    C: float = 1.0
    gamma: float = 0.1
    tol: float = 1e-3
    max_iter: int | None = None  # None: max(10**7, 100 * n)
    cache_rows: int = 512

    def __post_init__(self):
        if not (self.C > 0 and self.gamma > 0 and self.tol > 0):
            raise InvalidConfig(f"C, gamma and tol must be positive: {self}")
        if self.cache_rows < 2:
            raise InvalidConfig("kernel cache needs room for at least two rows")


@dataclass
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.means.size:
            raise DimensionMismatch(f"expected {self.means.size} features, got {rows.shape[-1]}")
        return (rows - self.means) / self.stds

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Scaler:
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64))


def standardize_fit(rows) -> Scaler:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.shape[0] == 0:
        raise EmptyDataset("cannot fit a scaler on zero rows")
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    stds[stds == 0] = 1.0
    return Scaler(means, stds)


def standardize_apply(scaler: Scaler, row) -> np.ndarray:
    return scaler.apply(row)


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"kernel arguments have shapes {x.shape} and {y.shape}")
    d = x - y
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * |a_i - b_j|^2), computed from explicit differences."""
    out = np.empty((a.shape[0], b.shape[0]))
    for s in range(0, a.shape[0], _CHUNK):
        diff = a[s:s + _CHUNK, None, :] - b[None, :, :]
        out[s:s + _CHUNK] = np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))
    return out


class KernelCache:
    """LRU cache of kernel matrix rows keyed by training index."""

    def __init__(self, X: np.ndarray, gamma: float, capacity: int = 512):
        self.X = X
        self.gamma = gamma
        self.capacity = capacity
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        r = self.rows.get(i)
        if r is not None:
            self.rows.move_to_end(i)
            self.hits += 1
            return r
        self.misses += 1
        d = self.X - self.X[i]
        r = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self.rows[i] = r
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return r


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    n_iter: int
    converged: bool
    gap: float


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_solve(X: np.ndarray, y: np.ndarray, C: float, gamma: float, tol: float = 1e-3,
              max_iter: int | None = None, cache_rows: int = 512,
              history: list | None = None) -> SmoResult:
    """Solve the RBF dual with SMO.

    Stops when the maximal KKT violation gap drops below ``tol``. If
    ``history`` is a list, the dual objective after every update is
    appended to it.
    """
    n = y.size
    yf = y.astype(np.float64)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    cache = KernelCache(X, gamma, cache_rows)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    pos = y > 0
    it = 0
    converged = False
    gap = np.inf

    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        ygrad = yf * grad

        cand = np.where(up, -ygrad, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        gmax2 = np.max(np.where(low, ygrad, -np.inf))
        gap = gmax + gmax2
        if gap < tol:
            converged = True
            break

        ki = cache.row(i)
        b = gmax + ygrad
        a = np.maximum(1.0 + 1.0 - 2.0 * ki, _TAU)  # K_ii = K_tt = 1
        score = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        if not np.isfinite(score[j]):
            converged = True
            break
        kj = cache.row(j)

        ai_old, aj_old = alpha[i], alpha[j]
        yi, yj = yf[i], yf[j]
        gi, gj = grad[i], grad[j]
        quad = max(2.0 - 2.0 * ki[j], _TAU)
        ai, aj = ai_old, aj_old
        if yi != yj:
            delta = (-gi - gj) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (gi - gj) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total

        alpha[i], alpha[j] = ai, aj
        dai, daj = ai - ai_old, aj - aj_old
        # grad += Q_i * dai + Q_j * daj, with Q_it = y_i y_t K_it
        grad += yf * (yi * dai * ki + yj * daj * kj)
        it += 1
        if history is not None:
            history.append(0.5 * float(alpha.sum() - alpha @ grad))

    ygrad = yf * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        rho = float(np.mean(ygrad[free]))
    else:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        # bounds on rho from the KKT conditions of bound variables
        ub_mask = np.where(pos, at_lower, at_upper)
        lb_mask = np.where(pos, at_upper, at_lower)
        ub = np.min(ygrad[ub_mask]) if np.any(ub_mask) else np.inf
        lb = np.max(ygrad[lb_mask]) if np.any(lb_mask) else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else \
            float(ub if np.isfinite(ub) else lb)
    if not converged:
        log.warning("SMO stopped at iteration cap %d with KKT gap %.3g > tol %.3g",
                    max_iter, gap, tol)
    return SmoResult(alpha, -rho, it, converged, float(gap))


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized coordinates
    dual_coeffs: np.ndarray      # alpha_i * y_i
    bias: float
    hyperparams: SvmHyperparams
    scaler: Scaler
    platt_a: float = 0.0
    platt_b: float = 0.0
    converged: bool = True
    n_iter: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.scaler.means.size

    def _rows(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {x.shape[1]}")
        return x, single

    def decision_function(self, x) -> np.ndarray | float:
        x, single = self._rows(x)
        k = rbf_matrix(self.scaler.apply(x), self.support_vectors, self.hyperparams.gamma)
        f = k @ self.dual_coeffs + self.bias
        return float(f[0]) if single else f

    def predict_proba(self, x) -> np.ndarray | float:
        f = self.decision_function(x)
        p = platt_sigmoid(f, self.platt_a, self.platt_b)
        return float(p) if np.ndim(p) == 0 else p

    def predict(self, x) -> np.ndarray | int:
        f = self.decision_function(x)
        lab = np.where(np.asarray(f) >= 0, 1, -1)
        return int(lab) if np.ndim(lab) == 0 else lab

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "version": MODEL_VERSION,
            "gamma": float(hp.gamma),
            "C": float(hp.C),
            "tol": float(hp.tol),
            "bias": float(self.bias),
            "platt_a": float(self.platt_a),
            "platt_b": float(self.platt_b),
            "scaler": self.scaler.to_dict(),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coeffs": self.dual_coeffs.tolist(),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SvmModel:
        if d.get("version") != MODEL_VERSION:
            raise InvalidConfig(f"unsupported SVM model version {d.get('version')!r}")
        scaler = Scaler.from_dict(d["scaler"])
        sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, scaler.means.size)
        return cls(
            support_vectors=sv,
            dual_coeffs=np.asarray(d["dual_coeffs"], dtype=np.float64),
            bias=float(d["bias"]),
            hyperparams=SvmHyperparams(C=d["C"], gamma=d["gamma"], tol=d.get("tol", 1e-3)),
            scaler=scaler,
            platt_a=float(d["platt_a"]),
            platt_b=float(d["platt_b"]),
            converged=bool(d.get("converged", True)),
            n_iter=int(d.get("n_iter", 0)),
            extra=d.get("extra", {}),
        )


def decision(model: SvmModel, x) -> float:
    return model.decision_function(x)


def predict_prob(model: SvmModel, x) -> float:
    return model.predict_proba(x)


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.vectors, data.labels
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionMismatch(f"feature matrix {X.shape} does not match {y.size} labels")
    if X.shape[0] == 0:
        raise EmptyDataset("no training rows")
    return X, y


def train_svm(data, hp: SvmHyperparams = SvmHyperparams(), calibrate: bool = True,
              history: list | None = None) -> SvmModel:
    """Fit scaler, SMO dual and Platt sigmoid on ``data``.

    ``data`` is a LabeledDataset or an ``(X, y)`` pair with labels in {+1, -1}.
    A model that hits the iteration cap is still returned with
    ``converged=False``.
    """
    X, y = _xy(data)
    if np.unique(y).size < 2:
        raise SingleClass("training data contains a single class")
    scaler = standardize_fit(X)
    Xs = scaler.apply(X)
    res = smo_solve(Xs, y, hp.C, hp.gamma, hp.tol, hp.max_iter, hp.cache_rows, history)
    sv = res.alpha > 0
    model = SvmModel(Xs[sv], (res.alpha * y)[sv], res.bias, hp, scaler,
                     converged=res.converged, n_iter=res.n_iter)
    if calibrate:
        scores = rbf_matrix(Xs, model.support_vectors, hp.gamma) @ model.dual_coeffs + model.bias
        model.platt_a, model.platt_b = fit_platt(scores, y)
    return model


# --- Platt scaling ---------------------------------------------------------

def platt_sigmoid(f, a: float, b: float):
    """P(y=+1 | f) = 1 / (1 + exp(a f + b)), kept strictly inside (0, 1)."""
    z = a * np.asarray(f, dtype=np.float64) + b
    ez = np.exp(-np.abs(z))
    p = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
    return np.clip(p, np.finfo(float).tiny, np.nextafter(1.0, 0.0))


def platt_targets(labels) -> np.ndarray:
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.size - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    return np.where(labels > 0, hi, lo)


def platt_nll(a: float, b: float, scores, targets) -> float:
    z = a * np.asarray(scores, dtype=np.float64) + b
    # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z), evaluated stably
    return float(np.sum(targets * z + np.logaddexp(0.0, -z)))


def fit_platt(scores, labels, max_iter: int = 100, min_step: float = 1e-10,
              sigma: float = 1e-12, eps: float = 1e-10) -> tuple[float, float]:
    """Fit Platt's sigmoid by Newton's method with backtracking line search.

    Uses the prior-corrected targets, so single-class inputs are fine.
    """
    f = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if f.size < 2 or f.size != labels.size:
        raise InvalidConfig("need at least two scores with matching labels")
    t = platt_targets(labels)
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.size - n_pos
    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = platt_nll(a, b, f, t)

    for _ in range(max_iter):
        p = platt_sigmoid(a * f + b, 1.0, 0.0)  # P(y=+1)
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + float(f * f @ d2)
        h22 = sigma + float(d2.sum())
        h21 = float(f @ d2)
        d1 = t - p
        g1 = float(f @ d1)
        g2 = float(d1.sum())
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = platt_nll(na, nb, f, t)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            log.debug("Platt line search failed to make progress")
            break
    return float(a), float(b)


# --- grid search -------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    c_values: tuple[float, ...] = tuple(2.0 ** k for k in range(-5, 16, 2))
    gamma_values: tuple[float, ...] = tuple(2.0 ** k for k in range(-15, 4, 2))
    folds: int = 2

    def __post_init__(self):
        if not self.c_values or not self.gamma_values:
            raise InvalidConfig("grid lists must be non-empty")
        if self.folds < 2:
            raise InvalidConfig("need at least two folds")


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per row: each class is shuffled and dealt round-robin into k folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=np.int64)
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < k:
            raise SingleClass(f"class {cls:+d} has {idx.size} rows, fewer than {k} folds")
        folds[rng.permutation(idx)] = np.arange(idx.size) % k
    return folds


def cv_accuracy(X: np.ndarray, y: np.ndarray, folds: np.ndarray, hp: SvmHyperparams) -> float:
    accs = []
    for f in range(int(folds.max()) + 1):
        test = folds == f
        model = train_svm((X[~test], y[~test]), hp, calibrate=False)
        accs.append(float(np.mean(model.predict(X[test]) == y[test])))
    return float(np.mean(accs))


def _cv_cell(args):
    X, y, folds, hp = args
    return cv_accuracy(X, y, folds, hp)


def grid_search(data, grid: GridSpec = GridSpec(), seed: int = 0,
                base: SvmHyperparams = SvmHyperparams(),
                jobs: int = 1) -> tuple[SvmHyperparams, float]:
    """Pick (C, gamma) by stratified k-fold CV accuracy.

    Ties go to the smaller C, then the smaller gamma. The same folds are used
    for every cell, so results do not depend on evaluation order.
    """
    X, y = _xy(data)
    if np.unique(y).size < 2:
        raise SingleClass("grid search needs both classes")
    folds = stratified_folds(y, grid.folds, seed)
    cells = [(c, g) for c in sorted(grid.c_values) for g in sorted(grid.gamma_values)]
    jobs_args = [(X, y, folds, replace(base, C=c, gamma=g)) for c, g in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_cv_cell, jobs_args))
    else:
        scores = [_cv_cell(a) for a in jobs_args]
    best = max(range(len(cells)), key=lambda k: (scores[k], -k))
    c, g = cells[best]
    log.info("grid search picked C=%g gamma=%g (cv accuracy %.4f)", c, g, scores[best])
    return replace(base, C=c, gamma=g), scores[best]


# --- persistence -----------------------------------------------------------------

def save_svm(path, model: SvmModel, meta: dict | None = None) -> None:
    d = model.to_dict()
    if meta:
        d["meta"] = meta
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n", encoding="utf-8")


def load_svm(path) -> SvmModel:
    return SvmModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def hyperparams_dict(hp: SvmHyperparams) -> dict:
    return asdict(hp)
