"""Epsilon-insensitive support vector regression with an RBF kernel.

Training solves the epsilon-SVR dual with a two-coordinate ascent (SMO-style)
using first-order working-set selection. Features and targets are
standardized internally; predictions are returned in watts and clamped at 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .features import Dataset

DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 100_000
MODEL_FORMAT = "svr-rbf/1"

_SV_EPS = 1e-12  # dual coefficients below this are dropped as numerically zero


class RegressionError(ValueError):
    pass


class DataError(RegressionError):
    pass


class ConvergenceError(RegressionError):
    pass


class ModelLoadError(RegressionError):
    pass


@dataclass(frozen=True)
class SvrParams:
    C: float
    epsilon: float
    gamma: float

    def __post_init__(self):
        if self.C <= 0:
            raise RegressionError(f"C must be positive, got {self.C}")
        if self.epsilon < 0:
            raise RegressionError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.gamma <= 0:
            raise RegressionError(f"gamma must be positive, got {self.gamma}")

    @property
    def sort_key(self) -> Tuple[float, float, float]:
        # tie-break order for grid search: smallest (C, gamma, epsilon)
        return (self.C, self.gamma, self.epsilon)


DEFAULT_GRID: Tuple[SvrParams, ...] = tuple(
    sorted(
        (
            SvrParams(C=c, epsilon=e, gamma=g)
            for c in (0.1, 1.0, 10.0, 100.0)
            for g in (1e-3, 1e-2, 1e-1, 1.0)
            for e in (0.01, 0.1)
        ),
        key=lambda p: p.sort_key,
    )
)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    y_mean: float
    y_std: float

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_std

    def inverse_y(self, ys: np.ndarray) -> np.ndarray:
        return ys * self.y_std + self.y_mean


def fit_scaler(rows: np.ndarray, targets: np.ndarray) -> Scaler:
    """Column-wise standardization stats; constant columns keep deviation 1."""
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("cannot fit a scaler without rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    y_std = float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    return Scaler(mean=mean, std=std, y_mean=float(y.mean()), y_std=y_std)


def rbf(x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise RegressionError(f"width mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of A and B."""
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    d = aa + bb - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


@dataclass
class SmoResult:
    beta: np.ndarray
    bias: float
    objective: float
    n_iter: int
    violation: float


def _solve_dual(
    K: np.ndarray,
    y: np.ndarray,
    C: float,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
) -> SmoResult:
    """SMO over the epsilon-SVR dual.

    Variables are the paired box-constrained coefficients (alpha, alpha*);
    each iteration picks the maximally violating pair by first-order working
    set selection and solves the two-variable subproblem exactly. Stops when
    the KKT violation drops to tol.
    """
    n = len(y)
    ap = np.zeros(n)  # alpha   (pushes prediction up)
    am = np.zeros(n)  # alpha*  (pushes prediction down)
    kbeta = np.zeros(n)  # K @ (ap - am)
    it = 0
    m_val = M_val = 0.0
    for it in range(1, max_passes + 1):
        g0 = y - kbeta
        up_p = np.where(ap < C, g0 - eps, -np.inf)
        up_m = np.where(am > 0.0, g0 + eps, -np.inf)
        low_p = np.where(ap > 0.0, g0 - eps, np.inf)
        low_m = np.where(am < C, g0 + eps, np.inf)

        i_p = int(np.argmax(up_p))
        i_m = int(np.argmax(up_m))
        if up_p[i_p] >= up_m[i_m]:
            i, i_plus, m_val = i_p, True, up_p[i_p]
        else:
            i, i_plus, m_val = i_m, False, up_m[i_m]
        j_p = int(np.argmin(low_p))
        j_m = int(np.argmin(low_m))
        if low_p[j_p] <= low_m[j_m]:
            j, j_plus, M_val = j_p, True, low_p[j_p]
        else:
            j, j_plus, M_val = j_m, False, low_m[j_m]

        if m_val - M_val <= tol:
            it -= 1
            break

        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        t = (m_val - M_val) / a if a > 1e-12 else np.inf
        # box limits along the direction that moves i up and j down
        t = min(t, (C - ap[i]) if i_plus else am[i])
        t = min(t, ap[j] if j_plus else (C - am[j]))
        if not np.isfinite(t) or t <= 0.0:
            break
        if i_plus:
            ap[i] += t
        else:
            am[i] -= t
        if j_plus:
            ap[j] -= t
        else:
            am[j] += t
        kbeta += t * (K[:, i] - K[:, j])
    else:
        raise ConvergenceError(
            f"iteration cap {max_passes} exceeded, KKT violation {m_val - M_val:.3e}"
        )
    if m_val - M_val > tol:
        raise ConvergenceError(
            f"stalled at KKT violation {m_val - M_val:.3e} > tol {tol}"
        )

    beta = ap - am
    g0 = y - kbeta
    atol = 1e-10 * max(C, 1.0)
    free_p = (ap > atol) & (ap < C - atol)
    free_m = (am > atol) & (am < C - atol)
    b_vals = np.concatenate([(g0 - eps)[free_p], (g0 + eps)[free_m]])
    bias = float(b_vals.mean()) if b_vals.size else float((m_val + M_val) / 2.0)
    objective = float(
        0.5 * beta @ kbeta + eps * (ap.sum() + am.sum()) - y @ beta
    )
    return SmoResult(
        beta=beta,
        bias=bias,
        objective=objective,
        n_iter=it,
        violation=float(max(m_val - M_val, 0.0)),
    )


def dual_objective(beta: np.ndarray, K: np.ndarray, y: np.ndarray, eps: float) -> float:
    """Dual objective (minimization form) of a coefficient vector."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(0.5 * beta @ K @ beta + eps * np.abs(beta).sum() - y @ beta)


@dataclass
class SvrModel:
    params: SvrParams
    scaler: Scaler
    support_vectors: np.ndarray  # scaled feature rows
    coefficients: np.ndarray  # one per support vector, in [-C, C]
    bias: float  # in standardized target units
    user: str = ""
    component: str = ""
    vocab_checksum: str = ""


def train(
    rows: np.ndarray,
    targets: np.ndarray,
    params: SvrParams,
    *,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
    user: str = "",
    component: str = "",
    vocab_checksum: str = "",
) -> SvrModel:
    """Fit an epsilon-SVR model; deterministic for identical input order."""
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("training needs at least 2 rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in training data")
    scaler = fit_scaler(X, y)
    Xs = scaler.transform(X)
    ys = scaler.transform_y(y)
    K = np.exp(-params.gamma * _sq_dists(Xs, Xs))
    res = _solve_dual(K, ys, params.C, params.epsilon, tol, max_passes)
    sv = np.abs(res.beta) > _SV_EPS
    return SvrModel(
        params=params,
        scaler=scaler,
        support_vectors=Xs[sv].copy(),
        coefficients=res.beta[sv].copy(),
        bias=res.bias,
        user=user,
        component=component,
        vocab_checksum=vocab_checksum,
    )


def predict(model: SvrModel, rows: Union[np.ndarray, Sequence[float]]):
    """Predicted watts for one row or a matrix of rows; clamped at 0 W."""
    X = np.asarray(rows, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.scaler.mean.shape[0]:
        raise RegressionError(
            f"feature width {X.shape[1]} does not match scaler width "
            f"{model.scaler.mean.shape[0]}"
        )
    Xs = model.scaler.transform(X)
    if model.support_vectors.size:
        Kc = np.exp(-model.params.gamma * _sq_dists(Xs, model.support_vectors))
        raw = Kc @ model.coefficients + model.bias
    else:
        raw = np.full(X.shape[0], model.bias)
    watts = np.maximum(model.scaler.inverse_y(raw), 0.0)
    return float(watts[0]) if single else watts


def _nrmse_score(truth: np.ndarray, pred: np.ndarray) -> float:
    mean = truth.mean()
    if mean == 0.0:
        return np.inf
    return float(np.sqrt(np.mean((truth - pred) ** 2)) / mean)


def grid_search(
    dataset: Dataset,
    grid: Sequence[SvrParams] = DEFAULT_GRID,
    *,
    tol: float = DEFAULT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
) -> SvrParams:
    """Pick the grid point with the lowest test-split NRMSE.

    The split is chronological by whole jobs: the first 80% of the user's
    jobs train, the rest test. Ties go to the smallest (C, gamma, epsilon).
    """
    jobs = dataset.jobs()
    if len(jobs) < 2:
        raise DataError("grid search needs at least 2 distinct jobs")
    n_train = max(1, min(len(jobs) - 1, int(0.8 * len(jobs))))
    train_jobs = set(jobs[:n_train])
    X = dataset.matrix()
    y = dataset.targets()
    in_train = np.array([r.job_id in train_jobs for r in dataset.rows])
    Xtr, ytr = X[in_train], y[in_train]
    Xte, yte = X[~in_train], y[~in_train]

    scaler = fit_scaler(Xtr, ytr)
    Xtr_s = scaler.transform(Xtr)
    Xte_s = scaler.transform(Xte)
    ytr_s = scaler.transform_y(ytr)
    D_tr = _sq_dists(Xtr_s, Xtr_s)
    D_te = _sq_dists(Xte_s, Xtr_s)

    best: Optional[SvrParams] = None
    best_score = np.inf
    for params in sorted(grid, key=lambda p: p.sort_key):
        K = np.exp(-params.gamma * D_tr)
        try:
            res = _solve_dual(K, ytr_s, params.C, params.epsilon, tol, max_passes)
        except ConvergenceError:
            continue
        sv = np.abs(res.beta) > _SV_EPS
        if sv.any():
            raw = np.exp(-params.gamma * D_te[:, sv]) @ res.beta[sv] + res.bias
        else:
            raw = np.full(len(yte), res.bias)
        pred = np.maximum(scaler.inverse_y(raw), 0.0)
        score = _nrmse_score(yte, pred)
        if score < best_score:
            best, best_score = params, score
    if best is None:
        raise ConvergenceError("no grid point converged")
    return best


def save_model(model: SvrModel, path: Union[str, Path]) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "params": {
            "C": model.params.C,
            "epsilon": model.params.epsilon,
            "gamma": model.params.gamma,
        },
        "scaler": {
            "mean": model.scaler.mean.tolist(),
            "std": model.scaler.std.tolist(),
            "y_mean": model.scaler.y_mean,
            "y_std": model.scaler.y_std,
        },
        "support_vectors": model.support_vectors.tolist(),
        "coefficients": model.coefficients.tolist(),
        "bias": model.bias,
        "user": model.user,
        "component": model.component,
        "vocab_sha256": model.vocab_checksum,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_model(path: Union[str, Path]) -> SvrModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}")
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelLoadError(
            f"unsupported model format {doc.get('format') if isinstance(doc, dict) else doc!r}"
        )
    try:
        params = SvrParams(**doc["params"])
        scaler = Scaler(
            mean=np.array(doc["scaler"]["mean"], dtype=np.float64),
            std=np.array(doc["scaler"]["std"], dtype=np.float64),
            y_mean=float(doc["scaler"]["y_mean"]),
            y_std=float(doc["scaler"]["y_std"]),
        )
        sv = np.array(doc["support_vectors"], dtype=np.float64)
        if sv.size == 0:
            sv = sv.reshape(0, scaler.mean.shape[0])
        model = SvrModel(
            params=params,
            scaler=scaler,
            support_vectors=sv,
            coefficients=np.array(doc["coefficients"], dtype=np.float64),
            bias=float(doc["bias"]),
            user=doc["user"],
            component=doc["component"],
            vocab_checksum=doc["vocab_sha256"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"corrupt model payload in {path}: {exc}")
    return model
