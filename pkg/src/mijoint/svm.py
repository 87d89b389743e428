"""Linear soft-margin SVM trained by dual coordinate descent.

The bias is not regularized, so the dual carries the equality constraint
``sum(alpha * y) == 0`` and each step updates the maximal violating pair of
coordinates (second-order working-set selection). With a linear kernel the
primal weight vector is maintained directly, so memory stays O(n * d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError

TAU = 1e-12


@dataclass(frozen=True, eq=False)
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    dual_coef: np.ndarray = field(repr=False)
    n_iter: int = 0
    converged: bool = True

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return self.transform(x) @ self.weights + self.bias


def fit_scaler(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def primal_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, C: float) -> float:
    """0.5 |w|^2 + C * sum(hinge), on already scaled features."""
    margins = y * (x @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _bias(alpha, y, grad, C):
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = yg[free].mean()
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return -float(rho)


def solve_dual(x, y, C, tol=1e-4, max_epochs=1000):
    """Return (w, b, alpha, n_iter, converged) for scaled features ``x``."""
    n = x.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    grad = -np.ones(n)  # Q @ alpha - 1
    kdiag = np.einsum("ij,ij->i", x, x)
    pos = y > 0
    it = 0
    converged = False
    for it in range(max_epochs * n):
        ygrad = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(ygrad[up])])
        gmax = ygrad[i]
        gmin = ygrad[low].min()
        if gmax - gmin < tol:
            converged = True
            break
        b = gmax - ygrad
        cand = low & (b > 0)
        a = kdiag[i] + kdiag - 2.0 * (x @ x[i])
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        ai_old, aj_old = alpha[i], alpha[j]
        quad = a[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
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
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        ai = min(max(ai, 0.0), C)
        aj = min(max(aj, 0.0), C)
        alpha[i], alpha[j] = ai, aj
        dw = (ai - ai_old) * y[i] * x[i] + (aj - aj_old) * y[j] * x[j]
        w += dw
        grad += y * (x @ dw)
    return w, _bias(alpha, y, grad, C), alpha, it, converged


def train_svm(features, labels, C: float = 1.0, tol: float = 1e-4, max_epochs: int = 1000) -> SvmModel:
    """Fit a linear SVM on z-scored features; labels are -1/+1."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"features {x.shape} and labels {y.shape} do not line up")
    if not np.isfinite(x).all():
        raise DataError("features contain non-finite values")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DataError("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise TrainingError("training set contains a single class")
    mean, scale = fit_scaler(x)
    w, b, alpha, n_iter, converged = solve_dual((x - mean) / scale, y, C, tol, max_epochs)
    return SvmModel(
        weights=w, bias=b, C=C, mean=mean, scale=scale,
        dual_coef=alpha, n_iter=n_iter, converged=converged,
    )


def svm_predict(model: SvmModel, feature) -> tuple[np.ndarray, np.ndarray]:
    """Labels in {-1, +1} (exact zero goes to +1) and decision values."""
    decision = model.decision_function(np.atleast_2d(feature))
    return np.where(decision >= 0, 1, -1), decision
