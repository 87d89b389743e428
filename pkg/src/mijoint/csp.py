"""Common spatial patterns for the three-electrode montage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalError, ParameterError

EIG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class CspModel:
    filters: np.ndarray = field(repr=False)  # rows are spatial filters
    eigenvalues: np.ndarray
    cov_a: np.ndarray = field(repr=False)
    cov_b: np.ndarray = field(repr=False)

    @property
    def n_components(self) -> int:
        return self.filters.shape[0]


def _as_samples(epoch) -> np.ndarray:
    x = getattr(epoch, "samples", epoch)
    return np.asarray(x, dtype=np.float64)


def normalized_covariance(x: np.ndarray) -> np.ndarray:
    """Channel covariance of a (time, channel) block divided by its trace."""
    xc = x - x.mean(axis=0)
    c = xc.T @ xc / (x.shape[0] - 1)
    tr = np.trace(c)
    if not tr > 0:
        raise NumericalError("epoch has zero total variance")
    return c / tr


def class_covariance(epochs: Sequence) -> np.ndarray:
    if len(epochs) == 0:
        raise ParameterError("each class needs at least one epoch")
    return np.mean([normalized_covariance(_as_samples(e)) for e in epochs], axis=0)


def whitening_transform(composite: np.ndarray) -> np.ndarray:
    """P with P @ composite @ P.T = I."""
    d, u = np.linalg.eigh(composite)
    if d.min() < EIG_FLOOR:
        raise NumericalError(
            f"composite covariance is rank deficient (smallest eigenvalue {d.min():.3g})"
        )
    return (u / np.sqrt(d)).T


def csp_from_covariances(cov_a: np.ndarray, cov_b: np.ndarray) -> CspModel:
    p = whitening_transform(cov_a + cov_b)
    s = p @ cov_a @ p.T
    lam, v = np.linalg.eigh((s + s.T) / 2)
    order = np.argsort(lam)[::-1]
    lam, v = lam[order], v[:, order]
    filters = v.T @ p
    return CspModel(filters=filters, eigenvalues=lam, cov_a=cov_a, cov_b=cov_b)


def fit_csp(epochs_a: Sequence, epochs_b: Sequence) -> CspModel:
    """Fit filters maximizing class-a variance relative to the pooled variance.

    Eigenvalues are sorted descending; with three channels every component is
    kept.
    """
    return csp_from_covariances(class_covariance(epochs_a), class_covariance(epochs_b))


def csp_features(model: CspModel, epoch) -> np.ndarray:
    """Log of each component's share of the total projected variance."""
    z = _as_samples(epoch) @ model.filters.T
    var = z.var(axis=0)
    total = var.sum()
    if not total > 0:
        raise NumericalError("projected epoch has zero total variance")
    return np.log(var / total)


def csp_feature_matrix(model: CspModel, epochs: np.ndarray) -> np.ndarray:
    """Vectorized features for a (n, time, channel) stack."""
    z = np.einsum("ntc,kc->ntk", np.asarray(epochs, dtype=np.float64), model.filters)
    var = z.var(axis=1)
    total = var.sum(axis=1, keepdims=True)
    if not np.all(total > 0):
        raise NumericalError("projected epoch has zero total variance")
    return np.log(var / total)
