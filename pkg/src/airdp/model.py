"""Loss functions, gradients, clipping and the analytic constants used by the
power-allocation solvers.

Two models are supported. Ridge regression uses the sample loss
``0.5 * (w.u - v)**2``; multinomial logistic regression stores ``w`` as ``C``
contiguous per-class blocks of length ``d``. Both add ``lam * ||w||**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import Dataset, Partition
from .errors import DimensionError, PreconditionError
from .numerics import extreme_eigenvalues, solve_linear_spd


@dataclass(frozen=True)
class LossSpec:
    kind: Literal["ridge", "logistic"] = "ridge"
    lam: float = 5e-5
    n_classes: int = 10

    def __post_init__(self):
        if self.kind not in ("ridge", "logistic"):
            raise PreconditionError(f"unknown loss kind {self.kind!r}")
        if self.lam < 0:
            raise PreconditionError("lam must be nonnegative")
        if self.kind == "logistic" and self.n_classes < 2:
            raise PreconditionError("logistic regression needs at least two classes")

    def dim(self, d: int) -> int:
        return d if self.kind == "ridge" else self.n_classes * d


@dataclass(frozen=True)
class CurvatureConstants:
    mu: float
    L: float

    def __post_init__(self):
        if not 0 < self.mu <= self.L:
            raise PreconditionError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")

    @property
    def contraction(self) -> float:
        return 1.0 - self.mu / self.L


@dataclass(frozen=True)
class GradientBounds:
    """Per-sample bound ``gamma`` and per-device local bounds ``G``.

    Both are constant over iterations for the offline bounds used here.
    """

    gamma: float
    G: np.ndarray


def _softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def _check(spec: LossSpec, w, d):
    if w.shape != (spec.dim(d),):
        raise DimensionError(f"model has shape {w.shape}, expected ({spec.dim(d)},)")


def sample_gradient(spec: LossSpec, w, u, v) -> np.ndarray:
    w, u = np.asarray(w, float), np.asarray(u, float)
    _check(spec, w, u.shape[0])
    if spec.kind == "ridge":
        return (w @ u - v) * u
    p = _softmax(w.reshape(spec.n_classes, -1) @ u)
    p[int(v)] -= 1.0
    return np.outer(p, u).ravel()


def clip_sample_gradient(g, threshold: float) -> np.ndarray:
    g = np.asarray(g, float)
    norm = np.linalg.norm(g)
    if norm <= threshold:
        return g
    return g * (threshold / norm)


def _residuals(spec: LossSpec, w, U, v):
    """Per-sample gradients in factored form ``outer(E_i, u_i)``.

    Returns ``E`` with shape (n,) for ridge or (n, C) for logistic.
    """
    if spec.kind == "ridge":
        return U @ w - v
    P = _softmax(U @ w.reshape(spec.n_classes, -1).T)
    P[np.arange(len(v)), v.astype(int)] -= 1.0
    return P


def _sum_gradients(spec, E, U, scale=None):
    if scale is not None:
        E = E * (scale if E.ndim == 1 else scale[:, None])
    if spec.kind == "ridge":
        return E @ U
    return (E.T @ U).ravel()


def _clip_factors(E, U, threshold):
    enorm = np.abs(E) if E.ndim == 1 else np.linalg.norm(E, axis=1)
    norms = enorm * np.linalg.norm(U, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(norms > threshold, threshold / norms, 1.0)


def local_gradient(spec: LossSpec, w, U, v, clip: float | None = None) -> np.ndarray:
    """Mean of (optionally clipped) sample gradients plus ``2 lam w``.

    Only the sample gradients are clipped; the regularizer term never is.
    """
    w = np.asarray(w, float)
    if U.shape[0] == 0:
        raise PreconditionError("empty shard")
    _check(spec, w, U.shape[1])
    E = _residuals(spec, w, U, v)
    scale = None if clip is None else _clip_factors(E, U, clip)
    return _sum_gradients(spec, E, U, scale) / U.shape[0] + 2.0 * spec.lam * w


def global_loss(spec: LossSpec, w, dataset: Dataset) -> float:
    w = np.asarray(w, float)
    _check(spec, w, dataset.d)
    if spec.kind == "ridge":
        r = dataset.U @ w - dataset.v
        data_term = 0.5 * float(r @ r) / dataset.n
    else:
        Z = dataset.U @ w.reshape(spec.n_classes, -1).T
        zmax = Z.max(axis=1, keepdims=True)
        lse = (zmax + np.log(np.exp(Z - zmax).sum(axis=1, keepdims=True))).ravel()
        data_term = float(np.mean(lse - Z[np.arange(dataset.n), dataset.v.astype(int)]))
    return data_term + spec.lam * float(w @ w)


def global_gradient(spec: LossSpec, w, dataset: Dataset, partition: Partition | None = None) -> np.ndarray:
    """Sample-size weighted average of the local gradients (no clipping)."""
    if partition is None:
        return local_gradient(spec, w, dataset.U, dataset.v)
    total = np.zeros(spec.dim(dataset.d))
    for shard in partition.shards:
        total += len(shard) * local_gradient(spec, w, dataset.U[shard], dataset.v[shard])
    return total / dataset.n


def predict(spec: LossSpec, w, U) -> np.ndarray:
    if spec.kind == "ridge":
        return U @ w
    return np.argmax(U @ w.reshape(spec.n_classes, -1).T, axis=1)


def ridge_optimum(dataset: Dataset, lam: float) -> tuple[np.ndarray, float]:
    """Closed-form minimizer ``(U'U + 2 n lam I)^{-1} U'v`` and its loss."""
    U, v = dataset.U, dataset.v
    A = U.T @ U + 2.0 * dataset.n * lam * np.eye(dataset.d)
    w_star = solve_linear_spd(A, U.T @ v)
    return w_star, global_loss(LossSpec("ridge", lam), w_star, dataset)


def regularized_gramian(U, lam: float) -> np.ndarray:
    return U.T @ U / U.shape[0] + 2.0 * lam * np.eye(U.shape[1])


def curvature(dataset: Dataset, lam: float) -> CurvatureConstants:
    """PL and smoothness constants of the ridge objective.

    For the logistic model these are hyperparameters; construct
    :class:`CurvatureConstants` directly instead.
    """
    mu, L = extreme_eigenvalues(regularized_gramian(dataset.U, lam))
    return CurvatureConstants(mu, L)


def offline_bounds(dataset: Dataset, partition: Partition, lam: float, W: float) -> GradientBounds:
    """Simple gradient bounds ``2 W * (smoothness constant)`` for ridge.

    The per-sample smoothness constant of ``0.5 (w.u - v)**2`` is
    ``||u||**2``; the local one is the top eigenvalue of the shard's
    regularized Gramian. ``G`` is a valid bound only while each shard's
    minimizer lies in the ball; the trainer's power guard covers the rest.
    """
    if W <= 0:
        raise PreconditionError("W must be positive")
    gamma = 2.0 * W * float(np.max(np.einsum("ij,ij->i", dataset.U, dataset.U)))
    G = np.array([
        2.0 * W * extreme_eigenvalues(regularized_gramian(dataset.U[s], lam))[1]
        for s in partition.shards
    ])
    return GradientBounds(gamma, G)
