"""Numerical substrate: root finding, the DP budget function, small dense
linear algebra, ball projection and seeded Gaussian sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import (
    BracketError,
    ConvergenceError,
    DomainError,
    NotPositiveDefiniteError,
    PreconditionError,
)

SQRT_PI = math.sqrt(math.pi)
# exp() overflows float64 just above this argument
_MAX_EXP_ARG = 709.0


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise PreconditionError(f"empty bracket [{self.lo}, {self.hi}]")
        if self.tol <= 0:
            raise PreconditionError("tol must be positive")
        if self.max_iter < 1:
            raise PreconditionError("max_iter must be positive")


def bisect(f: Callable[[float], float], bracket: RootBracket) -> float:
    """Root of a monotone function by interval halving.

    Stops when ``|f(mid)| <= tol`` or the interval is narrower than ``tol``.
    """
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    for _ in range(bracket.max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= bracket.tol or hi - lo <= bracket.tol:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not converge in {bracket.max_iter} iterations")


def c_function(x: float) -> float:
    """sqrt(pi) * x * exp(x**2), the tail-bound budget function."""
    if x < 0:
        raise DomainError("c_function is defined for x >= 0")
    if x * x > _MAX_EXP_ARG:
        raise OverflowError("argument too large")
    return SQRT_PI * x * math.exp(x * x)


def c_inverse(y: float) -> float:
    """Inverse of :func:`c_function` on ``[0, inf)``."""
    if not y > 0:
        raise DomainError("c_inverse requires y > 0")
    hi = 1.0
    while c_function(hi) < y:
        hi *= 2.0
    lo = 0.0
    # run the interval down to adjacent floats; ~60 halvings from hi <= 32
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if c_function(mid) < y:
            lo = mid
        else:
            hi = mid
    # pick whichever endpoint reproduces y more closely
    return lo if abs(c_function(lo) - y) <= abs(c_function(hi) - y) else hi


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.max(np.abs(A)), 1e-300) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise PreconditionError("matrix is not symmetric")
    return A


def extreme_eigenvalues(A) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    A = _check_symmetric(A)
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(eig[0]), float(eig[-1])


def solve_linear_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A`` via Cholesky."""
    A = _check_symmetric(A)
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("not positive definite") from exc
    return scipy.linalg.cho_solve(factor, np.asarray(b, dtype=float))


def project_ball(w, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius."""
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm <= radius:
        return w
    return w * (radius / norm)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally on an independent sub-stream.

    ``make_rng(s, 1, r)`` and ``make_rng(s, 2, r)`` are statistically
    independent streams derived from the same master seed.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(seq))


def gauss(rng: np.random.Generator, mean: float = 0.0, std: float = 1.0) -> float:
    if std < 0:
        raise DomainError("std must be nonnegative")
    if std == 0:
        return float(mean)
    return float(rng.normal(mean, std))


def gauss_vec(rng: np.random.Generator, d: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise DomainError("std must be nonnegative")
    if std == 0:
        return np.full(d, float(mean))
    return rng.normal(mean, std, size=d)
