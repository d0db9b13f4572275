"""(epsilon, delta) accounting for analog gradient transmission.

Each transmission leaks ``2 (sensitivity-scale / noise-std)**2`` and the
per-device sum over iterations must stay below the budget returned by
:func:`r_dp`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, PreconditionError
from .numerics import c_inverse

BUDGET_SLACK = 1e-9


@dataclass(frozen=True)
class DpTarget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise PreconditionError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise PreconditionError("delta must lie in (0, 1)")


def r_dp(target: DpTarget) -> float:
    """Total squared signal-to-noise budget that guarantees the target.

    Equals ``(sqrt(eps + c**2) - c)**2`` with ``c = C^{-1}(1/delta)``,
    written in a cancellation-free form.
    """
    c = c_inverse(1.0 / target.delta)
    eps = target.epsilon
    return (eps / (math.sqrt(eps + c * c) + c)) ** 2


def epsilon_for_budget(budget: float, delta: float) -> float:
    """Inverse of :func:`r_dp` in epsilon at fixed delta."""
    if budget < 0:
        raise PreconditionError("budget must be nonnegative")
    c = c_inverse(1.0 / delta)
    return budget + 2.0 * c * math.sqrt(budget)


def sensitivity_bound_oma(h, alpha, gamma):
    return 2.0 * h * alpha * gamma


def sensitivity_bound_noma(c, gamma):
    return 2.0 * c * gamma


def step_loss_oma(h, alpha, gamma, sigma, n0):
    """Per-iteration privacy loss of one OMA device (broadcasts over arrays)."""
    scale = np.multiply(h, alpha)
    return 2.0 * (scale * gamma) ** 2 / ((scale * sigma) ** 2 + n0)


def step_loss_noma(c, gamma, sigmas, n0):
    """Per-iteration loss charged to every device under NOMA."""
    noise = np.sum(np.square(sigmas))
    return 2.0 * (c * gamma) ** 2 / (c * c * noise + n0)


class PrivacyLedger:
    """Running privacy loss per account against a common budget.

    OMA keeps one account per device; NOMA keeps a single shared account.
    With ``enforce=False`` the ledger only records (used by the no-DP
    baseline).
    """

    def __init__(self, budget: float, n_accounts: int = 1, enforce: bool = True):
        self.budget = float(budget)
        self.loss = np.zeros(n_accounts)
        self.enforce = enforce
        self.iteration = 0

    def charge(self, losses) -> None:
        losses = np.broadcast_to(np.asarray(losses, float), self.loss.shape)
        if np.any(losses < 0):
            raise PreconditionError("privacy losses must be nonnegative")
        updated = self.loss + losses
        if self.enforce and np.any(updated > self.budget + BUDGET_SLACK):
            k = int(np.argmax(updated))
            raise BudgetExceededError(
                f"account {k} would reach {updated[k]!r} > budget {self.budget!r}")
        self.loss = updated
        self.iteration += 1

    def residual(self, account: int = 0) -> float:
        return max(self.budget - float(self.loss[account]), 0.0)


def accumulate_oma(h, alpha, gamma, sigma, n0) -> np.ndarray:
    """Per-device totals, accumulated in iteration order like the ledger.

    ``h``, ``alpha`` and ``sigma`` have shape (T, K); ``gamma`` has shape (T,).
    """
    h, alpha, sigma = (np.atleast_2d(np.asarray(a, float)) for a in (h, alpha, sigma))
    gamma = np.broadcast_to(np.asarray(gamma, float), (h.shape[0],))
    total = np.zeros(h.shape[1])
    for t in range(h.shape[0]):
        total = total + step_loss_oma(h[t], alpha[t], gamma[t], sigma[t], n0)
    return total


def accumulate_noma(c, gamma, sigma, n0) -> float:
    """Shared NOMA total; ``sigma`` has shape (T, K)."""
    c = np.asarray(c, float)
    gamma = np.broadcast_to(np.asarray(gamma, float), c.shape)
    sigma = np.zeros((c.shape[0], 1)) if sigma is None else np.atleast_2d(sigma)
    total = np.zeros(1)
    for t in range(c.shape[0]):
        total = total + step_loss_noma(c[t], gamma[t], sigma[t], n0)
    return float(total[0])


def dp_satisfied(totals, budget: float) -> tuple[bool, float]:
    """Check accumulated losses against the budget.

    Returns the verdict and the worst-device slack ``budget - max(total)``.
    """
    worst = float(np.max(np.atleast_1d(totals)))
    slack = budget - worst
    return slack >= -BUDGET_SLACK, slack
