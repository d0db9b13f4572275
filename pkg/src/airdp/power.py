"""Power allocation under privacy and power constraints.

The offline solvers return the closed-form optimum of the weighted noise
minimization over a horizon of ``T`` iterations; the online helpers re-solve
that problem over the remaining horizon with predicted channel gains and
gradient bounds, keeping only the first step.

Both protocols reduce to the same scalar problem in the squared effective
gain ``u_t`` (``(h_t alpha_t)**2`` for OMA, ``c_t**2`` for NOMA)::

    minimize    sum_t q**(-t) * n0 / u_t
    subject to  sum_t 2 gamma_t**2 u_t / n0 <= budget,   0 < u_t <= cap_t

with ``q = 1 - mu/L``. Iteration indices are counted from 1 at the first
step of the horizon being solved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, PreconditionError
from .numerics import RootBracket, bisect


def _arr(x, shape=None):
    a = np.asarray(x, dtype=float)
    return a if shape is None else np.broadcast_to(a, shape).copy()


@dataclass
class PaInputsOma:
    """Horizon data for one OMA device."""

    h: np.ndarray
    gamma: np.ndarray
    G: np.ndarray
    D: float
    P: float
    n0: float
    mu: float
    L: float
    budget: float
    d: int = 1

    def __post_init__(self):
        self.h = _arr(self.h)
        T = self.h.shape[0]
        self.gamma = _arr(self.gamma, (T,))
        self.G = _arr(self.G, (T,))
        if T < 1 or np.any(self.h <= 0) or np.any(self.gamma <= 0) or np.any(self.G <= 0):
            raise PreconditionError("channel gains and gradient bounds must be positive")
        if self.P <= 0 or self.n0 <= 0 or self.D <= 0:
            raise PreconditionError("P, n0 and D must be positive")

    @property
    def T(self) -> int:
        return self.h.shape[0]

    @property
    def q(self) -> float:
        return 1.0 - self.mu / self.L

    def full_power_scale(self) -> np.ndarray:
        return math.sqrt(self.P) / (self.D * self.G)

    def gain_cap(self) -> np.ndarray:
        """Largest squared effective gain allowed by the power budget."""
        return self.P * self.h ** 2 / (self.D * self.G) ** 2


@dataclass
class PaInputsNoma:
    """Horizon data for all devices; ``h`` and ``G`` have shape (T, K)."""

    h: np.ndarray
    gamma: np.ndarray
    G: np.ndarray
    D: np.ndarray
    P: float
    n0: float
    mu: float
    L: float
    budget: float
    d: int = 1

    def __post_init__(self):
        self.h = np.atleast_2d(_arr(self.h))
        T, K = self.h.shape
        self.gamma = _arr(self.gamma, (T,))
        self.G = _arr(self.G, (T, K))
        self.D = _arr(self.D, (K,))
        if np.any(self.h <= 0) or np.any(self.gamma <= 0) or np.any(self.G <= 0):
            raise PreconditionError("channel gains and gradient bounds must be positive")
        if self.P <= 0 or self.n0 <= 0 or np.any(self.D <= 0):
            raise PreconditionError("P, n0 and D must be positive")

    @property
    def T(self) -> int:
        return self.h.shape[0]

    @property
    def K(self) -> int:
        return self.h.shape[1]

    @property
    def q(self) -> float:
        return 1.0 - self.mu / self.L

    def min_ratio(self) -> np.ndarray:
        """``min_k h_k / (D_k G_k)`` per iteration (lowest index wins ties)."""
        ratio = self.h / (self.D[None, :] * self.G)
        return ratio[np.arange(self.T), np.argmin(ratio, axis=1)]

    def full_power_scale(self) -> np.ndarray:
        return math.sqrt(self.P) * self.min_ratio()

    def gain_cap(self) -> np.ndarray:
        return self.P * self.min_ratio() ** 2


@dataclass
class PowerSchedule:
    """Scale factors per iteration (``alpha`` for OMA, ``c`` for NOMA).

    ``sigma`` is the artificial noise deviation, zero for every solver here.
    ``zeta`` is the multiplier of the privacy constraint (0 when free).
    """

    scale: np.ndarray
    sigma: np.ndarray
    binding: bool
    zeta: float = 0.0
    silent: bool = False
    meta: dict = field(default_factory=dict)


def _weights(q: float, T: int) -> np.ndarray:
    if not 0.0 < q < 1.0:
        raise PreconditionError(f"adaptive allocation needs 0 < mu < L (got 1 - mu/L = {q})")
    return q ** -np.arange(1, T + 1, dtype=float)


def constraint_sum(zeta, gamma, cap_snr, q) -> float:
    """Privacy loss of the schedule induced by multiplier ``zeta``.

    ``cap_snr`` is the power-limited gain cap divided by ``n0``. Strictly
    decreasing in ``zeta`` while any step is below its cap.
    """
    gamma = np.asarray(gamma, float)
    discount = _weights(q, len(gamma)) ** 0.5
    return _privacy_sum(zeta, gamma, np.asarray(cap_snr, float), discount)


def _privacy_sum(zeta, gamma, cap_snr, discount):
    return float(np.sum(2.0 * gamma ** 2 * np.minimum(discount / (math.sqrt(2.0 * zeta) * gamma), cap_snr)))


def solve_multiplier(gamma, cap_snr, q: float, budget: float) -> float:
    """Privacy multiplier making the constraint tight.

    Brackets by doubling/halving from 1, then bisects in ``log(zeta)``.
    The constraint sum is continuous and strictly decreasing in ``zeta``
    while any step is uncapped.
    """
    T = len(gamma)
    discount = _weights(q, T) ** 0.5

    def excess(log_zeta):
        return _privacy_sum(math.exp(log_zeta), gamma, cap_snr, discount) / budget - 1.0

    lo = hi = 0.0
    for _ in range(4000):
        if excess(hi) <= 0:
            break
        hi += math.log(2.0)
    else:
        raise ConvergenceError("could not bracket the privacy multiplier from above")
    for _ in range(4000):
        if excess(lo) >= 0:
            break
        lo -= math.log(2.0)
    else:
        raise ConvergenceError("could not bracket the privacy multiplier from below")
    if lo == hi:
        return math.exp(lo)
    return math.exp(bisect(excess, RootBracket(lo, hi, tol=1e-14, max_iter=400)))


def _silent(T, shape_sigma):
    return PowerSchedule(np.zeros(T), np.zeros(shape_sigma), binding=True, silent=True)


def free_privacy_threshold_oma(inp: PaInputsOma) -> float:
    """Privacy loss of the full-power schedule; free regime iff below budget."""
    return float(np.sum(inp.P * (math.sqrt(2.0) * inp.gamma * inp.h) ** 2
                        / (inp.n0 * (inp.D * inp.G) ** 2)))


def free_privacy_threshold_noma(inp: PaInputsNoma) -> float:
    return float(2.0 * inp.P / inp.n0 * np.sum(inp.gamma ** 2 * inp.min_ratio() ** 2))


def solve_offline_oma(inp: PaInputsOma) -> PowerSchedule:
    T = inp.T
    full = inp.full_power_scale()
    if inp.budget <= 0:
        return _silent(T, T)
    if free_privacy_threshold_oma(inp) < inp.budget:
        return PowerSchedule(full, np.zeros(T), binding=False)
    zeta = solve_multiplier(inp.gamma, inp.gain_cap() / inp.n0, inp.q, inp.budget)
    t = np.arange(1, T + 1)
    adaptive = (math.sqrt(inp.n0) * (2.0 * zeta) ** -0.25 * inp.q ** (-t / 4.0)
                / (inp.h * np.sqrt(inp.gamma)))
    return PowerSchedule(np.minimum(adaptive, full), np.zeros(T), binding=True, zeta=zeta)


def solve_offline_noma(inp: PaInputsNoma) -> PowerSchedule:
    T = inp.T
    full = inp.full_power_scale()
    if inp.budget <= 0:
        return _silent(T, (T, inp.K))
    if free_privacy_threshold_noma(inp) < inp.budget:
        return PowerSchedule(full, np.zeros((T, inp.K)), binding=False)
    zeta = solve_multiplier(inp.gamma, inp.gain_cap() / inp.n0, inp.q, inp.budget)
    t = np.arange(1, T + 1)
    adaptive = math.sqrt(inp.n0) * (2.0 * zeta) ** -0.25 * inp.q ** (-t / 4.0) / np.sqrt(inp.gamma)
    return PowerSchedule(np.minimum(adaptive, full), np.zeros((T, inp.K)), binding=True, zeta=zeta)


def static_oma(inp: PaInputsOma, horizon: int | None = None) -> PowerSchedule:
    """Equal split of the privacy budget over ``horizon`` iterations."""
    T = inp.T if horizon is None else horizon
    if inp.budget <= 0:
        return _silent(inp.T, inp.T)
    split = np.sqrt(inp.n0 * inp.budget / (2.0 * T * (inp.h * inp.gamma) ** 2))
    scale = np.minimum(split, inp.full_power_scale())
    return PowerSchedule(scale, np.zeros(inp.T), binding=bool(np.any(split < inp.full_power_scale())))


def static_noma(inp: PaInputsNoma, horizon: int | None = None) -> PowerSchedule:
    T = inp.T if horizon is None else horizon
    if inp.budget <= 0:
        return _silent(inp.T, (inp.T, inp.K))
    split = np.sqrt(inp.n0 * inp.budget / (2.0 * T * inp.gamma ** 2))
    full = inp.full_power_scale()
    return PowerSchedule(np.minimum(split, full), np.zeros((inp.T, inp.K)),
                         binding=bool(np.any(split < full)))


def no_dp_oma(inp: PaInputsOma) -> PowerSchedule:
    return PowerSchedule(inp.full_power_scale(), np.zeros(inp.T), binding=False)


def no_dp_noma(inp: PaInputsNoma) -> PowerSchedule:
    return PowerSchedule(inp.full_power_scale(), np.zeros((inp.T, inp.K)), binding=False)


# -- objectives and optimality diagnostics ---------------------------------

def objective_oma(inp: PaInputsOma, alpha, sigma=None) -> float:
    """Weighted noise sum minimized by the OMA solver."""
    alpha = np.asarray(alpha, float)
    sigma = np.zeros(inp.T) if sigma is None else np.asarray(sigma, float)
    return float(np.sum(_weights(inp.q, inp.T) * (sigma ** 2 + inp.n0 / (inp.h * alpha) ** 2)))


def objective_noma(inp: PaInputsNoma, c, sigma=None) -> float:
    c = np.asarray(c, float)
    noise = 0.0 if sigma is None else np.sum(np.square(sigma), axis=1)
    return float(np.sum(_weights(inp.q, inp.T) * (noise + inp.n0 / c ** 2)))


def privacy_total_oma(inp: PaInputsOma, alpha, sigma=None) -> float:
    alpha = np.asarray(alpha, float)
    sigma = np.zeros(inp.T) if sigma is None else np.asarray(sigma, float)
    return float(np.sum(2.0 * inp.gamma ** 2 / (sigma ** 2 + inp.n0 / (inp.h * alpha) ** 2)))


def privacy_total_noma(inp: PaInputsNoma, c, sigma=None) -> float:
    c = np.asarray(c, float)
    noise = 0.0 if sigma is None else np.sum(np.square(sigma), axis=1)
    return float(np.sum(2.0 * inp.gamma ** 2 / (noise + inp.n0 / c ** 2)))


def transmit_power_oma(inp: PaInputsOma, alpha, sigma=None) -> np.ndarray:
    sigma = np.zeros(inp.T) if sigma is None else np.asarray(sigma, float)
    return np.asarray(alpha) ** 2 * ((inp.D * inp.G) ** 2 + inp.d * sigma ** 2)


def transmit_power_noma(inp: PaInputsNoma, c, sigma=None) -> np.ndarray:
    """Per-device power, shape (T, K)."""
    sigma = np.zeros((inp.T, inp.K)) if sigma is None else np.asarray(sigma, float)
    c = np.asarray(c, float)[:, None]
    return (c / inp.h) ** 2 * ((inp.D[None, :] * inp.G) ** 2 + inp.d * sigma ** 2)


def _kkt_scalar(weights, gamma, a, lb, zeta, budget, power_coef):
    """Normalized KKT residuals of the reduced problem in ``a_t``.

    ``a_t`` is the effective noise variance, ``lb_t`` its power-imposed
    lower bound, and ``power_coef`` converts the bound multiplier into the
    power-constraint multiplier (``P h**2 / n0`` for OMA).
    """
    grad = weights - zeta * 2.0 * gamma ** 2 / a ** 2
    active = np.isclose(a, lb, rtol=1e-9, atol=0.0)
    beta = np.where(active, grad / power_coef, 0.0)
    stationarity = np.where(active, 0.0, np.abs(grad) / weights)
    dual = np.maximum(-beta * power_coef / weights, 0.0)
    primal_power = np.maximum((lb - a) / lb, 0.0)
    dp_sum = float(np.sum(2.0 * gamma ** 2 / a))
    primal_dp = max(dp_sum / budget - 1.0, 0.0)
    slackness_dp = abs(dp_sum / budget - 1.0) if zeta > 0 else 0.0
    return {
        "stationarity": float(np.max(stationarity)),
        "dual_feasibility": float(max(np.max(dual), -zeta)),
        "primal_power": float(np.max(primal_power)),
        "primal_privacy": primal_dp,
        "slackness_privacy": slackness_dp,
        "beta": beta,
    }


def kkt_residuals_oma(inp: PaInputsOma, schedule: PowerSchedule) -> dict:
    """KKT residuals of the convexified OMA problem at ``schedule``.

    Uses the variables ``a = sigma**2 + n0/(h alpha)**2`` and
    ``b = alpha**-2`` with ``b`` at its minimum-power end. Multipliers: the
    schedule's ``zeta`` for privacy, ``beta_t`` for power and ``xi_t`` for
    the nonnegative-noise constraint (recovered from stationarity in ``b``).
    """
    alpha = schedule.scale
    sigma = schedule.sigma
    a = sigma ** 2 + inp.n0 / (inp.h * alpha) ** 2
    lb = inp.n0 * (inp.D * inp.G) ** 2 / (inp.P * inp.h ** 2)
    w = _weights(inp.q, inp.T)
    res = _kkt_scalar(w, inp.gamma, a, lb, schedule.zeta, inp.budget, inp.P * inp.h ** 2 / inp.n0)
    beta = res.pop("beta")
    noise_unit = inp.n0 / inp.h ** 2
    xi = (inp.d * noise_unit + inp.P) / noise_unit * beta
    b = 1.0 / alpha ** 2
    # stationarity in a and b with both multipliers present
    grad_a = w - schedule.zeta * 2.0 * inp.gamma ** 2 / a ** 2 + beta * inp.d - xi
    grad_b = -beta * (inp.d * noise_unit + inp.P) + xi * noise_unit
    res["stationarity_a"] = float(np.max(np.where(np.isclose(a, lb, rtol=1e-9, atol=0), 0.0,
                                                   np.abs(grad_a) / w)))
    res["stationarity_b"] = float(np.max(np.abs(grad_b) / (np.abs(xi * noise_unit) + w)))
    power_gap = (inp.D * inp.G) ** 2 + inp.d * a - (inp.d * noise_unit + inp.P) * b
    res["slackness_power"] = float(np.max(np.abs(beta * power_gap) / w))
    res["slackness_noise"] = float(np.max(np.abs(xi * (noise_unit * b - a)) / w))
    res["max"] = max(v for v in res.values())
    return res


def kkt_residuals_noma(inp: PaInputsNoma, schedule: PowerSchedule) -> dict:
    """KKT residuals of the NOMA problem at a zero-artificial-noise schedule.

    The active power constraint belongs to the device with the smallest
    ``h_k/(D_k G_k)``. The sign condition for ``sigma_k**2 >= 0`` (no
    device gains by adding noise) is reported as ``noise_direction``.
    """
    c = schedule.scale
    a = inp.n0 / c ** 2 + np.sum(schedule.sigma ** 2, axis=1)
    ratio = inp.min_ratio()
    lb = inp.n0 / (inp.P * ratio ** 2)
    w = _weights(inp.q, inp.T)
    res = _kkt_scalar(w, inp.gamma, a, lb, schedule.zeta, inp.budget, inp.P * ratio ** 2 / inp.n0)
    res.pop("beta")
    grad = w - schedule.zeta * 2.0 * inp.gamma ** 2 / a ** 2
    res["noise_direction"] = float(np.max(np.maximum(-grad / w, 0.0)))
    res["max"] = max(v for v in res.values())
    return res


# -- online prediction ----------------------------------------------------

def predict_bounds_oma(last_norm, h_prev, alpha_prev, D_k, gamma_hat, t, remaining, previous=None):
    """Gradient-bound estimate for iterations ``t..T`` (``remaining`` of them).

    Uses the magnitude of the last received signal rescaled to a local
    gradient norm; a silent previous step falls back to ``previous``.
    """
    if t == 1:
        est = gamma_hat
    elif alpha_prev > 0 and h_prev > 0:
        est = last_norm / (h_prev * alpha_prev * D_k)
    else:
        est = gamma_hat if previous is None else previous
    return np.full(remaining, float(est))


def predict_bounds_noma(last_norm, c_prev, D_tot, gamma_hat, t, remaining, previous=None):
    if t == 1:
        est = gamma_hat
    elif c_prev > 0:
        est = last_norm / (c_prev * D_tot)
    else:
        est = gamma_hat if previous is None else previous
    return np.full(remaining, float(est))


def online_step_oma(residual, h_hat, G_hat, gamma_hat, D_k, P, n0, mu, L) -> float:
    """Scale factor for the current iteration from a re-solve over the
    remaining horizon. ``h_hat[0]`` must be the realized current gain."""
    if residual <= 0:
        return 0.0
    inp = PaInputsOma(h_hat, gamma_hat, G_hat, D_k, P, n0, mu, L, residual)
    return float(solve_offline_oma(inp).scale[0])


def online_step_noma(residual, h_hat, G_hat, gamma_hat, D, P, n0, mu, L) -> float:
    """Server-side NOMA counterpart; ``h_hat`` and ``G_hat`` are (T-t+1, K)."""
    if residual <= 0:
        return 0.0
    inp = PaInputsNoma(h_hat, gamma_hat, G_hat, D, P, n0, mu, L, residual)
    return float(solve_offline_noma(inp).scale[0])
