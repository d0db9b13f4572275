"""Block-fading Rician channel with AR(1) diffuse component, MMSE channel
power prediction, and the OMA/NOMA receive models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PowerViolationError, PreconditionError


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Physical-layer parameters shared by every device.

    ``P`` is the per-device power budget per block of ``d`` channel uses,
    so the maximum SNR is ``P / (d * n0)``.
    """

    kappa: float
    rho: float
    n0: float
    P: float
    d: int

    def __post_init__(self):
        if self.kappa < 0:
            raise PreconditionError("Rice factor must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise PreconditionError("rho must lie in [0, 1]")
        if self.n0 < 0 or self.P <= 0 or self.d < 1:
            raise PreconditionError("need n0 >= 0, P > 0, d >= 1")

    @classmethod
    def from_snr(cls, snr_db: float, d: int, kappa: float, rho: float, n0: float = 1.0):
        return cls(kappa, rho, n0, db_to_linear(snr_db) * d * n0, d)

    @property
    def snr_max(self) -> float:
        return self.P / (self.d * self.n0)

    def los_weights(self) -> tuple[float, float]:
        if math.isinf(self.kappa):
            return 1.0, 0.0
        return math.sqrt(self.kappa / (self.kappa + 1.0)), math.sqrt(1.0 / (self.kappa + 1.0))


def _complex_normal(rng, size):
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)


class FadingProcess:
    """Fading state for ``n_devices`` independent links.

    ``g`` holds the complex coefficient of the current block. The process
    starts in steady state; call :meth:`advance` once at the start of every
    block to obtain that block's gains.
    """

    def __init__(self, params: ChannelParams, rng: np.random.Generator, n_devices: int = 1):
        self.params = params
        self.rng = rng
        self.r = _complex_normal(rng, n_devices)
        self._los, self._nlos = params.los_weights()

    @property
    def g(self) -> np.ndarray:
        return self._los + self._nlos * self.r

    @property
    def h(self) -> np.ndarray:
        return np.abs(self.g)

    def advance(self) -> np.ndarray:
        rho = self.params.rho
        if rho < 1.0:
            innovation = _complex_normal(self.rng, self.r.shape[0])
            self.r = rho * self.r + math.sqrt(1.0 - rho * rho) * innovation
        return self.h


def init_fading(params: ChannelParams, rng: np.random.Generator, n_devices: int = 1) -> FadingProcess:
    return FadingProcess(params, rng, n_devices)


def predict_power(g_now, params: ChannelParams, lag, published: bool = False) -> np.ndarray:
    """Conditional mean of ``|g|**2`` ``lag`` blocks ahead given ``g_now``.

    The AR(1) diffuse part pulls the coefficient towards its line-of-sight
    mean ``a``, so ``E|g_j|^2 = |(1 - rho^l) a + rho^l g|^2 + (1 - rho^2l)/(kappa + 1)``,
    which depends on the phase of ``g_now``. With ``published=True`` the
    magnitude-only expression ``((kappa + rho^2l) |g|^2 + 1 - rho^2l)/(kappa + 1)``
    is used instead; both reduce to ``|g_now|^2`` when ``rho = 1``.
    """
    lag = np.asarray(lag)
    if np.any(lag < 1):
        raise PreconditionError("lag must be at least one block")
    g_now = np.asarray(g_now)
    kappa = params.kappa
    if math.isinf(kappa):
        return np.broadcast_to(np.abs(g_now) ** 2, np.broadcast(g_now, lag).shape).astype(float)
    corr = params.rho ** lag
    if published:
        corr2 = corr * corr
        return (kappa + corr2) / (kappa + 1.0) * np.abs(g_now) ** 2 + (1.0 - corr2) / (kappa + 1.0)
    los, _ = params.los_weights()
    mean = (1.0 - corr) * los + corr * g_now
    return np.abs(mean) ** 2 + (1.0 - corr * corr) / (kappa + 1.0)


def _power_slack(P):
    return max(1e-9, 1e-12 * P)


def oma_receive(x, h: float, n0: float, rng, P: float | None = None) -> np.ndarray:
    """``y = h x + z`` with ``z ~ N(0, n0 I)``."""
    x = np.asarray(x, float)
    if P is not None and float(x @ x) > P + _power_slack(P):
        raise PowerViolationError(f"transmit power {float(x @ x):.6g} exceeds budget {P:.6g}")
    y = h * x
    if n0 > 0:
        y = y + rng.normal(0.0, math.sqrt(n0), size=x.shape[0])
    return y


def noma_receive(xs, hs, n0: float, rng, P: float | None = None) -> np.ndarray:
    """Superposition ``sum_k h_k x_k`` plus a single noise draw."""
    xs = np.atleast_2d(np.asarray(xs, float))
    hs = np.asarray(hs, float)
    if P is not None:
        powers = np.einsum("kd,kd->k", xs, xs)
        worst = int(np.argmax(powers))
        if powers[worst] > P + _power_slack(P):
            raise PowerViolationError(
                f"device {worst} transmit power {powers[worst]:.6g} exceeds budget {P:.6g}")
    y = hs @ xs
    if n0 > 0:
        y = y + rng.normal(0.0, math.sqrt(n0), size=xs.shape[1])
    return y
