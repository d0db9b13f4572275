"""Federated projected gradient descent over a noisy multiple-access channel.

One call to :func:`run` simulates a single channel realization. Devices are
plain array slices, not threads; the fading trace for all ``I`` blocks is
drawn up front from its own stream so that every power-allocation mode sees
the same channel and the same receiver noise for a given realization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import power as pa
from .channel import ChannelParams, FadingProcess, noma_receive, oma_receive, predict_power
from .data import Dataset, Partition
from .errors import PreconditionError
from .model import (CurvatureConstants, GradientBounds, LossSpec, curvature, global_loss,
                    local_gradient, offline_bounds, ridge_optimum)
from .numerics import make_rng, project_ball
from .privacy import DpTarget, PrivacyLedger, r_dp, step_loss_noma, step_loss_oma

PROTOCOLS = ("oma", "noma")
PA_MODES = ("offline_optimal", "online", "static", "no_dp")
SETTINGS = ("offline", "online")
PREDICTORS = ("mmse", "published")

# stream keys passed to make_rng after (seed, realization)
_FADING, _NOISE, _ARTIFICIAL = 1, 2, 3
DATA_STREAM = 2 ** 32 - 1

_SETTING_DEFAULTS = {
    "offline": {"kappa": 10.0, "rho": 1.0, "W": 3.2},
    "online": {"kappa": 5.0, "rho": 0.0, "W": 10.0},
}


@dataclass(frozen=True)
class TrainConfig:
    """Everything needed to run one realization.

    ``kappa``, ``rho`` and ``W`` default per ``setting`` when left as None.
    ``setting`` is implied by ``offline_optimal`` and ``online``; the static
    and no-DP baselines take it from the field. In the online setting
    ``gamma_hat`` is both the clipping threshold and the per-sample bound.
    """

    protocol: str = "oma"
    pa_mode: str = "offline_optimal"
    setting: str = "offline"
    I: int = 30
    K: int = 10
    epsilon: float = 20.0
    delta: float = 0.01
    snr_db: float = 30.0
    n0: float = 1.0
    kappa: float | None = None
    rho: float | None = None
    W: float | None = None
    gamma_hat: float = 20.0
    loss: str = "ridge"
    lam: float = 5e-5
    n_samples: int = 10000
    d: int = 10
    max_fraction: float | None = None
    mu: float | None = None
    L: float | None = None
    sigma: float = 0.0
    noiseless: bool = False
    predictor: str = "mmse"
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise PreconditionError(f"protocol must be one of {PROTOCOLS}")
        if self.pa_mode not in PA_MODES:
            raise PreconditionError(f"pa_mode must be one of {PA_MODES}")
        if self.setting not in SETTINGS:
            raise PreconditionError(f"setting must be one of {SETTINGS}")
        if self.pa_mode == "offline_optimal" and self.setting != "offline":
            raise PreconditionError("offline_optimal runs in the offline setting")
        if self.pa_mode == "online" and self.setting != "online":
            raise PreconditionError("online allocation runs in the online setting")
        if self.I < 1 or self.K < 1:
            raise PreconditionError("I and K must be positive")
        if self.protocol == "oma" and self.I % self.K:
            raise PreconditionError(f"OMA needs K | I (I={self.I}, K={self.K})")
        DpTarget(self.epsilon, self.delta)
        if self.n0 <= 0:
            raise PreconditionError("n0 must be positive (use noiseless for a clean channel)")
        if self.gamma_hat <= 0 or self.sigma < 0 or self.lam < 0:
            raise PreconditionError("gamma_hat > 0, sigma >= 0 and lam >= 0 required")
        if self.predictor not in PREDICTORS:
            raise PreconditionError(f"predictor must be one of {PREDICTORS}")
        if (self.mu is None) != (self.L is None):
            raise PreconditionError("set both mu and L or neither")

    @classmethod
    def for_mode(cls, pa_mode: str, **kw) -> "TrainConfig":
        """Build a config, inferring ``setting`` from the mode when possible."""
        if "setting" not in kw and pa_mode in ("offline_optimal", "online"):
            kw["setting"] = "offline" if pa_mode == "offline_optimal" else "online"
        return cls(pa_mode=pa_mode, **kw)

    def with_mode(self, pa_mode: str, protocol: str | None = None) -> "TrainConfig":
        setting = self.setting
        if pa_mode in ("offline_optimal", "online"):
            setting = "offline" if pa_mode == "offline_optimal" else "online"
        return replace(self, pa_mode=pa_mode, setting=setting,
                       protocol=self.protocol if protocol is None else protocol)

    def _default(self, name):
        value = getattr(self, name)
        return _SETTING_DEFAULTS[self.setting][name] if value is None else value

    @property
    def kappa_eff(self) -> float:
        return self._default("kappa")

    @property
    def rho_eff(self) -> float:
        return self._default("rho")

    @property
    def W_eff(self) -> float:
        return self._default("W")

    @property
    def T(self) -> int:
        return self.I // self.K if self.protocol == "oma" else self.I

    @property
    def clip(self) -> float | None:
        return self.gamma_hat if self.setting == "online" else None

    @property
    def budget(self) -> float:
        return r_dp(DpTarget(self.epsilon, self.delta))

    def channel(self, d: int) -> ChannelParams:
        return ChannelParams.from_snr(self.snr_db, d, self.kappa_eff, self.rho_eff, self.n0)

    def field_names(self):
        return [f.name for f in fields(self)]


@dataclass(frozen=True)
class ProblemContext:
    """Dataset-level constants shared by every realization."""

    spec: LossSpec
    curv: CurvatureConstants
    bounds: GradientBounds | None
    w_star: np.ndarray | None
    f_star: float | None
    f_init: float


def build_context(config: TrainConfig, dataset: Dataset, partition: Partition) -> ProblemContext:
    spec = LossSpec(config.loss, config.lam)
    dim = spec.dim(dataset.d)
    w_star = f_star = None
    if config.loss == "ridge":
        w_star, f_star = ridge_optimum(dataset, config.lam)
    if config.mu is not None:
        curv = CurvatureConstants(config.mu, config.L)
    elif config.loss == "ridge":
        curv = curvature(dataset, config.lam)
    else:
        raise PreconditionError("logistic loss needs mu and L in the config")
    bounds = None
    if config.setting == "offline":
        if config.loss != "ridge":
            raise PreconditionError("offline gradient bounds are available for ridge only")
        bounds = offline_bounds(dataset, partition, config.lam, config.W_eff)
    f_init = global_loss(spec, np.zeros(dim), dataset)
    return ProblemContext(spec, curv, bounds, w_star, f_star, f_init)


@dataclass
class MetricsTrace:
    """Per-iteration record of one realization (arrays have T rows).

    ``scale`` holds alpha per device for OMA and c (repeated per device)
    for NOMA; ``privacy`` is the cumulative ledger per account.
    """

    protocol: str
    pa_mode: str
    budget: float
    n0: float
    gamma: np.ndarray
    loss: np.ndarray
    gap: np.ndarray | None
    h: np.ndarray
    scale: np.ndarray
    sigma: np.ndarray
    power: np.ndarray
    privacy: np.ndarray
    guard_hits: int = 0
    bound: float | None = None
    w_final: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.loss.shape[0]

    @property
    def final_gap(self) -> float | None:
        return None if self.gap is None else float(self.gap[-1])

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    def final_privacy(self) -> np.ndarray:
        return self.privacy[-1]


def server_estimate_oma(ys, hs, alphas, D_tot) -> np.ndarray:
    """``(1/D_tot) sum_k y_k / (h_k alpha_k)``; silent devices are skipped."""
    ys = np.atleast_2d(np.asarray(ys, float))
    est = np.zeros(ys.shape[1])
    for y, h, a in zip(ys, np.atleast_1d(hs), np.atleast_1d(alphas)):
        if a > 0:
            est = est + y / (h * a)
    return est / D_tot


def server_estimate_noma(y, c, D_tot) -> np.ndarray:
    y = np.asarray(y, float)
    if c <= 0:
        return np.zeros_like(y)
    return y / (c * D_tot)


def model_update(w, estimate, L: float, W: float) -> np.ndarray:
    return project_ball(np.asarray(w, float) - np.asarray(estimate, float) / L, W)


def bound_value(noise_ratio2, mu: float, L: float, D_tot: float, d: int, initial_gap: float):
    """Upper bound on the expected optimality gap after T iterations.

    ``noise_ratio2`` holds ``(m / scale)**2`` with shape (T,) or (T, K),
    where ``m`` is the effective noise deviation. Returns None when any
    scale was zero (a silent device leaves the bound undefined).
    """
    r = np.asarray(noise_ratio2, float)
    if r.ndim == 1:
        r = r[:, None]
    if not np.all(np.isfinite(r)):
        return None
    T = r.shape[0]
    q = 1.0 - mu / L
    decay = q ** (T - np.arange(1, T + 1, dtype=float))
    return float(q ** T * initial_gap + d / (2.0 * L * D_tot ** 2) * np.sum(decay * r.sum(axis=1)))


def fading_trace(config: TrainConfig, realization: int, d: int):
    """Complex gains for every block, shape (I, K)."""
    params = config.channel(d)
    proc = FadingProcess(params, make_rng(config.seed, realization, _FADING), config.K)
    out = np.empty((config.I, config.K), complex)
    for i in range(config.I):
        proc.advance()
        out[i] = proc.g
    return out


def _guard(x, P):
    """Scale ``x`` down onto the power budget; returns (x, hit)."""
    power = float(x @ x)
    if power <= P:
        return x, False
    return x * math.sqrt(P / power), True


class _Run:
    def __init__(self, config, dataset, partition, ctx, realization):
        if partition.K != config.K:
            raise PreconditionError(f"partition has {partition.K} shards, config K={config.K}")
        self.cfg = config
        self.data = dataset
        self.part = partition
        self.ctx = ctx
        self.dim = ctx.spec.dim(dataset.d)
        self.params = config.channel(self.dim)
        self.P = self.params.P
        self.n0 = config.n0
        self.rx_n0 = 0.0 if config.noiseless else config.n0
        self.budget = config.budget
        self.D = partition.sizes.astype(float)
        self.D_tot = float(dataset.n)
        self.g = fading_trace(config, realization, self.dim)
        self.H = np.abs(self.g)
        self.noise_rng = make_rng(config.seed, realization, _NOISE)
        self.art_rng = make_rng(config.seed, realization, _ARTIFICIAL)
        self.gamma = config.gamma_hat if config.setting == "online" else ctx.bounds.gamma
        self.guard_hits = 0

    def grad(self, w, k):
        shard = self.part.shards[k]
        return local_gradient(self.ctx.spec, w, self.data.U[shard], self.data.v[shard], clip=self.cfg.clip)

    def artificial(self):
        if self.cfg.sigma == 0:
            return 0.0
        return self.art_rng.normal(0.0, self.cfg.sigma, size=self.dim)

    # -- offline schedules --------------------------------------------

    def oma_inputs(self, k, h, G, budget):
        return pa.PaInputsOma(h, self.gamma, G, self.D[k], self.P, self.n0,
                              self.ctx.curv.mu, self.ctx.curv.L, budget, self.dim)

    def offline_oma(self):
        cfg, T, K = self.cfg, self.cfg.T, self.cfg.K
        alpha = np.empty((T, K))
        solver = {"offline_optimal": pa.solve_offline_oma, "static": pa.static_oma,
                  "no_dp": pa.no_dp_oma}[cfg.pa_mode]
        for k in range(K):
            h = self.H[k::K, k][:T]
            alpha[:, k] = solver(self.oma_inputs(k, h, self.ctx.bounds.G[k], self.budget)).scale
        return alpha

    def offline_noma(self):
        inp = pa.PaInputsNoma(self.H, self.gamma, self.ctx.bounds.G[None, :], self.D, self.P,
                              self.n0, self.ctx.curv.mu, self.ctx.curv.L, self.budget, self.dim)
        solver = {"offline_optimal": pa.solve_offline_noma, "static": pa.static_noma,
                  "no_dp": pa.no_dp_noma}[self.cfg.pa_mode]
        return solver(inp).scale


def _online_alpha(run: _Run, ledger, k, t, block, G_hat):
    """Device-side scale for OMA iteration ``t`` (0-based) in the online setting."""
    cfg, T, K = run.cfg, run.cfg.T, run.cfg.K
    h_now = run.H[block, k]
    G_row = np.full(T - t, G_hat)
    if cfg.pa_mode == "no_dp":
        return math.sqrt(run.P) / (run.D[k] * G_hat)
    if cfg.pa_mode == "static":
        return float(pa.static_oma(run.oma_inputs(k, [h_now], G_hat, run.budget), horizon=T).scale[0])
    lags = K * np.arange(1, T - t)
    future = predict_power(run.g[block, k], run.params, lags, published=cfg.predictor == "published")
    h_hat = np.concatenate([[h_now], np.sqrt(future)])
    return pa.online_step_oma(ledger.residual(k), h_hat, G_row, run.gamma, run.D[k], run.P,
                              run.n0, run.ctx.curv.mu, run.ctx.curv.L)


def _online_c(run: _Run, ledger, t, G_hat):
    cfg, T = run.cfg, run.cfg.T
    h_now = run.H[t]
    if cfg.pa_mode == "no_dp":
        return math.sqrt(run.P) * float(np.min(h_now / (run.D * G_hat)))
    inp = pa.PaInputsNoma(h_now[None, :], run.gamma, G_hat, run.D, run.P, run.n0,
                          run.ctx.curv.mu, run.ctx.curv.L, run.budget, run.dim)
    if cfg.pa_mode == "static":
        return float(pa.static_noma(inp, horizon=T).scale[0])
    lags = np.arange(1, T - t)
    future = np.sqrt(predict_power(run.g[t][None, :], run.params, lags[:, None],
                                   published=cfg.predictor == "published"))
    h_hat = np.vstack([h_now[None, :], future])
    G_rows = np.full((T - t, cfg.K), G_hat)
    return pa.online_step_noma(ledger.residual(0), h_hat, G_rows, run.gamma, run.D, run.P,
                               run.n0, run.ctx.curv.mu, run.ctx.curv.L)


def _run_oma(run: _Run):
    cfg, T, K = run.cfg, run.cfg.T, run.cfg.K
    online = cfg.setting == "online"
    alpha_plan = None if online else run.offline_oma()
    ledger = PrivacyLedger(run.budget, K, enforce=cfg.pa_mode != "no_dp")
    w = np.zeros(run.dim)
    rec = _Recorder(T, K, run)
    G_est = np.full(K, cfg.gamma_hat)
    last_norm = np.zeros(K)
    prev_h = np.zeros(K)
    prev_alpha = np.zeros(K)
    for t in range(T):
        ys = np.empty((K, run.dim))
        alphas = np.empty(K)
        hs = np.empty(K)
        powers = np.empty(K)
        for k in range(K):
            block = K * t + k
            h = run.H[block, k]
            if online:
                G_est[k] = pa.predict_bounds_oma(last_norm[k], prev_h[k], prev_alpha[k], run.D[k],
                                                 cfg.gamma_hat, t + 1, 1, previous=G_est[k])[0]
                alpha = _online_alpha(run, ledger, k, t, block, G_est[k])
            else:
                alpha = alpha_plan[t, k]
            x = alpha * (run.D[k] * run.grad(w, k) + run.artificial())
            x, hit = _guard(x, run.P)
            run.guard_hits += hit
            ys[k] = oma_receive(x, h, run.rx_n0, run.noise_rng, P=run.P)
            alphas[k], hs[k], powers[k] = alpha, h, float(x @ x)
        ledger.charge(step_loss_oma(hs, alphas, run.gamma, cfg.sigma, run.n0))
        last_norm = np.linalg.norm(ys, axis=1)
        prev_h, prev_alpha = hs, alphas
        w = model_update(w, server_estimate_oma(ys, hs, alphas, run.D_tot), run.ctx.curv.L, cfg.W_eff)
        rec.record(t, w, hs, alphas, powers, ledger.loss)
    with np.errstate(divide="ignore"):
        noise = np.where(rec.scale > 0, run.n0 / (rec.h * rec.scale) ** 2 + cfg.sigma ** 2, np.inf)
    return rec.finish(w, ledger, noise)


def _run_noma(run: _Run):
    cfg, T, K = run.cfg, run.cfg.T, run.cfg.K
    online = cfg.setting == "online"
    c_plan = None if online else run.offline_noma()
    ledger = PrivacyLedger(run.budget, 1, enforce=cfg.pa_mode != "no_dp")
    w = np.zeros(run.dim)
    rec = _Recorder(T, K, run)
    G_est = cfg.gamma_hat
    last_norm, prev_c = 0.0, 0.0
    for t in range(T):
        hs = run.H[t]
        if online:
            G_est = pa.predict_bounds_noma(last_norm, prev_c, run.D_tot, cfg.gamma_hat, t + 1, 1,
                                           previous=G_est)[0]
            c = _online_c(run, ledger, t, G_est)
        else:
            c = c_plan[t]
        xs = np.zeros((K, run.dim))
        if c > 0:
            for k in range(K):
                signal = run.D[k] * run.grad(w, k)
                norm = float(np.linalg.norm(signal))
                shrink = 1.0 if norm == 0 else min(1.0, math.sqrt(run.P) * hs[k] / (c * norm))
                run.guard_hits += shrink < 1.0
                x = (c / hs[k]) * (shrink * signal + run.artificial())
                x, hit = _guard(x, run.P)
                run.guard_hits += hit
                xs[k] = x
        y = noma_receive(xs, hs, run.rx_n0, run.noise_rng, P=run.P)
        sig = np.full(K, cfg.sigma)
        ledger.charge(step_loss_noma(c, run.gamma, sig, run.n0))
        last_norm, prev_c = float(np.linalg.norm(y)), c
        w = model_update(w, server_estimate_noma(y, c, run.D_tot), run.ctx.curv.L, cfg.W_eff)
        rec.record(t, w, hs, np.full(K, c), np.einsum("kd,kd->k", xs, xs), ledger.loss)
    c_col = rec.scale[:, 0]
    with np.errstate(divide="ignore"):
        noise = np.where(c_col > 0, run.n0 / c_col ** 2 + K * cfg.sigma ** 2, np.inf)
    return rec.finish(w, ledger, noise)


class _Recorder:
    def __init__(self, T, K, run: _Run):
        self.run = run
        self.loss = np.empty(T)
        self.gap = None if run.ctx.f_star is None else np.empty(T)
        self.h = np.empty((T, K))
        self.scale = np.empty((T, K))
        self.power = np.empty((T, K))
        self.privacy = []

    def record(self, t, w, hs, scales, powers, ledger_loss):
        ctx = self.run.ctx
        self.loss[t] = global_loss(ctx.spec, w, self.run.data)
        if self.gap is not None:
            self.gap[t] = (self.loss[t] - ctx.f_star) / ctx.f_star
        self.h[t], self.scale[t], self.power[t] = hs, scales, powers
        self.privacy.append(ledger_loss.copy())

    def finish(self, w, ledger, noise_ratio2):
        run, cfg = self.run, self.run.cfg
        ctx = run.ctx
        bound = None
        if ctx.f_star is not None:
            bound = bound_value(noise_ratio2, ctx.curv.mu, ctx.curv.L, run.D_tot, run.dim,
                                ctx.f_init - ctx.f_star)
        T = self.loss.shape[0]
        return MetricsTrace(
            protocol=cfg.protocol, pa_mode=cfg.pa_mode, budget=run.budget, n0=run.n0,
            gamma=np.full(T, float(run.gamma)), loss=self.loss, gap=self.gap, h=self.h,
            scale=self.scale, sigma=np.full((T, cfg.K), cfg.sigma), power=self.power,
            privacy=np.array(self.privacy), guard_hits=int(run.guard_hits), bound=bound,
            w_final=w, meta={"setting": cfg.setting, "P": run.P, "T": T, "K": cfg.K})


def run(config: TrainConfig, dataset: Dataset, partition: Partition, realization: int = 0,
        context: ProblemContext | None = None) -> MetricsTrace:
    """Simulate one channel realization and return its metrics."""
    ctx = build_context(config, dataset, partition) if context is None else context
    state = _Run(config, dataset, partition, ctx, realization)
    return _run_oma(state) if config.protocol == "oma" else _run_noma(state)
