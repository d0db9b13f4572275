"""Configuration files, Monte Carlo sweeps, free-privacy thresholds and trace
files with a post-hoc privacy audit."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import power as pa
from .data import Dataset, generate_synthetic, partition_skewed, partition_uniform
from .errors import AirdpError, ConfigError, FormatError
from .numerics import make_rng
from .privacy import BUDGET_SLACK, accumulate_noma, accumulate_oma, epsilon_for_budget
from .trainer import DATA_STREAM, MetricsTrace, TrainConfig, build_context, fading_trace, run

SWEEP_AXES = ("epsilon", "snr_db", "max_fraction", "I", "K", "gamma_hat")
CSV_HEADER = ["axis", "value", "protocol", "pa_mode", "metric_mean", "metric_stderr",
              "realizations", "seed"]
DEFAULT_REALIZATIONS = {"offline": 200, "online": 50}


# -- configuration --------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: TrainConfig = TrainConfig()
    realizations: int | None = None
    modes: tuple = ("offline_optimal", "static", "no_dp")
    protocols: tuple = ("oma", "noma")

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep grid is empty")
        if self.realizations is not None and self.realizations < 1:
            raise ConfigError("realizations must be at least 1")

    @property
    def n_realizations(self) -> int:
        if self.realizations is not None:
            return self.realizations
        return DEFAULT_REALIZATIONS[self.base.setting]


_TRAIN_TYPES = typing.get_type_hints(TrainConfig)
_SWEEP_KEYS = {"axis": str, "values": "list", "realizations": int, "modes": "list",
               "protocols": "list"}


def _strip_quotes(text):
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _coerce(key, raw, typ, line):
    args = typing.get_args(typ)
    optional = type(None) in args
    base = next(a for a in args if a is not type(None)) if optional else typ
    if optional and raw.lower() == "none":
        return None
    try:
        if base is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if base is int:
            return int(raw)
        if base is float:
            return float(raw)
        return _strip_quotes(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {base.__name__}, got {raw!r}", line) from None


def _parse_lines(text):
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if not key or not raw:
            raise ConfigError("empty key or value", lineno)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if key not in _TRAIN_TYPES and key not in _SWEEP_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        entries[key] = (raw, lineno)
    return entries


def parse_config_text(text: str) -> TrainConfig | SweepSpec:
    """Parse ``key = value`` lines; a config naming an ``axis`` is a sweep."""
    entries = _parse_lines(text)
    train = {}
    for key, (raw, line) in entries.items():
        if key in _TRAIN_TYPES:
            train[key] = _coerce(key, raw, _TRAIN_TYPES[key], line)
    try:
        if "setting" not in train and train.get("pa_mode") in ("offline_optimal", "online"):
            train["setting"] = "offline" if train["pa_mode"] == "offline_optimal" else "online"
        base = TrainConfig(**train)
    except AirdpError as exc:
        raise ConfigError(str(exc)) from None
    if "axis" not in entries:
        extra = set(entries) & set(_SWEEP_KEYS)
        if extra:
            raise ConfigError(f"sweep keys {sorted(extra)} need an axis", entries[min(extra)][1])
        return base
    axis = _strip_quotes(entries["axis"][0])
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}", entries["axis"][1])
    if "values" not in entries:
        raise ConfigError("sweep config needs 'values'")
    raw, line = entries["values"]
    values = tuple(_coerce(axis, v.strip(), _TRAIN_TYPES[axis], line) for v in raw.split(",") if v.strip())
    kw = {}
    if "realizations" in entries:
        raw, line = entries["realizations"]
        kw["realizations"] = _coerce("realizations", raw, int, line)
    for key in ("modes", "protocols"):
        if key in entries:
            kw[key] = tuple(_strip_quotes(v.strip()) for v in entries[key][0].split(",") if v.strip())
    spec = SweepSpec(axis, values, base, **kw)
    for value in values:
        for protocol in spec.protocols:
            for mode in spec.modes:
                try:
                    point_config(spec, value, protocol, mode)
                except AirdpError as exc:
                    raise ConfigError(f"grid point {axis}={value} ({protocol}, {mode}): {exc}") from None
    return spec


def parse_config(path) -> TrainConfig | SweepSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved(config: TrainConfig) -> TrainConfig:
    """Copy with setting-dependent defaults written out."""
    return replace(config, kappa=config.kappa_eff, rho=config.rho_eff, W=config.W_eff)


def emit_config(obj: TrainConfig | SweepSpec) -> str:
    """Effective configuration as text that :func:`parse_config_text` reads back."""
    base = obj.base if isinstance(obj, SweepSpec) else obj
    base = resolved(base)
    out = io.StringIO()
    for f in dataclasses.fields(base):
        out.write(f"{f.name} = {_fmt(getattr(base, f.name))}\n")
    if isinstance(obj, SweepSpec):
        out.write(f"axis = {obj.axis}\n")
        out.write("values = " + ", ".join(_fmt(v) for v in obj.values) + "\n")
        out.write(f"realizations = {obj.n_realizations}\n")
        out.write("modes = " + ", ".join(obj.modes) + "\n")
        out.write("protocols = " + ", ".join(obj.protocols) + "\n")
    return out.getvalue()


# -- problem construction -------------------------------------------------

@lru_cache(maxsize=8)
def synthetic_dataset(n: int, d: int, seed: int) -> Dataset:
    return generate_synthetic(n, d, rng=make_rng(seed, DATA_STREAM))


def make_partition(config: TrainConfig, dataset: Dataset):
    if config.max_fraction is None:
        return partition_uniform(dataset, config.K)
    return partition_skewed(dataset, config.K, config.max_fraction)


def make_problem(config: TrainConfig):
    dataset = synthetic_dataset(config.n_samples, config.d, config.seed)
    partition = make_partition(config, dataset)
    return dataset, partition, build_context(config, dataset, partition)


def point_config(spec: SweepSpec, value, protocol: str, mode: str) -> TrainConfig:
    cfg = spec.base.with_mode(mode, protocol)
    return replace(cfg, **{spec.axis: value})


def _metric(trace: MetricsTrace) -> float:
    return trace.final_gap if trace.final_gap is not None else trace.final_loss


def run_realizations(config: TrainConfig, realizations: int, start: int = 0) -> np.ndarray:
    dataset, partition, ctx = make_problem(config)
    return np.array([_metric(run(config, dataset, partition, r, ctx))
                     for r in range(start, start + realizations)])


def _job(args):
    config, n = args
    return run_realizations(config, n)


def summarize(values) -> tuple[float, float]:
    values = np.asarray(values, float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def run_sweep(spec: SweepSpec, out=None, workers: int = 1) -> list[dict]:
    """Mean and standard error of the endpoint metric at every grid point.

    Realization ``r`` of every point shares channel and noise draws, so
    modes are compared under common random numbers. Rows come back (and
    are written) in grid order regardless of ``workers``.
    """
    jobs = [(value, protocol, mode, point_config(spec, value, protocol, mode))
            for value in spec.values for protocol in spec.protocols for mode in spec.modes]
    n = spec.n_realizations
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_job, [(cfg, n) for *_, cfg in jobs]))
    else:
        results = [_job((cfg, n)) for *_, cfg in jobs]
    rows = []
    for (value, protocol, mode, _), metrics in zip(jobs, results):
        mean, stderr = summarize(metrics)
        rows.append({"axis": spec.axis, "value": value, "protocol": protocol, "pa_mode": mode,
                     "metric_mean": mean, "metric_stderr": stderr, "realizations": n,
                     "seed": spec.base.seed})
    if out is not None:
        write_sweep_csv(rows, out)
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) if isinstance(row[k], float) else row[k] for k in CSV_HEADER])


# -- free-privacy thresholds ----------------------------------------------

@dataclass(frozen=True)
class Threshold:
    protocol: str
    lhs: float
    epsilon: float
    snr_db: float


def free_privacy_lhs(config: TrainConfig, realizations: int = 1) -> float:
    """Worst case (over devices and realizations) of the free-privacy sum."""
    dataset, partition, ctx = make_problem(config)
    dim = ctx.spec.dim(dataset.d)
    P = config.channel(dim).P
    D = partition.sizes.astype(float)
    worst = 0.0
    for r in range(realizations):
        H = np.abs(fading_trace(config, r, dim))
        if config.protocol == "oma":
            for k in range(config.K):
                inp = pa.PaInputsOma(H[k::config.K, k][:config.T], ctx.bounds.gamma, ctx.bounds.G[k],
                                     D[k], P, config.n0, ctx.curv.mu, ctx.curv.L, 1.0, dim)
                worst = max(worst, pa.free_privacy_threshold_oma(inp))
        else:
            inp = pa.PaInputsNoma(H, ctx.bounds.gamma, ctx.bounds.G[None, :], D, P, config.n0,
                                  ctx.curv.mu, ctx.curv.L, 1.0, dim)
            worst = max(worst, pa.free_privacy_threshold_noma(inp))
    return worst


def threshold_report(config: TrainConfig, realizations: int = 1) -> list[Threshold]:
    """Epsilon (at fixed delta) and SNR above which full power is private.

    The free-privacy sum is linear in the power budget, so the SNR
    threshold follows from the ratio of the budget to the sum.
    """
    cfg = config if config.setting == "offline" else replace(config, setting="offline")
    report = []
    for protocol in ("oma", "noma"):
        lhs = free_privacy_lhs(replace(cfg, protocol=protocol, pa_mode="offline_optimal"), realizations)
        eps = epsilon_for_budget(lhs, cfg.delta)
        snr = math.inf if lhs == 0 else cfg.snr_db + 10.0 * math.log10(cfg.budget / lhs)
        report.append(Threshold(protocol, lhs, eps, snr))
    return report


# -- trace files and audit --------------------------------------------------

def write_trace(trace: MetricsTrace, path) -> None:
    """Per-iteration CSV with ``# key = value`` metadata lines.

    Floats are written with ``repr`` so that :func:`verify_trace` replays
    the ledger on exactly the recorded values.
    """
    K = trace.h.shape[1]
    accounts = trace.privacy.shape[1]
    cols = ["t", "loss", "gap", "gamma"]
    for name in ("h", "scale", "sigma", "power"):
        cols += [f"{name}_{k}" for k in range(K)]
    cols += [f"privacy_{a}" for a in range(accounts)]
    with open(path, "w", newline="") as fh:
        for key, value in (("protocol", trace.protocol), ("pa_mode", trace.pa_mode),
                           ("budget", repr(trace.budget)), ("n0", repr(trace.n0)),
                           ("guard_hits", trace.guard_hits),
                           ("bound", "none" if trace.bound is None else repr(trace.bound))):
            fh.write(f"# {key} = {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for t in range(trace.T):
            row = [t + 1, repr(float(trace.loss[t])),
                   "" if trace.gap is None else repr(float(trace.gap[t])), repr(float(trace.gamma[t]))]
            for arr in (trace.h, trace.scale, trace.sigma, trace.power):
                row += [repr(float(x)) for x in arr[t]]
            row += [repr(float(x)) for x in trace.privacy[t]]
            writer.writerow(row)


def read_trace(path) -> dict:
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    if not lines:
        raise FormatError(f"{path}: no trace rows")
    for key in ("protocol", "budget", "n0"):
        if key not in meta:
            raise FormatError(f"{path}: missing metadata '{key}'")
    reader = csv.reader(lines)
    header = next(reader)
    rows = list(reader)
    try:
        table = {name: np.array([float(r[i]) if r[i] else math.nan for r in rows])
                 for i, name in enumerate(header)}
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from None

    def stack(prefix):
        names = [c for c in header if c.startswith(prefix + "_")]
        names.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
        return np.column_stack([table[c] for c in names])

    return {"protocol": meta["protocol"], "pa_mode": meta.get("pa_mode", ""),
            "budget": float(meta["budget"]), "n0": float(meta["n0"]), "gamma": table["gamma"],
            "h": stack("h"), "scale": stack("scale"), "sigma": stack("sigma"),
            "privacy": stack("privacy")}


@dataclass(frozen=True)
class AuditResult:
    ok: bool
    ledger_match: bool
    within_budget: bool
    totals: np.ndarray
    slack: float


def verify_trace(path) -> AuditResult:
    """Recompute privacy totals from the recorded channel and schedule.

    Passes when the recomputed totals equal the recorded ledger exactly and
    stay within budget (the no-DP baseline only needs the exact match).
    """
    tr = read_trace(path)
    if tr["protocol"] == "oma":
        totals = accumulate_oma(tr["h"], tr["scale"], tr["gamma"], tr["sigma"], tr["n0"])
    else:
        totals = np.array([accumulate_noma(tr["scale"][:, 0], tr["gamma"], tr["sigma"], tr["n0"])])
    recorded = tr["privacy"][-1]
    match = bool(np.array_equal(totals, recorded))
    slack = tr["budget"] - float(np.max(totals))
    within = slack >= -BUDGET_SLACK
    ok = match and (within or tr["pa_mode"] == "no_dp")
    return AuditResult(ok, match, within, totals, slack)
