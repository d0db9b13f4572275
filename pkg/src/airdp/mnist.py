"""Multinomial logistic regression on MNIST under online power allocation.

Reports the final training cross-entropy and the test error for each
communication budget ``I`` and power-allocation mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, load_idx, partition_uniform
from .errors import FormatError, PreconditionError
from .model import predict
from .trainer import TrainConfig, build_context, run

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
CSV_HEADER = ["I", "protocol", "pa_mode", "train_loss_mean", "train_loss_stderr",
              "test_error_mean", "test_error_stderr", "realizations", "seed"]


@dataclass(frozen=True)
class MnistConfig:
    data_dir: str = "data/mnist"
    n_train: int = 1000
    n_test: int = 1000
    K: int = 10
    I_grid: tuple = (10, 20, 30, 40, 50)
    modes: tuple = ("online", "static")
    protocol: str = "oma"
    lam: float = 0.01
    W: float = 10.0
    gamma_hat: float = 40.0
    snr_db: float = 13.0
    epsilon: float = 5.0
    delta: float = 0.01
    mu: float = 0.3
    L: float = 2.5
    realizations: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_train <= 60000 or self.n_test < 1:
            raise PreconditionError("need 1 <= n_train <= 60000 and n_test >= 1")
        if self.realizations < 1 or not self.I_grid:
            raise PreconditionError("need a nonempty I grid and at least one realization")

    def train_config(self, I: int, mode: str) -> TrainConfig:
        return TrainConfig.for_mode(
            mode, setting="online", protocol=self.protocol, I=I, K=self.K, epsilon=self.epsilon,
            delta=self.delta, snr_db=self.snr_db, W=self.W, gamma_hat=self.gamma_hat,
            loss="logistic", lam=self.lam, mu=self.mu, L=self.L, seed=self.seed)


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FormatError(f"missing MNIST file {stem}[.gz] in {data_dir}")


def load_mnist(config: MnistConfig) -> tuple[Dataset, Dataset]:
    root = Path(config.data_dir)
    train = load_idx(*(_find(root, s) for s in TRAIN_FILES), limit=config.n_train)
    test = load_idx(*(_find(root, s) for s in TEST_FILES), limit=config.n_test)
    if train.n < config.n_train:
        raise PreconditionError(f"only {train.n} training images available")
    return train, test


def test_error(spec, w, test: Dataset) -> float:
    return float(np.mean(predict(spec, w, test.U) != test.v))


def run_mnist(config: MnistConfig, out=None) -> list[dict]:
    train, test = load_mnist(config)
    partition = partition_uniform(train, config.K)
    rows = []
    for I in config.I_grid:
        for mode in config.modes:
            cfg = config.train_config(I, mode)
            ctx = build_context(cfg, train, partition)
            losses, errors = [], []
            for r in range(config.realizations):
                trace = run(cfg, train, partition, r, ctx)
                losses.append(trace.final_loss)
                errors.append(test_error(ctx.spec, trace.w_final, test))
            rows.append(_row(I, config, mode, losses, errors))
    if out is not None:
        write_mnist_csv(rows, out)
    return rows


def _row(I, config, mode, losses, errors):
    from .experiments import summarize

    lm, ls = summarize(losses)
    em, es = summarize(errors)
    return {"I": I, "protocol": config.protocol, "pa_mode": mode, "train_loss_mean": lm,
            "train_loss_stderr": ls, "test_error_mean": em, "test_error_stderr": es,
            "realizations": config.realizations, "seed": config.seed}


def write_mnist_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in CSV_HEADER])


def with_overrides(config: MnistConfig, **kw) -> MnistConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
