"""Adam training loop and parameter serialization for the refiner."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .refiner import RefinerConfig, RefinerParams, Sample, batch_loss, forward, loss_and_gradient

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of the flat parameter vector."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class HistoryRow:
    epoch: int
    conf_loss: float
    disp_loss: float
    total: float


HISTORY_HEADER = ["epoch", "conf_loss", "disp_loss", "total"]


def train(dataset: Sequence[Sample], config: RefinerConfig,
          init: RefinerParams | None = None) -> tuple[RefinerParams, list[HistoryRow]]:
    """Minibatch Adam over frames; row 0 of the history is the initial loss.

    Each history row is the full-dataset loss after that epoch. Frame order is
    reshuffled every epoch from `config.seed`, so runs are reproducible.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    params = init.copy() if init is not None else RefinerParams.init(config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(lr=config.learning_rate, beta1=0.9, beta2=0.999)

    def record(epoch):
        total, lc, ld = batch_loss(params, dataset)
        if not np.isfinite(total):
            raise TrainingDiverged(f"loss became {total} at epoch {epoch}")
        history.append(HistoryRow(epoch, lc, ld, total))
        logger.debug("epoch %d: total=%.6f conf=%.6f disp=%.6f", epoch, total, lc, ld)

    history: list[HistoryRow] = []
    record(0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            if not any(s.valid.any() for s in batch):
                continue
            try:
                _, _, _, g = loss_and_gradient(params, batch)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            opt.step(params.vector, g)
        if not np.all(np.isfinite(params.vector)):
            raise TrainingDiverged(f"parameters became non-finite at epoch {epoch}")
        record(epoch)
    return params, history


def predict_confidence(params: RefinerParams, samples: Sequence[Sample]) -> np.ndarray:
    return np.concatenate([forward(s.features, s.patches, params).confidence for s in samples])


def save_params(params: RefinerParams, path) -> None:
    """Write `<path>` as raw little-endian float64 and `<path>.json` as the shape manifest."""
    path = Path(path)
    io.atomic_write_bytes(path, params.vector.astype("<f8").tobytes())
    manifest = {
        "dtype": "<f8",
        "size": int(params.vector.size),
        "parameters": [{"name": n, "offset": o, "shape": list(s)} for n, (o, s) in params.index.items()],
        "config": params.config.to_dict(),
    }
    io.write_json(path.with_name(path.name + ".json"), manifest)


def load_params(path) -> RefinerParams:
    path = Path(path)
    manifest = io.read_json(path.with_name(path.name + ".json"))
    config = RefinerConfig.from_dict(manifest["config"])
    vector = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    index = {p["name"]: (int(p["offset"]), tuple(p["shape"])) for p in manifest["parameters"]}
    return RefinerParams(config, vector, index)


def write_history(path, history: Sequence[HistoryRow]) -> None:
    io.write_csv(path, HISTORY_HEADER, [(h.epoch, h.conf_loss, h.disp_loss, h.total) for h in history])
