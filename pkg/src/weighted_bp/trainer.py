"""Mini-batch RMSProp training on noisy all-zero codewords."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bp_core import DEFAULT_CLIP
from .channel import DEFAULT_SNR_GRID, make_rng, sample_training_batch, spawn_seeds
from .code_graph import ParityCheckCode, TrellisLayout
from .neural_bp import (
    WeightSet,
    backward,
    checkpoint_save,
    init_weights,
    loss_value,
    neural_decode,
    neural_forward,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def default_steps(code: ParityCheckCode) -> int:
    return 10_000 if code.n < 63 else 50_000


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_per_snr: int = 20
    snr_grid_db: tuple = DEFAULT_SNR_GRID
    steps: int = 10_000
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    loss_kind: str = "single"
    clip_A: float = DEFAULT_CLIP
    seed: int = 0
    checkpoint_every: int = 1000
    init: str = "ones"
    snr_convention: str = "ebn0"
    val_per_snr: int = 200

    def __post_init__(self):
        self.snr_grid_db = tuple(float(s) for s in self.snr_grid_db)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must be in (0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_per_snr < 1:
            raise ValueError("batch_per_snr must be >= 1")
        if self.loss_kind not in ("single", "multiloss"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def multiloss(self) -> bool:
        return self.loss_kind == "multiloss"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    wall_time: float
    gradient_norm: float
    val_ber: float | None = None

    def tsv(self) -> str:
        val = "" if self.val_ber is None else f"{self.val_ber:.10g}"
        return f"{self.step}\t{self.loss:.17g}\t{self.gradient_norm:.10g}\t{val}\t{self.wall_time:.3f}"


LOG_HEADER = "step\tloss\tgrad_norm\tval_ber\twall_time"


def rmsprop_step(weights: np.ndarray, grad: np.ndarray, acc: np.ndarray, config: TrainConfig):
    """acc <- rho*acc + (1-rho)*g^2;  w <- w - lr*g/sqrt(acc + eps).  Returns new arrays."""
    rho = config.rmsprop_decay
    acc = rho * acc + (1.0 - rho) * grad * grad
    weights = weights - config.learning_rate * grad / np.sqrt(acc + config.rmsprop_eps)
    return weights, acc


@dataclass
class TrainResult:
    weights: WeightSet
    log: list[TrainLogEntry] = field(default_factory=list)

    def running_loss(self, window: int = 100) -> float:
        losses = [e.loss for e in self.log if e.step > 0]
        return float(np.mean(losses[-window:]))


def _seeds(seed: int):
    train_ss, val_ss, init_ss = spawn_seeds(seed, 3)
    return train_ss, val_ss, init_ss


def validation_batch(code: ParityCheckCode, config: TrainConfig):
    _, val_ss, _ = _seeds(config.seed)
    return sample_training_batch(
        code, make_rng(val_ss), config.snr_grid_db, config.val_per_snr, config.snr_convention
    )


def validation_ber(code, layout, weights, config, batch=None) -> float:
    batch = validation_batch(code, config) if batch is None else batch
    bits = neural_decode(layout, weights, batch.llrs, config.clip_A)
    return float(np.mean(bits != batch.labels))


def train(
    code: ParityCheckCode,
    layout: TrellisLayout,
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    weights: WeightSet | None = None,
) -> TrainResult:
    """Run ``config.steps`` RMSProp updates; deterministic given ``config.seed``.

    A step-0 validation entry is logged before the first update.  If a
    checkpoint path is given it is rewritten every ``checkpoint_every``
    steps and at the end.
    """
    train_ss, _, init_ss = _seeds(config.seed)
    rng = make_rng(train_ss)
    if weights is None:
        weights = init_weights(layout, config.multiloss, config.init, rng=make_rng(init_ss))
    weights.check_layout(layout)
    val = validation_batch(code, config)

    flat = weights.flat()
    acc = np.zeros_like(flat)
    result = TrainResult(weights)
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w", encoding="ascii")
        log_fh.write(LOG_HEADER + "\n")

    def record(entry):
        result.log.append(entry)
        if log_fh is not None:
            log_fh.write(entry.tsv() + "\n")
            log_fh.flush()

    start = time.perf_counter()
    try:
        init_tape = neural_forward(layout, weights, val.llrs, config.clip_A, keep_tape=False)
        record(
            TrainLogEntry(
                0,
                loss_value(init_tape, val.labels, "single"),
                0.0,
                0.0,
                validation_ber(code, layout, weights, config, val),
            )
        )
        for step in range(1, config.steps + 1):
            batch = sample_training_batch(
                code, rng, config.snr_grid_db, config.batch_per_snr, config.snr_convention
            )
            tape = neural_forward(layout, weights, batch.llrs, config.clip_A)
            loss = loss_value(tape, batch.labels, config.loss_kind)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            grad = backward(tape, layout, weights, batch.labels, config.loss_kind).flat()
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite gradient at step {step}")
            flat, acc = rmsprop_step(flat, grad, acc, config)
            if not np.all(np.isfinite(flat)):
                raise DivergenceError(f"non-finite weights at step {step}")
            weights = weights.with_flat(flat)

            at_ckpt = step % config.checkpoint_every == 0 or step == config.steps
            entry = TrainLogEntry(
                step,
                loss,
                time.perf_counter() - start,
                float(np.linalg.norm(grad)),
                validation_ber(code, layout, weights, config, val) if at_ckpt else None,
            )
            record(entry)
            if at_ckpt:
                log.info("step %d loss %.5f val_ber %.3e", step, loss, entry.val_ber)
                if checkpoint_path is not None:
                    Path(checkpoint_path).write_bytes(checkpoint_save(weights, layout))
    finally:
        if log_fh is not None:
            log_fh.close()
    result.weights = weights
    return result


def read_log(path) -> list[TrainLogEntry]:
    entries = []
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        if header != LOG_HEADER:
            raise ValueError(f"unexpected training log header {header!r}")
        for line in fh:
            step, loss, gnorm, val, wall = line.rstrip("\n").split("\t")
            entries.append(
                TrainLogEntry(int(step), float(loss), float(wall), float(gnorm),
                              float(val) if val else None)
            )
    return entries


def baseline_loss(code, layout, batch, clip=DEFAULT_CLIP) -> float:
    """Cross entropy of the all-ones (plain BP) network on ``batch``."""
    tape = neural_forward(layout, init_weights(layout), batch.llrs, clip, keep_tape=False)
    return loss_value(tape, batch.labels, "single")
