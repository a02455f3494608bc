"""BPSK over AWGN, channel LLRs and seeded mini-batch generation.

Conventions: bit 0 -> +1, bit 1 -> -1, and the LLR is the log-odds of the
bit being ONE, so a clean zero bit yields a negative LLR (l = -2y/sigma^2).

Noise comes from numpy's PCG64 bit generator with the ziggurat normal
sampler (``Generator.standard_normal``).  Independent streams for workers
or evaluation chunks are derived with ``SeedSequence.spawn``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .code_graph import ParityCheckCode

DEFAULT_SNR_GRID = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)

BATCH_MAGIC = b"WBPB"
BATCH_VERSION = 1


def snr_to_sigma(snr_db: float, rate: float = 1.0, convention: str = "ebn0") -> float:
    """Noise standard deviation for unit-energy BPSK.

    ``ebn0``: sigma = (2 R 10^(snr/10))^(-1/2); ``esn0``: the same with R = 1.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    if convention == "esn0":
        rate = 1.0
    elif convention != "ebn0":
        raise ValueError(f"unknown SNR convention {convention!r}")
    return float((2.0 * rate * 10.0 ** (snr_db / 10.0)) ** -0.5)


def modulate_bpsk(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def llr_from_channel(y, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return -2.0 * np.asarray(y, dtype=np.float64) / sigma**2


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


@dataclass
class LlrBatch:
    llrs: np.ndarray  # (batch, n)
    labels: np.ndarray  # (batch, n) uint8
    snr_db: np.ndarray  # (batch,)

    def __len__(self):
        return self.llrs.shape[0]

    def __post_init__(self):
        if self.llrs.shape != self.labels.shape or self.snr_db.shape != (self.llrs.shape[0],):
            raise ValueError("inconsistent batch shapes")

    def validate(self, code: ParityCheckCode) -> None:
        if not np.all(np.isfinite(self.llrs)):
            raise ValueError("non-finite LLR in batch")
        if code.m and np.any(code.syndrome(self.labels)):
            raise ValueError("batch label is not a codeword")


def _transmit(codewords: np.ndarray, sigmas: np.ndarray, rng: np.random.Generator):
    x = modulate_bpsk(codewords)
    noise = rng.standard_normal(x.shape)
    y = x + sigmas[:, None] * noise
    return llr_from_channel(y, 1.0) / sigmas[:, None] ** 2


def sample_training_batch(
    code: ParityCheckCode,
    rng,
    snr_list=DEFAULT_SNR_GRID,
    per_snr: int = 20,
    convention: str = "ebn0",
) -> LlrBatch:
    """Noisy all-zero codewords: ``per_snr`` consecutive rows for each SNR in order."""
    if per_snr < 1:
        raise ValueError("per_snr must be >= 1")
    rng = make_rng(rng)
    snrs = np.repeat(np.asarray(snr_list, dtype=np.float64), per_snr)
    sigmas = np.array([snr_to_sigma(s, code.rate, convention) for s in snrs])
    labels = np.zeros((snrs.size, code.n), dtype=np.uint8)
    return LlrBatch(_transmit(labels, sigmas, rng), labels, snrs)


def sample_eval_frames(
    code: ParityCheckCode,
    codeword,
    snr_db: float,
    count: int,
    rng,
    convention: str = "ebn0",
) -> LlrBatch:
    """``count`` noisy copies of one codeword at a single SNR."""
    rng = make_rng(rng)
    cw = np.asarray(codeword, dtype=np.uint8).reshape(1, code.n)
    labels = np.repeat(cw, count, axis=0)
    sigma = snr_to_sigma(snr_db, code.rate, convention)
    sigmas = np.full(count, sigma)
    return LlrBatch(_transmit(labels, sigmas, rng), labels, np.full(count, float(snr_db)))


def dump_batch(batch: LlrBatch) -> bytes:
    """Binary fixture format.

    Layout (little-endian): magic ``WBPB``, u32 version, u64 rows, u64 n,
    then rows*n f64 LLRs, rows*n u8 labels, rows f64 SNRs.
    """
    rows, n = batch.llrs.shape
    return b"".join(
        [
            BATCH_MAGIC,
            struct.pack("<IQQ", BATCH_VERSION, rows, n),
            batch.llrs.astype("<f8").tobytes(),
            batch.labels.astype(np.uint8).tobytes(),
            batch.snr_db.astype("<f8").tobytes(),
        ]
    )


def load_batch(data: bytes) -> LlrBatch:
    if data[:4] != BATCH_MAGIC:
        raise ValueError("bad magic: not a batch file")
    if len(data) < 24:
        raise ValueError("unexpected end of batch header")
    version, rows, n = struct.unpack_from("<IQQ", data, 4)
    if version != BATCH_VERSION:
        raise ValueError(f"unsupported batch version {version}")
    off = 24
    need = off + rows * n * 8 + rows * n + rows * 8
    if len(data) < need:
        raise ValueError("unexpected end of batch data")
    llrs = np.frombuffer(data, "<f8", rows * n, off).reshape(rows, n).astype(np.float64)
    off += rows * n * 8
    labels = np.frombuffer(data, np.uint8, rows * n, off).reshape(rows, n).copy()
    off += rows * n
    snr = np.frombuffer(data, "<f8", rows, off).astype(np.float64)
    return LlrBatch(llrs, labels, snr)
