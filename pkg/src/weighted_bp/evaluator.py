"""Monte-Carlo BER/FER measurement, exhaustive ML decoding and curve comparison.

Frames are simulated in fixed-size chunks.  Chunk j of SNR point i draws
its noise from ``SeedSequence(seed, spawn_key=(i, j))``, so results do not
depend on the number of workers, and tallies are merged in chunk order.
A point stops after the first chunk at which the cumulative frame-error
count reaches ``min_frame_errors`` or the frame budget is exhausted.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bp_core import DEFAULT_CLIP, DecodeResult, as_batch, bp_decode, syndrome_ok
from .channel import make_rng, sample_eval_frames, snr_to_sigma
from .code_graph import CodeError, ParityCheckCode, TrellisLayout, all_codewords, encode
from .neural_bp import WeightSet, neural_forward

ML_MAX_K = 24
Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# decoders


class BPDecoder:
    def __init__(self, code: ParityCheckCode, layout: TrellisLayout, iterations=None,
                 clip=DEFAULT_CLIP):
        self.code = code
        self.layout = layout
        self.iterations = iterations or layout.num_iterations
        self.clip = clip
        self.decoder_id = "bp"

    def __call__(self, llr) -> np.ndarray:
        return bp_decode(self.code, self.layout, llr, self.iterations, self.clip).hard_bits


class NeuralDecoder:
    def __init__(self, layout: TrellisLayout, weights: WeightSet, clip=DEFAULT_CLIP,
                 dtype=np.float64):
        self.layout = layout
        self.weights = weights
        self.clip = clip
        self.dtype = dtype
        self.iterations = layout.num_iterations
        self.decoder_id = "neural-multiloss" if weights.multiloss else "neural"

    def logits(self, llr) -> np.ndarray:
        tape = neural_forward(self.layout, self.weights, llr, self.clip, False, self.dtype)
        return tape.logit

    def __call__(self, llr) -> np.ndarray:
        return (self.logits(llr) > 0).astype(np.uint8)


class MLDecoder:
    def __init__(self, code: ParityCheckCode):
        if code.generator is None:
            raise CodeError("ML decoding needs a generator matrix")
        if code.k > ML_MAX_K:
            raise CodeError(f"ML decoding limited to k <= {ML_MAX_K}, code has k={code.k}")
        self.code = code
        self.iterations = 0
        self.decoder_id = "ml"

    def __call__(self, llr) -> np.ndarray:
        return ml_decode(self.code, llr, soft=False).hard_bits


def ml_decode(code: ParityCheckCode, llr, soft: bool = True, chunk: int = 4096) -> DecodeResult:
    """Exhaustive maximum-likelihood decoding.

    The log-likelihood of codeword c is sum_v c_v l_v up to a constant, so
    the ML codeword maximizes that correlation; this equals minimizing the
    Euclidean distance between the channel output and the BPSK image of c.
    Ties go to the lowest codeword index (index = message integer, bit j =
    message bit j).  With ``soft`` the marginals are max-log bit LLRs
    (best score with bit 1 minus best score with bit 0).
    """
    if code.generator is None:
        raise CodeError("ML decoding needs a generator matrix")
    k = code.k
    if k > ML_MAX_K:
        raise CodeError(f"ML decoding limited to k <= {ML_MAX_K}, code has k={k}")
    llr, single = as_batch(llr)
    frames, n = llr.shape
    total = 1 << k
    best = np.full(frames, -np.inf)
    best_idx = np.zeros(frames, dtype=np.int64)
    best1 = np.full((frames, n), -np.inf)
    best0 = np.full((frames, n), -np.inf)
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        msgs = (idx[:, None] >> np.arange(k)) & 1
        cws = encode(code, msgs)
        scores = llr @ cws.T.astype(np.float64)  # (frames, chunk)
        arg = np.argmax(scores, axis=1)
        top = scores[np.arange(frames), arg]
        better = top > best
        best[better] = top[better]
        best_idx[better] = idx[arg[better]]
        if soft:
            for v in range(n):
                ones = cws[:, v] == 1
                if ones.any():
                    best1[:, v] = np.maximum(best1[:, v], scores[:, ones].max(axis=1))
                if (~ones).any():
                    best0[:, v] = np.maximum(best0[:, v], scores[:, ~ones].max(axis=1))
    msgs = (best_idx[:, None] >> np.arange(k)) & 1
    bits = encode(code, msgs)
    marg = best1 - best0 if soft else np.where(bits == 1, 1.0, -1.0)
    ok = syndrome_ok(code, bits)
    iters = np.zeros(frames, dtype=np.int64)
    if single:
        return DecodeResult(bits[0], marg[0], bool(ok[0]), 0)
    return DecodeResult(bits, marg, ok, iters)


# ---------------------------------------------------------------------------
# reports


@dataclass
class BerPoint:
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    decoder_id: str
    iterations: int
    n: int

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.n)

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames

    def ber_sigma(self) -> float:
        """Binomial standard error of the BER estimate (bits treated as independent)."""
        p = self.ber
        return math.sqrt(max(p * (1 - p), 0.0) / (self.frames * self.n))

    def ber_ci(self) -> tuple[float, float]:
        return wilson_interval(self.bit_errors, self.frames * self.n)

    def fer_ci(self) -> tuple[float, float]:
        return wilson_interval(self.frame_errors, self.frames)


def wilson_interval(k: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = k / trials
    den = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == trials else min(1.0, centre + half)
    return lo, hi


REPORT_COLUMNS = (
    "snr_db", "frames", "bit_errors", "frame_errors", "ber", "fer",
    "ber_lo95", "ber_hi95", "fer_lo95", "fer_hi95", "decoder_id", "iterations",
)


@dataclass
class BerReport:
    points: list[BerPoint]
    metadata: dict = field(default_factory=dict)

    @property
    def snr_grid(self) -> list[float]:
        return [p.snr_db for p in self.points]

    @property
    def decoder_id(self) -> str:
        return self.points[0].decoder_id if self.points else ""

    def bers(self) -> np.ndarray:
        return np.array([p.ber for p in self.points])

    def to_tsv(self) -> str:
        """Metadata as ``# key=value`` lines, then a fixed-column TSV table."""
        out = io.StringIO()
        for key in sorted(self.metadata):
            out.write(f"# {key}={self.metadata[key]}\n")
        out.write("\t".join(REPORT_COLUMNS) + "\n")
        for p in self.points:
            blo, bhi = p.ber_ci()
            flo, fhi = p.fer_ci()
            row = [
                f"{p.snr_db:.6g}", str(p.frames), str(p.bit_errors), str(p.frame_errors),
                f"{p.ber:.10g}", f"{p.fer:.10g}", f"{blo:.6g}", f"{bhi:.6g}",
                f"{flo:.6g}", f"{fhi:.6g}", p.decoder_id, str(p.iterations),
            ]
            out.write("\t".join(row) + "\n")
        return out.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> BerReport:
        meta = {}
        points = []
        header = None
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            cells = line.split("\t")
            if header is None:
                if tuple(cells) != REPORT_COLUMNS:
                    raise ValueError("unexpected report header")
                header = cells
                continue
            row = dict(zip(header, cells))
            points.append(
                BerPoint(float(row["snr_db"]), int(row["frames"]), int(row["bit_errors"]),
                         int(row["frame_errors"]), row["decoder_id"], int(row["iterations"]),
                         int(meta.get("n", 0)))
            )
        if header is None:
            raise ValueError("report has no table")
        if any(p.n <= 0 for p in points):
            raise ValueError("report metadata lacks n")
        return cls(points, meta)

    def plot_pairs(self) -> str:
        return "".join(f"{p.snr_db:.6g}\t{p.ber:.10g}\n" for p in self.points)


# ---------------------------------------------------------------------------
# Monte Carlo


def _chunk_seed(seed: int, point: int, chunk: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(point, chunk))


def _run_chunk(args):
    decoder, code, snr_db, frames, seed, point, chunk, convention, codeword = args
    rng = make_rng(_chunk_seed(seed, point, chunk))
    if codeword is None:
        codeword = np.zeros(code.n, dtype=np.uint8)
    batch = sample_eval_frames(code, codeword, snr_db, frames, rng, convention)
    bits = decoder(batch.llrs)
    wrong = bits != batch.labels
    return int(wrong.sum()), int(wrong.any(axis=1).sum())


def evaluate_ber(
    code: ParityCheckCode,
    decoder,
    snr_grid,
    min_frame_errors: int | None = 100,
    max_frames: int = 10_000_000,
    seed: int = 0,
    chunk_frames: int = 1000,
    workers: int = 1,
    convention: str = "ebn0",
    clip: float | None = None,
) -> BerReport:
    """Simulate all-zero codeword frames per SNR point.

    ``min_frame_errors=None`` runs exactly ``max_frames`` frames per point,
    which gives every decoder the same noise realizations for a given seed.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    points = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for i, snr in enumerate(snr_grid):
            frames = bit_err = frame_err = 0
            chunk = 0
            stop = False
            while not stop:
                wave = []
                planned = frames
                for _ in range(max(workers, 1)):
                    if planned >= max_frames:
                        break
                    size = min(chunk_frames, max_frames - planned)
                    wave.append((decoder, code, float(snr), size, seed, i, chunk, convention, None))
                    planned += size
                    chunk += 1
                if not wave:
                    break
                results = pool.map(_run_chunk, wave) if pool else map(_run_chunk, wave)
                for args, (be, fe) in zip(wave, results):
                    frames += args[3]
                    bit_err += be
                    frame_err += fe
                    if min_frame_errors is not None and frame_err >= min_frame_errors:
                        stop = True
                        break
                if frames >= max_frames:
                    stop = True
            points.append(BerPoint(float(snr), frames, bit_err, frame_err, decoder.decoder_id,
                                   int(decoder.iterations), code.n))
    finally:
        if pool is not None:
            pool.shutdown()
    meta = {
        "decoder": decoder.decoder_id,
        "iterations": decoder.iterations,
        "n": code.n,
        "k": code.k,
        "code_sha256": code.digest(),
        "seed": seed,
        "clip_A": getattr(decoder, "clip", clip if clip is not None else ""),
        "convention": convention,
        "min_frame_errors": "" if min_frame_errors is None else min_frame_errors,
        "max_frames": max_frames,
        "chunk_frames": chunk_frames,
    }
    return BerReport(points, meta)


def uncoded_ber(snr_db: float, convention: str = "ebn0") -> float:
    """Closed-form BPSK bit error probability Q(1/sigma) for the rate-1 code."""
    sigma = snr_to_sigma(snr_db, 1.0, convention)
    return 0.5 * math.erfc(1.0 / (sigma * math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# comparison


def snr_at_ber(snrs, bers, target: float) -> float | None:
    """SNR where the curve crosses ``target``, by linear interpolation of log10 BER.

    Zero-BER points are ignored.  Returns None when no segment brackets
    the target.
    """
    pts = [(s, b) for s, b in zip(snrs, bers) if b > 0]
    for (s0, b0), (s1, b1) in zip(pts, pts[1:]):
        if b0 >= target >= b1 and b0 != b1:
            l0, l1, lt = math.log10(b0), math.log10(b1), math.log10(target)
            return s0 + (s1 - s0) * (l0 - lt) / (l0 - l1)
        if b0 == target:
            return s0
    if pts and pts[-1][1] == target:
        return pts[-1][0]
    return None


def gain_db(reference: BerReport, other: BerReport, target: float) -> float | None:
    """Horizontal gain of ``other`` over ``reference`` at a BER level (positive = better)."""
    a = snr_at_ber(reference.snr_grid, reference.bers(), target)
    b = snr_at_ber(other.snr_grid, other.bers(), target)
    if a is None or b is None:
        return None
    return a - b


DEFAULT_TARGETS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class Comparison:
    table: str
    gains: dict  # (decoder_id, target) -> gain in dB or None


def compare_decoders(reports: list[BerReport], targets=DEFAULT_TARGETS) -> Comparison:
    """Per-SNR BER ratios against the first report plus interpolated dB gains."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    ref = reports[0]
    for r in reports[1:]:
        if not np.allclose(r.snr_grid, ref.snr_grid):
            raise ValueError("reports do not share an SNR grid")
    labels = [f"{r.decoder_id}:{r.metadata.get('iterations', '')}" for r in reports]
    lines = ["# reference=" + labels[0]]
    lines.append("\t".join(["snr_db"] + [f"ber[{lab}]" for lab in labels]
                           + [f"ratio[{lab}]" for lab in labels[1:]]))
    for j, snr in enumerate(ref.snr_grid):
        bers = [r.points[j].ber for r in reports]
        ratios = [f"{b / bers[0]:.6g}" if bers[0] > 0 else "n/a" for b in bers[1:]]
        lines.append("\t".join([f"{snr:.6g}"] + [f"{b:.6g}" for b in bers] + ratios))
    lines.append("")
    lines.append("\t".join(["target_ber"] + [f"gain_db[{lab}]" for lab in labels[1:]]))
    gains = {}
    for target in targets:
        row = [f"{target:.0e}"]
        for lab, r in zip(labels[1:], reports[1:]):
            g = gain_db(ref, r, target)
            gains[(lab, target)] = g
            row.append("n/a" if g is None else f"{g:.4f}")
        lines.append("\t".join(row))
    return Comparison("\n".join(lines) + "\n", gains)


# ---------------------------------------------------------------------------
# codeword-independence audit


@dataclass
class AuditReport:
    codewords: int
    matches: int
    frames_per_codeword: int
    failures: list = field(default_factory=list)  # codeword indices that failed

    @property
    def passed(self) -> bool:
        return self.matches == self.codewords

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.matches}/{self.codewords} codewords"


def covariance_audit(
    code: ParityCheckCode,
    decoder,
    num_codewords: int = 100,
    seed: int = 0,
    snr_db: float = 3.0,
    frames_per_codeword: int = 10,
    convention: str = "ebn0",
) -> AuditReport:
    """Check decode(F_c(l)) == decode(l) XOR c exactly, with F_c(l)_v = (-1)^c_v l_v.

    ``l`` are noisy all-zero LLRs; F_c(l) is exactly the LLR vector obtained
    by sending c through the same noise with the noise signs flipped on the
    positions where c is one.
    """
    if code.generator is None:
        raise CodeError("audit needs a generator matrix")
    rng = make_rng(np.random.SeedSequence(seed))
    msgs = rng.integers(0, 2, size=(num_codewords, code.k))
    words = encode(code, msgs)
    zero = np.zeros(code.n, dtype=np.uint8)
    matches = 0
    failures = []
    for i, c in enumerate(words):
        base = sample_eval_frames(code, zero, snr_db, frames_per_codeword, rng, convention)
        signs = 1.0 - 2.0 * c.astype(np.float64)
        flipped = base.llrs * signs
        ref_bits = decoder(base.llrs)
        got = decoder(flipped)
        if np.array_equal(got, ref_bits ^ c[None, :]):
            matches += 1
        else:
            failures.append(i)
    return AuditReport(num_codewords, matches, frames_per_codeword, failures)


__all__ = [
    "BPDecoder", "NeuralDecoder", "MLDecoder", "ml_decode", "BerPoint", "BerReport",
    "evaluate_ber", "uncoded_ber", "snr_at_ber", "gain_db", "compare_decoders",
    "covariance_audit", "AuditReport", "all_codewords",
]
