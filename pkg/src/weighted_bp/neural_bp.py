"""Weighted belief propagation with trainable per-edge weights.

Odd layers compute ``u_e = tanh(s_e / 2)`` with

    s_e = clip(w_self[v] * l_v + sum_{e' in vn_inputs(e)} w_edge[e, e'] * x_e', 2A)

even layers compute ``x_e = 2 atanh(prod_{e' in cn_inputs(e)} u_e')`` and a
readout produces the logit ``z_v = w_oself[v] * l_v + sum_{e in out(v)}
w_oedge[e] * x_e`` with soft output ``o_v = sigmoid(z_v)``, the probability
that bit v is one.  A bounds the tanh argument ``s_e / 2``; channel LLRs
and sums are clipped at 2A exactly as in :mod:`bp_core`, so the
unit-weight network is identical to plain BP.

With multiloss, readout t (t = 1..L) is taken from the check messages of
iteration t, each with its own weight group; readout L is the final output.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .bp_core import (
    DEFAULT_CLIP,
    _check_products,
    as_batch,
    clamp_product,
    llr_bound,
    out_matrix,
    product_eps,
    var_matrix,
)
from .code_graph import TrellisLayout, count_parameters

CKPT_MAGIC = b"WBPW"
CKPT_VERSION = 1


class LayoutMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class WeightSet:
    """Trainable parameters; row t of each array belongs to iteration t+1.

    ``self_w``/``edge_w`` are the odd-layer weights (L rows each);
    ``out_self``/``out_edge`` hold one row per readout (1, or L with
    multiloss).  ``edge_w`` columns follow the concatenated vn_inputs lists.
    """

    self_w: np.ndarray  # (L, n)
    edge_w: np.ndarray  # (L, pairs)
    out_self: np.ndarray  # (R, n)
    out_edge: np.ndarray  # (R, E)
    multiloss: bool = False

    @property
    def num_iterations(self) -> int:
        return self.self_w.shape[0]

    @property
    def num_readouts(self) -> int:
        return self.out_self.shape[0]

    def groups(self):
        """(name, array) pairs in canonical flattening order."""
        out = []
        for t in range(self.num_iterations):
            out.append((f"layer{2 * t + 1}.self", self.self_w[t]))
            out.append((f"layer{2 * t + 1}.edge", self.edge_w[t]))
        for r in range(self.num_readouts):
            out.append((f"readout{self._readout_iter(r)}.self", self.out_self[r]))
            out.append((f"readout{self._readout_iter(r)}.edge", self.out_edge[r]))
        return out

    def _readout_iter(self, r: int) -> int:
        return r + 1 if self.multiloss else self.num_iterations

    def flat(self) -> np.ndarray:
        return np.concatenate([a for _, a in self.groups()])

    def size(self) -> int:
        return sum(a.size for _, a in self.groups())

    def copy(self) -> WeightSet:
        return WeightSet(
            self.self_w.copy(),
            self.edge_w.copy(),
            self.out_self.copy(),
            self.out_edge.copy(),
            self.multiloss,
        )

    def with_flat(self, values) -> WeightSet:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.size():
            raise LayoutMismatch(f"expected {self.size()} values, got {values.size}")
        new = self.copy()
        off = 0
        for _, arr in new.groups():
            arr[:] = values[off : off + arr.size]
            off += arr.size
        return new

    def check_layout(self, layout: TrellisLayout) -> None:
        L = layout.num_iterations
        R = L if self.multiloss else 1
        shapes = {
            "self_w": (L, layout.n),
            "edge_w": (L, layout.num_pairs),
            "out_self": (R, layout.n),
            "out_edge": (R, layout.num_edges),
        }
        for name, shape in shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                raise LayoutMismatch(f"{name} has shape {got}, layout needs {shape}")


def init_weights(
    layout: TrellisLayout,
    multiloss: bool = False,
    init: str = "ones",
    rng=None,
    std: float = 0.1,
) -> WeightSet:
    """All-ones (plain BP) or normal(1, std) initialization."""
    L = layout.num_iterations
    R = L if multiloss else 1
    shapes = [(L, layout.n), (L, layout.num_pairs), (R, layout.n), (R, layout.num_edges)]
    if init == "ones":
        arrays = [np.ones(s) for s in shapes]
    elif init == "normal":
        rng = np.random.default_rng(rng)
        arrays = [1.0 + std * rng.standard_normal(s) for s in shapes]
    else:
        raise ValueError(f"unknown init {init!r}")
    ws = WeightSet(*arrays, multiloss=multiloss)
    assert ws.size() == count_parameters(layout, multiloss)
    return ws


@dataclass
class ForwardTape:
    llr: np.ndarray  # clipped channel LLRs (frames, n)
    clip: float  # LLR-domain bound, 2A
    multiloss: bool = False  # one readout per iteration
    c2v_in: list = field(default_factory=list)  # check messages entering odd layer t
    pre: list = field(default_factory=list)  # unclipped sums s
    u: list = field(default_factory=list)  # odd-layer activations
    check: list = field(default_factory=list)  # (table, prefix, suffix, loo) per even layer
    c2v: list = field(default_factory=list)  # even-layer outputs
    logits: list = field(default_factory=list)  # readout logits in readout order
    readout_iters: list = field(default_factory=list)  # iteration index (0-based) per readout

    @property
    def logit(self) -> np.ndarray:
        """Final pre-sigmoid output."""
        return self.logits[-1]

    @property
    def soft(self) -> np.ndarray:
        return sigmoid(self.logits[-1])

    def soft_outputs(self) -> list[np.ndarray]:
        return [sigmoid(z) for z in self.logits]

    @property
    def hard_bits(self) -> np.ndarray:
        return (self.logits[-1] > 0).astype(np.uint8)


def sigmoid(z):
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    """log(1 + e^z), stable for large |z|."""
    return np.logaddexp(0.0, z)


class _Mats:
    """Sparse operators carrying the current weights."""

    def __init__(self, layout: TrellisLayout, weights: WeightSet, dtype=np.float64):
        self.var = [
            var_matrix(layout, weights.edge_w[t].astype(dtype))
            for t in range(weights.num_iterations)
        ]
        self.out = [
            out_matrix(layout, weights.out_edge[r].astype(dtype))
            for r in range(weights.num_readouts)
        ]
        self.var_sum = out_matrix(layout)
        self.pair_rows = np.repeat(np.arange(layout.num_edges), np.diff(layout.vn_ptr))


def neural_forward(
    layout: TrellisLayout,
    weights: WeightSet,
    llr,
    clip: float = DEFAULT_CLIP,
    keep_tape: bool = True,
    dtype=np.float64,
) -> ForwardTape:
    """Run the weighted decoder on one frame or a batch ``(frames, n)``.

    Tape arrays other than ``llr`` and ``logits`` are edge-major
    ``(E, frames)``.  ``dtype`` selects the arithmetic: float64 for
    training, float32 as an evaluation fast path, long double for
    reference computations.
    """
    weights.check_layout(layout)
    llr, _ = as_batch(llr)
    bound = llr_bound(clip)
    llr = np.clip(llr.astype(dtype), -bound, bound)
    llr_t = np.ascontiguousarray(llr.T)
    frames = llr.shape[0]
    L = layout.num_iterations
    mats = _Mats(layout, weights, dtype)
    self_w = weights.self_w.astype(dtype)
    out_self = weights.out_self.astype(dtype)
    tape = ForwardTape(llr=llr, clip=bound, multiloss=weights.multiloss)
    ev = layout.edge_var

    c2v = np.zeros((layout.num_edges, frames), dtype=dtype)
    for t in range(L):
        s = (self_w[t][:, None] * llr_t)[ev] + mats.var[t] @ c2v
        u = np.tanh(np.clip(s, -bound, bound) / 2.0)
        loo, table, prefix, suffix = _check_products(u, layout)
        nxt = 2.0 * np.arctanh(clamp_product(loo))
        if keep_tape:
            tape.c2v_in.append(c2v)
            tape.pre.append(s)
            tape.u.append(u)
            tape.check.append((table, prefix, suffix, loo))
            tape.c2v.append(nxt)
        c2v = nxt
        if weights.multiloss or t == L - 1:
            r = t if weights.multiloss else 0
            z = out_self[r][:, None] * llr_t + mats.out[r] @ c2v
            tape.logits.append(np.ascontiguousarray(z.T))
            tape.readout_iters.append(t)
    return tape


def neural_decode(layout, weights, llr, clip=DEFAULT_CLIP, dtype=np.float64) -> np.ndarray:
    """Hard decisions (o_v > 1/2) of the final readout."""
    return neural_forward(layout, weights, llr, clip, keep_tape=False, dtype=dtype).hard_bits


def _ce_from_logits(z, labels) -> np.ndarray:
    """Per-frame cross entropy averaged over bits.

    -[y log o + (1-y) log(1-o)] with o = sigmoid(z) equals
    y softplus(-z) + (1-y) softplus(z).
    """
    y = np.asarray(labels).astype(z.dtype)
    return np.mean(y * softplus(-z) + (1.0 - y) * softplus(z), axis=-1)


def cross_entropy_loss(tape: ForwardTape, labels, exact: bool = False):
    """Final-readout cross entropy, averaged over bits and frames.

    ``exact`` keeps the tape's dtype instead of converting to a Python float.
    """
    value = np.mean(_ce_from_logits(tape.logits[-1], labels))
    return value if exact else float(value)


def multiloss(tape: ForwardTape, labels) -> float:
    """Sum over the per-iteration readouts of their cross entropies."""
    if not tape.multiloss:
        raise ValueError("tape has no intermediate readouts; run with multiloss weights")
    return float(sum(np.mean(_ce_from_logits(z, labels)) for z in tape.logits))


def loss_value(tape: ForwardTape, labels, loss_kind: str) -> float:
    if loss_kind == "single":
        return cross_entropy_loss(tape, labels)
    if loss_kind == "multiloss":
        return multiloss(tape, labels)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _check_backward(g_loo, table, prefix, suffix, layout):
    """Reverse pass of the prefix/suffix leave-one-out products; returns dL/du."""
    d, m, frames = table.shape
    g = np.zeros((d * m, frames))
    g[layout.chk_slot] = g_loo
    g = g.reshape(d, m, frames)
    g_pre = g * suffix
    g_suf = g * prefix
    g_tab = np.zeros_like(table)
    # prefix[j] = prefix[j-1] * table[j-1]
    for j in range(d - 1, 0, -1):
        g_tab[j - 1] += g_pre[j] * prefix[j - 1]
        g_pre[j - 1] += g_pre[j] * table[j - 1]
    # suffix[j] = suffix[j+1] * table[j+1]
    for j in range(d - 1):
        g_tab[j + 1] += g_suf[j] * suffix[j + 1]
        g_suf[j + 1] += g_suf[j] * table[j + 1]
    return g_tab.reshape(d * m, frames)[layout.chk_slot]


def _pair_grad(g_s, c2v_in, layout, mats):
    """sum_b g_s[e, b] * c2v_in[e', b] for every pair (e, e')."""
    if layout.num_edges <= 4096:
        full = g_s @ c2v_in.T
        return full[mats.pair_rows, layout.vn_idx]
    return np.einsum("pb,pb->p", g_s[mats.pair_rows], c2v_in[layout.vn_idx])


def backward(
    tape: ForwardTape,
    layout: TrellisLayout,
    weights: WeightSet,
    labels,
    loss_kind: str = "single",
) -> WeightSet:
    """Exact gradient of the batch-mean loss with respect to every weight.

    Clipped sums and clamped products pass zero gradient.
    """
    weights.check_layout(layout)
    if loss_kind == "multiloss" and not weights.multiloss:
        raise ValueError("multiloss gradient needs multiloss weights")
    if len(tape.c2v) != layout.num_iterations:
        raise ValueError("tape was recorded without keep_tape or for another layout")
    y_t = np.asarray(labels, dtype=np.float64).T
    llr_t = tape.llr.T
    frames = tape.llr.shape[0]
    scale = 1.0 / (frames * layout.n)
    mats = _Mats(layout, weights)
    grad = WeightSet(
        np.zeros_like(weights.self_w),
        np.zeros_like(weights.edge_w),
        np.zeros_like(weights.out_self),
        np.zeros_like(weights.out_edge),
        weights.multiloss,
    )
    if loss_kind == "single":
        active = {len(tape.logits) - 1}
    elif loss_kind == "multiloss":
        active = set(range(len(tape.logits)))
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    readout_at = {t: r for r, t in enumerate(tape.readout_iters)}
    ev = layout.edge_var

    g_c2v = np.zeros((layout.num_edges, frames))
    for t in range(layout.num_iterations - 1, -1, -1):
        c2v = tape.c2v[t]
        r = readout_at.get(t)
        if r is not None and r in active:
            gz = (sigmoid(tape.logits[r].T) - y_t) * scale  # (n, frames)
            grad.out_self[r] = np.sum(gz * llr_t, axis=1)
            gz_e = gz[ev]
            grad.out_edge[r] = np.sum(gz_e * c2v, axis=1)
            g_c2v = g_c2v + gz_e * weights.out_edge[r][:, None]

        table, prefix, suffix, loo = tape.check[t]
        inside = np.abs(loo) < 1.0 - product_eps(loo.dtype)
        g_loo = g_c2v * inside * 2.0 / (1.0 - loo * loo)
        g_u = _check_backward(g_loo, table, prefix, suffix, layout)

        s, u = tape.pre[t], tape.u[t]
        unclipped = (s > -tape.clip) & (s < tape.clip)
        g_s = g_u * 0.5 * (1.0 - u * u) * unclipped

        grad.self_w[t] = np.sum((mats.var_sum @ g_s) * llr_t, axis=1)
        if t > 0:
            grad.edge_w[t] = _pair_grad(g_s, tape.c2v_in[t], layout, mats)
            g_c2v = mats.var[t].T @ g_s
    return grad


def loss_and_grad(layout, weights, batch, loss_kind="single", clip=DEFAULT_CLIP):
    tape = neural_forward(layout, weights, batch.llrs, clip)
    loss = loss_value(tape, batch.labels, loss_kind)
    return loss, backward(tape, layout, weights, batch.labels, loss_kind), tape


# ---------------------------------------------------------------------------
# checkpoints

_HEADER = struct.Struct("<4sI32sIBQQQQ")


def checkpoint_save(weights: WeightSet, layout: TrellisLayout) -> bytes:
    """Binary checkpoint.

    Little-endian header: magic ``WBPW``, u32 version, 32-byte SHA-256 of
    the code, u32 L, u8 multiloss, u64 n, u64 E, u64 pairs, u64 count;
    then ``count`` f64 weights in canonical order.
    """
    weights.check_layout(layout)
    values = weights.flat()
    head = _HEADER.pack(
        CKPT_MAGIC,
        CKPT_VERSION,
        bytes.fromhex(layout.code_digest),
        layout.num_iterations,
        int(weights.multiloss),
        layout.n,
        layout.num_edges,
        layout.num_pairs,
        values.size,
    )
    return head + values.astype("<f8").tobytes()


def checkpoint_load(data: bytes, layout: TrellisLayout) -> WeightSet:
    if len(data) < _HEADER.size:
        raise CheckpointError("unexpected end of checkpoint header")
    magic, version, digest, L, ml, n, E, pairs, count = _HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise CheckpointError("bad magic: not a weight checkpoint")
    if version != CKPT_VERSION:
        raise CheckpointError(f"version mismatch: file {version}, supported {CKPT_VERSION}")
    if digest.hex() != layout.code_digest:
        raise CheckpointError("code hash mismatch")
    if (L, n, E, pairs) != (layout.num_iterations, layout.n, layout.num_edges, layout.num_pairs):
        raise CheckpointError("layout mismatch: iterations or graph sizes differ")
    if count != count_parameters(layout, bool(ml)):
        raise CheckpointError("layout mismatch: parameter count")
    body = data[_HEADER.size :]
    if len(body) < 8 * count:
        raise CheckpointError("unexpected end of checkpoint data")
    values = np.frombuffer(body, "<f8", count).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise CheckpointError("non-finite weight in checkpoint")
    return init_weights(layout, bool(ml)).with_flat(values)


def checkpoint_peek(data: bytes) -> dict:
    """Header fields without validating against a layout."""
    if len(data) < _HEADER.size or data[:4] != CKPT_MAGIC:
        raise CheckpointError("not a weight checkpoint")
    _, version, digest, L, ml, n, E, pairs, count = _HEADER.unpack_from(data)
    return dict(version=version, digest=digest.hex(), iterations=L, multiloss=bool(ml),
                n=n, edges=E, pairs=pairs, count=count)


def weights_digest(weights: WeightSet) -> str:
    return hashlib.sha256(weights.flat().astype("<f8").tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# inspection


def weight_stats(weights: WeightSet, bins: int = 20) -> str:
    """Per-group summary and histogram as tab-separated text.

    Sections are emitted only for groups that exist, so a single-loss
    checkpoint has no intermediate readout sections.
    """
    lines = ["group\tcount\tmin\tmax\tmean\tvariance"]
    hist = ["group\tbin_lo\tbin_hi\tcount"]
    for name, arr in weights.groups():
        if arr.size == 0:
            continue
        lo, hi = float(arr.min()), float(arr.max())
        lines.append(
            f"{name}\t{arr.size}\t{lo:.6g}\t{hi:.6g}\t{arr.mean():.6g}\t{arr.var():.6g}"
        )
        if lo == hi:
            hist.append(f"{name}\t{lo:.6g}\t{hi:.6g}\t{arr.size}")
            continue
        counts, edges = np.histogram(arr, bins=bins)
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            hist.append(f"{name}\t{a:.6g}\t{b:.6g}\t{c}")
    return "\n".join(lines) + "\n\n" + "\n".join(hist) + "\n"


def dense_layer(weights: WeightSet, layout: TrellisLayout, layer: int | None = None) -> str:
    """Edge weights of one odd layer as an E x (fan-in) table.

    ``layer`` is the 1-based iteration; default is the last hidden layer.
    Each row lists the weights on vn_inputs(e) in canonical order; empty
    cells pad rows shorter than the widest fan-in.
    """
    t = (layer or layout.num_iterations) - 1
    width = layout.vn_pad.shape[1]
    head = ["edge", "var", "check"] + [f"w{j}" for j in range(width)]
    rows = ["\t".join(head)]
    w = weights.edge_w[t]
    for e in range(layout.num_edges):
        lo, hi = layout.vn_ptr[e], layout.vn_ptr[e + 1]
        cells = [f"{x:.6g}" for x in w[lo:hi]] + [""] * (width - (hi - lo))
        rows.append("\t".join([str(e), str(layout.edge_var[e]), str(layout.edge_chk[e])] + cells))
    return "\n".join(rows) + "\n"
