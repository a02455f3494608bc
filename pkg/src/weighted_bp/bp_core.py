"""Flooding sum-product decoder on the unrolled Tanner-graph layout.

Public functions take frame-major arrays ``(frames, E)``; the kernels
prefixed ``_`` work edge-major ``(E, frames)`` so sparse products and the
per-check scans touch contiguous memory.

Reductions follow fixed orders so results are bit-reproducible and the
neural decoder with unit weights reproduces these values exactly:

* variable-node sums run over ``vn_inputs(e)`` in canonical edge order
  (CSR row order of a sparse product), then are added to the channel LLR;
* check-node leave-one-out products are ``prefix * suffix`` over the
  check's edge list, the prefix accumulated left to right and the suffix
  right to left.

The clip constant A bounds the tanh argument ``x/2``, so LLR-domain
variable sums and channel LLRs are clipped to ``[-2A, 2A]``.

The check rule is the textbook ``2 atanh(prod tanh(x/2))``.  With LLRs
defined as log-odds of one it is sign-exact when every check has even
degree, which holds for any code containing the all-ones word (all
narrow-sense primitive BCH codes).  Odd-degree checks see a flipped sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .code_graph import ParityCheckCode, TrellisLayout

DEFAULT_CLIP = 8.0
ATANH_EPS = 1e-12


@dataclass
class DecodeResult:
    hard_bits: np.ndarray  # (frames, n) uint8
    marginals: np.ndarray  # (frames, n) LLR domain, log-odds of one
    syndrome_ok: np.ndarray  # (frames,) bool
    iterations_run: np.ndarray  # (frames,) int


def as_batch(llr) -> tuple[np.ndarray, bool]:
    llr = np.asarray(llr, dtype=np.float64)
    if llr.ndim == 1:
        return llr[None, :], True
    return llr, False


def var_matrix(layout: TrellisLayout, data=None) -> sparse.csr_matrix:
    """E x E matrix whose row e holds the weights on vn_inputs(e)."""
    if data is None:
        data = np.ones(layout.num_pairs)
    E = layout.num_edges
    return sparse.csr_matrix((data, layout.vn_idx, layout.vn_ptr), shape=(E, E))


def out_matrix(layout: TrellisLayout, data=None) -> sparse.csr_matrix:
    """n x E matrix whose row v holds the weights on out_inputs(v)."""
    if data is None:
        data = np.ones(layout.num_edges)
    return sparse.csr_matrix(
        (data, layout.out_idx, layout.out_ptr), shape=(layout.n, layout.num_edges)
    )


def _check_products(u: np.ndarray, layout: TrellisLayout):
    """Leave-one-out products around each check, edge-major.

    Returns ``(loo, table, prefix, suffix)`` where the last three have
    shape (max check degree, m, frames) and feed the reverse pass.
    """
    frames = u.shape[1]
    ext = np.concatenate([u, np.ones((1, frames), dtype=u.dtype)], axis=0)
    table = ext[layout.chk_table.T]  # (d, m, frames)
    d = table.shape[0]
    prefix = np.empty_like(table)
    suffix = np.empty_like(table)
    if d == 0:
        return np.empty((0, frames), dtype=u.dtype), table, prefix, suffix
    prefix[0] = 1.0
    suffix[d - 1] = 1.0
    # explicit scans: numpy's strided accumulate along axis 0 is far slower
    for j in range(1, d):
        np.multiply(prefix[j - 1], table[j - 1], out=prefix[j])
        np.multiply(suffix[d - j], table[d - j], out=suffix[d - j - 1])
    loo = (prefix * suffix).reshape(-1, frames)[layout.chk_slot]
    return loo, table, prefix, suffix


def product_eps(dtype) -> float:
    """Clamp margin before atanh; widened for float32, where 1 - 1e-12 rounds to 1."""
    return max(ATANH_EPS, float(np.finfo(dtype).eps))


def llr_bound(clip: float) -> float:
    """LLR-domain clip level for tanh-argument bound ``clip``."""
    return 2.0 * clip


def clamp_product(p: np.ndarray) -> np.ndarray:
    eps = product_eps(p.dtype)
    return np.clip(p, -1.0 + eps, 1.0 - eps)


def _variable_layer(prev, llr, layout, clip, vmat):
    bound = llr_bound(clip)
    return np.clip(llr[layout.edge_var] + vmat @ prev, -bound, bound)


def _check_layer(prev, layout):
    loo, *_ = _check_products(np.tanh(prev / 2.0), layout)
    return 2.0 * np.arctanh(clamp_product(loo))


def bp_variable_layer(prev, llr, layout: TrellisLayout, clip=DEFAULT_CLIP):
    """Variable-to-check messages: l_v plus the other incoming check messages, clipped to +-2A."""
    prev, _ = as_batch(prev)
    llr, _ = as_batch(llr)
    return _variable_layer(prev.T, llr.T, layout, clip, var_matrix(layout)).T


def bp_check_layer(prev, layout: TrellisLayout):
    """Check-to-variable messages by the tanh rule."""
    prev, _ = as_batch(prev)
    return _check_layer(np.ascontiguousarray(prev.T), layout).T


def bp_marginalize(last_check_msgs, llr, layout: TrellisLayout):
    msgs, _ = as_batch(last_check_msgs)
    llr, _ = as_batch(llr)
    return (llr.T + out_matrix(layout) @ msgs.T).T


def hard_decision(marginals: np.ndarray) -> np.ndarray:
    """Bit 1 iff the log-odds of one is strictly positive; zero decodes to 0."""
    return (marginals > 0).astype(np.uint8)


def syndrome_ok(code: ParityCheckCode, bits: np.ndarray) -> np.ndarray:
    if code.m == 0:
        return np.ones(bits.shape[0], dtype=bool)
    return ~np.any(code.syndrome(bits), axis=1)


def bp_decode(
    code: ParityCheckCode,
    layout: TrellisLayout,
    llr,
    iterations: int | None = None,
    clip: float = DEFAULT_CLIP,
    early_stop: bool = False,
) -> DecodeResult:
    """Plain BP for ``iterations`` full iterations (default: the layout's L).

    The channel LLRs are clipped to [-2 clip, 2 clip] before decoding, exactly
    as in the neural decoder.  ``llr`` may be one frame or a batch.
    """
    iterations = layout.num_iterations if iterations is None else iterations
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    llr, single = as_batch(llr)
    bound = llr_bound(clip)
    llr_t = np.ascontiguousarray(np.clip(llr, -bound, bound).T)
    frames = llr.shape[0]
    vmat, omat = var_matrix(layout), out_matrix(layout)

    c2v = np.zeros((layout.num_edges, frames))
    done = np.zeros(frames, dtype=bool)
    iters_run = np.full(frames, iterations, dtype=np.int64)
    final = np.empty_like(llr)
    marg = None
    for it in range(1, iterations + 1):
        c2v = _check_layer(_variable_layer(c2v, llr_t, layout, clip, vmat), layout)
        if early_stop or it == iterations:
            marg = (llr_t + omat @ c2v).T
        if early_stop:
            newly = syndrome_ok(code, hard_decision(marg)) & ~done
            final[newly] = marg[newly]
            iters_run[newly] = it
            done |= newly
            if done.all():
                break
    if early_stop:
        final[~done] = marg[~done]
    else:
        final = np.ascontiguousarray(marg)

    bits = hard_decision(final)
    ok = syndrome_ok(code, bits)
    if single:
        return DecodeResult(bits[0], final[0], bool(ok[0]), int(iters_run[0]))
    return DecodeResult(bits, final, ok, iters_run)
