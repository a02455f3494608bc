"""Central finite differences of the decoder loss, used as a gradient oracle."""

import numpy as np

from weighted_bp.neural_bp import neural_forward


def _ce(z, labels):
    y = labels.astype(z.dtype)
    return np.mean(y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z))


def _loss_and_signature(layout, weights, llr, labels, kind, clip, dtype=np.float64):
    """Loss recomputed from the forward logits, independent of the package losses,
    plus a fingerprint of which variable sums are clipped."""
    tape = neural_forward(layout, weights, llr, clip, dtype=dtype)
    if kind == "single":
        loss = _ce(tape.logits[-1], labels)
    else:
        loss = sum(_ce(z, labels) for z in tape.logits)
    sig = b"".join(np.packbits(np.abs(s) >= tape.clip).tobytes() for s in tape.pre)
    return loss, sig


def loss_at(layout, weights, llr, labels, kind, clip, dtype=np.float64):
    return _loss_and_signature(layout, weights, llr, labels, kind, clip, dtype)[0]


def central_difference(layout, weights, llr, labels, coords, kind="single", clip=8.0,
                       h=1e-5, dtype=np.float64):
    """Return ``(fd, reference, noise, crosses)`` per coordinate.

    ``reference`` is the same quotient with extended-precision losses and
    ``noise`` bounds the rounding error of ``fd`` by comparing both loss
    evaluations with them (zero for an extended ``dtype``).  ``crosses``
    flags coordinates whose +-h perturbations change which sums are
    clipped, so the difference straddles a kink of the loss.
    """
    flat = weights.flat()
    fd = np.empty(len(coords))
    reference = np.empty(len(coords))
    noise = np.zeros(len(coords))
    crosses = np.zeros(len(coords), dtype=bool)
    for i, j in enumerate(coords):
        vals, refs, sigs = [], [], []
        for sign in (1.0, -1.0):
            w = flat.copy()
            w[j] += sign * h
            ws = weights.with_flat(w)
            lo, sig = _loss_and_signature(layout, ws, llr, labels, kind, clip, dtype)
            ref = lo
            if dtype == np.float64:
                ref = loss_at(layout, ws, llr, labels, kind, clip, np.longdouble)
                noise[i] += float(abs(lo - ref)) / (2 * h)
            vals.append(lo)
            refs.append(ref)
            sigs.append(sig)
        fd[i] = float((vals[0] - vals[1]) / (2 * h))
        reference[i] = float((refs[0] - refs[1]) / (2 * h))
        crosses[i] = sigs[0] != sigs[1]
    return fd, reference, noise, crosses
