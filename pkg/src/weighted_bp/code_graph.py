"""Binary linear codes, Tanner graphs and the unrolled decoder layout.

Edges are ordered column-major: sorted by variable node, then by check
node.  Weight vectors, checkpoints and every index table below depend on
this order, so it must not change.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

MAX_N = 1024
MAX_EDGES = 65536

# Primitive polynomials for GF(2^m), bit i = coefficient of x^i.
PRIMITIVE_POLYS = {
    3: 0b1011,  # x^3 + x + 1
    4: 0b10011,  # x^4 + x + 1
    5: 0b100101,  # x^5 + x^2 + 1
    6: 0b1000011,  # x^6 + x + 1
    7: 0b10001001,  # x^7 + x^3 + 1
    8: 0b100011101,  # x^8 + x^4 + x^3 + x^2 + 1
}


class CodeError(ValueError):
    """Invalid code parameters or parity-check matrix."""


class AlistError(CodeError):
    """Base class for alist parse errors; carries the 1-based line number."""

    kind = "parse error"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{self.kind}: {message}")


class AlistHeaderError(AlistError):
    kind = "malformed header"


class AlistIndexError(AlistError):
    kind = "index out of range"


class AlistInconsistencyError(AlistError):
    kind = "adjacency inconsistency"


class ParityCheckCode:
    """A binary parity-check matrix with its Tanner graph.

    ``h`` is kept exactly as given (redundant rows included).  A matrix
    with zero rows is the uncoded, rate-1 code; otherwise all-zero rows
    and columns are rejected.
    """

    def __init__(self, h, generator=None, info_positions=None):
        h = np.array(h, dtype=np.uint8)
        if h.ndim != 2:
            raise CodeError("parity-check matrix must be 2-D")
        if np.any(h > 1):
            raise CodeError("parity-check matrix must be binary")
        m, n = h.shape
        if n == 0:
            raise CodeError("code has no variable nodes")
        if n > MAX_N:
            raise CodeError(f"n={n} exceeds supported maximum {MAX_N}")
        if m > 0:
            zero_cols = np.flatnonzero(h.sum(axis=0) == 0)
            if zero_cols.size:
                raise CodeError(f"zero column at variable {int(zero_cols[0])}")
            zero_rows = np.flatnonzero(h.sum(axis=1) == 0)
            if zero_rows.size:
                raise CodeError(f"zero row at check {int(zero_rows[0])}")
        h.setflags(write=False)
        self.h = h
        self.n = n
        self.m = m

        # column-major edge order: transpose then nonzero gives (v, c) sorted by v, then c
        ev, ec = np.nonzero(h.T)
        if ev.size > MAX_EDGES:
            raise CodeError(f"E={ev.size} exceeds supported maximum {MAX_EDGES}")
        self.edge_var = ev.astype(np.int64)
        self.edge_chk = ec.astype(np.int64)
        self.var_degree = h.sum(axis=0).astype(np.int64)
        self.chk_degree = h.sum(axis=1).astype(np.int64)
        for arr in (self.edge_var, self.edge_chk, self.var_degree, self.chk_degree):
            arr.setflags(write=False)

        self.generator = None
        self.info_positions = None
        if generator is not None:
            g = np.array(generator, dtype=np.uint8)
            if g.ndim != 2 or g.shape[1] != n:
                raise CodeError("generator must have n columns")
            if np.any((g.astype(np.int64) @ h.T.astype(np.int64)) % 2):
                raise CodeError("generator rows are not codewords")
            if gf2_rank(g) != g.shape[0]:
                raise CodeError("generator is not full row rank")
            g.setflags(write=False)
            self.generator = g
            if info_positions is not None:
                self.info_positions = np.asarray(info_positions, dtype=np.int64)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.edge_var.tolist(), self.edge_chk.tolist()))

    @property
    def num_edges(self) -> int:
        return int(self.edge_var.size)

    @property
    def k(self) -> int:
        if self.generator is not None:
            return int(self.generator.shape[0])
        return self.n - gf2_rank(self.h)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def syndrome(self, words) -> np.ndarray:
        """H·wᵀ over GF(2) for one word or a batch of words (rows)."""
        w = np.asarray(words, dtype=np.int64)
        return (w @ self.h.T.astype(np.int64)) % 2

    def digest(self) -> str:
        """Stable SHA-256 of (n, m, h); used to bind checkpoints to codes."""
        sha = hashlib.sha256()
        sha.update(np.array([self.n, self.m], dtype="<i8").tobytes())
        sha.update(np.ascontiguousarray(self.h).tobytes())
        return sha.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ParityCheckCode):
            return NotImplemented
        return self.n == other.n and self.m == other.m and np.array_equal(self.h, other.h)

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        return f"ParityCheckCode(n={self.n}, m={self.m}, E={self.num_edges})"


def uncoded(n: int) -> ParityCheckCode:
    """The rate-1 code with no parity checks."""
    return ParityCheckCode(np.zeros((0, n), dtype=np.uint8))


# ---------------------------------------------------------------------------
# GF(2) linear algebra


def gf2_rref(a):
    """Reduced row echelon form over GF(2). Returns (R, pivot_columns)."""
    r_mat = (np.asarray(a) & 1).astype(np.uint8, copy=True)
    rows, cols = r_mat.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        hits = np.flatnonzero(r_mat[r:, c])
        if hits.size == 0:
            continue
        p = r + int(hits[0])
        if p != r:
            r_mat[[r, p]] = r_mat[[p, r]]
        ones = np.flatnonzero(r_mat[:, c])
        ones = ones[ones != r]
        if ones.size:
            r_mat[ones] ^= r_mat[r]
        pivots.append(c)
        r += 1
    return r_mat[:r], pivots


def gf2_rank(a) -> int:
    a = np.asarray(a)
    if a.size == 0:
        return 0
    return len(gf2_rref(a)[1])


def derive_generator(code: ParityCheckCode) -> ParityCheckCode:
    """Return a copy of ``code`` carrying a systematic generator matrix.

    Information bits sit on the non-pivot columns of RREF(H); the generator
    has an identity submatrix there.  ``info_positions`` records them, and
    ``info_positions`` followed by the pivot columns is the column
    permutation that puts G in [I_k | P] form.
    """
    n = code.n
    if code.m == 0:
        return ParityCheckCode(code.h, np.eye(n, dtype=np.uint8), np.arange(n))
    rref, pivots = gf2_rref(code.h)
    pivot_set = set(pivots)
    free = [c for c in range(n) if c not in pivot_set]
    g = np.zeros((len(free), n), dtype=np.uint8)
    for i, f in enumerate(free):
        g[i, f] = 1
        g[i, pivots] = rref[:, f]
    return ParityCheckCode(code.h, g, free)


def encode(code: ParityCheckCode, messages) -> np.ndarray:
    if code.generator is None:
        raise CodeError("code has no generator; call derive_generator first")
    msg = np.asarray(messages, dtype=np.int64)
    return ((msg @ code.generator.astype(np.int64)) % 2).astype(np.uint8)


def all_codewords(code: ParityCheckCode) -> np.ndarray:
    """Every codeword, row index = message integer (bit j of index -> message bit j)."""
    if code.generator is None:
        raise CodeError("code has no generator; call derive_generator first")
    k = code.k
    idx = np.arange(2**k, dtype=np.int64)
    msgs = (idx[:, None] >> np.arange(k)) & 1
    return encode(code, msgs)


# ---------------------------------------------------------------------------
# alist I/O


def emit_alist(code: ParityCheckCode) -> str:
    h = code.h
    n, m = code.n, code.m
    cols = [np.flatnonzero(h[:, v]) + 1 for v in range(n)]
    rows = [np.flatnonzero(h[c]) + 1 for c in range(m)]
    max_col = max((len(c) for c in cols), default=0)
    max_row = max((len(r) for r in rows), default=0)

    def padded(idx, width):
        vals = list(idx.tolist()) + [0] * (width - len(idx))
        return " ".join(str(x) for x in vals)

    lines = [
        f"{n} {m}",
        f"{max_col} {max_row}",
        " ".join(str(len(c)) for c in cols),
        " ".join(str(len(r)) for r in rows),
    ]
    lines += [padded(c, max_col) for c in cols]
    lines += [padded(r, max_row) for r in rows]
    return "\n".join(lines) + "\n"


def _ints(text: str, lineno: int, err=AlistHeaderError) -> list[int]:
    try:
        return [int(tok) for tok in text.split()]
    except ValueError:
        raise err(f"non-integer token in {text.strip()!r}", lineno) from None


def load_alist(text: str) -> ParityCheckCode:
    """Parse MacKay alist text. Zero padding in the adjacency lists is optional."""
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if len(lines) < 4:
        raise AlistHeaderError("expected at least 4 header lines", lines[-1][0] if lines else 1)

    ln, row = lines[0]
    head = _ints(row, ln)
    if len(head) != 2 or head[0] <= 0 or head[1] < 0:
        raise AlistHeaderError("first line must be 'n m'", ln)
    n, m = head
    if n > MAX_N:
        raise AlistHeaderError(f"n={n} exceeds supported maximum {MAX_N}", ln)

    ln, row = lines[1]
    maxes = _ints(row, ln)
    if len(maxes) != 2:
        raise AlistHeaderError("second line must be 'max_col_degree max_row_degree'", ln)
    max_col, max_row = maxes

    ln, row = lines[2]
    col_deg = _ints(row, ln)
    if len(col_deg) != n:
        raise AlistHeaderError(f"expected {n} column degrees, got {len(col_deg)}", ln)
    ln, row = lines[3]
    row_deg = _ints(row, ln)
    if len(row_deg) != m:
        raise AlistHeaderError(f"expected {m} row degrees, got {len(row_deg)}", ln)
    if max(col_deg, default=0) != max_col or max(row_deg, default=0) != max_row:
        raise AlistHeaderError("maximum degrees disagree with degree lists", lines[1][0])

    if len(lines) < 4 + n + m:
        raise AlistHeaderError(
            f"expected {n + m} adjacency lines, found {len(lines) - 4}", lines[-1][0]
        )

    h_cols = np.zeros((m, n), dtype=np.uint8)
    for v in range(n):
        ln, row = lines[4 + v]
        idx = [x for x in _ints(row, ln, AlistIndexError) if x != 0]
        if col_deg[v] == 0:
            raise AlistInconsistencyError(f"zero column at variable {v + 1}", ln)
        if len(idx) != col_deg[v]:
            raise AlistInconsistencyError(
                f"column {v + 1} lists {len(idx)} checks, degree says {col_deg[v]}", ln
            )
        for c in idx:
            if not 1 <= c <= m:
                raise AlistIndexError(f"check index {c} not in 1..{m}", ln)
            if h_cols[c - 1, v]:
                raise AlistInconsistencyError(f"duplicate check {c} in column {v + 1}", ln)
            h_cols[c - 1, v] = 1

    h_rows = np.zeros((m, n), dtype=np.uint8)
    for c in range(m):
        ln, row = lines[4 + n + c]
        idx = [x for x in _ints(row, ln, AlistIndexError) if x != 0]
        if row_deg[c] == 0:
            raise AlistInconsistencyError(f"zero row at check {c + 1}", ln)
        if len(idx) != row_deg[c]:
            raise AlistInconsistencyError(
                f"row {c + 1} lists {len(idx)} variables, degree says {row_deg[c]}", ln
            )
        for v in idx:
            if not 1 <= v <= n:
                raise AlistIndexError(f"variable index {v} not in 1..{n}", ln)
            h_rows[c, v - 1] = 1
        if not np.array_equal(h_rows[c], h_cols[c]):
            raise AlistInconsistencyError(f"row {c + 1} disagrees with column lists", ln)

    return ParityCheckCode(h_cols)


def read_alist(path) -> ParityCheckCode:
    with open(path, encoding="ascii") as fh:
        return load_alist(fh.read())


def write_alist(code: ParityCheckCode, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(emit_alist(code))


# ---------------------------------------------------------------------------
# BCH construction


def gf_tables(m_field: int) -> tuple[np.ndarray, np.ndarray]:
    """exp/log tables of GF(2^m) for the primitive polynomial in PRIMITIVE_POLYS."""
    poly = PRIMITIVE_POLYS[m_field]
    size = 1 << m_field
    exp = np.zeros(2 * size, dtype=np.int64)
    log = np.full(size, -1, dtype=np.int64)
    x = 1
    for i in range(size - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & size:
            x ^= poly
    exp[size - 1 : 2 * size - 2] = exp[: size - 1]
    return exp, log


def cyclotomic_coset(i: int, n: int) -> list[int]:
    coset = []
    x = i % n
    while x not in coset:
        coset.append(x)
        x = (2 * x) % n
    return coset


def _check_bch_params(m_field: int, t: int) -> None:
    if m_field not in PRIMITIVE_POLYS:
        raise CodeError(f"m_field must be in 3..8, got {m_field}")
    if t < 1:
        raise CodeError(f"t must be >= 1, got {t}")
    if 2 * t - 1 >= (1 << m_field) - 1:
        raise CodeError(f"t={t} too large for n={(1 << m_field) - 1}")


def bch_generator_poly(m_field: int, t: int) -> list[int]:
    """Coefficients (lowest degree first) of the narrow-sense BCH generator polynomial."""
    _check_bch_params(m_field, t)
    n = (1 << m_field) - 1
    exp, log = gf_tables(m_field)

    def mul(a, b):
        if a == 0 or b == 0:
            return 0
        return int(exp[(log[a] + log[b]) % n])

    roots = set()
    for i in range(1, 2 * t, 2):
        roots.update(cyclotomic_coset(i, n))
    # product of (x - alpha^r) over GF(2^m); result has binary coefficients
    g = [1]
    for r in sorted(roots):
        a = int(exp[r])
        nxt = [0] * (len(g) + 1)
        for d, coef in enumerate(g):
            nxt[d + 1] ^= coef
            nxt[d] ^= mul(coef, a)
        g = nxt
    if any(c > 1 for c in g):
        raise AssertionError("generator polynomial is not binary")
    return g


def construct_bch(m_field: int, t: int) -> ParityCheckCode:
    """Binary narrow-sense primitive BCH code of length 2^m - 1 correcting t errors.

    Column j of the check matrix stacks the m-bit vectors of alpha^(i*j)
    for each odd i < 2t whose cyclotomic coset is not already covered.
    Row b of each block is bit b (LSB first).  Blocks whose coset is smaller
    than m contribute dependent bit-planes; those rows are dropped so the
    number of rows equals deg g(x).
    """
    _check_bch_params(m_field, t)
    n = (1 << m_field) - 1
    exp, _ = gf_tables(m_field)
    covered: set[int] = set()
    rows = []
    for i in range(1, 2 * t, 2):
        if i % n in covered:
            continue
        covered.update(cyclotomic_coset(i, n))
        powers = exp[(i * np.arange(n)) % n]
        for b in range(m_field):
            rows.append(((powers >> b) & 1).astype(np.uint8))
    kept = []
    for row in rows:
        if gf2_rank(np.array(kept + [row])) == len(kept) + 1:
            kept.append(row)
    h = np.array(kept, dtype=np.uint8)
    if h.shape[0] >= n:
        raise CodeError(f"t={t} leaves no information bits")
    return derive_generator(ParityCheckCode(h))


# ---------------------------------------------------------------------------
# Unrolled layout


@dataclass(frozen=True, eq=False)
class TrellisLayout:
    """Index tables for the unrolled decoder.

    Each fan-in is stored twice: as a ragged CSR-like list
    (``*_ptr``/``*_idx``, the canonical order) and as a padded
    ``(rows, width)`` table whose pad entries point at index E (a zero/one
    sentinel slot appended to message vectors).
    """

    num_iterations: int
    n: int
    num_edges: int
    edge_var: np.ndarray
    edge_chk: np.ndarray
    # vn_inputs(e): edges (v, c') with c' != c
    vn_ptr: np.ndarray
    vn_idx: np.ndarray
    vn_pad: np.ndarray
    # cn_inputs(e): edges (v', c) with v' != v
    cn_ptr: np.ndarray
    cn_idx: np.ndarray
    cn_pad: np.ndarray
    # out_inputs(v): all edges (v, c')
    out_ptr: np.ndarray
    out_idx: np.ndarray
    out_pad: np.ndarray
    # per-check edge lists (m, max check degree), padded with E; chk_slot[e] is
    # the flat position of edge e in the transposed table, j * m + c
    chk_table: np.ndarray
    chk_slot: np.ndarray
    code_digest: str = field(default="")

    @property
    def hidden_layers(self) -> int:
        return 2 * self.num_iterations

    @property
    def num_pairs(self) -> int:
        return int(self.vn_idx.size)

    def vn_inputs(self, e: int) -> np.ndarray:
        return self.vn_idx[self.vn_ptr[e] : self.vn_ptr[e + 1]]

    def cn_inputs(self, e: int) -> np.ndarray:
        return self.cn_idx[self.cn_ptr[e] : self.cn_ptr[e + 1]]

    def out_inputs(self, v: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[v] : self.out_ptr[v + 1]]

    def same_tables(self, other: TrellisLayout) -> bool:
        names = ("vn_ptr", "vn_idx", "cn_ptr", "cn_idx", "out_ptr", "out_idx")
        return (
            self.num_iterations == other.num_iterations
            and self.code_digest == other.code_digest
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in names)
        )


def _ragged(groups: list[list[int]], sentinel: int):
    ptr = np.zeros(len(groups) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(g) for g in groups])
    idx = np.array([x for g in groups for x in g], dtype=np.int64)
    width = max((len(g) for g in groups), default=0)
    pad = np.full((len(groups), width), sentinel, dtype=np.int64)
    for r, g in enumerate(groups):
        pad[r, : len(g)] = g
    for arr in (ptr, idx, pad):
        arr.setflags(write=False)
    return ptr, idx, pad


def compile_trellis(code: ParityCheckCode, iterations: int) -> TrellisLayout:
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    E = code.num_edges
    ev, ec = code.edge_var, code.edge_chk
    by_var: list[list[int]] = [[] for _ in range(code.n)]
    by_chk: list[list[int]] = [[] for _ in range(code.m)]
    for e in range(E):
        by_var[ev[e]].append(e)
        by_chk[ec[e]].append(e)
    vn = [[x for x in by_var[ev[e]] if x != e] for e in range(E)]
    cn = [[x for x in by_chk[ec[e]] if x != e] for e in range(E)]
    vn_ptr, vn_idx, vn_pad = _ragged(vn, E)
    cn_ptr, cn_idx, cn_pad = _ragged(cn, E)
    out_ptr, out_idx, out_pad = _ragged(by_var, E)
    _, _, chk_table = _ragged(by_chk, E)
    chk_slot = np.empty(E, dtype=np.int64)
    for c, group in enumerate(by_chk):
        for j, e in enumerate(group):
            chk_slot[e] = j * code.m + c
    chk_slot.setflags(write=False)
    return TrellisLayout(
        num_iterations=iterations,
        n=code.n,
        num_edges=E,
        edge_var=code.edge_var,
        edge_chk=code.edge_chk,
        vn_ptr=vn_ptr,
        vn_idx=vn_idx,
        vn_pad=vn_pad,
        cn_ptr=cn_ptr,
        cn_idx=cn_idx,
        cn_pad=cn_pad,
        out_ptr=out_ptr,
        out_idx=out_idx,
        out_pad=out_pad,
        chk_table=chk_table,
        chk_slot=chk_slot,
        code_digest=code.digest(),
    )


def count_parameters(layout: TrellisLayout, multiloss: bool = False) -> int:
    """Trainable scalars: per odd layer N + sum_v d_v(d_v - 1), plus the readout groups."""
    per_odd = layout.n + layout.num_pairs
    per_readout = layout.n + layout.num_edges
    readouts = layout.num_iterations if multiloss else 1
    return layout.num_iterations * per_odd + readouts * per_readout
