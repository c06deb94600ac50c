"""Sparse random spreading sequences and their crosscorrelation structure.

A spreading matrix has M unit-norm columns over C chips.  Each column has
exactly L nonzero chips at distinct random positions, and every nonzero is
+1/sqrt(L) or -1/sqrt(L) with equal probability.  L == C is the dense
special case (ordinary random spreading).

Crosscorrelations are assembled through an inverted chip index: only column
pairs that share at least one chip can meet, so the work is proportional to
the number of cohabiting pairs rather than to all M^2 pairs.  Entries whose
sign products cancel to exactly 0.0 are kept in the sparse structure: the
pair shares chip support, and a sparse detector implementation stores and
touches that entry regardless of its value.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SparseSequence:
    """One spreading sequence: L distinct chip positions with +/-1 signs.

    The nonzero amplitude is implied as 1/sqrt(L), so the sequence has unit
    Euclidean norm.
    """

    n_chips: int
    chips: np.ndarray  # (L,) int32, strictly increasing
    signs: np.ndarray  # (L,) int8, entries +/-1

    def __post_init__(self):
        chips = np.ascontiguousarray(self.chips, dtype=np.int32)
        signs = np.ascontiguousarray(self.signs, dtype=np.int8)
        object.__setattr__(self, "chips", chips)
        object.__setattr__(self, "signs", signs)
        if chips.ndim != 1 or signs.shape != chips.shape:
            raise ValueError("chips and signs must be 1-d arrays of equal length")
        if chips.size < 1 or chips.size > self.n_chips:
            raise ValueError("need 1 <= L <= C nonzero chips")
        if chips[0] < 0 or chips[-1] >= self.n_chips:
            raise ValueError("chip index out of range")
        if chips.size > 1 and not np.all(np.diff(chips) > 0):
            raise ValueError("chip indices must be distinct and sorted")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +/-1")

    @property
    def n_nonzero(self):
        return int(self.chips.size)

    @property
    def amplitude(self):
        """Magnitude of each nonzero chip, 1/sqrt(L)."""
        return 1.0 / np.sqrt(self.chips.size)

    def dense(self):
        v = np.zeros(self.n_chips)
        v[self.chips] = self.signs * self.amplitude
        return v


@dataclass
class SequenceMatrix:
    """M spreading sequences over C chips, all with the same nonzero count L.

    `chips[k]` / `signs[k]` describe column k.  The matrix is immutable once
    built and safe to share across concurrent readers.
    """

    n_chips: int
    n_bits: int
    chips: np.ndarray  # (M, L) int32, each row strictly increasing
    signs: np.ndarray  # (M, L) int8

    def __post_init__(self):
        self.chips = np.ascontiguousarray(self.chips, dtype=np.int32)
        self.signs = np.ascontiguousarray(self.signs, dtype=np.int8)
        C, M = self.n_chips, self.n_bits
        if self.chips.ndim != 2 or self.chips.shape[0] != M:
            raise ValueError("chips must be (n_bits, L)")
        if self.signs.shape != self.chips.shape:
            raise ValueError("signs shape must match chips")
        L = self.chips.shape[1]
        if not 1 <= L <= C:
            raise ValueError(f"need 1 <= L <= C, got L={L}, C={C}")
        if self.chips.min() < 0 or self.chips.max() >= C:
            raise ValueError("chip index out of range")
        if L > 1 and not np.all(np.diff(self.chips, axis=1) > 0):
            raise ValueError("chip indices must be distinct and sorted per column")
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("signs must be +/-1")

    @property
    def n_nonzero(self):
        """Nonzero chips per column (L)."""
        return int(self.chips.shape[1])

    @property
    def is_dense(self):
        return self.n_nonzero == self.n_chips

    @property
    def chip_amplitude(self):
        return 1.0 / np.sqrt(self.n_nonzero)

    def column(self, k):
        return SparseSequence(self.n_chips, self.chips[k].copy(), self.signs[k].copy())

    @cached_property
    def chip_index(self):
        """Inverted map chip -> occupying columns, as CSR-style arrays.

        Returns (indptr, cols, signs): columns with a nonzero at chip c are
        cols[indptr[c]:indptr[c+1]], with matching signs.
        """
        flat = self.chips.ravel()
        order = np.argsort(flat, kind="stable")
        cols = (order // self.n_nonzero).astype(np.int32)
        signs = self.signs.ravel()[order]
        counts = np.bincount(flat, minlength=self.n_chips)
        indptr = np.concatenate(([0], np.cumsum(counts)))
        return indptr, cols, signs

    def columns_from_chip_index(self):
        """Rebuild (chips, signs) from the inverted index (round-trip check)."""
        indptr, cols, signs = self.chip_index
        counts = np.diff(indptr)
        chip_of_entry = np.repeat(np.arange(self.n_chips, dtype=np.int32), counts)
        order = np.lexsort((chip_of_entry, cols))
        chips = chip_of_entry[order].reshape(self.n_bits, self.n_nonzero)
        out_signs = signs[order].reshape(self.n_bits, self.n_nonzero)
        return chips, out_signs

    @cached_property
    def dense_matrix(self):
        """The (C, M) dense float matrix; columns are unit-norm sequences."""
        S = np.zeros((self.n_chips, self.n_bits))
        rows = self.chips.ravel()
        cols = np.repeat(np.arange(self.n_bits), self.n_nonzero)
        S[rows, cols] = self.signs.ravel() * self.chip_amplitude
        return S


@dataclass
class CrossCorr:
    """Crosscorrelation R = S^T S and its amplitude-weighted form H = A R A.

    Both share one full symmetric CSR structure (per-row column/value lists):
    `indptr`/`indices` with values `r_data` and `h_data`; `diag` holds the H
    diagonal (A_k^2 for unit-norm columns).  Structural entries are exactly
    the column pairs sharing chip support, including any whose value cancels
    to 0.0.  Immutable once built; scipy views are materialized lazily.
    """

    n_bits: int
    indptr: np.ndarray
    indices: np.ndarray
    r_data: np.ndarray
    h_data: np.ndarray
    diag: np.ndarray

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @cached_property
    def R(self):
        M = self.n_bits
        return sp.csr_matrix((self.r_data, self.indices, self.indptr), shape=(M, M))

    @cached_property
    def H(self):
        M = self.n_bits
        return sp.csr_matrix((self.h_data, self.indices, self.indptr), shape=(M, M))

    def row(self, k):
        """Nonzero (indices, values) of row k of H (== column k by symmetry)."""
        lo, hi = self.indptr[k], self.indptr[k + 1]
        return self.indices[lo:hi], self.h_data[lo:hi]

    def h_matvec(self, x):
        """H @ x through the raw row lists (no scipy object needed)."""
        return np.add.reduceat(self.h_data * x[self.indices], self.indptr[:-1])

    def dense_h(self):
        out = np.zeros((self.n_bits, self.n_bits))
        rows = np.repeat(np.arange(self.n_bits), np.diff(self.indptr))
        out[rows, self.indices] = self.h_data
        return out

    @cached_property
    def abs_row_sums(self):
        """sum_j |H_kj| per row; the all-bits update threshold."""
        return np.add.reduceat(np.abs(self.h_data), self.indptr[:-1])


def gen_sparse_matrix(n_chips, n_bits, n_nonzero, rng):
    """Draw a random spreading matrix: M columns, L distinct uniform chip
    positions each, independent equiprobable signs.

    rng is a seeded numpy Generator; output is deterministic for a fixed
    stream.  Duplicate columns are allowed (the random model does not
    exclude them).
    """
    C, M, L = n_chips, n_bits, n_nonzero
    if not 1 <= L <= C:
        raise ValueError(f"need 1 <= L <= C, got L={L}, C={C}")
    if M < 1:
        raise ValueError("need at least one column")
    if L == C:
        chips = np.tile(np.arange(C, dtype=np.int32), (M, 1))
    else:
        # top-L of i.i.d. uniforms per row = uniform L-subset without replacement
        u = rng.random((M, C))
        chips = np.sort(np.argpartition(u, L, axis=1)[:, :L].astype(np.int32), axis=1)
    signs = (rng.integers(0, 2, size=(M, L), dtype=np.int8) * 2 - 1).astype(np.int8)
    return SequenceMatrix(C, M, chips, signs)


def crosscorrelation(S, amplitudes):
    """Build R = S^T S and H = A R A as sparse symmetric structures.

    The sparse route walks the inverted chip index and emits one product per
    (chip, column pair) incidence, so the cost is sum_c occupancy(c)^2.  When
    2L > C every column pair shares a chip (the structure is full), so the
    product is taken densely instead.
    """
    A = np.asarray(amplitudes, dtype=np.float64)
    if A.ndim == 0:
        A = np.full(S.n_bits, float(A))
    if A.shape != (S.n_bits,):
        raise ValueError("amplitudes must have one entry per bit")
    if not np.all(A > 0):
        raise ValueError("amplitudes must be positive")

    C, M, L = S.n_chips, S.n_bits, S.n_nonzero
    if 2 * L > C:
        # every pair overlaps: full structure, dense product for the values
        Sd = S.dense_matrix
        Rd = Sd.T @ Sd
        Rd = 0.5 * (Rd + Rd.T)  # exact symmetry regardless of BLAS blocking
        indptr = np.arange(M + 1, dtype=np.int64) * M
        indices = np.tile(np.arange(M, dtype=np.int32), M)
        r_data = Rd.ravel()
    else:
        cptr, cols, csigns = S.chip_index
        counts = np.diff(cptr).astype(np.int64)
        sq = counts * counts
        total = int(sq.sum())
        chip_of = np.repeat(np.arange(C), sq)
        offset = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(sq) - sq, sq)
        occ = counts[chip_of]
        ia = cptr[chip_of] + offset // occ
        ib = cptr[chip_of] + offset % occ
        vals = csigns[ia].astype(np.float64) * csigns[ib] / L
        # sum duplicate (row, col) pairs; key order gives sorted indices per row
        key = cols[ia].astype(np.int64) * M + cols[ib]
        order = np.argsort(key, kind="stable")
        skey = key[order]
        first = np.empty(skey.size, dtype=bool)
        first[0] = True
        np.not_equal(skey[1:], skey[:-1], out=first[1:])
        starts = np.flatnonzero(first)
        r_data = np.add.reduceat(vals[order], starts)
        ukey = skey[starts]
        indices = (ukey % M).astype(np.int32)
        indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(ukey // M, minlength=M)))
        )

    rows_of = np.repeat(np.arange(M), np.diff(indptr))
    if np.all(A == 1.0):
        h_data = r_data  # equal power: identical; immutable by convention
    else:
        h_data = r_data * A[rows_of] * A[indices]
    diag = h_data[indices == rows_of]
    return CrossCorr(n_bits=M, indptr=indptr, indices=indices,
                     r_data=r_data, h_data=h_data, diag=diag)


def dump_matrix(S, fp):
    """Write a matrix in the debug text format, one line per column:
    `col_index L chip:sign chip:sign ...` after a `# chips=C` header."""
    fp.write(f"# chips={S.n_chips}\n")
    for k in range(S.n_bits):
        ent = " ".join(
            f"{c}:{'+1' if s > 0 else '-1'}"
            for c, s in zip(S.chips[k], S.signs[k])
        )
        fp.write(f"{k} {S.n_nonzero} {ent}\n")


def load_matrix(fp, n_chips=None):
    """Read a matrix written by dump_matrix."""
    chips, signs = [], []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("chips="):
                    n_chips = int(tok[6:])
            continue
        parts = line.split()
        k, L = int(parts[0]), int(parts[1])
        if k != len(chips):
            raise ValueError(f"column lines out of order at column {k}")
        if len(parts) != 2 + L:
            raise ValueError(f"column {k}: expected {L} entries")
        row_c, row_s = [], []
        for tok in parts[2:]:
            c, s = tok.split(":")
            row_c.append(int(c))
            row_s.append(int(s))
        chips.append(row_c)
        signs.append(row_s)
    if n_chips is None:
        raise ValueError("chip count missing (no header and none supplied)")
    return SequenceMatrix(
        n_chips,
        len(chips),
        np.asarray(chips, dtype=np.int32),
        np.asarray(signs, dtype=np.int8),
    )
