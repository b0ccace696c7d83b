"""Structured QR factorization of the stacked matrix ``[cA; I]``.

For symmetric banded ``cA`` the stacked ``2n x n`` matrix is reduced to
upper-triangular form by a fixed schedule of Givens rotations: ``3n - 2``
rotations for tridiagonal input, ``(2b + 1) n - b^2 - b`` for bandwidth
``b``.  The first ``n`` columns of the orthogonal factor, ``Q1`` (top half)
and ``Q2`` (bottom half), have off-diagonal blocks of rank at most ``2b``.
:func:`assemble_q` builds them in HODLR form straight from the rotation
sequence without ever forming ``Q``.

Row/column indices are 0-based.  Row ``n`` of the stacked matrix (the
first row of the identity part) collects the fill produced while the
identity part is eliminated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .banded import GIVENS_DTYPE, BandedSymmetric, GivensSequence, _givens_nb
from .hodlr import HodlrMatrix, LowRankBlock, PartitionTree, hodlr_multiply, symmetrize

# --------------------------------------------------------------------------
# rotation schedules
# --------------------------------------------------------------------------


def tridiag_schedule(n: int):
    """``(keep, zero, col)`` triples of the tridiagonal reduction: the
    rotation mixes rows ``keep`` and ``zero`` so that ``R[zero, col]``
    vanishes."""
    yield 0, n, 0  # beta_1
    yield 0, 1, 0  # gamma_1
    for i in range(1, n):
        yield n, n + i, i  # alpha_i
        yield i, n, i  # beta_i
        if i < n - 1:
            yield i, i + 1, i  # gamma_i


def banded_schedule(n: int, b: int):
    """Rotation schedule of the banded reduction (same triple layout)."""
    yield 0, n, 0  # beta_1
    for j in range(1, min(n - 1, b) + 1):
        yield 0, j, 0  # gamma_{1,j}
    for i in range(1, n):
        yield n, n + i, i  # alpha_{i,i}
        for j in range(i + 1, min(n - 1, b + i - 1) + 1):
            yield n + j, n + i, j  # alpha_{i,j}: clears R[n+i, j] against row n+j
        yield i, n, i  # beta_i
        if i < n - 1:
            for j in range(i + 1, min(n - 1, b + i) + 1):
                yield i, j, i  # gamma_{i,j}


def rotation_count(n: int, b: int) -> int:
    return (2 * b + 1) * n - b * b - b


def rotation_step(i: int, j: int, n: int) -> int:
    """Column being eliminated when rows ``i`` and ``j`` are rotated.

    Every rotation of both schedules touches the current pivot column
    ``k`` through exactly one of the rows ``k``, ``n + k`` (the other row
    being ``n`` or a later row), which makes the step recoverable from the
    index pair alone.
    """
    lo, hi = min(i, j), max(i, j)
    if hi < n:
        return lo
    if lo < n:
        return lo
    if lo == n:
        return hi - n
    return lo - n


# --------------------------------------------------------------------------
# reduction
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UpperBanded:
    """Upper-triangular banded matrix; ``bands[d, i] = R[i, i + d]``."""

    bands: np.ndarray

    @property
    def n(self) -> int:
        return self.bands.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.bands.shape[0] - 1

    def to_dense(self) -> np.ndarray:
        n = self.n
        R = np.zeros((n, n))
        for d in range(min(self.bands.shape[0], n)):
            R += np.diag(self.bands[d, : n - d], d)
        return R


class _RowWindows:
    """Rows of the stacked matrix, each stored on a short column window."""

    def __init__(self, cA: BandedSymmetric):
        n, b = cA.n, cA.b
        self.n = n
        self.width = w = 2 * b + 3
        self.vals = np.zeros((2 * n, w))
        self.off = np.empty(2 * n, dtype=np.int64)
        i = np.arange(n)
        lo = np.maximum(0, i - b)
        self.off[:n] = lo
        self.off[n:] = i
        self.vals[n:, 0] = 1.0
        for d in range(-b, b + 1):
            j = i + d
            ok = (j >= 0) & (j < n)
            vals = cA.bands[-d, j[ok]] if d <= 0 else cA.bands[d, i[ok]]
            self.vals[i[ok], j[ok] - lo[ok]] = vals


@numba.njit(cache=True)
def _rebase_nb(vals, off, r, col):
    shift = off[r] - col
    if shift == 0:
        return True
    w = vals.shape[1]
    if shift > 0:
        for t in range(w - shift, w):
            if vals[r, t] != 0.0:
                return False
        for t in range(w - 1, shift - 1, -1):
            vals[r, t] = vals[r, t - shift]
        for t in range(shift):
            vals[r, t] = 0.0
    else:
        shift = -shift
        for t in range(shift):
            if vals[r, t] != 0.0:
                return False
        for t in range(w - shift):
            vals[r, t] = vals[r, t + shift]
        for t in range(w - shift, w):
            vals[r, t] = 0.0
    off[r] = col
    return True


@numba.njit(cache=True)
def _rotate_all(vals, off, sched, cs):
    """Apply the whole schedule in place; returns the index of a failed
    rotation or -1."""
    w = vals.shape[1]
    for k in range(sched.shape[0]):
        keep, zero, col = sched[k, 0], sched[k, 1], sched[k, 2]
        if not (_rebase_nb(vals, off, keep, col) and _rebase_nb(vals, off, zero, col)):
            return k
        c, s = _givens_nb(vals[keep, 0], vals[zero, 0])
        for t in range(w):
            x = vals[keep, t]
            y = vals[zero, t]
            vals[keep, t] = c * x + s * y
            vals[zero, t] = -s * x + c * y
        vals[zero, 0] = 0.0
        cs[k, 0] = c
        cs[k, 1] = s
    return -1


@numba.njit(cache=True)
def _extract_r(vals, off, R):
    """Copy row ``i`` of the triangular part into ``R[:, i]`` (band storage)."""
    bw1, w = R.shape[0], vals.shape[1]
    for i in range(R.shape[1]):
        if not _rebase_nb(vals, off, i, i):
            return False
        for t in range(bw1, w):
            if vals[i, t] != 0.0:
                return False
        for t in range(bw1):
            R[t, i] = vals[i, t]
    return True


def _reduce(cA: BandedSymmetric, schedule) -> tuple[GivensSequence, UpperBanded]:
    n, b = cA.n, cA.b
    rows = _RowWindows(cA)
    sched = np.array(list(schedule), dtype=np.int64).reshape(-1, 3)
    cs = np.empty((len(sched), 2))
    failed = _rotate_all(rows.vals, rows.off, sched, cs)
    if failed >= 0:
        raise AssertionError(f"row window overflow at rotation {failed}")
    records = np.empty(len(sched), dtype=GIVENS_DTYPE)
    records["i"], records["j"] = sched[:, 0], sched[:, 1]
    records["c"], records["s"] = cs[:, 0], cs[:, 1]
    R = np.zeros((2 * b + 1, n))
    if not _extract_r(rows.vals, rows.off, R):
        raise AssertionError("R exceeds the expected bandwidth")
    return GivensSequence(records, 2 * n), UpperBanded(R)


def reduce_tridiag(cA: BandedSymmetric) -> tuple[GivensSequence, UpperBanded]:
    """Givens reduction of ``[cA; I]`` for tridiagonal ``cA`` (``3n - 2`` rotations)."""
    if cA.b != 1:
        raise ValueError("reduce_tridiag needs a tridiagonal matrix (b = 1)")
    return _reduce(cA, tridiag_schedule(cA.n))


def reduce_banded(cA: BandedSymmetric) -> tuple[GivensSequence, UpperBanded]:
    """Givens reduction of ``[cA; I]`` for bandwidth ``b``
    (``(2b+1) n - b^2 - b`` rotations)."""
    return _reduce(cA, banded_schedule(cA.n, cA.b))


def reduce_stacked(cA: BandedSymmetric) -> tuple[GivensSequence, UpperBanded]:
    return reduce_tridiag(cA) if cA.b == 1 else reduce_banded(cA)


def accumulate_dense(givens: GivensSequence) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``Q1, Q2`` by applying the rotations to the columns of ``I_2n``."""
    n = givens.nrows // 2
    Q = givens.apply_columns(np.eye(2 * n))
    return Q[:n, :n], Q[n:, :n]


# --------------------------------------------------------------------------
# structured assembly of Q1, Q2
# --------------------------------------------------------------------------


class _Tracked:
    """Upper off-diagonal block ``rows [r0, r1) x cols [r1, c1)`` of both
    ``Q1`` and ``Q2``.

    ``basis`` stacks the ``Q1`` rows over the ``Q2`` rows; every column of
    ``Q`` that is nonzero on these rows is a combination of the basis
    columns, with coefficients kept in ``coef``.  Rotations only update
    the coefficients.
    """

    __slots__ = ("r0", "r1", "c1", "basis", "coef", "vrows")

    def __init__(self, r0, r1, c1, basis, coef):
        self.r0, self.r1, self.c1 = r0, r1, c1
        self.basis = basis
        self.coef = coef
        self.vrows = np.zeros((c1 - r1, basis.shape[1]))


class _Assembler:
    def __init__(self, n: int, b: int, tree: PartitionTree):
        self.n, self.b, self.tree = n, b, tree
        self.splits = {mid: (lo, hi) for lo, mid, hi in tree.nodes()}
        self.leaves = tree.leaves()
        self.active: list[_Tracked] = []
        self.closed_upper: dict[tuple[int, int], tuple[LowRankBlock, LowRankBlock]] = {}
        self.lower_entries: dict[tuple[int, int], list] = {}
        self.leaf_q1: dict[int, np.ndarray] = {}
        self.leaf_q2: dict[int, np.ndarray] = {}
        self.explicit: dict[int, np.ndarray] = {}
        self.closed = np.zeros(2 * n, dtype=bool)
        self.leaf_index = 0
        self._set_window(*self.leaves[0])

    # explicit rows [lo, hi) of the Q1 part and of the Q2 part
    def _set_window(self, l0, l1):
        self.l0, self.l1 = l0, l1
        self.lo = l0
        self.hi = min(self.n, l1 + 2 * self.b + 2)
        self.h = self.hi - self.lo

    def _column(self, x: int) -> np.ndarray:
        vec = self.explicit.get(x)
        if vec is None:
            if self.closed[x]:
                raise ValueError(f"malformed rotation sequence: column {x} touched after it was final")
            vec = np.zeros(2 * self.h)
            row = x if x < self.n else x - self.n
            if not self.lo <= row < self.hi:
                raise ValueError(f"malformed rotation sequence: column {x} first touched out of order")
            vec[row - self.lo + (0 if x < self.n else self.h)] = 1.0
            self.explicit[x] = vec
        return vec

    def rotate(self, p: int, q: int, c: float, s: float) -> None:
        vp, vq = self._column(p), self._column(q)
        tmp = c * vp + s * vq
        vq *= c
        vq -= s * vp
        vp[:] = tmp
        for blk in self.active:
            cp = blk.coef.get(p)
            cq = blk.coef.get(q)
            if cp is None and cq is None:
                continue
            if cp is None:
                blk.coef[p] = s * cq
                blk.coef[q] = c * cq
            elif cq is None:
                blk.coef[p] = c * cp
                blk.coef[q] = -s * cp
            else:
                blk.coef[p] = c * cp + s * cq
                blk.coef[q] = -s * cp + c * cq

    def _lca(self, row: int, col: int) -> tuple[int, int]:
        lo, hi = 0, self.n
        while True:
            mid = PartitionTree.split(lo, hi, self.tree.n_min)
            if (row < mid) != (col < mid):
                return lo, hi
            lo, hi = (lo, mid) if row < mid else (mid, hi)

    def close_column(self, j: int) -> None:
        vec = self.explicit.pop(j, None)
        if vec is None:
            vec = self._column(j)
            del self.explicit[j]
        self.closed[j] = True
        l0, l1, lo, h = self.l0, self.l1, self.lo, self.h
        if l0 not in self.leaf_q1:
            self.leaf_q1[l0] = np.zeros((l1 - l0, l1 - l0))
            self.leaf_q2[l0] = np.zeros((l1 - l0, l1 - l0))
        self.leaf_q1[l0][:, j - l0] = vec[l0 - lo : l1 - lo]
        self.leaf_q2[l0][:, j - l0] = vec[h + l0 - lo : h + l1 - lo]
        for part, base in ((0, 0), (1, h)):
            below = vec[base + l1 - lo : base + h]
            for k in np.flatnonzero(below):
                row = l1 + int(k)
                key = self._lca(row, j)
                self.lower_entries.setdefault(key, []).append((part, row, j, float(below[k])))
        for blk in self.active:
            cj = blk.coef.pop(j, None)
            if cj is not None:
                blk.vrows[j - blk.r1] = cj
        if j > 0:
            # column n + j of Q is final after step j and lies outside Q[:, :n]
            x = self.n + j
            self.explicit.pop(x, None)
            self.closed[x] = True
            for blk in self.active:
                blk.coef.pop(x, None)

    def _finish(self, blk: _Tracked) -> None:
        p = blk.r1 - blk.r0
        self.closed_upper[(blk.r0, blk.r1)] = (
            LowRankBlock(blk.basis[:p], blk.vrows),
            LowRankBlock(blk.basis[p:], blk.vrows),
        )

    def cross_boundary(self) -> None:
        """Leaf ``[l0, l1)`` is complete: retire the blocks whose columns
        end at ``l1``, start the block whose columns begin at ``l1`` and
        move the explicit window to the next leaf."""
        cut = self.l1
        finishing = [blk for blk in self.active if blk.c1 == cut]
        self.active = [blk for blk in self.active if blk.c1 != cut]
        r0, c1 = self.splits[cut]
        lo, h = self.lo, self.h
        leaf_rows = slice(self.l0 - lo, self.l1 - lo)
        leaf_rows2 = slice(h + self.l0 - lo, h + self.l1 - lo)
        cols = set()
        for blk in finishing:
            cols.update(blk.coef)
        for x, vec in self.explicit.items():
            if np.any(vec[leaf_rows] != 0.0) or np.any(vec[leaf_rows2] != 0.0):
                cols.add(x)
        cols = sorted(cols)
        p = cut - r0
        basis = np.zeros((2 * p, len(cols)))
        covered = self.l1 - self.l0
        for blk in finishing:
            a, z = blk.r0 - r0, blk.r1 - r0
            zero = np.zeros(blk.basis.shape[1])
            C = np.column_stack([blk.coef.get(x, zero) for x in cols]) if cols else np.zeros((blk.basis.shape[1], 0))
            vals = blk.basis @ C
            q = blk.r1 - blk.r0
            basis[a:z] = vals[:q]
            basis[p + a : p + z] = vals[q:]
            covered += q
            self._finish(blk)
        if covered != p:
            raise AssertionError("row ranges of retired blocks do not tile the new block")
        a, z = self.l0 - r0, self.l1 - r0
        for k, x in enumerate(cols):
            vec = self.explicit.get(x)
            if vec is not None:
                basis[a:z, k] = vec[leaf_rows]
                basis[p + a : p + z, k] = vec[leaf_rows2]
        coef = {x: np.eye(len(cols))[k] for k, x in enumerate(cols)}
        self.active.append(_Tracked(r0, cut, c1, basis, coef))

        # shift the explicit window
        old_lo, old_h = self.lo, self.h
        self.leaf_index += 1
        self._set_window(*self.leaves[self.leaf_index])
        shift = self.lo - old_lo
        keep = old_h - shift
        for x, vec in self.explicit.items():
            new = np.zeros(2 * self.h)
            m = min(keep, self.h)
            new[:m] = vec[shift : shift + m]
            new[self.h : self.h + m] = vec[old_h + shift : old_h + shift + m]
            self.explicit[x] = new

    def finish(self) -> tuple[HodlrMatrix, HodlrMatrix]:
        for blk in self.active:
            self._finish(blk)
        self.active = []
        n_min = self.tree.n_min

        def lower(lo, mid, hi, part):
            entries = [e for e in self.lower_entries.get((lo, hi), []) if e[0] == part]
            if not entries:
                return LowRankBlock.zeros(hi - mid, mid - lo)
            ucols = sorted({e[2] for e in entries})
            index = {cidx: k for k, cidx in enumerate(ucols)}
            U = np.zeros((hi - mid, len(ucols)))
            V = np.zeros((mid - lo, len(ucols)))
            for _, row, col, val in entries:
                U[row - mid, index[col]] += val
            for cidx, k in index.items():
                V[cidx - lo, k] = 1.0
            return LowRankBlock(U, V)

        def build(lo, hi, part):
            mid = PartitionTree.split(lo, hi, n_min)
            if mid is None:
                D = (self.leaf_q1 if part == 0 else self.leaf_q2)[lo]
                return HodlrMatrix.leaf(D, n_min)
            up = self.closed_upper[(lo, mid)][part]
            return HodlrMatrix.node(build(lo, mid, part), build(mid, hi, part), up, lower(lo, mid, hi, part))

        return build(0, self.n, 0), build(0, self.n, 1)


def assemble_q(givens: GivensSequence, tree: PartitionTree, b: int) -> tuple[HodlrMatrix, HodlrMatrix]:
    """HODLR forms of ``Q1 = Q[:n, :n]`` and ``Q2 = Q[n:, :n]``.

    The rotations are replayed on a narrow explicit window of rows around
    the current diagonal leaf; rows above the leaf live in the open
    off-diagonal blocks as (basis, coefficient) pairs, and rotations act
    on coefficients only.  Ranks of the upper blocks are at most ``2b``,
    lower blocks of ``Q1`` at most ``b`` and lower blocks of ``Q2`` are zero.
    """
    n = givens.nrows // 2
    if tree.n != n:
        raise ValueError(f"tree size {tree.n} does not match the rotation sequence (n = {n})")
    asm = _Assembler(n, b, tree)
    step = 0
    for i, j, c, s in givens:
        k = rotation_step(i, j, n)
        if k < step or k >= n:
            raise ValueError("malformed rotation sequence: steps out of order")
        while step < k:
            asm.close_column(step)
            step += 1
            if step == asm.l1 and step < n:
                asm.cross_boundary()
        asm.rotate(i, j, c, s)
    while step < n:
        asm.close_column(step)
        step += 1
        if step == asm.l1 and step < n:
            asm.cross_boundary()
    return asm.finish()


def q1q2t(q1: HodlrMatrix, q2: HodlrMatrix, eps: float) -> HodlrMatrix:
    """Symmetrized formatted product ``Q1 Q2^T``."""
    return symmetrize(hodlr_multiply(q1, q2.T, eps), eps)
