"""HODLR matrices and formatted arithmetic.

A HODLR matrix is split recursively into 2x2 blocks; the two off-diagonal
blocks are kept as low-rank factor pairs ``U @ V.T`` and the recursion
stops at dense diagonal leaves of size at most ``n_min``.  Every operation
that can raise ranks recompresses the affected block with an absolute
singular-value threshold ``eps``.

Upper-triangular factors (Cholesky) reuse :class:`HodlrMatrix` with rank-0
lower blocks and upper-triangular leaves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .banded import BandedSymmetric, SingularMatrixError


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A dense leaf of a HODLR Cholesky factorization was not SPD."""


class TreeMismatchError(ValueError):
    pass


# --------------------------------------------------------------------------
# partition and blocks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionTree:
    """Binary splitting of ``range(n)``; a range is split at
    ``ceil(size / 2)`` until its size is at most ``n_min``."""

    n: int
    n_min: int

    def __post_init__(self):
        if self.n_min < 2:
            raise ValueError("n_min must be at least 2")
        if self.n < 1:
            raise ValueError("n must be positive")

    @staticmethod
    def split(lo: int, hi: int, n_min: int) -> int | None:
        size = hi - lo
        if size <= n_min:
            return None
        return lo + (size + 1) // 2

    def nodes(self):
        """Yield ``(lo, mid, hi)`` for every internal node, parents first."""
        stack = [(0, self.n)]
        while stack:
            lo, hi = stack.pop()
            mid = self.split(lo, hi, self.n_min)
            if mid is None:
                continue
            yield lo, mid, hi
            stack.append((mid, hi))
            stack.append((lo, mid))

    def leaves(self) -> list[tuple[int, int]]:
        out = []
        stack = [(0, self.n)]
        while stack:
            lo, hi = stack.pop()
            mid = self.split(lo, hi, self.n_min)
            if mid is None:
                out.append((lo, hi))
            else:
                stack.append((mid, hi))
                stack.append((lo, mid))
        return out

    @property
    def depth(self) -> int:
        d, size = 0, self.n
        while size > self.n_min:
            size = (size + 1) // 2
            d += 1
        return d


@dataclass(frozen=True, eq=False)
class LowRankBlock:
    """The block ``U @ V.T``."""

    U: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def T(self) -> "LowRankBlock":
        return LowRankBlock(self.V, self.U)

    def to_dense(self) -> np.ndarray:
        return self.U @ self.V.T

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "LowRankBlock":
        return cls(np.zeros((rows, 0)), np.zeros((cols, 0)))


def truncate(block: LowRankBlock, eps: float) -> LowRankBlock:
    """Recompress ``U V^T``, keeping exactly the singular values ``> eps``.

    Both factors are orthogonalized by economy QR, the small core is
    decomposed by SVD, so the dropped part has 2-norm at most ``eps``.
    """
    U, V = block.U, block.V
    if U.shape[1] == 0:
        return block
    qu, ru = np.linalg.qr(U)
    qv, rv = np.linalg.qr(V)
    w, s, zt = np.linalg.svd(ru @ rv.T)
    k = int(np.count_nonzero(s > eps))
    return LowRankBlock(qu @ (w[:, :k] * s[:k]), qv @ zt[:k].T)


def _lr(U, V, eps):
    return truncate(LowRankBlock(U, V), eps)


# --------------------------------------------------------------------------
# the matrix type
# --------------------------------------------------------------------------


class HodlrMatrix:
    """Recursive HODLR node.

    A leaf holds ``dense``; an internal node holds the diagonal children
    ``a11``/``a22`` and the off-diagonal blocks ``upper`` (rows of ``a11``,
    columns of ``a22``) and ``lower``.  Instances are treated as immutable:
    every operation returns a new matrix.
    """

    __slots__ = ("n", "n_min", "dense", "a11", "a22", "upper", "lower")

    def __init__(self, n, n_min, dense=None, a11=None, a22=None, upper=None, lower=None):
        self.n = n
        self.n_min = n_min
        self.dense = dense
        self.a11 = a11
        self.a22 = a22
        self.upper = upper
        self.lower = lower

    @classmethod
    def leaf(cls, D: np.ndarray, n_min: int) -> "HodlrMatrix":
        return cls(D.shape[0], n_min, dense=D)

    @classmethod
    def node(cls, a11, a22, upper, lower) -> "HodlrMatrix":
        return cls(a11.n + a22.n, a11.n_min, a11=a11, a22=a22, upper=upper, lower=lower)

    @property
    def is_leaf(self) -> bool:
        return self.dense is not None

    @property
    def tree(self) -> PartitionTree:
        return PartitionTree(self.n, self.n_min)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.n

    def to_dense(self) -> np.ndarray:
        if self.is_leaf:
            return self.dense.copy()
        n1 = self.a11.n
        out = np.empty((self.n, self.n))
        out[:n1, :n1] = self.a11.to_dense()
        out[n1:, n1:] = self.a22.to_dense()
        out[:n1, n1:] = self.upper.to_dense()
        out[n1:, :n1] = self.lower.to_dense()
        return out

    @property
    def T(self) -> "HodlrMatrix":
        if self.is_leaf:
            return HodlrMatrix.leaf(self.dense.T, self.n_min)
        return HodlrMatrix.node(self.a11.T, self.a22.T, self.lower.T, self.upper.T)

    def scale(self, alpha: float) -> "HodlrMatrix":
        if self.is_leaf:
            return HodlrMatrix.leaf(alpha * self.dense, self.n_min)
        return HodlrMatrix.node(
            self.a11.scale(alpha),
            self.a22.scale(alpha),
            LowRankBlock(alpha * self.upper.U, self.upper.V),
            LowRankBlock(alpha * self.lower.U, self.lower.V),
        )

    def add_identity(self, alpha: float = 1.0) -> "HodlrMatrix":
        """``self + alpha * I``; only the leaves change."""
        if self.is_leaf:
            return HodlrMatrix.leaf(self.dense + alpha * np.eye(self.n), self.n_min)
        return HodlrMatrix.node(self.a11.add_identity(alpha), self.a22.add_identity(alpha), self.upper, self.lower)

    def __matmul__(self, x):
        if isinstance(x, HodlrMatrix):
            raise TypeError("use hodlr_multiply for formatted products")
        return matmat(self, np.asarray(x, dtype=float))

    def trace(self) -> float:
        if self.is_leaf:
            return float(np.trace(self.dense))
        return self.a11.trace() + self.a22.trace()

    def blocks(self, offset: int = 0):
        """Yield ``(r0, c0, LowRankBlock)`` for every off-diagonal block."""
        if self.is_leaf:
            return
        n1 = self.a11.n
        yield offset, offset + n1, self.upper
        yield offset + n1, offset, self.lower
        yield from self.a11.blocks(offset)
        yield from self.a22.blocks(offset + n1)

    def leaves(self, offset: int = 0):
        if self.is_leaf:
            yield offset, self.dense
            return
        yield from self.a11.leaves(offset)
        yield from self.a22.leaves(offset + self.a11.n)

    def __repr__(self) -> str:
        d = diagnostics(self)
        return f"HodlrMatrix(n={self.n}, n_min={self.n_min}, max_rank={d['max_offdiag_rank']})"


def _check_same_tree(M1: HodlrMatrix, M2: HodlrMatrix) -> None:
    if M1.n != M2.n or M1.n_min != M2.n_min:
        raise TreeMismatchError(f"tree mismatch: (n={M1.n}, n_min={M1.n_min}) vs (n={M2.n}, n_min={M2.n_min})")


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------


def _build(lo, hi, n_min, leaf_fn, block_fn):
    mid = PartitionTree.split(lo, hi, n_min)
    if mid is None:
        return HodlrMatrix.leaf(leaf_fn(lo, hi), n_min)
    return HodlrMatrix.node(
        _build(lo, mid, n_min, leaf_fn, block_fn),
        _build(mid, hi, n_min, leaf_fn, block_fn),
        block_fn(lo, mid, mid, hi),
        block_fn(mid, hi, lo, mid),
    )


def from_banded(A: BandedSymmetric, n_min: int) -> HodlrMatrix:
    """Exact HODLR form of a banded matrix; off-diagonal ranks are at most ``b``.

    An upper block only sees the corner ``A[mid-b:mid, mid:mid+b]``.  It is
    stored as ``U = [0; corner]`` and ``V = [I; 0]`` after dropping the
    all-zero corner columns.
    """
    PartitionTree(A.n, n_min)
    b = A.b

    def block(r0, r1, c0, c1):
        if r1 <= c0:  # upper block
            k0 = max(r0, r1 - b)
            k1 = min(c1, c0 + b)
            corner = A.dense_block(k0, r1, c0, k1)
            keep = np.flatnonzero(np.any(corner != 0.0, axis=0))
            U = np.zeros((r1 - r0, keep.size))
            U[k0 - r0 :] = corner[:, keep]
            V = np.zeros((c1 - c0, keep.size))
            V[keep, np.arange(keep.size)] = 1.0
            return LowRankBlock(U, V)
        return block(c0, c1, r0, r1).T

    return _build(0, A.n, n_min, lambda lo, hi: A.dense_block(lo, hi, lo, hi), block)


def from_dense(D: np.ndarray, n_min: int, eps: float = 0.0) -> HodlrMatrix:
    """Compress a dense matrix by truncated SVD of every off-diagonal block."""
    D = np.asarray(D, dtype=float)

    def block(r0, r1, c0, c1):
        w, s, zt = np.linalg.svd(D[r0:r1, c0:c1], full_matrices=False)
        k = int(np.count_nonzero(s > eps))
        return LowRankBlock(w[:, :k] * s[:k], zt[:k].T)

    return _build(0, D.shape[0], n_min, lambda lo, hi: D[lo:hi, lo:hi].copy(), block)


def identity(n: int, n_min: int) -> HodlrMatrix:
    return _build(0, n, n_min, lambda lo, hi: np.eye(hi - lo), lambda r0, r1, c0, c1: LowRankBlock.zeros(r1 - r0, c1 - c0))


def zeros(n: int, n_min: int) -> HodlrMatrix:
    return identity(n, n_min).scale(0.0)


# --------------------------------------------------------------------------
# products with dense blocks of vectors (exact)
# --------------------------------------------------------------------------


def matmat(M: HodlrMatrix, X: np.ndarray) -> np.ndarray:
    """``M @ X`` for a dense vector or block of vectors."""
    if M.is_leaf:
        return M.dense @ X
    n1 = M.a11.n
    x1, x2 = X[:n1], X[n1:]
    y1 = matmat(M.a11, x1) + M.upper.U @ (M.upper.V.T @ x2)
    y2 = M.lower.U @ (M.lower.V.T @ x1) + matmat(M.a22, x2)
    return np.concatenate([y1, y2])


def matmat_t(M: HodlrMatrix, X: np.ndarray) -> np.ndarray:
    """``M.T @ X``."""
    if M.is_leaf:
        return M.dense.T @ X
    n1 = M.a11.n
    x1, x2 = X[:n1], X[n1:]
    y1 = matmat_t(M.a11, x1) + M.lower.V @ (M.lower.U.T @ x2)
    y2 = M.upper.V @ (M.upper.U.T @ x1) + matmat_t(M.a22, x2)
    return np.concatenate([y1, y2])


def hodlr_matvec(M: HodlrMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != M.n:
        raise ValueError(f"dimension mismatch: M is {M.n}x{M.n}, x has {x.shape[0]} rows")
    return matmat(M, x)


# --------------------------------------------------------------------------
# formatted addition and multiplication
# --------------------------------------------------------------------------


def add_lowrank(M: HodlrMatrix, U: np.ndarray, V: np.ndarray, eps: float) -> HodlrMatrix:
    """``M + U V^T`` with recompression of every touched off-diagonal block."""
    if U.shape[1] == 0:
        return M
    if M.is_leaf:
        return HodlrMatrix.leaf(M.dense + U @ V.T, M.n_min)
    n1 = M.a11.n
    U1, U2, V1, V2 = U[:n1], U[n1:], V[:n1], V[n1:]
    return HodlrMatrix.node(
        add_lowrank(M.a11, U1, V1, eps),
        add_lowrank(M.a22, U2, V2, eps),
        _lr(np.hstack([M.upper.U, U1]), np.hstack([M.upper.V, V2]), eps),
        _lr(np.hstack([M.lower.U, U2]), np.hstack([M.lower.V, V1]), eps),
    )


def hodlr_add(M1: HodlrMatrix, M2: HodlrMatrix, eps: float) -> HodlrMatrix:
    """``M1 + M2``: leaves add densely, off-diagonal factors are
    concatenated and truncated."""
    _check_same_tree(M1, M2)
    if M1.is_leaf:
        return HodlrMatrix.leaf(M1.dense + M2.dense, M1.n_min)
    return HodlrMatrix.node(
        hodlr_add(M1.a11, M2.a11, eps),
        hodlr_add(M1.a22, M2.a22, eps),
        _lr(np.hstack([M1.upper.U, M2.upper.U]), np.hstack([M1.upper.V, M2.upper.V]), eps),
        _lr(np.hstack([M1.lower.U, M2.lower.U]), np.hstack([M1.lower.V, M2.lower.V]), eps),
    )


def linear_combination(alpha: float, M1: HodlrMatrix, beta: float, M2: HodlrMatrix, eps: float) -> HodlrMatrix:
    return hodlr_add(M1.scale(alpha), M2.scale(beta), eps)


def symmetrize(M: HodlrMatrix, eps: float) -> HodlrMatrix:
    """``(M + M^T) / 2``."""
    return hodlr_add(M, M.T, eps).scale(0.5)


def hodlr_multiply(A: HodlrMatrix, B: HodlrMatrix, eps: float) -> HodlrMatrix:
    """Formatted product ``A B``; every low-rank accumulation is
    recompressed immediately."""
    _check_same_tree(A, B)
    if A.is_leaf:
        return HodlrMatrix.leaf(A.dense @ B.dense, A.n_min)
    a12, a21, b12, b21 = A.upper, A.lower, B.upper, B.lower
    c11 = hodlr_multiply(A.a11, B.a11, eps)
    c11 = add_lowrank(c11, a12.U @ (a12.V.T @ b21.U), b21.V, eps)
    c22 = hodlr_multiply(A.a22, B.a22, eps)
    c22 = add_lowrank(c22, a21.U @ (a21.V.T @ b12.U), b12.V, eps)
    # A11 B12 + A12 B22
    c12 = _lr(
        np.hstack([matmat(A.a11, b12.U), a12.U]),
        np.hstack([b12.V, matmat_t(B.a22, a12.V)]),
        eps,
    )
    # A21 B11 + A22 B21
    c21 = _lr(
        np.hstack([a21.U, matmat(A.a22, b21.U)]),
        np.hstack([matmat_t(B.a11, a21.V), b21.V]),
        eps,
    )
    return HodlrMatrix.node(c11, c22, c12, c21)


# --------------------------------------------------------------------------
# Cholesky and triangular solves
# --------------------------------------------------------------------------


def hodlr_cholesky(M: HodlrMatrix, eps: float) -> HodlrMatrix:
    """Upper-triangular ``W`` with ``W^T W ~= M`` for symmetric positive
    definite ``M``; only the upper off-diagonal blocks of ``M`` are read."""
    if M.is_leaf:
        try:
            L = np.linalg.cholesky(M.dense)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("HODLR Cholesky: leaf block is not positive definite") from exc
        return HodlrMatrix.leaf(np.ascontiguousarray(L.T), M.n_min)
    w11 = hodlr_cholesky(M.a11, eps)
    # W12 = W11^{-T} M12
    Z = solve_upper_t(w11, M.upper.U)
    V = M.upper.V
    w12 = LowRankBlock(Z, V)
    # M22 - W12^T W12 = M22 - V (Z^T Z) V^T
    s22 = add_lowrank(M.a22, -V @ (Z.T @ Z), V, eps)
    w22 = hodlr_cholesky(s22, eps)
    return HodlrMatrix.node(w11, w22, w12, LowRankBlock.zeros(M.a22.n, M.a11.n))


def _check_diag(D):
    if np.any(np.diag(D) == 0.0):
        raise SingularMatrixError("singular triangular block")


def solve_upper(W: HodlrMatrix, B: np.ndarray) -> np.ndarray:
    """``W^{-1} B`` for upper-triangular HODLR ``W`` and dense ``B``."""
    if W.is_leaf:
        _check_diag(W.dense)
        return solve_triangular(W.dense, B, lower=False)
    n1 = W.a11.n
    x2 = solve_upper(W.a22, B[n1:])
    x1 = solve_upper(W.a11, B[:n1] - W.upper.U @ (W.upper.V.T @ x2))
    return np.concatenate([x1, x2])


def solve_upper_t(W: HodlrMatrix, B: np.ndarray) -> np.ndarray:
    """``W^{-T} B`` (forward substitution with the lower factor ``W^T``)."""
    if W.is_leaf:
        _check_diag(W.dense)
        return solve_triangular(W.dense, B, lower=False, trans="T")
    n1 = W.a11.n
    x1 = solve_upper_t(W.a11, B[:n1])
    x2 = solve_upper_t(W.a22, B[n1:] - W.upper.V @ (W.upper.U.T @ x1))
    return np.concatenate([x1, x2])


def solve_triangular_right(B: HodlrMatrix, W: HodlrMatrix, eps: float, transpose: bool = False) -> HodlrMatrix:
    """Solve ``Y W = B`` (or ``Y W^T = B`` with ``transpose=True``) for
    ``Y`` in HODLR format, ``W`` upper triangular."""
    _check_same_tree(B, W)
    if transpose:
        return _solve_right_t(B, W, eps)
    return _solve_right(B, W, eps)


def _solve_right(B, W, eps):
    if B.is_leaf:
        _check_diag(W.dense)
        # Y W = B  <=>  W^T Y^T = B^T
        return HodlrMatrix.leaf(solve_triangular(W.dense, B.dense.T, lower=False, trans="T").T, B.n_min)
    wu = W.upper
    y11 = _solve_right(B.a11, W.a11, eps)
    # Y21 W11 = B21
    y21 = LowRankBlock(B.lower.U, solve_upper_t(W.a11, B.lower.V))
    # Y12 W22 = B12 - Y11 W12
    rhs = _lr(np.hstack([B.upper.U, -matmat(y11, wu.U)]), np.hstack([B.upper.V, wu.V]), eps)
    y12 = LowRankBlock(rhs.U, solve_upper_t(W.a22, rhs.V))
    # Y22 W22 = B22 - Y21 W12
    b22 = add_lowrank(B.a22, -y21.U @ (y21.V.T @ wu.U), wu.V, eps)
    y22 = _solve_right(b22, W.a22, eps)
    return HodlrMatrix.node(y11, y22, y12, y21)


def _solve_right_t(B, W, eps):
    if B.is_leaf:
        _check_diag(W.dense)
        # Y W^T = B  <=>  W Y^T = B^T
        return HodlrMatrix.leaf(solve_triangular(W.dense, B.dense.T, lower=False).T, B.n_min)
    wu = W.upper  # W12 = Uw Vw^T, so W12^T = Vw Uw^T
    # Y12 W22^T = B12
    y12 = LowRankBlock(B.upper.U, solve_upper(W.a22, B.upper.V))
    y22 = _solve_right_t(B.a22, W.a22, eps)
    # Y11 W11^T = B11 - Y12 W12^T
    b11 = add_lowrank(B.a11, -y12.U @ (y12.V.T @ wu.V), wu.U, eps)
    y11 = _solve_right_t(b11, W.a11, eps)
    # Y21 W11^T = B21 - Y22 W12^T
    rhs = _lr(np.hstack([B.lower.U, -matmat(y22, wu.V)]), np.hstack([B.lower.V, wu.U]), eps)
    y21 = LowRankBlock(rhs.U, solve_upper(W.a11, rhs.V))
    return HodlrMatrix.node(y11, y22, y12, y21)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def diagnostics(M: HodlrMatrix) -> dict:
    """Largest stored off-diagonal rank and storage in bytes (8 per scalar)."""
    max_rank = 0
    entries = 0
    for _, D in M.leaves():
        entries += D.size
    for _, _, blk in M.blocks():
        max_rank = max(max_rank, blk.rank)
        entries += blk.rank * (blk.U.shape[0] + blk.V.shape[0])
    return {"max_offdiag_rank": max_rank, "memory_bytes": 8 * entries}
