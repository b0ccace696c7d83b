"""Symmetric banded matrices in compact lower-band storage.

Besides the storage type this module holds the small kernels that the
rest of the package builds on: the Givens rotation convention, the
banded matrix-vector product, the synthetic test-matrix construction and
the cheap estimates of ``||A||_2`` and of a lower bound on
``sigma_min(A / alpha)`` used to start QDWH.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numba
import numpy as np
from scipy.linalg import lapack


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a factorization meets an exactly zero pivot."""


# --------------------------------------------------------------------------
# storage
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BandedSymmetric:
    """Symmetric ``n x n`` matrix with ``b`` sub/super-diagonals.

    ``bands[d, i]`` holds ``A[i + d, i]`` for ``0 <= d <= b`` and
    ``i < n - d``; the trailing ``d`` slots of row ``d`` are kept at zero.
    This is the LAPACK lower band layout.
    """

    bands: np.ndarray

    def __post_init__(self):
        bands = np.array(self.bands, dtype=float)
        if bands.ndim != 2:
            raise ValueError("bands must be a 2-d array of shape (b + 1, n)")
        nb, n = bands.shape
        b = nb - 1
        if n < 2:
            raise ValueError("need n >= 2")
        if not 1 <= b < n:
            raise ValueError(f"bandwidth must satisfy 1 <= b < n, got b={b}, n={n}")
        if not np.all(np.isfinite(bands)):
            raise ValueError("band entries must be finite")
        for d in range(1, nb):
            bands[d, n - d:] = 0.0
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)

    @property
    def n(self) -> int:
        return self.bands.shape[1]

    @property
    def b(self) -> int:
        return self.bands.shape[0] - 1

    def diagonal(self, d: int = 0) -> np.ndarray:
        """The ``n - d`` entries ``A[i + d, i]``."""
        return self.bands[d, : self.n - d]

    @classmethod
    def from_diagonals(cls, diagonals: Sequence[Sequence[float]]) -> "BandedSymmetric":
        n = len(diagonals[0])
        bands = np.zeros((len(diagonals), n))
        for d, diag in enumerate(diagonals):
            if len(diag) != n - d:
                raise ValueError(f"diagonal {d} must have {n - d} entries, got {len(diag)}")
            bands[d, : n - d] = diag
        return cls(bands)

    @classmethod
    def from_dense(cls, A: np.ndarray, b: int | None = None) -> "BandedSymmetric":
        """Lower band of a dense symmetric matrix; ``b`` defaults to the
        smallest bandwidth (at least 1) that holds every nonzero."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        if b is None:
            rows, cols = np.nonzero(np.tril(A))
            b = max(1, int(np.max(rows - cols, initial=0)))
        bands = np.zeros((b + 1, n))
        for d in range(b + 1):
            bands[d, : n - d] = np.diagonal(A, -d)
        return cls(bands)

    def to_dense(self) -> np.ndarray:
        n = self.n
        A = np.diag(self.bands[0].copy())
        for d in range(1, self.b + 1):
            off = self.bands[d, : n - d]
            A += np.diag(off, -d) + np.diag(off, d)
        return A

    def dense_block(self, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
        """Dense copy of ``A[r0:r1, c0:c1]`` without forming the full matrix."""
        out = np.zeros((r1 - r0, c1 - c0))
        for d in range(self.b + 1):
            # lower diagonal d: entries (j + d, j)
            j = np.arange(max(c0, r0 - d), min(c1, r1 - d, self.n - d))
            out[j + d - r0, j - c0] = self.bands[d, j]
            if d:
                # upper diagonal d: entries (i, i + d)
                i = np.arange(max(r0, c0 - d), min(r1, c1 - d, self.n - d))
                out[i - r0, i + d - c0] = self.bands[d, i]
        return out

    def scaled(self, alpha: float) -> "BandedSymmetric":
        return BandedSymmetric(self.bands * alpha)

    def shifted(self, mu: float) -> "BandedSymmetric":
        """``A - mu * I``."""
        bands = self.bands.copy()
        bands[0] -= mu
        return BandedSymmetric(bands)

    def norm1(self) -> float:
        """Exact 1-norm (max absolute column sum)."""
        n = self.n
        col = np.abs(self.bands[0]).copy()
        for d in range(1, self.b + 1):
            off = np.abs(self.bands[d, : n - d])
            col[: n - d] += off  # below the diagonal in column j
            col[d:] += off  # above the diagonal in column j + d
        return float(col.max())

    def __repr__(self) -> str:
        return f"BandedSymmetric(n={self.n}, b={self.b})"


def band_matvec(A: BandedSymmetric, x: np.ndarray) -> np.ndarray:
    """``A @ x`` in O(bn); ``x`` may be a vector or an ``n x k`` block."""
    x = np.asarray(x, dtype=float)
    n = A.n
    if x.shape[0] != n:
        raise ValueError(f"dimension mismatch: A is {n}x{n}, x has {x.shape[0]} rows")
    bands = A.bands if x.ndim == 1 else A.bands[:, :, None]
    y = bands[0] * x
    for d in range(1, A.b + 1):
        off = bands[d, : n - d]
        y[d:] += off * x[: n - d]
        y[: n - d] += off * x[d:]
    return y


# --------------------------------------------------------------------------
# Givens rotations
# --------------------------------------------------------------------------


def make_givens(f: float, g: float) -> tuple[float, float, float]:
    """Rotation ``(c, s, r)`` with ``c*f + s*g = r`` and ``-s*f + c*g = 0``.

    ``r`` carries the sign of ``f``; ``g == 0`` gives the identity and
    ``f == 0`` a pure swap, so the result is a deterministic function of
    its inputs.
    """
    if g == 0.0:
        return 1.0, 0.0, f
    if f == 0.0:
        return 0.0, 1.0, g
    # scaling first keeps c, s accurate when f and g are subnormal
    m = max(abs(f), abs(g))
    fs, gs = f / m, g / m
    rs = math.copysign(math.hypot(fs, gs), f)
    return fs / rs, gs / rs, rs * m


class GivensRotation(NamedTuple):
    """Rotation acting on rows ``i`` and ``j``.

    Applied to a matrix from the left it maps ``(row_i, row_j)`` to
    ``(c*row_i + s*row_j, -s*row_i + c*row_j)``; the matching update of an
    orthogonal factor mixes columns ``i`` and ``j`` the same way.
    """

    i: int
    j: int
    c: float
    s: float


GIVENS_DTYPE = np.dtype([("i", "<u4"), ("j", "<u4"), ("c", "<f8"), ("s", "<f8")])


@dataclass(frozen=True, eq=False)
class GivensSequence:
    """Ordered rotations acting on a ``nrows x ...`` stacked matrix."""

    records: np.ndarray
    nrows: int

    def __post_init__(self):
        records = np.asarray(self.records, dtype=GIVENS_DTYPE)
        if records.size and (records["i"].max() >= self.nrows or records["j"].max() >= self.nrows):
            raise ValueError("rotation index out of range")
        object.__setattr__(self, "records", records)

    @classmethod
    def from_rotations(cls, rotations: Sequence[tuple], nrows: int) -> "GivensSequence":
        return cls(np.array([tuple(r) for r in rotations], dtype=GIVENS_DTYPE), nrows)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[GivensRotation]:
        for rec in self.records:
            yield GivensRotation(int(rec["i"]), int(rec["j"]), float(rec["c"]), float(rec["s"]))

    def __getitem__(self, k: int) -> GivensRotation:
        rec = self.records[k]
        return GivensRotation(int(rec["i"]), int(rec["j"]), float(rec["c"]), float(rec["s"]))

    def apply_rows(self, M: np.ndarray) -> np.ndarray:
        """Replay every rotation from the left: ``G_m^T ... G_1^T M``."""
        M = np.array(M, dtype=float)
        for i, j, c, s in self:
            ri = M[i].copy()
            M[i] = c * ri + s * M[j]
            M[j] = -s * ri + c * M[j]
        return M

    def apply_columns(self, Q: np.ndarray) -> np.ndarray:
        """Accumulate into an orthogonal factor: ``Q G_1 ... G_m``."""
        Q = np.array(Q, dtype=float)
        for i, j, c, s in self:
            qi = Q[:, i].copy()
            Q[:, i] = c * qi + s * Q[:, j]
            Q[:, j] = -s * qi + c * Q[:, j]
        return Q

    def to_bytes(self) -> bytes:
        """Little-endian records ``i:u32, j:u32, c:f64, s:f64``."""
        return self.records.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, nrows: int) -> "GivensSequence":
        return cls(np.frombuffer(data, dtype=GIVENS_DTYPE).copy(), nrows)


# --------------------------------------------------------------------------
# synthetic test matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumSpec:
    eigenvalues: np.ndarray
    gap: float
    distribution: str = "custom"

    @classmethod
    def uniform(cls, n: int, gap: float) -> "SpectrumSpec":
        """``floor(n/2)`` eigenvalues evenly spread over ``[-1, -gap]`` and
        the rest over ``[gap, 1]``."""
        if not 0 < gap < 1:
            raise ValueError("gap must lie in (0, 1)")
        nu = n // 2
        lam = np.concatenate([np.linspace(-1.0, -gap, nu), np.linspace(gap, 1.0, n - nu)])
        return cls(lam, gap, "uniform-two-sided")

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def nu(self) -> int:
        """Number of negative eigenvalues."""
        return int(np.count_nonzero(np.asarray(self.eigenvalues) < 0))


@numba.njit(cache=True)
def _givens_nb(f, g):
    if g == 0.0:
        return 1.0, 0.0
    if f == 0.0:
        return 0.0, 1.0
    m = max(abs(f), abs(g))
    fs, gs = f / m, g / m
    rs = math.copysign(math.hypot(fs, gs), f)
    return fs / rs, gs / rs


@numba.njit(cache=True)
def _similarity(work, p, c, s):
    """``A <- G^T A G`` in the plane ``(p, p + 1)`` on lower band storage
    with one spare diagonal for the bulge."""
    w = work.shape[0] - 1
    n = work.shape[1]
    q = p + 1
    app = work[0, p]
    aqq = work[0, q]
    apq = work[1, p]
    work[0, p] = c * c * app + 2.0 * c * s * apq + s * s * aqq
    work[0, q] = s * s * app - 2.0 * c * s * apq + c * c * aqq
    work[1, p] = c * s * (aqq - app) + (c * c - s * s) * apq
    for j in range(max(0, p - w), p):
        x = work[p - j, j]
        y = work[q - j, j] if q - j <= w else 0.0
        work[p - j, j] = c * x + s * y
        if q - j <= w:
            work[q - j, j] = -s * x + c * y
    for j in range(q + 1, min(n, q + w + 1)):
        x = work[j - p, p] if j - p <= w else 0.0
        y = work[j - q, q]
        if j - p <= w:
            work[j - p, p] = c * x + s * y
        work[j - q, q] = -s * x + c * y


@numba.njit(cache=True)
def _reduce_diagonal(work, b):
    n = work.shape[1]
    for i in range(n - 1, 0, -1):
        c, s = _givens_nb(work[0, i], 1.0)
        _similarity(work, i - 1, c, s)
        row = i + b
        col = i - 1
        while row <= n - 1:
            c, s = _givens_nb(work[row - 1 - col, col], work[row - col, col])
            _similarity(work, row - 1, c, s)
            work[row - col, col] = 0.0
            col = row - 1
            row += b


def synth_banded(spec: SpectrumSpec, b: int, seed: int | None = None) -> BandedSymmetric:
    """Banded symmetric matrix with prescribed eigenvalues.

    Starts from ``diag(eigenvalues)`` (ascending, or shuffled when ``seed``
    is given) and, for ``i = n-1, ..., 1``, applies the similarity rotation
    in the plane ``(i-1, i)`` that annihilates the second entry of
    ``[a_ii, 1]``.  Whenever that pushes an entry outside the band it is
    chased to the bottom-right corner with adjacent-plane rotations.
    """
    lam = np.asarray(spec.eigenvalues, dtype=float)
    n = lam.size
    if n < 2:
        raise ValueError("need n >= 2")
    if not 1 <= b < n:
        raise ValueError(f"bandwidth must satisfy 1 <= b < n, got b={b}, n={n}")
    if np.any(lam == 0.0):
        raise ValueError("eigenvalues must be nonzero (the matrix has to be nonsingular)")
    lam = np.sort(lam)
    if seed is not None:
        lam = np.random.default_rng(seed).permutation(lam)
    work = np.zeros((b + 2, n))
    work[0] = lam
    _reduce_diagonal(work, b)
    if np.any(work[b + 1] != 0.0):
        raise AssertionError("bulge left outside the band")
    return BandedSymmetric(work[: b + 1])


# --------------------------------------------------------------------------
# parameter estimation
# --------------------------------------------------------------------------


def estimate_2norm(A: BandedSymmetric, tol: float = 1e-2, maxiter: int = 100) -> float:
    """Power-method estimate of ``||A||_2`` from a fixed all-ones start."""
    x = np.full(A.n, 1.0 / math.sqrt(A.n))
    est = 0.0
    for _ in range(maxiter):
        y = band_matvec(A, x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        if abs(new - est) <= tol * new:
            return new
        est = new
        x = y / new
    return est


class BandedLU:
    """LU factorization with partial pivoting of a banded matrix (LAPACK gbtrf)."""

    def __init__(self, A: BandedSymmetric):
        n, b = A.n, A.b
        ab = np.zeros((3 * b + 1, n))
        # ab[kl + ku + i - j, j] = A[i, j] with kl = ku = b
        for d in range(b + 1):
            ab[2 * b + d, : n - d] = A.bands[d, : n - d]
            if d:
                ab[2 * b - d, d:] = A.bands[d, : n - d]
        lu, piv, info = lapack.dgbtrf(ab, b, b)
        if info > 0:
            raise SingularMatrixError(f"zero pivot at position {info} in banded LU")
        if info < 0:
            raise ValueError(f"dgbtrf: illegal argument {-info}")
        self._lu, self._piv, self._b = lu, piv, b

    def solve(self, rhs: np.ndarray, trans: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x, info = lapack.dgbtrs(self._lu, self._b, self._b, rhs.reshape(len(rhs), -1), self._piv, trans=int(trans))
        if info != 0:
            raise ValueError(f"dgbtrs failed with info={info}")
        return x.reshape(rhs.shape)


def inverse_norm1_estimate(lu: BandedLU, n: int, maxiter: int = 5) -> float:
    """Hager's estimate of ``||B^{-1}||_1`` from a factorization of ``B``.

    Includes Higham's alternating-sign test vector, which guards against
    the classic failure cases of the plain power iteration.
    """
    x = np.full(n, 1.0 / n)
    est = 0.0
    for _ in range(maxiter):
        y = lu.solve(x)
        est = float(np.abs(y).sum())
        xi = np.where(y >= 0, 1.0, -1.0)
        z = lu.solve(xi, trans=True)
        j = int(np.argmax(np.abs(z)))
        if abs(z[j]) <= z @ x:
            break
        x = np.zeros(n)
        x[j] = 1.0
    alt = np.array([(-1) ** i * (1.0 + i / max(n - 1, 1)) for i in range(n)])
    est = max(est, 2.0 * float(np.abs(lu.solve(alt)).sum()) / (3.0 * n))
    return est


def estimate_l0(A: BandedSymmetric, alpha: float) -> float:
    """Lower bound ``||A/alpha||_1 / (sqrt(n) * cond_1(A/alpha))`` on
    ``sigma_min(A / alpha)``, with the condition number estimated from
    banded LU solves."""
    X = A.scaled(1.0 / alpha)
    norm1 = X.norm1()
    cond = norm1 * inverse_norm1_estimate(BandedLU(X), X.n)
    return norm1 / (math.sqrt(X.n) * cond)


# --------------------------------------------------------------------------
# SBM text format
# --------------------------------------------------------------------------


def write_sbm(A: BandedSymmetric, path: str | os.PathLike) -> None:
    """``SBM <n> <b>`` followed by one line per stored diagonal."""
    lines = [f"SBM {A.n} {A.b}"]
    for d in range(A.b + 1):
        lines.append(" ".join(repr(float(v)) for v in A.diagonal(d)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sbm(path: str | os.PathLike) -> BandedSymmetric:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("empty SBM file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "SBM":
        raise ValueError(f"bad SBM header: {lines[0]!r}")
    n, b = int(header[1]), int(header[2])
    if len(lines) < b + 2:
        raise ValueError(f"expected {b + 1} diagonal lines, found {len(lines) - 1}")
    diagonals = [[float(tok) for tok in lines[1 + d].split()] for d in range(b + 1)]
    if len(diagonals[0]) != n:
        raise ValueError(f"main diagonal has {len(diagonals[0])} entries, header says n={n}")
    return BandedSymmetric.from_diagonals(diagonals)
