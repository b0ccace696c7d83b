"""QDWH iteration for the matrix sign function and spectral projectors.

For symmetric nonsingular ``A`` the orthogonal polar factor ``U`` equals
``sign(A)`` and ``P = (I - U) / 2`` is the projector onto the invariant
subspace belonging to the negative eigenvalues.  :func:`dense_qdwh` is the
dense reference implementation; :func:`hqdwh` runs the same iteration in
HODLR arithmetic, with the first (QR-based) iterate computed from the
structured QR factorization of ``[sqrt(c0) X0; I]``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, qr, solve_triangular

from .banded import BandedSymmetric, estimate_2norm, estimate_l0
from .fastqr import assemble_q, q1q2t, reduce_stacked
from .hodlr import (
    HodlrMatrix,
    NotPositiveDefiniteError,
    diagnostics,
    from_banded,
    hodlr_cholesky,
    hodlr_multiply,
    linear_combination,
    solve_triangular_right,
    symmetrize,
)

DEFAULT_DELTA = 1e-15
DEFAULT_EPS = 1e-10
L0_CLAMP = 1.0 - 1e-12
SWITCH_C = 100.0  # multi-QR mode keeps QR-based steps while c_k > SWITCH_C
# c grows like l**(-4/3); below this bound it would leave the double range
L_MIN = 1e-200


def default_n_min(b: int) -> int:
    return 250 if b == 1 else 500


def qdwh_params(l: float) -> tuple[float, float, float]:
    """Dynamical weights ``(a, b, c)`` for a lower bound ``l`` on the
    smallest singular value of the current iterate."""
    if not 0.0 < l <= 1.0:
        raise ValueError(f"qdwh_params needs 0 < l <= 1, got {l!r}")
    if l < L_MIN:
        raise ValueError(f"l = {l!r} is below {L_MIN}; the matrix is numerically singular")
    l2 = l * l
    # ordered so that no intermediate underflows for tiny l
    t2 = np.cbrt(l) ** 2
    gamma = np.cbrt(4.0 * (1.0 - l2)) / t2 / t2
    sq = np.sqrt(1.0 + gamma)
    a = sq + 0.5 * np.sqrt(8.0 - 4.0 * gamma + 8.0 * (2.0 - l2) / l / (l * sq))
    b = (a - 1.0) ** 2 / 4.0
    c = a + b - 1.0
    return float(a), float(b), float(c)


def l_update(l: float, a: float, b: float, c: float) -> float:
    """Lower bound for the smallest singular value of the next iterate."""
    return min(1.0, l * (a + b * l * l) / (1.0 + c * l * l))


@dataclass(frozen=True)
class QdwhState:
    k: int
    a: float
    b: float
    c: float
    l: float
    alpha: float
    delta: float


def _schedule(l0: float, alpha: float, delta: float):
    """Yield the states of the iterations that will actually be run."""
    l, k = l0, 0
    while abs(1.0 - l) > delta:
        a, b, c = qdwh_params(l)
        yield QdwhState(k, a, b, c, l, alpha, delta)
        l = l_update(l, a, b, c)
        k += 1


# --------------------------------------------------------------------------
# dense reference
# --------------------------------------------------------------------------


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def dense_qr_step(X: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    n = X.shape[0]
    Q, _ = qr(np.vstack([np.sqrt(c) * X, np.eye(n)]), mode="economic")
    return (b / c) * X + (a - b / c) / np.sqrt(c) * (Q[:n] @ Q[n:].T)


def dense_chol_step(X: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    n = X.shape[0]
    Z = np.eye(n) + c * (X.T @ X)
    try:
        W = cholesky(Z, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("Cholesky of I + c X^T X failed") from exc
    Y = solve_triangular(W, X.T, trans="T").T  # Y W = X
    V = solve_triangular(W, Y.T).T  # V W^T = Y
    return (b / c) * X + (a - b / c) * V


def dense_l0(X0: np.ndarray) -> float:
    """``||X0||_1 / (sqrt(n) cond_1(X0))``, computed exactly."""
    n = X0.shape[0]
    return 1.0 / (np.sqrt(n) * np.linalg.norm(np.linalg.inv(X0), 1))


def dense_qdwh(
    A: np.ndarray,
    delta: float = DEFAULT_DELTA,
    mode: str = "one-qr",
    alpha: float | None = None,
    l0: float | None = None,
) -> tuple[np.ndarray, int]:
    """Dense QDWH for symmetric nonsingular ``A``; returns ``(U, iterations)``.

    ``mode="one-qr"`` takes one QR-based step and then Cholesky-based
    steps; ``mode="multi-qr"`` stays with QR-based steps while ``c_k > 100``.
    """
    if mode not in ("one-qr", "multi-qr"):
        raise ValueError(f"unknown mode {mode!r}")
    A = np.asarray(A, dtype=float)
    if alpha is None:
        alpha = np.linalg.norm(A, 2)
    X = A / alpha
    if l0 is None:
        l0 = dense_l0(X)
    l0 = min(l0, L0_CLAMP)
    iterations = 0
    for st in _schedule(l0, alpha, delta):
        use_qr = st.k == 0 if mode == "one-qr" else st.c > SWITCH_C
        step = dense_qr_step if use_qr else dense_chol_step
        X = _sym(step(X, st.a, st.b, st.c))
        iterations += 1
    return X, iterations


def oracle_projector(A: np.ndarray) -> tuple[np.ndarray, int]:
    """Dense ``Pi_<0(A)`` and the number of negative eigenvalues."""
    w, V = np.linalg.eigh(np.asarray(A, dtype=float))
    neg = V[:, w < 0]
    return neg @ neg.T, int(neg.shape[1])


def error_metrics(U: np.ndarray, Pi: np.ndarray, nu: int | None = None) -> dict:
    """``e_id = ||U^2 - I||_2``, ``e_trace = |tr U - (n - 2 nu)|`` and
    ``e_sp = ||(I - U)/2 - Pi||_2``."""
    U = np.asarray(U, dtype=float)
    Pi = np.asarray(Pi, dtype=float)
    if U.shape != Pi.shape or U.shape[0] != U.shape[1]:
        raise ValueError(f"dimension mismatch: {U.shape} vs {Pi.shape}")
    n = U.shape[0]
    if nu is None:
        nu = int(round(np.trace(Pi)))
    eye = np.eye(n)
    return {
        "e_id": float(np.linalg.norm(U @ U - eye, 2)),
        "e_trace": float(abs(np.trace(U) - (n - 2 * nu))),
        "e_sp": float(np.linalg.norm(0.5 * (eye - U) - Pi, 2)),
    }


# --------------------------------------------------------------------------
# hQDWH
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IterationRecord:
    k: int
    l: float
    a: float
    b: float
    c: float
    max_rank: int
    memory_bytes: int
    wall_ms: float
    kind: str


@dataclass(frozen=True)
class ProjectorResult:
    P: HodlrMatrix
    U: HodlrMatrix
    iterations: int
    alpha: float
    l0: float
    history: list[IterationRecord] = field(default_factory=list)


def _qr_iterate(A: BandedSymmetric, X0: HodlrMatrix, alpha: float, st: QdwhState, n_min: int, eps: float) -> HodlrMatrix:
    cX = A.scaled(np.sqrt(st.c) / alpha)
    givens, _ = reduce_stacked(cX)
    q1, q2 = assemble_q(givens, X0.tree, A.b)
    prod = q1q2t(q1, q2, eps)
    return linear_combination(st.b / st.c, X0, (st.a - st.b / st.c) / np.sqrt(st.c), prod, eps)


def _chol_iterate(X: HodlrMatrix, st: QdwhState, eps: float) -> HodlrMatrix:
    Z = symmetrize(hodlr_multiply(X.T, X, eps), eps).scale(st.c).add_identity(1.0)
    W = hodlr_cholesky(Z, eps)
    Y = solve_triangular_right(X, W, eps)
    V = solve_triangular_right(Y, W, eps, transpose=True)
    return linear_combination(st.b / st.c, X, st.a - st.b / st.c, V, eps)


def hqdwh(
    A: BandedSymmetric,
    n_min: int | None = None,
    eps: float = DEFAULT_EPS,
    delta: float = DEFAULT_DELTA,
    alpha: float | None = None,
    l0: float | None = None,
) -> ProjectorResult:
    """Spectral projector ``Pi_<0(A)`` of a banded symmetric matrix in HODLR form.

    ``alpha`` and ``l0`` default to the banded estimators.  The first
    iterate uses the structured QR factorization, later ones the
    Cholesky-based form; every iterate is symmetrized.
    """
    if n_min is None:
        n_min = default_n_min(A.b)
    if alpha is None:
        alpha = estimate_2norm(A)
    if l0 is None:
        l0 = estimate_l0(A, alpha)
    l0 = min(l0, L0_CLAMP)
    X = from_banded(A.scaled(1.0 / alpha), n_min)
    history = []
    for st in _schedule(l0, alpha, delta):
        t0 = time.perf_counter()
        if st.k == 0:
            X = _qr_iterate(A, X, alpha, st, n_min, eps)
            kind = "qr"
        else:
            X = _chol_iterate(X, st, eps)
            kind = "cholesky"
        X = symmetrize(X, eps)
        wall = 1e3 * (time.perf_counter() - t0)
        diag = diagnostics(X)
        history.append(
            IterationRecord(st.k, st.l, st.a, st.b, st.c, diag["max_offdiag_rank"], diag["memory_bytes"], wall, kind)
        )
    P = X.scale(-0.5).add_identity(0.5)
    return ProjectorResult(P=P, U=X, iterations=len(history), alpha=float(alpha), l0=float(l0), history=history)
