"""Zolotarev rational approximation of ``sign`` and a priori rank bounds.

The Zolotarev function ``s_m`` of type ``(2m-1, 2m)`` is the best
rational approximation of ``sign(x)`` on ``[-R, -1] U [1, R]``.  Its error
controls how fast the singular values of off-diagonal blocks of a
spectral projector decay, which :func:`verify_decay` checks on computed
projectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .hodlr import PartitionTree

_AGM_TOL = 1e-16


def _agm_K(kprime: float) -> float:
    """``K`` from the complementary modulus, ``K = pi / (2 agm(1, k'))``."""
    a, b = 1.0, kprime
    for _ in range(64):
        if abs(a - b) <= _AGM_TOL * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (2.0 * a)


def elliptic_K(kappa: float) -> float:
    """Complete elliptic integral of the first kind ``K(kappa)``."""
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"elliptic_K needs 0 <= kappa < 1, got {kappa!r}")
    return _agm_K(math.sqrt((1.0 - kappa) * (1.0 + kappa)))


def _landen_phi(u: float, kappa: float, kprime: float) -> float:
    """Amplitude ``phi`` with ``sn = sin(phi)``, ``cn = cos(phi)``
    (descending Landen / AGM scheme)."""
    a, b, c = [1.0], [kprime], [kappa]
    while abs(c[-1]) > _AGM_TOL and len(a) < 64:
        a.append(0.5 * (a[-1] + b[-1]))
        c.append(0.5 * (a[-2] - b[-1]))
        b.append(math.sqrt(a[-2] * b[-1]))
    N = len(a) - 1
    phi = (2.0**N) * a[N] * u
    for k in range(N, 0, -1):
        phi = 0.5 * (phi + math.asin(c[k] / a[k] * math.sin(phi)))
    return phi


def jacobi_sn(u: float, kappa: float) -> float:
    """Jacobi elliptic function ``sn(u; kappa)``."""
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"jacobi_sn needs 0 <= kappa < 1, got {kappa!r}")
    return math.sin(_landen_phi(u, kappa, math.sqrt((1.0 - kappa) * (1.0 + kappa))))


def jacobi_cn(u: float, kappa: float) -> float:
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"jacobi_cn needs 0 <= kappa < 1, got {kappa!r}")
    return math.cos(_landen_phi(u, kappa, math.sqrt((1.0 - kappa) * (1.0 + kappa))))


@dataclass(frozen=True)
class ZolotarevSpec:
    """Zolotarev function ``s_m(x) = C x prod(x^2 + c_2i) / prod(x^2 + c_2i-1)``.

    ``coeffs`` holds ``c_1 .. c_2m``; ``c_2m`` is infinite (its argument is
    the quarter period) and does not enter ``s_m``.
    """

    m: int
    R: float
    kappa: float
    coeffs: np.ndarray
    C: float
    E_lower: float
    E_upper: float
    log_rho: float = field(repr=False)

    def unscaled(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x2 = x * x
        out = x.copy()
        for i in range(self.m):
            out = out / (x2 + self.coeffs[2 * i])
            if i < self.m - 1:
                out = out * (x2 + self.coeffs[2 * i + 1])
        return out

    def __call__(self, x) -> np.ndarray:
        return self.C * self.unscaled(x)

    def measured_error(self, grid: int = 20001) -> float:
        """Sup-norm of ``sign(x) - s_m(x)`` on ``[1, R]`` (the function is
        odd), from a log-spaced grid refined around the extrema."""
        x = np.geomspace(1.0, self.R, grid)
        err = np.abs(1.0 - self(x))
        best = float(err.max())
        # local extrema of |1 - s| on the grid, refined by a bounded search
        interior = np.flatnonzero((err[1:-1] >= err[:-2]) & (err[1:-1] >= err[2:])) + 1
        for k in interior:
            res = minimize_scalar(
                lambda t: -abs(1.0 - float(self(np.exp(t)))),
                bounds=(math.log(x[k - 1]), math.log(x[k + 1])),
                method="bounded",
                options={"xatol": 1e-12},
            )
            best = max(best, -float(res.fun))
        return best


def _log_rho(R: float) -> float:
    sq = math.sqrt(R)
    mu = ((sq - 1.0) / (sq + 1.0)) ** 2
    mu_prime = math.sqrt((1.0 - mu) * (1.0 + mu))
    # K(mu') has complementary modulus mu; K(mu) has complementary modulus mu'
    return -math.pi * _agm_K(mu) / (2.0 * _agm_K(mu_prime))


def zolotarev(m: int, R: float, grid: int = 20001) -> ZolotarevSpec:
    """Coefficients, scaling constant and error bounds of ``s_m`` on
    ``[-R, -1] U [1, R]``.

    ``C`` balances the deviation above and below 1 on ``[1, R]``:
    ``C = 2 / (max s + min s)`` with ``s`` the unscaled function; the
    extrema are taken on a log-spaced grid and refined locally.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not R > 1.0:
        raise ValueError("R must exceed 1")
    kprime = 1.0 / R
    kappa = math.sqrt((1.0 - kprime) * (1.0 + kprime))
    K = _agm_K(kprime)
    coeffs = np.empty(2 * m)
    for i in range(1, 2 * m + 1):
        if i == 2 * m:
            coeffs[i - 1] = np.inf
            continue
        phi = _landen_phi(i * K / (2 * m), kappa, kprime)
        coeffs[i - 1] = math.tan(phi) ** 2
    spec = ZolotarevSpec(m, float(R), kappa, coeffs, 1.0, 0.0, 0.0, 0.0)
    hi, lo = _extrema(spec, grid)
    C = 2.0 / (hi + lo)
    lr = _log_rho(R)
    lrm = m * lr
    E_upper = 4.0 * math.exp(lrm)
    E_lower = 4.0 * math.exp(lrm - math.log1p(math.exp(lrm)))
    return ZolotarevSpec(m, float(R), kappa, coeffs, C, E_lower, E_upper, lr)


def _extrema(spec: ZolotarevSpec, grid: int) -> tuple[float, float]:
    """Max and min of the unscaled function on ``[1, R]``."""
    x = np.geomspace(1.0, spec.R, grid)
    s = spec.unscaled(x)
    hi, lo = float(s.max()), float(s.min())
    f = lambda t: float(spec.unscaled(np.exp(t)))  # noqa: E731
    for k in range(1, grid - 1):
        if s[k] >= s[k - 1] and s[k] >= s[k + 1]:
            res = minimize_scalar(lambda t: -f(t), bounds=(math.log(x[k - 1]), math.log(x[k + 1])), method="bounded", options={"xatol": 1e-12})
            hi = max(hi, -float(res.fun))
        if s[k] <= s[k - 1] and s[k] <= s[k + 1]:
            res = minimize_scalar(f, bounds=(math.log(x[k - 1]), math.log(x[k + 1])), method="bounded", options={"xatol": 1e-12})
            lo = min(lo, float(res.fun))
    return hi, lo


def simplified_bound(m: int, gap: float) -> float:
    """``4 exp(-pi^2 m / (4 log(4 / gap^(1/4) + 2)))``, an upper bound on ``E_m``."""
    return 4.0 * math.exp(-math.pi**2 * m / (4.0 * math.log(4.0 / gap**0.25 + 2.0)))


def sv_decay_bound(m: int, b: int, gap: float) -> float:
    """Bound on the ``(2mb+1)``-th singular value of any off-diagonal block
    of ``Pi_<0(A)`` for ``b``-banded ``A`` with spectrum in
    ``[-1, -gap] U [gap, 1]``."""
    if m < 1 or b < 1:
        raise ValueError("m and b must be >= 1")
    if not 0.0 < gap < 1.0:
        raise ValueError("gap must lie in (0, 1)")
    return 0.5 * simplified_bound(m, gap)


@dataclass(frozen=True)
class DecayReport:
    checks: int
    worst_margin: float
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures


def verify_decay(P: np.ndarray, b: int, gap: float, n_min: int = 32, slack: float = 1e-6, floor: float | None = None) -> DecayReport:
    """Check ``sigma_{2mb+1}(block) <= sv_decay_bound(m, b, gap)`` for every
    off-diagonal block of the HODLR partition of ``P`` and every admissible ``m``.

    ``floor`` is an absolute tolerance for the rounding error carried by
    the dense projector (default ``n u``); bounds below it are compared
    against the floor instead.  ``worst_margin`` is the largest ratio of
    singular value to threshold (pass means ``<= 1``).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if floor is None:
        floor = n * np.finfo(float).eps
    checks, worst, failures = 0, 0.0, []
    for lo, mid, hi in PartitionTree(n, n_min).nodes():
        for r0, r1, c0, c1 in ((lo, mid, mid, hi), (mid, hi, lo, mid)):
            s = np.linalg.svd(P[r0:r1, c0:c1], compute_uv=False)
            m = 1
            while 2 * m * b + 1 <= len(s):
                thr = max(sv_decay_bound(m, b, gap) * (1.0 + slack), floor)
                sig = float(s[2 * m * b])
                checks += 1
                worst = max(worst, sig / thr)
                if sig > thr:
                    failures.append((r0, c0, m, sig, thr))
                m += 1
    return DecayReport(checks, worst, failures)
