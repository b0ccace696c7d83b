import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ellipj

from specproj.banded import SpectrumSpec, synth_banded
from specproj.qdwh import oracle_projector
from specproj.theory import (
    elliptic_K,
    jacobi_cn,
    jacobi_sn,
    simplified_bound,
    sv_decay_bound,
    verify_decay,
    zolotarev,
)

# mpmath ellipk at 40 digits
K_REF = {0.3: 1.608048619930512801, 0.7: 1.845693998374723518, 0.99: 3.356600523361192376}
# rounding slack when evaluating 1 - s_m(x) near x where s_m ~ 1
EVAL_TOL = 1e-14


def k_quadrature(kappa):
    return quad(lambda t: 1.0 / math.sqrt(1.0 - (kappa * math.sin(t)) ** 2), 0.0, math.pi / 2, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


class TestElliptic:
    def test_zero_modulus(self):
        assert elliptic_K(0.0) == pytest.approx(math.pi / 2, abs=1e-15)

    def test_lemniscatic(self):
        assert elliptic_K(1 / math.sqrt(2)) == pytest.approx(1.854074677301371918, rel=1e-15)

    @pytest.mark.parametrize("kappa", [0.0, 0.3, 0.7, 0.99])
    def test_against_quadrature(self, kappa):
        assert elliptic_K(kappa) == pytest.approx(k_quadrature(kappa), rel=1e-12)
        if kappa in K_REF:
            assert elliptic_K(kappa) == pytest.approx(K_REF[kappa], rel=1e-15)

    def test_monotone(self):
        assert elliptic_K(0.9) > elliptic_K(0.5) > elliptic_K(0.0)

    @pytest.mark.parametrize("kappa", [1.0, 1.5, -0.1])
    def test_domain(self, kappa):
        with pytest.raises(ValueError):
            elliptic_K(kappa)


class TestJacobi:
    def test_degenerate_modulus(self):
        for u in np.linspace(0, 3, 7):
            assert jacobi_sn(u, 0.0) == pytest.approx(math.sin(u), abs=1e-13)

    @pytest.mark.parametrize("kappa", [0.1, 0.5, 0.9, 0.9999])
    def test_quarter_period_and_origin(self, kappa):
        assert jacobi_sn(elliptic_K(kappa), kappa) == pytest.approx(1.0, abs=1e-12)
        assert jacobi_sn(0.0, kappa) == 0.0

    @pytest.mark.parametrize("kappa", [0.3, 0.7, 0.99])
    def test_against_scipy(self, kappa):
        K = elliptic_K(kappa)
        for u in np.linspace(0, K, 9):
            sn, cn, _, _ = ellipj(u, kappa**2)
            assert jacobi_sn(u, kappa) == pytest.approx(sn, abs=1e-13)
            assert jacobi_sn(u, kappa) ** 2 + jacobi_cn(u, kappa) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            jacobi_sn(0.5, 1.0)


class TestZolotarev:
    def test_bracket_m4_r100(self):
        z = zolotarev(4, 100.0)
        assert z.E_lower <= z.measured_error() <= z.E_upper + EVAL_TOL

    def test_odd(self):
        z = zolotarev(3, 50.0)
        x = np.linspace(1.0, 50.0, 31)
        np.testing.assert_allclose(z(-x), -z(x), atol=1e-13)

    def test_coefficients_increase(self):
        z = zolotarev(5, 1e4)
        assert np.all(np.diff(z.coeffs) > 0) and z.coeffs[0] > 0
        assert np.isinf(z.coeffs[-1])

    def test_equioscillation_balance(self):
        z = zolotarev(3, 100.0)
        x = np.geomspace(1.0, 100.0, 20001)
        s = z(x)
        assert (s.max() - 1.0) == pytest.approx(1.0 - s.min(), rel=1e-6)

    def test_m1_closed_form(self):
        # for m = 1 the optimum is x / (x^2 + R) scaled; its error is ((sqrt R - 1)/(sqrt R + 1))^2
        R = 400.0
        z = zolotarev(1, R)
        assert z.coeffs[0] == pytest.approx(R, rel=1e-12)
        assert z.measured_error() == pytest.approx(((20.0 - 1.0) / 21.0) ** 2, rel=1e-9)

    @pytest.mark.parametrize("m,gap", [(1, 0.1), (3, 1e-2), (6, 1e-4), (10, 1e-8)])
    def test_simplified_bound_dominates(self, m, gap):
        assert simplified_bound(m, gap) >= zolotarev(m, 1 / gap).E_upper

    def test_tiny_gap_log_space(self):
        z = zolotarev(40, 1e15)
        assert 0.0 < z.E_lower <= z.E_upper < 4.0

    @pytest.mark.parametrize("m,R", [(0, 10.0), (2, 1.0)])
    def test_domain(self, m, R):
        with pytest.raises(ValueError):
            zolotarev(m, R)


class TestDecay:
    def test_example_value(self):
        assert sv_decay_bound(35, 1, 1e-4) == pytest.approx(1.847714412619249e-10, rel=1e-13)

    def test_monotone(self):
        assert sv_decay_bound(6, 1, 1e-3) < sv_decay_bound(5, 1, 1e-3)
        assert sv_decay_bound(5, 1, 1e-6) > sv_decay_bound(5, 1, 1e-3)

    @pytest.mark.parametrize("b,gap", [(1, 1e-1), (2, 1e-2)])
    def test_verify_on_oracle(self, b, gap):
        A = synth_banded(SpectrumSpec.uniform(256, gap), b)
        P, _ = oracle_projector(A.to_dense())
        report = verify_decay(P, b, gap)
        assert report.passed and report.checks > 0 and report.worst_margin <= 1.0

    def test_diagonal_projector(self):
        P = np.diag([1.0] * 10 + [0.0] * 10)
        assert verify_decay(P, 1, 0.5, n_min=4).worst_margin == 0.0

    def test_detects_violation(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(rng.standard_normal((64, 64)))
        P = Q[:, :32] @ Q[:, :32].T  # no decay at all
        assert not verify_decay(P, 1, 1e-1, n_min=8).passed
