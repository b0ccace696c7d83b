import numpy as np
import pytest

from oracles import generic_banded, sign_function
from specproj.banded import BandedSymmetric, SpectrumSpec, synth_banded
from specproj.hodlr import NotPositiveDefiniteError
from specproj.qdwh import (
    L0_CLAMP,
    _schedule,
    dense_l0,
    dense_qdwh,
    error_metrics,
    hqdwh,
    l_update,
    oracle_projector,
    qdwh_params,
)

# 40-digit mpmath evaluation of the weight formulas at l = 0.5
A_HALF = 4.359339899916809712
B_HALF = 2.821291140793270274
C_HALF = 6.180631040710079986
L_NEXT_HALF = 0.9949604626398240487


class TestParameters:
    def test_fixed_point(self):
        np.testing.assert_allclose(qdwh_params(1.0), (3.0, 1.0, 3.0), atol=1e-14)
        assert l_update(1.0, 3.0, 1.0, 3.0) == 1.0

    def test_half(self):
        np.testing.assert_allclose(qdwh_params(0.5), (A_HALF, B_HALF, C_HALF), rtol=1e-14)
        assert l_update(0.5, *qdwh_params(0.5)) == pytest.approx(L_NEXT_HALF, rel=1e-14)

    def test_weights_shrink(self):
        assert qdwh_params(0.1)[0] > qdwh_params(0.5)[0] > qdwh_params(1.0)[0]

    @pytest.mark.parametrize("l", [0.0, -0.1, 1.5, float("nan"), 1e-250])
    def test_domain(self, l):
        with pytest.raises(ValueError):
            qdwh_params(l)

    def test_cubic_convergence(self):
        l = 0.9
        errs = []
        for _ in range(3):
            errs.append(1.0 - l)
            l = l_update(l, *qdwh_params(l))
        errs.append(1.0 - l)
        # 1 - l_{k+1} = O((1 - l_k)^3)
        for e0, e1 in zip(errs, errs[1:]):
            if e1 > 0:
                assert e1 <= 2.0 * e0**3

    @pytest.mark.parametrize("l0", [1e-20, 1e-16, 1e-8, 1e-3, 0.5])
    def test_at_most_six_steps(self, l0):
        states = list(_schedule(l0, 1.0, 1e-15))
        assert len(states) <= 6
        ls = [s.l for s in states]
        cs = [s.c for s in states]
        assert all(a < b for a, b in zip(ls, ls[1:]))
        assert all(a > b for a, b in zip(cs, cs[1:]))
        assert all(c > 3.0 for c in cs)


    @pytest.mark.parametrize("l0", [1e-200, 1e-100, 1e-50])
    def test_tiny_l0_stays_finite(self, l0):
        # beyond condition 1e20 the six-step guarantee no longer applies
        states = list(_schedule(l0, 1.0, 1e-15))
        assert 6 < len(states) <= 8
        assert all(np.isfinite([s.a, s.b, s.c]).all() for s in states)


class TestDenseQdwh:
    def test_diagonal(self):
        U, _ = dense_qdwh(np.diag([-2.0, 3.0]))
        np.testing.assert_allclose(U, np.diag([-1.0, 1.0]), atol=1e-14)

    @pytest.mark.parametrize("mode", ["one-qr", "multi-qr"])
    @pytest.mark.parametrize("gap", [1e-1, 1e-8, 1e-15])
    def test_iterations_and_accuracy(self, mode, gap):
        A = synth_banded(SpectrumSpec.uniform(128, gap), 1).to_dense()
        U, it = dense_qdwh(A, mode=mode)
        assert it <= 6
        assert np.linalg.norm(U @ U - np.eye(128), 2) <= 1e-13
        Pi, nu = oracle_projector(A)
        assert abs(np.trace(U) - (128 - 2 * nu)) <= 1e-12

    def test_matches_eigendecomposition(self, rng):
        A = generic_banded(SpectrumSpec.uniform(60, 1e-2).eigenvalues, 3, rng)
        U, _ = dense_qdwh(A)
        np.testing.assert_allclose(U, sign_function(A), atol=1e-12)

    def test_rejects_mode(self):
        with pytest.raises(ValueError):
            dense_qdwh(np.eye(2), mode="zolo")

    def test_dense_l0_is_lower_bound(self, rng):
        A = generic_banded(SpectrumSpec.uniform(40, 1e-3).eigenvalues, 2, rng)
        assert dense_l0(A) <= np.linalg.svd(A, compute_uv=False).min()

    def test_overestimated_l0_is_clamped(self):
        A = synth_banded(SpectrumSpec.uniform(32, 1e-1), 1).to_dense()
        # l0 >= 1 would leave the parameter domain; it is clamped instead
        U, it = dense_qdwh(A, l0=2.0)
        assert it == len(list(_schedule(L0_CLAMP, 1.0, 1e-15)))
        assert np.all(np.isfinite(U))


class TestErrorMetrics:
    def test_exact_sign(self):
        U = np.diag([-1.0, 1.0, 1.0])
        Pi = np.diag([1.0, 0.0, 0.0])
        assert error_metrics(U, Pi) == {"e_id": 0.0, "e_trace": 0.0, "e_sp": 0.0}

    def test_positive_definite(self):
        assert error_metrics(np.eye(5), np.zeros((5, 5)), 0) == {"e_id": 0.0, "e_trace": 0.0, "e_sp": 0.0}

    def test_first_order_perturbation(self, rng):
        n = 40
        A = generic_banded(SpectrumSpec.uniform(n, 1e-1).eigenvalues, 2, rng)
        Pi, nu = oracle_projector(A)
        U = sign_function(A)
        E = rng.standard_normal((n, n))
        E = E + E.T
        E /= np.linalg.norm(E, 2)
        m = error_metrics(U + 1e-8 * E, Pi, nu)
        # (U + tE)^2 - I = t (UE + EU) + O(t^2)
        expected = 1e-8 * np.linalg.norm(U @ E + E @ U, 2)
        assert m["e_id"] == pytest.approx(expected, rel=1e-6)
        assert m["e_sp"] == pytest.approx(0.5e-8, rel=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            error_metrics(np.eye(3), np.eye(4))


class TestHqdwh:
    def test_negative_identity(self):
        A = BandedSymmetric.from_diagonals([[-1.0] * 16, [0.0] * 15])
        r = hqdwh(A, n_min=4)
        P = r.P.to_dense()
        np.testing.assert_allclose(P, np.eye(16), atol=1e-14)
        assert error_metrics(r.U.to_dense(), np.eye(16), 16)["e_id"] <= 1e-14

    def test_n512_tridiagonal(self):
        A = synth_banded(SpectrumSpec.uniform(512, 1e-1), 1)
        r = hqdwh(A, n_min=64, eps=1e-10)
        Pi, nu = oracle_projector(A.to_dense())
        m = error_metrics(r.U.to_dense(), Pi, nu)
        assert m["e_id"] <= 1e-8 and m["e_trace"] <= 1e-8 and m["e_sp"] <= 1e-6
        assert r.iterations <= 6

    def test_n512_band8_trace(self):
        A = synth_banded(SpectrumSpec.uniform(512, 1e-4), 8)
        r = hqdwh(A, n_min=64, eps=1e-10)
        assert r.P.trace() == pytest.approx(256.0, abs=1e-6)

    @pytest.mark.parametrize("b", [1, 3])
    def test_matches_dense(self, rng, b):
        lam = SpectrumSpec.uniform(128, 1e-3).eigenvalues
        D = generic_banded(lam, b, rng)
        A = BandedSymmetric.from_dense(D, b)
        r = hqdwh(A, n_min=16, eps=1e-12)
        U, _ = dense_qdwh(D)
        assert np.linalg.norm(r.U.to_dense() - U, 2) <= 1e-8

    def test_projector_algebra(self):
        A = synth_banded(SpectrumSpec.uniform(256, 1e-2), 2)
        r = hqdwh(A, n_min=32, eps=1e-10)
        P = r.P.to_dense()
        D = A.to_dense()
        assert np.linalg.norm(P @ P - P, 2) <= 1e-8
        assert np.linalg.norm(P - P.T, 2) <= 1e-12
        assert np.linalg.norm(D @ P - P @ D, 2) <= 1e-7 * np.linalg.norm(D, 2)

    def test_history(self):
        A = synth_banded(SpectrumSpec.uniform(128, 1e-6), 1)
        r = hqdwh(A, n_min=16)
        assert [h.kind for h in r.history] == ["qr"] + ["cholesky"] * (r.iterations - 1)
        ls = [h.l for h in r.history]
        assert all(a < b for a, b in zip(ls, ls[1:]))
        assert r.alpha > 0 and 0 < r.l0 < 1

    def test_cholesky_failure_propagates(self, monkeypatch):
        import specproj.qdwh as mod

        def broken(M, eps):
            raise NotPositiveDefiniteError("leaf block is not positive definite")

        monkeypatch.setattr(mod, "hodlr_cholesky", broken)
        A = synth_banded(SpectrumSpec.uniform(64, 1e-2), 1)
        with pytest.raises(NotPositiveDefiniteError):
            hqdwh(A, n_min=8)
