import math

import numpy as np
import pytest

from oracles import generic_banded, numerical_rank, offdiag_blocks, random_banded_dense, stacked_qr_r
from specproj.banded import BandedSymmetric, GivensSequence, SpectrumSpec, synth_banded
from specproj.fastqr import (
    accumulate_dense,
    assemble_q,
    banded_schedule,
    q1q2t,
    reduce_banded,
    reduce_stacked,
    reduce_tridiag,
    rotation_count,
    rotation_step,
    tridiag_schedule,
)
from specproj.hodlr import PartitionTree


def banded(rng, n, b, scale=1.0):
    return BandedSymmetric.from_dense(scale * random_banded_dense(rng, n, b), b)


class TestSchedules:
    def test_tridiag_count_n4(self):
        assert len(list(tridiag_schedule(4))) == 10

    def test_banded_count_n6_b3(self):
        assert rotation_count(6, 3) == 30
        assert len(list(banded_schedule(6, 3))) == 30

    def test_counts_coincide_for_b1(self):
        assert len(list(banded_schedule(4, 1))) == len(list(tridiag_schedule(4))) == 10

    def test_tridiag_order(self):
        n = 4
        assert list(tridiag_schedule(n))[:5] == [(0, n, 0), (0, 1, 0), (n, n + 1, 1), (1, n, 1), (1, 2, 1)]

    def test_banded_order_per_column(self):
        n, b = 8, 3
        ops = [op for op in banded_schedule(n, b) if rotation_step(op[0], op[1], n) == 2]
        # alpha_{2,2}, alpha_{2,3..4}, beta_2, gamma_{2,3..5}
        assert ops == [(n, n + 2, 2), (n + 3, n + 2, 3), (n + 4, n + 2, 4), (2, n, 2), (2, 3, 2), (2, 4, 2), (2, 5, 2)]

    @pytest.mark.parametrize("n,b", [(2, 1), (9, 1), (9, 4), (20, 8)])
    def test_steps_nondecreasing(self, n, b):
        steps = [rotation_step(i, j, n) for i, j, _ in banded_schedule(n, b)]
        assert steps == sorted(steps)
        assert steps[-1] == n - 1


class TestReduction:
    def test_two_by_two_R(self):
        A = BandedSymmetric.from_diagonals([[2.0, 2.0], [1.0]])
        _, R = reduce_tridiag(A)
        Rd = np.abs(R.to_dense())
        np.testing.assert_allclose(Rd[0, :2], [math.sqrt(6), 4 / math.sqrt(6)], rtol=1e-14)
        assert Rd[1, 1] == pytest.approx(math.sqrt(10 / 3), rel=1e-14)

    def test_identity_R(self):
        A = BandedSymmetric.from_diagonals([[1.0] * 5, [0.0] * 4])
        g, R = reduce_tridiag(A)
        np.testing.assert_allclose(np.abs(R.to_dense()), math.sqrt(2) * np.eye(5), atol=1e-15)
        assert len(g) == 13

    def test_tridiag_requires_b1(self, rng):
        with pytest.raises(ValueError):
            reduce_tridiag(banded(rng, 6, 2))

    @pytest.mark.parametrize("n,b", [(32, 2), (40, 5), (17, 1)])
    def test_normal_equations(self, rng, n, b):
        A = banded(rng, n, b)
        _, R = reduce_stacked(A)
        Rd, D = R.to_dense(), A.to_dense()
        assert np.allclose(np.tril(Rd, -1), 0.0)
        assert np.linalg.norm(Rd.T @ Rd - (D @ D + np.eye(n))) <= 1e-12 * max(1.0, np.linalg.norm(D, 2)) ** 2 * n

    def test_matches_householder_R(self, rng):
        A = banded(rng, 24, 3)
        _, R = reduce_banded(A)
        Rd = np.sign(np.diag(R.to_dense()))[:, None] * R.to_dense()
        np.testing.assert_allclose(Rd, stacked_qr_r(A.to_dense()), atol=1e-12)

    def test_R_bandwidth(self, rng):
        A = banded(rng, 30, 3)
        _, R = reduce_banded(A)
        assert R.bandwidth == 6

    def test_replay_triangularizes(self, rng):
        n, b = 20, 3
        A = banded(rng, n, b)
        g, _ = reduce_banded(A)
        S = g.apply_rows(np.vstack([A.to_dense(), np.eye(n)]))
        assert np.abs(np.tril(S[:n], -1)).max() <= 1e-13 * np.linalg.norm(A.to_dense(), 2)
        assert np.abs(S[n:]).max() <= 1e-13 * np.linalg.norm(A.to_dense(), 2)

    def test_zero_offdiagonal_is_breakdown_free(self):
        A = BandedSymmetric.from_diagonals([[1.0, -2.0, 3.0, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0]])
        g, R = reduce_banded(A)
        assert len(g) == rotation_count(4, 2)
        np.testing.assert_allclose(np.abs(np.diag(R.to_dense())), np.sqrt(np.array([1.0, 4.0, 9.0, 0.25]) + 1.0))

    def test_deterministic(self, rng):
        A = banded(rng, 30, 2)
        g1, _ = reduce_banded(A)
        g2, _ = reduce_banded(A)
        assert g1.to_bytes() == g2.to_bytes()


class TestAssembly:
    def test_small_rank_structure(self, rng):
        A = banded(rng, 8, 1)
        g, _ = reduce_tridiag(A)
        q1, q2 = assemble_q(g, PartitionTree(8, 2), 1)
        for r0, c0, blk in q1.blocks():
            assert blk.rank <= (2 if r0 < c0 else 1)
        for r0, c0, blk in q2.blocks():
            assert blk.rank <= (2 if r0 < c0 else 0)

    @pytest.mark.parametrize("n,b,n_min", [(32, 2, 4), (64, 1, 8), (50, 3, 7), (10, 9, 3)])
    def test_matches_dense_accumulation(self, rng, n, b, n_min):
        g, _ = reduce_stacked(banded(rng, n, b))
        Q1, Q2 = accumulate_dense(g)
        q1, q2 = assemble_q(g, PartitionTree(n, n_min), b)
        np.testing.assert_allclose(q1.to_dense(), Q1, atol=1e-13, rtol=0)
        np.testing.assert_allclose(q2.to_dense(), Q2, atol=1e-13, rtol=0)

    def test_orthonormal_columns(self, rng):
        g, _ = reduce_stacked(banded(rng, 32, 2))
        q1, q2 = assemble_q(g, PartitionTree(32, 4), 2)
        Q1, Q2 = q1.to_dense(), q2.to_dense()
        assert np.linalg.norm(Q1.T @ Q1 + Q2.T @ Q2 - np.eye(32), 2) <= 1e-13 * 32

    def test_factorization(self, rng):
        n, b = 40, 3
        A = banded(rng, n, b, scale=3.0)
        g, R = reduce_stacked(A)
        q1, q2 = assemble_q(g, PartitionTree(n, 8), b)
        D, Rd = A.to_dense(), R.to_dense()
        scale = max(1.0, np.linalg.norm(D, 2))
        assert np.linalg.norm(q1.to_dense() @ Rd - D, 2) <= 1e-12 * scale
        assert np.linalg.norm(q2.to_dense() @ Rd - np.eye(n), 2) <= 1e-12 * scale

    def test_zero_patterns(self, rng):
        n, b = 30, 3
        g, _ = reduce_stacked(banded(rng, n, b))
        q1, q2 = assemble_q(g, PartitionTree(n, 4), b)
        assert np.all(np.tril(q1.to_dense(), -b - 1) == 0.0)
        assert np.all(np.tril(q2.to_dense(), -1) == 0.0)

    def test_rank_bounds_generic(self):
        rng = np.random.default_rng(5)
        for b in (1, 2, 3, 4):
            A = BandedSymmetric.from_dense(generic_banded(SpectrumSpec.uniform(96, 1e-2).eigenvalues, b, rng), b)
            g, _ = reduce_stacked(A)
            q1, q2 = assemble_q(g, PartitionTree(96, 8), b)
            for M in (q1, q2):
                for r0, c0, blk in M.blocks():
                    assert blk.rank <= 2 * b
            P = q1q2t(q1, q2, 1e-14).to_dense()
            assert max(numerical_rank(B, 1e-12) for B in offdiag_blocks(P, 8)) <= 2 * b

    def test_tree_size_mismatch(self, rng):
        g, _ = reduce_stacked(banded(rng, 16, 1))
        with pytest.raises(ValueError):
            assemble_q(g, PartitionTree(15, 4), 1)

    def test_malformed_sequence(self):
        n = 6
        seq = GivensSequence.from_rotations([(3, n + 3, 1.0, 0.0), (0, n, 1.0, 0.0)], 2 * n)
        with pytest.raises(ValueError):
            assemble_q(seq, PartitionTree(n, 2), 1)


class TestProduct:
    def test_identity_input(self):
        A = BandedSymmetric.from_diagonals([[1.0] * 16, [0.0] * 15])
        g, _ = reduce_tridiag(A)
        q1, q2 = assemble_q(g, PartitionTree(16, 4), 1)
        np.testing.assert_allclose(np.abs(q1.to_dense()), np.eye(16) / math.sqrt(2), atol=1e-15)
        np.testing.assert_allclose(np.abs(q1q2t(q1, q2, 1e-14).to_dense()), np.eye(16) / 2, atol=1e-15)

    def test_resolvent_formula(self, rng):
        n = 32
        A = banded(rng, n, 1)
        g, _ = reduce_tridiag(A)
        q1, q2 = assemble_q(g, PartitionTree(n, 4), 1)
        D = A.to_dense()
        ref = D @ np.linalg.inv(D @ D + np.eye(n))
        np.testing.assert_allclose(q1q2t(q1, q2, 1e-15).to_dense(), ref, atol=1e-12)

    def test_symmetric(self, rng):
        A = synth_banded(SpectrumSpec.uniform(64, 1e-3), 2).scaled(30.0)
        g, _ = reduce_stacked(A)
        q1, q2 = assemble_q(g, PartitionTree(64, 8), 2)
        P = q1q2t(q1, q2, 1e-12).to_dense()
        assert np.abs(P - P.T).max() <= 1e-12

    def test_rank_two_tridiagonal(self, rng):
        A = banded(rng, 64, 1)
        g, _ = reduce_tridiag(A)
        q1, q2 = assemble_q(g, PartitionTree(64, 8), 1)
        P = q1q2t(q1, q2, 1e-15).to_dense()
        assert max(numerical_rank(B, 1e-12) for B in offdiag_blocks(P, 8)) <= 2
