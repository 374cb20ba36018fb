import numpy as np
import pytest
from scipy.linalg import subspace_angles

from afkrylov.arnoldi import AFArnoldiState
from afkrylov.objective import DiagonalWeights, compute_weights
from afkrylov.operators import LinearOperator, SpdOperator

from conftest import random_instance


def check_invariants(state, Amat, Qmat, rdiag):
    """Dense recomputation of every factorization invariant."""
    V, Z, H = state.Vhat, state.Zhat, state.Hhat
    Rinv = np.diag(rdiag)
    orth = V.T @ Rinv @ V - np.eye(V.shape[1])
    assert np.max(np.abs(orth)) < 1e-10
    lhs = Amat @ Z
    assert np.linalg.norm(lhs - V @ H) <= 1e-10 * max(np.linalg.norm(lhs), 1.0)
    Vt, Ht = state.Vtilde, state.Htilde
    qorth = Vt.T @ Qmat @ Vt - np.eye(Vt.shape[1])
    assert np.max(np.abs(qorth)) < 1e-10
    # the q-source sequence factors through the Q-orthonormal basis
    nq = state.num_q
    Vk = state.Vsources
    assert np.linalg.norm(Vk - Vt[:, :nq] @ Ht[:nq, :nq]) < 1e-10
    if not state.skipped:
        # z columns: one fewer than twice the number of q-source vectors
        assert state.num_z == 2 * nq - 1 or state.num_z == 2 * nq


class TestInit:
    def test_unit_rhs(self):
        n = 4
        b = np.eye(n)[0]
        st = AFArnoldiState(LinearOperator.identity(n), SpdOperator.identity(n),
                            SpdOperator.identity(n), b)
        assert st.beta == pytest.approx(1.0)
        assert np.allclose(st.Vhat[:, 0], b)

    def test_weighted_normalization(self):
        # R = 4I: ||e1||_{R^{-1}} = 1/2, so beta = 1/2 and v1 = 2 e1
        n = 3
        b = np.eye(n)[0]
        Rinv = SpdOperator.diagonal(np.full(n, 0.25))
        st = AFArnoldiState(LinearOperator.identity(n), SpdOperator.identity(n), Rinv, b)
        assert st.beta == pytest.approx(0.5)
        assert np.allclose(st.Vhat[:, 0], 2.0 * b)
        v1 = st.Vhat[:, 0]
        assert np.dot(v1, Rinv.apply(v1)) == pytest.approx(1.0)

    def test_invariants_after_init(self):
        Amat, A, Q, Rinv, rdiag, b = random_instance(7, 10)
        st = AFArnoldiState(A, Q, Rinv, b)
        check_invariants(st, Amat, Q.to_dense(), rdiag)

    def test_rejects_rectangular(self, rng):
        A = LinearOperator.from_matrix(rng.standard_normal((5, 3)))
        with pytest.raises(ValueError, match="square"):
            AFArnoldiState(A, SpdOperator.identity(3), SpdOperator.identity(5),
                           np.ones(5))

    def test_rejects_zero_rhs(self):
        with pytest.raises(ValueError, match="zero"):
            AFArnoldiState(LinearOperator.identity(3), SpdOperator.identity(3),
                           SpdOperator.identity(3), np.zeros(3))


class TestExpandQ:
    def test_identity_breakdown(self):
        # Krylov space of the identity is one-dimensional: the expansion is
        # fully annihilated and recorded, but the consumed direction remains
        n = 4
        st = AFArnoldiState(LinearOperator.identity(n), SpdOperator.identity(n),
                            SpdOperator.identity(n), np.eye(n)[0])
        added = st.expand_q_column()
        assert not added
        assert st.skipped == [(1, "q")]
        assert st.num_z == 1
        assert not st.can_expand_q

    def test_two_by_two_hand_value(self):
        A = LinearOperator.from_matrix(np.diag([1.0, 2.0]))
        b = np.array([1.0, 1.0]) / np.sqrt(2.0)
        st = AFArnoldiState(A, SpdOperator.identity(2), SpdOperator.identity(2), b)
        st.expand_q_column()
        H = st.Hhat
        assert H[0, 0] == pytest.approx(1.5, rel=1e-14)
        assert H[1, 0] == pytest.approx(0.5, rel=1e-14)

    def test_random_invariants_each_expansion(self, rng):
        Amat, A, Q, Rinv, rdiag, b = random_instance(11, 8)
        st = AFArnoldiState(A, Q, Rinv, b)
        for _ in range(3):
            st.expand_q_column()
            check_invariants(st, Amat, Q.to_dense(), rdiag)
            W = compute_weights(rng.standard_normal(8), 1e-3)
            st.expand_w_column(W)
            check_invariants(st, Amat, Q.to_dense(), rdiag)


class TestExpandW:
    def test_identity_weights_degenerate(self):
        # W = I makes the flexible step an unpreconditioned one: z = v
        Amat, A, Q, Rinv, rdiag, b = random_instance(3, 6)
        st = AFArnoldiState(A, SpdOperator.identity(6), SpdOperator.identity(6), b)
        st.expand_q_column()
        W = DiagonalWeights(w=np.ones(6), tau=1.0)
        st.expand_w_column(W)
        src = st.Vhat[:, 0]
        assert np.allclose(st.Zhat[:, 1], src)

    def test_constant_weights_scaling(self):
        Amat, A, Q, Rinv, rdiag, b = random_instance(4, 6)
        st1 = AFArnoldiState(A, SpdOperator.identity(6), SpdOperator.identity(6), b)
        st1.expand_q_column()
        st2 = AFArnoldiState(A, SpdOperator.identity(6), SpdOperator.identity(6), b)
        st2.expand_q_column()
        st1.expand_w_column(DiagonalWeights(w=np.ones(6), tau=1.0))
        st2.expand_w_column(DiagonalWeights(w=np.full(6, 2.0), tau=1.0))
        # z halves, and the corresponding coefficient column halves too
        assert np.allclose(st2.Zhat[:, 1], st1.Zhat[:, 1] / 2.0)
        assert np.allclose(st2.Hhat[:-1, 1], st1.Hhat[:-1, 1] / 2.0)

    def test_zero_weight_rejected(self):
        _, A, Q, Rinv, _, b = random_instance(5, 6)
        st = AFArnoldiState(A, Q, Rinv, b)
        st.expand_q_column()
        with pytest.raises(ValueError, match="positive"):
            st.expand_w_column(DiagonalWeights(w=np.zeros(6), tau=1.0))

    def test_factorization_with_random_weights(self, rng):
        Amat, A, Q, Rinv, rdiag, b = random_instance(13, 8)
        st = AFArnoldiState(A, Q, Rinv, b)
        for _ in range(3):
            st.expand_q_column()
            W = compute_weights(rng.standard_normal(8), 1e-4)
            st.expand_w_column(W)
        V, Z, H = st.Vhat, st.Zhat, st.Hhat
        lhs = Amat @ Z
        assert np.linalg.norm(lhs - V @ H) <= 1e-10 * np.linalg.norm(lhs)


class TestSplitH:
    def test_first_iteration(self):
        _, A, Q, Rinv, _, b = random_instance(17, 6)
        st = AFArnoldiState(A, Q, Rinv, b)
        st.expand_q_column()
        H1, H2 = st.split_h()
        assert H2.shape[1] == 0
        assert np.allclose(H1, st.Hhat)

    def test_parity(self, rng):
        _, A, Q, Rinv, _, b = random_instance(19, 6)
        st = AFArnoldiState(A, Q, Rinv, b)
        st.expand_q_column()
        st.expand_w_column(compute_weights(rng.standard_normal(6), 1e-3))
        st.expand_q_column()
        H1, H2 = st.split_h()
        H = st.Hhat
        assert np.allclose(H1, H[:, [0, 2]])
        assert np.allclose(H2, H[:, [1]])

    def test_split_identities(self, rng):
        Amat, A, Q, Rinv, rdiag, b = random_instance(23, 10)
        st = AFArnoldiState(A, Q, Rinv, b)
        for _ in range(4):
            st.expand_q_column()
            st.expand_w_column(compute_weights(rng.standard_normal(10), 1e-3))
        H1, H2 = st.split_h()
        V = st.Vhat
        lhs1 = Amat @ Q.to_dense() @ st.Vsources
        lhs2 = Amat @ st.Zw
        assert np.linalg.norm(lhs1 - V @ H1) < 1e-10 * max(np.linalg.norm(lhs1), 1.0)
        assert np.linalg.norm(lhs2 - V @ H2) < 1e-10 * max(np.linalg.norm(lhs2), 1.0)


class TestProperties:
    def test_invariants_many_instances(self, rng):
        for seed in range(6):
            n = int(rng.integers(8, 64))
            Amat, A, Q, Rinv, rdiag, b = random_instance(100 + seed, n)
            st = AFArnoldiState(A, Q, Rinv, b)
            for _ in range(min(10, n // 2 - 1)):
                st.expand_q_column()
                st.expand_w_column(compute_weights(rng.standard_normal(n), 1e-3))
            check_invariants(st, Amat, Q.to_dense(), rdiag)

    def test_reorthogonalization_tightens(self):
        Amat, A, Q, Rinv, rdiag, b = random_instance(31, 32)
        st = AFArnoldiState(A, Q, Rinv, b, reorthogonalize=True)
        for _ in range(8):
            st.expand_q_column()
            st.expand_w_column(compute_weights(np.ones(32), 1e-3))
        V = st.Vhat
        G = V.T @ np.diag(rdiag) @ V
        off = G - np.diag(np.diag(G))
        assert np.max(np.abs(off)) < 1e-12

    def test_plain_krylov_space_recovered(self, rng):
        # Q = I, R = I, q columns only: the subspace is span{b, Ab, ...}
        n = 12
        Amat = rng.standard_normal((n, n))
        A = LinearOperator.from_matrix(Amat)
        b = rng.standard_normal(n)
        st = AFArnoldiState(A, SpdOperator.identity(n), SpdOperator.identity(n), b)
        for _ in range(5):
            st.expand_q_column()
        Vk = st.Vsources
        krylov = np.column_stack([np.linalg.matrix_power(Amat, j) @ b
                                  for j in range(Vk.shape[1])])
        angles = subspace_angles(Vk, krylov)
        assert np.max(angles) < 1e-8
