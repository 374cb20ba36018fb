import numpy as np
import pytest

from afkrylov.objective import ObjectiveSpec, eval_phi
from afkrylov.operators import LinearOperator, SpdOperator
from afkrylov.regparam import RegParams, SelectionConfig
from afkrylov.solvers import (SolverConfig, _run, af_gmres, af_lsqr, baseline,
                              solve)

from conftest import random_instance


def fixed_cfg(method, lx, lxi, maxit=10, tau=1e-4, **kw):
    return SolverConfig(method=method, maxit=maxit, tau=tau,
                        selection=SelectionConfig(method="fixed"),
                        fixed_params=RegParams(lx, lxi), **kw)


class TestAfGmres:
    def test_identity_one_iteration(self, rng):
        # A = Q = R = I: the first projected problem is scalar Tikhonov
        n, lam = 6, 0.7
        b = rng.standard_normal(n)
        cfg = fixed_cfg("af_gmres", lam, lam, maxit=1, tau=1e-8)
        res = af_gmres(LinearOperator.identity(n), SpdOperator.identity(n),
                       SpdOperator.identity(n), b, cfg)
        assert np.allclose(res.u, b / (1 + lam ** 2), atol=1e-13)
        assert np.array_equal(res.u, res.x + res.xi)

    def test_requires_square(self, rng):
        A = LinearOperator.from_matrix(rng.standard_normal((8, 5)))
        cfg = fixed_cfg("af_gmres", 0.1, 0.1)
        with pytest.raises(ValueError, match="square"):
            af_gmres(A, SpdOperator.identity(5), SpdOperator.identity(8),
                     np.ones(8), cfg)

    def test_method_mismatch_rejected(self):
        cfg = fixed_cfg("af_lsqr", 0.1, 0.1)
        with pytest.raises(ValueError, match="method"):
            af_gmres(LinearOperator.identity(3), SpdOperator.identity(3),
                     SpdOperator.identity(3), np.ones(3), cfg)


class TestMonotonicity:
    @pytest.mark.parametrize("method", ["af_gmres", "af_lsqr"])
    @pytest.mark.parametrize("lams", [(1e-2, 1e-2), (1.0, 1e-1)])
    def test_phi_nonincreasing_fixed_params(self, method, lams):
        for seed in (301, 302, 303):
            _, A, Q, Rinv, _, b = random_instance(seed, 32)
            cfg = fixed_cfg(method, *lams, maxit=12, dense_mm=False)
            res = solve(A, Q, Rinv, b, cfg)
            phis = [t.phi_value for t in res.trace]
            slack = 1e-12 * (1.0 + phis[0])
            assert all(phis[i + 1] <= phis[i] + slack for i in range(len(phis) - 1))

    def test_phi_matches_full_space_evaluation(self):
        # the traced value equals an independent dense evaluation of phi
        _, A, Q, Rinv, _, b = random_instance(305, 16)
        tau = 1e-3
        cfg = fixed_cfg("af_gmres", 0.4, 0.2, maxit=5, tau=tau,
                        keep_iterates=True, dense_mm=False)
        res = af_gmres(A, Q, Rinv, b, cfg)
        spec = ObjectiveSpec(A=A, Q=Q, Rinv=Rinv, b=b, lambda_x=0.4,
                             lambda_xi=0.2, tau=tau)
        for t, it in zip(res.trace, res.iterates):
            direct = eval_phi(spec, it.x_coeff, it.xi)
            assert t.phi_value == pytest.approx(direct, rel=1e-10)


class TestAfLsqr:
    def test_first_iterate_matches_dense_tikhonov(self, rng):
        # symmetric PD A with Q = R = I: one AF-LSQR step is the first
        # hybrid-LSQR Tikhonov iterate, computed densely here
        n, lam = 9, 0.35
        M = rng.standard_normal((n, n))
        Amat = M @ M.T + n * np.eye(n)
        b = rng.standard_normal(n)
        cfg = fixed_cfg("af_lsqr", lam, lam, maxit=1, tau=1e-8)
        res = af_lsqr(LinearOperator.from_matrix(Amat), SpdOperator.identity(n),
                      SpdOperator.identity(n), b, cfg)
        beta1 = np.linalg.norm(b)
        u1 = b / beta1
        alpha1 = np.linalg.norm(Amat.T @ u1)
        v1 = Amat.T @ u1 / alpha1
        w = Amat @ v1 - alpha1 * u1
        beta2 = np.linalg.norm(w)
        y = alpha1 * beta1 / (alpha1 ** 2 + beta2 ** 2 + lam ** 2)
        assert np.allclose(res.u, v1 * y, atol=1e-12)

    def test_requires_transpose(self):
        A = LinearOperator(4, 4, lambda v: v)
        cfg = fixed_cfg("af_lsqr", 0.1, 0.1)
        with pytest.raises(ValueError, match="transpose"):
            af_lsqr(A, SpdOperator.identity(4), SpdOperator.identity(4),
                    np.ones(4), cfg)

    def test_operator_count_budget(self):
        # two products with A and with A' per iteration, one Q product per
        # right-basis vector
        _, A, Q, Rinv, _, b = random_instance(311, 10, m=16)
        k = 5
        cfg = fixed_cfg("af_lsqr", 0.3, 0.3, maxit=k, dense_mm=False)
        res = af_lsqr(A, Q, Rinv, b, cfg)
        assert res.operator_counts["A"] == 2 * k
        assert res.operator_counts["At"] == 2 * k - 1
        assert res.operator_counts["Q"] == 2 * k - 1


def dense_hybrid_lsqr(Amat, b, lam, steps):
    """Dense Golub-Kahan + projected Tikhonov oracle (full reorthogonalization)."""
    m, n = Amat.shape
    U = np.zeros((m, steps + 1))
    V = np.zeros((n, steps))
    beta1 = np.linalg.norm(b)
    U[:, 0] = b / beta1
    alphas, betas = [], []
    iterates = []
    for j in range(steps):
        v = Amat.T @ U[:, j]
        v -= V[:, :j] @ (V[:, :j].T @ v)
        v -= V[:, :j] @ (V[:, :j].T @ v)
        alpha = np.linalg.norm(v)
        V[:, j] = v / alpha
        alphas.append(alpha)
        u = Amat @ V[:, j]
        u -= U[:, : j + 1] @ (U[:, : j + 1].T @ u)
        u -= U[:, : j + 1] @ (U[:, : j + 1].T @ u)
        beta = np.linalg.norm(u)
        U[:, j + 1] = u / beta
        betas.append(beta)
        B = np.zeros((j + 2, j + 1))
        for i in range(j + 1):
            B[i, i] = alphas[i]
            B[i + 1, i] = betas[i]
        rhs = np.zeros(j + 2)
        rhs[0] = beta1
        S = np.vstack([B, lam * np.eye(j + 1)])
        y, *_ = np.linalg.lstsq(S, np.concatenate([rhs, np.zeros(j + 1)]), rcond=None)
        iterates.append(V[:, : j + 1] @ y)
    return iterates


class TestBaselines:
    def test_hybrid_lsqr_q_identity_covariance(self, rng):
        # with Q = I the Q-weighted hybrid LSQR is plain hybrid LSQR
        m, n, lam = 14, 9, 0.4
        Amat = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        oracle = dense_hybrid_lsqr(Amat, b, lam, 3)
        cfg = fixed_cfg("hybrid_lsqr_q", lam, lam, maxit=3, keep_iterates=True,
                        dense_mm=False)
        res = baseline("hybrid_lsqr_q", LinearOperator.from_matrix(Amat),
                       SpdOperator.identity(n), SpdOperator.identity(m), b, cfg)
        for it, want in zip(res.iterates, oracle):
            assert np.linalg.norm(it.u - want) < 1e-8 * max(np.linalg.norm(want), 1.0)

    def test_flsqr_l1_frozen_weights_is_hybrid_lsqr(self, rng):
        m, n, lam = 12, 8, 0.6
        Amat = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        oracle = dense_hybrid_lsqr(Amat, b, lam, 3)
        cfg = fixed_cfg("flsqr_l1", lam, lam, maxit=3, keep_iterates=True,
                        freeze_weights=1.0, dense_mm=False)
        res = baseline("flsqr_l1", LinearOperator.from_matrix(Amat),
                       SpdOperator.identity(n), SpdOperator.identity(m), b, cfg)
        for it, want in zip(res.iterates, oracle):
            assert np.linalg.norm(it.u - want) < 1e-8 * max(np.linalg.norm(want), 1.0)

    def test_w_only_solution_is_all_sparse(self, rng):
        _, A, Q, Rinv, _, b = random_instance(321, 12)
        cfg = fixed_cfg("fgmres_l1", 0.1, 0.1, maxit=4, dense_mm=False)
        res = baseline("fgmres_l1", A, Q, Rinv, b, cfg)
        assert not res.x.any()
        assert np.array_equal(res.u, res.xi)

    def test_af_methods_rejected_as_baseline(self):
        with pytest.raises(ValueError, match="not a baseline"):
            baseline("af_gmres", None, None, None, None)

    def test_both_families_disabled_is_config_error(self, rng):
        _, A, Q, Rinv, _, b = random_instance(323, 8)
        cfg = fixed_cfg("af_gmres", 0.1, 0.1)
        with pytest.raises(ValueError, match="direction family"):
            _run(A, Q, Rinv, b, cfg, None, "arnoldi", False, False)


class TestSaturation:
    @pytest.mark.parametrize("method", ["af_gmres", "af_lsqr"])
    def test_theorem_style_convergence_and_dense_oracle(self, method):
        # run a tiny instance to basis saturation: successive differences
        # collapse and the final iterate solves the full-space reweighted
        # quadratic (independent stacked-form oracle with explicit matrix
        # square roots)
        n, lx, lxi, tau = 12, 0.1, 0.1, 1e-4
        rng = np.random.default_rng(331)
        Amat = rng.standard_normal((n, n))
        Qmat = rng.standard_normal((n, n))
        Qmat = Qmat @ Qmat.T + n * np.eye(n)
        b = rng.standard_normal(n)
        cfg = fixed_cfg(method, lx, lxi, maxit=30, tau=tau, keep_iterates=True)
        res = solve(LinearOperator.from_matrix(Amat), SpdOperator.from_matrix(Qmat),
                    SpdOperator.identity(n), b, cfg)
        assert res.iterations == 30
        xs = [it.x for it in res.iterates]
        xis = [it.xi for it in res.iterates]
        assert np.linalg.norm(xs[-1] - xs[-2]) < 1e-8
        assert np.linalg.norm(xis[-1] - xis[-2]) < 1e-8

        from afkrylov.objective import compute_weights
        W = compute_weights(res.iterates[-2].xi, tau)
        evals, evecs = np.linalg.eigh(Qmat)
        Qhalf = evecs @ np.diag(np.sqrt(np.clip(evals, 0, None))) @ evecs.T
        S = np.block([[Amat @ Qmat, Amat],
                      [lx * Qhalf, np.zeros((n, n))],
                      [np.zeros((n, n)), lxi * np.diag(W.w)]])
        rhs = np.concatenate([b, np.zeros(2 * n)])
        z, *_ = np.linalg.lstsq(S, rhs, rcond=None)
        x_oracle, xi_oracle = Qmat @ z[:n], z[n:]
        assert np.linalg.norm(res.x - x_oracle) < 1e-8
        assert np.linalg.norm(res.xi - xi_oracle) < 1e-8

    def test_stagnation_reported_when_dense_disabled(self, rng):
        n = 6
        b = rng.standard_normal(n)
        cfg = fixed_cfg("af_gmres", 0.5, 0.5, maxit=20, dense_mm=False)
        res = af_gmres(LinearOperator.identity(n), SpdOperator.identity(n),
                       SpdOperator.identity(n), b, cfg)
        assert res.stop_reason in ("stagnation", "maxit")
        assert res.iterations < 20 or res.stop_reason == "maxit"


class TestNesting:
    def test_previous_iterates_stay_in_grown_subspaces(self):
        # x_{k-1} must lie in range(Q V_k) and xi_{k-1} in range(Z_{k-1});
        # columns are appended, so the final state exposes every prefix
        _, A, Q, Rinv, _, b = random_instance(341, 20)
        cfg = fixed_cfg("af_gmres", 0.3, 0.2, maxit=8, keep_iterates=True,
                        dense_mm=False)
        res = af_gmres(A, Q, Rinv, b, cfg)
        Zq, Zw = res.state.Zq, res.state.Zw
        for k in range(1, len(res.iterates)):
            x_prev = res.iterates[k - 1].x
            sol, *_ = np.linalg.lstsq(Zq[:, : k + 1], x_prev, rcond=None)
            resid = np.linalg.norm(Zq[:, : k + 1] @ sol - x_prev)
            assert resid <= 1e-10 * max(np.linalg.norm(x_prev), 1.0)
            xi_prev = res.iterates[k - 1].xi
            if k - 1 >= 1:
                sol, *_ = np.linalg.lstsq(Zw[:, :k], xi_prev, rcond=None)
                resid = np.linalg.norm(Zw[:, :k] @ sol - xi_prev)
                assert resid <= 1e-10 * max(np.linalg.norm(xi_prev), 1.0)


class TestStopping:
    def test_gcv_flattening_stops(self):
        _, A, Q, Rinv, _, b = random_instance(351, 24)
        cfg = SolverConfig(method="af_gmres", maxit=12, tau=1e-4,
                           selection=SelectionConfig(method="wgcv", max_evals=200),
                           stop_tol=0.5, dense_mm=False)
        res = af_gmres(A, Q, Rinv, b, cfg)
        assert res.stop_reason == "gcv_flat"
        assert res.iterations < 12

    def test_truth_errors_recorded(self):
        _, A, Q, Rinv, _, b = random_instance(353, 10)
        rng = np.random.default_rng(0)
        x_true = rng.standard_normal(10)
        xi_true = np.zeros(10)
        truth = (x_true + xi_true, x_true, xi_true)
        cfg = fixed_cfg("af_gmres", 0.1, 0.1, maxit=3, dense_mm=False)
        res = af_gmres(A, Q, Rinv, b, cfg, truth=truth)
        assert all(np.isfinite(t.rel_error_u) for t in res.trace)
        assert all(np.isfinite(t.rel_error_x) for t in res.trace)


def test_config_validation():
    with pytest.raises(ValueError, match="unknown method"):
        SolverConfig(method="cgls")
    with pytest.raises(ValueError, match="fixed_params"):
        SolverConfig(method="af_gmres", selection=SelectionConfig(method="fixed"))
    with pytest.raises(ValueError, match="maxit"):
        SolverConfig(method="af_gmres", maxit=0)
