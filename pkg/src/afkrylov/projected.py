"""The small dense two-parameter Tikhonov problem solved at each iteration.

The stacked least-squares form is

    min_y || [ K1  K2 ]          [ beta e1 ] ||2
          || [ lx*L  0  ]  y  -  [    0    ] ||
          || [ 0  lxi*Rwz ]      [    0    ] ||

with K1, K2 the parity split of the quasi-Hessenberg coefficients, L the
triangular Q-norm factor (identity on the Golub-Kahan route), and Rwz the
triangular factor of the reweighted direction block W Z_w.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "ProjectedProblem",
    "LiftedSolution",
    "make_projected_problem",
    "update_qr_wz",
    "solve_projected",
    "solve_with_influence",
    "lift",
    "projected_equivalence_check",
]

_RANK_TINY = 1e-12


@dataclass
class ProjectedProblem:
    """Immutable per-iteration snapshot of the projected regularized problem."""

    K1: np.ndarray
    K2: np.ndarray
    L: np.ndarray
    Rwz: np.ndarray
    beta: float
    weights: object = None

    @property
    def K(self):
        return np.hstack([self.K1, self.K2])

    @property
    def nq(self):
        return self.K1.shape[1]

    @property
    def nw(self):
        return self.K2.shape[1]

    @property
    def rank_deficient(self):
        K = self.K
        if K.shape[1] == 0:
            return False
        return np.linalg.matrix_rank(K) < K.shape[1]

    @property
    def wz_rank_deficient(self):
        d = np.abs(np.diag(self.Rwz))
        if d.size == 0:
            return False
        return bool(np.min(d) <= _RANK_TINY * max(np.max(d), 1.0))

    def stacked(self, lambda_x, lambda_xi):
        nq, nw = self.nq, self.nw
        rows_k = self.K1.shape[0]
        S = np.zeros((rows_k + nq + nw, nq + nw))
        S[:rows_k, :nq] = self.K1
        S[:rows_k, nq:] = self.K2
        if nq:
            S[rows_k: rows_k + nq, :nq] = lambda_x * self.L
        if nw:
            S[rows_k + nq:, nq:] = lambda_xi * self.Rwz
        rhs = np.zeros(S.shape[0])
        rhs[0] = self.beta
        return S, rhs


@dataclass
class LiftedSolution:
    """Full-space solution u = x + xi recovered from projected coefficients.

    ``x_coeff`` is the pre-covariance smooth variable (x = Q x_coeff); it is
    what the smooth penalty measures.
    """

    u: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    x_coeff: np.ndarray = field(default=None)


def update_qr_wz(prev_qr, weights, Z):
    """Thin QR of the reweighted block W Z.

    ``prev_qr`` is None or a triple (Qwz, Rwz, w_used) from the previous
    call. When the weights are unchanged and Z grew by exactly one column the
    new column is appended to the factorization; otherwise (weights change
    every iteration in the flexible methods) the QR is recomputed from
    scratch.
    """
    Z = np.asarray(Z, dtype=float)
    w = weights.w if weights is not None else None
    if Z.shape[1] == 0:
        n = Z.shape[0]
        return np.zeros((n, 0)), np.zeros((0, 0))
    if w is None:
        raise ValueError("weights are required when Z has columns")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")

    if prev_qr is not None:
        Qp, Rp, w_prev = prev_qr
        if (w_prev is not None and w_prev.shape == w.shape
                and np.array_equal(w_prev, w) and Z.shape[1] == Rp.shape[1] + 1):
            a = w * Z[:, -1]
            k = Rp.shape[1]
            c = np.zeros(k)
            for _ in range(2):
                dc = Qp.T @ a
                c += dc
                a = a - Qp @ dc
            rho = np.linalg.norm(a)
            Qwz = np.hstack([Qp, (a / rho if rho > 0 else a)[:, None]])
            Rwz = np.zeros((k + 1, k + 1))
            Rwz[:k, :k] = Rp
            Rwz[:k, k] = c
            Rwz[k, k] = rho
            return Qwz, Rwz

    WZ = Z * w[:, None]
    Qwz, Rwz = np.linalg.qr(WZ)
    # fix the sign convention: nonnegative diagonal, as the append path produces
    signs = np.where(np.diag(Rwz) < 0, -1.0, 1.0)
    return Qwz * signs, Rwz * signs[:, None]


def make_projected_problem(state, weights=None, prev_qr=None):
    """Assemble the ProjectedProblem for the current decomposition state."""
    if hasattr(state, "split_h"):
        K1, K2 = state.split_h()
    else:
        K1, K2 = state.split_m()
    Zw = state.Zw
    if Zw.shape[1] > 0 and weights is None:
        raise ValueError("weights are required: the state has reweighted columns")
    _, Rwz = update_qr_wz(prev_qr, weights, Zw)
    return ProjectedProblem(K1=K1, K2=K2, L=state.L, Rwz=Rwz,
                            beta=state.beta, weights=weights)


def _check_solvable(p, lambda_x, lambda_xi):
    if (p.nq and lambda_x == 0.0) or (p.nw and lambda_xi == 0.0):
        S, _ = p.stacked(lambda_x, lambda_xi)
        if np.linalg.matrix_rank(S) < S.shape[1]:
            raise np.linalg.LinAlgError(
                "projected system is singular: zero regularization with "
                "rank-deficient coefficients")


def solve_projected(p, lambda_x, lambda_xi):
    """Minimizer y = [y_q; y_w] of the stacked regularized least squares."""
    _check_solvable(p, lambda_x, lambda_xi)
    S, rhs = p.stacked(lambda_x, lambda_xi)
    y, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    return y


def _prepared(p):
    """Per-snapshot reduction: with K = Qk Rk (thin QR),

        ||K y - beta e1||^2 = ||Rk y - c||^2 + rho2,   c = Qk' beta e1,

    so every lambda candidate works on p x p triangular blocks only. Cached
    on the (immutable) snapshot; safe under concurrent candidate evaluation.
    """
    cache = getattr(p, "_prepared_cache", None)
    if cache is None:
        K = p.K
        Qk, Rk = np.linalg.qr(K)
        c = p.beta * Qk[0, :]
        rho2 = max(p.beta ** 2 - float(np.dot(c, c)), 0.0)
        cache = (Rk, c, rho2)
        p._prepared_cache = cache
    return cache


def solve_with_influence(p, lambda_x, lambda_xi):
    """Solve and report (y, residual^2, trace(K C)).

    trace(K C) with C the influence matrix of the regularized problem equals
    ||K R_s^{-1}||_F^2 for the triangular factor R_s of the stacked matrix
    (= ||Rk R_s^{-1}||_F^2 through the cached QR of K). Raises on a
    numerically singular factor (caller rejects the candidate).
    """
    Rk, c, rho2 = _prepared(p)
    nq, nw = p.nq, p.nw
    ncols = nq + nw
    r = Rk.shape[0]  # min(rows of K, ncols); K can be wide after saturation
    S = np.zeros((r + nq + nw, ncols))
    S[:r] = Rk
    if nq:
        S[r: r + nq, :nq] = lambda_x * p.L
    if nw:
        S[r + nq:, nq:] = lambda_xi * p.Rwz
    rhs = np.zeros(S.shape[0])
    rhs[:r] = c
    Rs = np.linalg.qr(S, mode="r")
    d = np.abs(np.diag(Rs))
    if d.size and np.min(d) <= _RANK_TINY * max(np.max(d), 1.0):
        raise np.linalg.LinAlgError("stacked factor is numerically singular")
    y, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    resid = Rk @ y - c
    G = solve_triangular(Rs, Rk.T, lower=False, trans="T")
    return y, float(np.dot(resid, resid)) + rho2, float(np.sum(G * G))


def lift(y, state):
    """Recover u = x + xi from projected coefficients y = [y_q; y_w]."""
    y = np.asarray(y, dtype=float)
    if y.size != state.num_z:
        raise ValueError(f"coefficient vector has length {y.size}, expected {state.num_z}")
    nq = state.num_q
    y1, y2 = y[:nq], y[nq:]
    x = state.Zq @ y1
    xi = state.Zw @ y2
    x_coeff = state.Vsources @ y1
    return LiftedSolution(u=x + xi, x=x, xi=xi, y=y.copy(), x_coeff=x_coeff)


def projected_equivalence_check(p, state, lambdas):
    """Verify the three projection identities at the solution for ``lambdas``.

    Compares, in the full space against the operators themselves:
      residual  ||A Zhat y - b||_{R^{-1}}^2  vs  ||K y - beta e1||^2,
      smooth    ||V y_q||_Q^2               vs  ||L y_q||^2,
      sparse    ||W Z_w y_w||^2             vs  ||Rwz y_w||^2.
    Returns a report dict with relative mismatches; diagnostic only.
    """
    lambda_x, lambda_xi = lambdas
    y = solve_projected(p, lambda_x, lambda_xi)
    sol = lift(y, state)
    nq = state.num_q

    r_full = state.A.apply(sol.u) - _b_of(state)
    lhs1 = float(np.dot(r_full, state.Rinv.apply(r_full)))
    kres = p.K @ y
    kres[0] -= p.beta
    rhs1 = float(np.dot(kres, kres))

    vq = state.Vsources @ y[:nq]
    lhs2 = float(np.dot(vq, state.Q.apply(vq)))
    ly = p.L @ y[:nq]
    rhs2 = float(np.dot(ly, ly))

    if state.num_w:
        wz = p.weights.w * (state.Zw @ y[nq:])
        lhs3 = float(np.dot(wz, wz))
        ry = p.Rwz @ y[nq:]
        rhs3 = float(np.dot(ry, ry))
    else:
        lhs3 = rhs3 = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-300)

    return {
        "residual": (lhs1, rhs1, rel(lhs1, rhs1)),
        "smooth": (lhs2, rhs2, rel(lhs2, rhs2)),
        "sparse": (lhs3, rhs3, rel(lhs3, rhs3)),
    }


def _b_of(state):
    """Reconstruct b from the first basis vector (b = beta * v1 / u1)."""
    if hasattr(state, "_left"):
        return state.beta * state._left.V.col(0)
    return state.beta * state._basis.V.col(0)
