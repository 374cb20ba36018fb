"""AF-GMRES / AF-LSQR drivers and the degenerate single-prior baselines.

One iteration expands the decomposition, assembles the projected problem,
selects (or reuses) the regularization parameters, solves and lifts, then
updates the reweighting from the new sparse component. Disabling one of the
two direction families recovers the standard hybrid and flexible methods
used for comparison.
"""

import numpy as np
from dataclasses import dataclass, field

from .arnoldi import AFArnoldiState, DEFAULT_BREAKDOWN_TOL
from .golub_kahan import AFGKState
from .objective import DiagonalWeights, compute_weights, default_tau
from .operators import SpdOperator
from .projected import LiftedSolution, lift, solve_projected
from .regparam import (RegParams, SelectionConfig, gcv_stop_value, select_dp,
                       select_optimal, select_wgcv)

__all__ = [
    "METHODS",
    "SolverConfig",
    "IterTrace",
    "SolveResult",
    "af_gmres",
    "af_lsqr",
    "baseline",
    "solve",
]

METHODS = ("af_gmres", "af_lsqr", "hybrid_gmres", "fgmres_l1",
           "hybrid_lsqr_q", "flsqr_l1")

_ARNOLDI_METHODS = {"af_gmres": (True, True), "hybrid_gmres": (True, False),
                    "fgmres_l1": (False, True)}
_GK_METHODS = {"af_lsqr": (True, True), "hybrid_lsqr_q": (True, False),
               "flsqr_l1": (False, True)}


@dataclass
class SolverConfig:
    method: str = "af_gmres"
    maxit: int = 100
    tau: float = None                      # None: 1e-4 * mean |b|
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    stop_tol: float = None                 # None disables GCV-flattening stop
    fixed_params: RegParams = None
    reorthogonalize: bool = True
    breakdown_tol: float = DEFAULT_BREAKDOWN_TOL
    keep_iterates: bool = False
    freeze_weights: float = None           # constant weight value (test hook)
    dense_mm: bool = True                  # full-space steps after saturation
    dense_mm_max_n: int = 400

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.maxit < 1:
            raise ValueError("maxit must be >= 1")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.selection.method == "fixed" and self.fixed_params is None:
            raise ValueError("fixed selection requires fixed_params")


@dataclass
class IterTrace:
    k: int
    lambda_x: float
    lambda_xi: float
    rel_error_u: float
    rel_error_x: float
    rel_error_xi: float
    phi_value: float
    projected_residual: float
    gcv_value: float
    a_applies: int
    at_applies: int
    q_applies: int


@dataclass
class SolveResult:
    u: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    trace: list
    stop_reason: str
    operator_counts: dict
    iterates: list = None
    state: object = None

    @property
    def iterations(self):
        return len(self.trace)


class _CountingLinear:
    """Per-solve counting wrapper; the wrapped operator stays immutable."""

    def __init__(self, op):
        self._op = op
        self.rows, self.cols = op.rows, op.cols
        self.n_apply = 0
        self.n_apply_t = 0

    @property
    def has_transpose(self):
        return self._op.has_transpose

    def apply(self, v):
        self.n_apply += 1
        return self._op.apply(v)

    def apply_transpose(self, w):
        self.n_apply_t += 1
        return self._op.apply_transpose(w)


class _CountingSpd:
    def __init__(self, op):
        self._op = op
        self.dim = op.dim
        self.n_apply = 0

    def apply(self, v):
        self.n_apply += 1
        return self._op.apply(v)

    def to_dense(self):
        return self._op.to_dense()


def _truth_fields(truth):
    if truth is None:
        return None, None, None
    if hasattr(truth, "u_true"):
        return truth.u_true, getattr(truth, "x_true", None), getattr(truth, "xi_true", None)
    u_true, x_true, xi_true = truth
    return u_true, x_true, xi_true


def _rel(err_vec, ref):
    if ref is None:
        return np.nan
    nrm = np.linalg.norm(ref)
    if nrm == 0:
        return np.nan
    return float(np.linalg.norm(err_vec - ref) / nrm)


def _select_params(p, cfg, state, u_true, k, m_data):
    sel = cfg.selection
    if sel.method == "fixed":
        return cfg.fixed_params, {}
    if sel.method == "optimal":
        return select_optimal(p, state, u_true, sel)
    if sel.method == "dp":
        return select_dp(p, sel, m_data)
    return select_wgcv(p, sel, k, m_data)


def _effective_lambdas(params):
    lx = 0.0 if np.isnan(params.lambda_x) else params.lambda_x
    lxi = 0.0 if np.isnan(params.lambda_xi) else params.lambda_xi
    return lx, lxi


def _phi_from_solution(state, Rinv, y, sol, lx, lxi, tau):
    r = state.residual_vector(y)
    fit = float(np.dot(r, Rinv.apply(r)))
    smooth = float(np.dot(sol.x_coeff, sol.x))  # x = Q x_coeff
    sparse = float(np.sum(2.0 * np.sqrt(sol.xi ** 2 + tau ** 2)))
    return fit + lx ** 2 * smooth + lxi ** 2 * sparse


def _run(A, Q, Rinv, b, cfg, truth, route, include_q, include_w):
    if not include_q and not include_w:
        raise ValueError("at least one direction family must be enabled")
    b = np.asarray(b, dtype=float)
    n = A.cols
    u_true, x_true, xi_true = _truth_fields(truth)

    Ac = _CountingLinear(A)
    Qc = _CountingSpd(Q)
    tau = cfg.tau if cfg.tau is not None else default_tau(b)
    frozen = None
    if cfg.freeze_weights is not None:
        frozen = DiagonalWeights(w=np.full(n, float(cfg.freeze_weights)), tau=tau)

    kwargs = dict(reorthogonalize=cfg.reorthogonalize,
                  breakdown_tol=cfg.breakdown_tol, include_q=include_q)
    if route == "arnoldi":
        state = AFArnoldiState(Ac, Qc, Rinv, b, **kwargs)
    else:
        state = AFGKState(Ac, Qc, Rinv, b, **kwargs)

    weights = None
    if include_w:
        weights = frozen if frozen is not None else compute_weights(np.zeros(n), tau)

    trace = []
    iterates = [] if cfg.keep_iterates else None
    ghat_prev = None
    stop_reason = "maxit"
    params = cfg.fixed_params
    sol = LiftedSolution(u=np.zeros(n), x=np.zeros(n), xi=np.zeros(n),
                         y=np.zeros(0), x_coeff=np.zeros(n))
    switch_to_dense = False
    m_data = A.rows

    for k in range(1, cfg.maxit + 1):
        size_before = _basis_size(state)
        if route == "arnoldi":
            if include_q and state.can_expand_q:
                state.expand_q_column()
            if include_w and not include_q:
                state.expand_w_column(weights)
        else:
            if k > 1:
                state.advance_transpose_side()
                if include_q:
                    state.expand_q_column()
            if include_w and not include_q:
                state.expand_w_column(weights)

        if state.num_z == 0:
            stop_reason = "stagnation"
            break

        p = state.projected_problem(weights)
        params, _info = _select_params(p, cfg, state, u_true, k, m_data)
        lx, lxi = _effective_lambdas(params)
        y = solve_projected(p, lx, lxi)
        sol = lift(y, state)

        kres = p.K @ y
        kres[0] -= p.beta
        proj_resid = float(np.linalg.norm(kres))
        phi = _phi_from_solution(state, Rinv, y, sol, lx, lxi, tau)
        try:
            gcv = gcv_stop_value(p, params, k)
        except np.linalg.LinAlgError:
            gcv = np.nan
        trace.append(IterTrace(
            k=k, lambda_x=params.lambda_x, lambda_xi=params.lambda_xi,
            rel_error_u=_rel(sol.u, u_true), rel_error_x=_rel(sol.x, x_true),
            rel_error_xi=_rel(sol.xi, xi_true), phi_value=phi,
            projected_residual=proj_resid, gcv_value=gcv,
            a_applies=Ac.n_apply, at_applies=Ac.n_apply_t, q_applies=Qc.n_apply))
        if iterates is not None:
            iterates.append(sol)

        if include_w and frozen is None:
            anchor = sol.u if (k == 1 and include_q) else sol.xi
            weights = compute_weights(anchor, tau)
        if include_w and include_q:
            state.expand_w_column(weights)

        # flattening = small successive change relative to the current value;
        # the stopping function decays over orders of magnitude before it
        # levels off, so normalizing by its running value (not the first one)
        # is what detects the plateau
        if (cfg.stop_tol is not None and ghat_prev is not None
                and np.isfinite(gcv) and np.isfinite(ghat_prev)
                and abs(gcv - ghat_prev) / max(ghat_prev, 1e-300) <= cfg.stop_tol):
            stop_reason = "gcv_flat"
            break
        ghat_prev = gcv

        stagnant = _basis_size(state) == size_before
        if route == "gk" and state.t_cursor < state.num_left:
            stagnant = False
        if stagnant:
            if cfg.dense_mm and n <= cfg.dense_mm_max_n and k < cfg.maxit:
                switch_to_dense = True
            else:
                stop_reason = "stagnation"
            break

    if switch_to_dense:
        sol, extra, weights = _dense_mm_loop(
            Ac, Qc, Rinv, b, cfg, params, weights, frozen, sol, tau,
            include_q, include_w, len(trace), u_true, x_true, xi_true, iterates)
        trace.extend(extra)
        stop_reason = "maxit"

    counts = {"A": Ac.n_apply, "At": Ac.n_apply_t, "Q": Qc.n_apply}
    return SolveResult(u=sol.u, x=sol.x, xi=sol.xi, trace=trace,
                       stop_reason=stop_reason, operator_counts=counts,
                       iterates=iterates, state=state)


def _basis_size(state):
    if hasattr(state, "num_left"):
        return state.num_left + state.num_right
    return state.num_basis


def _dense_mm_loop(Ac, Qc, Rinv, b, cfg, params, weights, frozen, sol, tau,
                   include_q, include_w, k_done, u_true, x_true, xi_true, iterates):
    """Full-space majorization steps once the basis has saturated.

    Solves the normal equations of the reweighted quadratic exactly at each
    step; the regularization parameters are frozen at their last selected
    values. Only reachable for small problems (dense_mm_max_n).
    """
    n = Ac.cols
    Ad = np.column_stack([Ac.apply(e) for e in np.eye(n)])
    Qd = Qc.to_dense()
    Rid = np.column_stack([Rinv.apply(e) for e in np.eye(Ac.rows)])
    lx, lxi = _effective_lambdas(params) if params is not None else (0.0, 0.0)

    AQ = Ad @ Qd
    RiA = Rid @ Ad
    RiAQ = Rid @ AQ
    N11 = AQ.T @ RiAQ + lx ** 2 * Qd
    N12 = AQ.T @ RiA
    N22_fit = Ad.T @ RiA
    rhs1 = AQ.T @ (Rid @ b)
    rhs2 = Ad.T @ (Rid @ b)

    extra = []
    for k in range(k_done + 1, cfg.maxit + 1):
        if include_q and include_w:
            N = np.block([[N11, N12],
                          [N12.T, N22_fit + lxi ** 2 * np.diag(weights.w ** 2)]])
            z = np.linalg.solve(N, np.concatenate([rhs1, rhs2]))
            x_coeff, xi = z[:n], z[n:]
        elif include_q:
            x_coeff = np.linalg.solve(N11, rhs1)
            xi = np.zeros(n)
        else:
            N = N22_fit + lxi ** 2 * np.diag(weights.w ** 2)
            xi = np.linalg.solve(N, rhs2)
            x_coeff = np.zeros(n)
        x = Qd @ x_coeff
        sol = LiftedSolution(u=x + xi, x=x, xi=xi, y=np.zeros(0), x_coeff=x_coeff)

        r = Ad @ sol.u - b
        fit = float(np.dot(r, Rid @ r))
        phi = (fit + lx ** 2 * float(np.dot(x_coeff, x))
               + lxi ** 2 * float(np.sum(2.0 * np.sqrt(xi ** 2 + tau ** 2))))
        lam_x = params.lambda_x if params is not None else np.nan
        lam_xi = params.lambda_xi if params is not None else np.nan
        extra.append(IterTrace(
            k=k, lambda_x=lam_x, lambda_xi=lam_xi,
            rel_error_u=_rel(sol.u, u_true), rel_error_x=_rel(sol.x, x_true),
            rel_error_xi=_rel(sol.xi, xi_true), phi_value=phi,
            projected_residual=np.sqrt(fit), gcv_value=np.nan,
            a_applies=Ac.n_apply, at_applies=Ac.n_apply_t, q_applies=Qc.n_apply))
        if iterates is not None:
            iterates.append(sol)
        if include_w and frozen is None:
            weights = compute_weights(xi, tau)
    return sol, extra, weights


def solve(A, Q, Rinv, b, cfg, truth=None):
    """Run the solver selected by cfg.method; returns a SolveResult."""
    if cfg.method in _ARNOLDI_METHODS:
        include_q, include_w = _ARNOLDI_METHODS[cfg.method]
        Quse = Q if cfg.method == "af_gmres" else SpdOperator.identity(A.cols)
        return _run(A, Quse, Rinv, b, cfg, truth, "arnoldi", include_q, include_w)
    include_q, include_w = _GK_METHODS[cfg.method]
    Quse = Q if cfg.method in ("af_lsqr", "hybrid_lsqr_q") else SpdOperator.identity(A.cols)
    return _run(A, Quse, Rinv, b, cfg, truth, "gk", include_q, include_w)


def af_gmres(A, Q, Rinv, b, cfg=None, truth=None):
    """Augmented flexible GMRES (square A; transpose not required)."""
    cfg = cfg or SolverConfig(method="af_gmres")
    if cfg.method != "af_gmres":
        raise ValueError(f"af_gmres called with method {cfg.method!r}")
    return solve(A, Q, Rinv, b, cfg, truth)


def af_lsqr(A, Q, Rinv, b, cfg=None, truth=None):
    """Augmented flexible LSQR (rectangular A supported; transpose required)."""
    cfg = cfg or SolverConfig(method="af_lsqr")
    if cfg.method != "af_lsqr":
        raise ValueError(f"af_lsqr called with method {cfg.method!r}")
    return solve(A, Q, Rinv, b, cfg, truth)


def baseline(method, A, Q, Rinv, b, cfg=None, truth=None):
    """Run one of the degenerate comparison methods.

    hybrid_gmres / hybrid_lsqr_q keep only the fixed-preconditioner columns
    (with Q = I on the GMRES route, matching the plain hybrid solver);
    fgmres_l1 / flsqr_l1 keep only the reweighted columns.
    """
    if method in ("af_gmres", "af_lsqr"):
        raise ValueError(f"{method} is not a baseline; call it directly")
    if method not in METHODS:
        raise ValueError(f"unknown baseline {method!r}")
    if cfg is None:
        cfg = SolverConfig(method=method)
    elif cfg.method != method:
        raise ValueError(f"config method {cfg.method!r} does not match {method!r}")
    return solve(A, Q, Rinv, b, cfg, truth)
