"""IRLS weights, the smoothed two-term objective, and its quadratic majorants."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiagonalWeights",
    "ObjectiveSpec",
    "compute_weights",
    "default_tau",
    "eval_phi",
    "eval_phi_k",
    "majorant_constant",
]


@dataclass(frozen=True)
class DiagonalWeights:
    """Diagonal IRLS weights w_i = (xi_i^2 + tau^2)^(-1/4)."""

    w: np.ndarray
    tau: float

    def inv_apply(self, v):
        """W^{-1} v, elementwise; the weights are strictly positive."""
        return v / self.w

    def apply(self, v):
        return self.w * v


def compute_weights(xi, tau):
    """Smoothed reweighting of the sparsity term at the current iterate.

    Each weight is (xi_i^2 + tau^2)^(-1/4), so weights are bounded above by
    tau^(-1/2) (attained exactly where xi_i = 0) and never divide by zero.
    """
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"smoothing parameter tau must be positive, got {tau}")
    xi = np.asarray(xi, dtype=float)
    w = (xi * xi + tau * tau) ** -0.25
    return DiagonalWeights(w=w, tau=float(tau))


def default_tau(b, scale=1e-4):
    """Default smoothing parameter: a small multiple of the mean data magnitude."""
    b = np.asarray(b, dtype=float)
    base = np.sum(np.abs(b)) / b.size
    return max(scale * base, 1e3 * np.finfo(float).tiny)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Data defining the smoothed objective: operators, data, and penalties.

    The objective evaluated by :func:`eval_phi` is

        || A Q x + A xi - b ||_{R^{-1}}^2 + lambda_x^2 ||x||_Q^2
            + lambda_xi^2 * sum_i 2 sqrt(xi_i^2 + tau^2),

    where the last term is the standard smoothed-l1 penalty whose quadratic
    tangent majorant has the weights of :func:`compute_weights`.
    """

    A: object
    Q: object
    Rinv: object
    b: np.ndarray
    lambda_x: float
    lambda_xi: float
    tau: float

    def __post_init__(self):
        n = self.Q.dim
        if self.A.cols != n:
            raise ValueError(f"A has {self.A.cols} columns but Q has dimension {n}")
        if self.Rinv.dim != self.A.rows or len(self.b) != self.A.rows:
            raise ValueError("data dimension mismatch among A, Rinv, b")


def _check_finite(name, v):
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")


def eval_phi(spec, x, xi):
    """Smoothed objective value at (x, xi); x is the pre-covariance variable."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    _check_finite("x", x)
    _check_finite("xi", xi)
    Qx = spec.Q.apply(x)
    r = spec.A.apply(Qx + xi) - spec.b
    fit = float(np.dot(r, spec.Rinv.apply(r)))
    smooth = float(np.dot(x, Qx))
    sparse = float(np.sum(2.0 * np.sqrt(xi * xi + spec.tau ** 2)))
    return fit + spec.lambda_x ** 2 * smooth + spec.lambda_xi ** 2 * sparse


def majorant_constant(xi_prev, tau, lambda_xi):
    """Constant c_k that makes the reweighted quadratic tangent at xi_prev."""
    s2 = np.asarray(xi_prev, dtype=float) ** 2
    root = np.sqrt(s2 + tau * tau)
    return lambda_xi ** 2 * float(np.sum(2.0 * root - s2 / root))


def eval_phi_k(spec, W_prev, xi_prev, x, xi):
    """Quadratic tangent majorant of the objective, anchored at xi_prev.

    Requires W_prev = compute_weights(xi_prev, spec.tau); the majorant equals
    the objective at xi = xi_prev and dominates it everywhere.
    """
    xi_prev = np.asarray(xi_prev, dtype=float)
    expected = (xi_prev ** 2 + spec.tau ** 2) ** -0.25
    if W_prev.w.shape != xi_prev.shape or not np.allclose(W_prev.w, expected, rtol=1e-12, atol=0):
        raise ValueError("W_prev is not compute_weights(xi_prev, tau)")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    Qx = spec.Q.apply(x)
    r = spec.A.apply(Qx + xi) - spec.b
    fit = float(np.dot(r, spec.Rinv.apply(r)))
    smooth = float(np.dot(x, Qx))
    wxi = W_prev.w * xi
    c_k = majorant_constant(xi_prev, spec.tau, spec.lambda_xi)
    return (fit + spec.lambda_x ** 2 * smooth
            + spec.lambda_xi ** 2 * float(np.dot(wxi, wxi)) + c_k)
