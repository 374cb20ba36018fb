"""Matrix-free linear operators, weighted norms, and Matern covariances."""

import warnings

import numpy as np
from scipy.special import gamma, kv

__all__ = [
    "LinearOperator",
    "SpdOperator",
    "MaternSpec",
    "matern_kernel",
    "build_matern_covariance",
    "weighted_norm",
    "weighted_inner",
    "gaussian_blur_operator",
    "grid_coords",
    "DENSE_COVARIANCE_CAP",
]

# Largest point count for which the covariance kernel matrix is assembled densely.
DENSE_COVARIANCE_CAP = 20_000


class LinearOperator:
    """A map v -> A v of declared shape, with an optional transpose map.

    The transpose is required by the least-squares (Golub-Kahan) solvers but
    not by the GMRES-type ones. Instances are immutable and safe to share
    between concurrent solves.
    """

    def __init__(self, rows, cols, apply, apply_transpose=None, name=""):
        if rows <= 0 or cols <= 0:
            raise ValueError(f"operator shape must be positive, got {rows}x{cols}")
        self.rows = int(rows)
        self.cols = int(cols)
        self._apply = apply
        self._apply_t = apply_transpose
        self.name = name

    @property
    def has_transpose(self):
        return self._apply_t is not None

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.cols,):
            raise ValueError(f"expected vector of length {self.cols}, got shape {v.shape}")
        return np.asarray(self._apply(v), dtype=float)

    def apply_transpose(self, w):
        if self._apply_t is None:
            raise ValueError(f"operator {self.name or '<anonymous>'} does not provide a transpose")
        w = np.asarray(w, dtype=float)
        if w.shape != (self.rows,):
            raise ValueError(f"expected vector of length {self.rows}, got shape {w.shape}")
        return np.asarray(self._apply_t(w), dtype=float)

    @classmethod
    def from_matrix(cls, mat, name=""):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2:
            raise ValueError("from_matrix expects a 2-D array")
        return cls(mat.shape[0], mat.shape[1],
                   lambda v, m=mat: m @ v,
                   lambda w, m=mat: m.T @ w,
                   name=name)

    @classmethod
    def identity(cls, n):
        return cls(n, n, lambda v: v.copy(), lambda w: w.copy(), name="I")


class SpdOperator:
    """Symmetric positive definite operator (covariance Q or noise precision).

    Only matrix-vector products are required; symmetry and definiteness are
    the caller's responsibility (and are checked property-wise in the tests).
    """

    def __init__(self, dim, apply, role="", dense=None):
        if dim <= 0:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self._apply = apply
        self.role = role
        self._dense = dense

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {v.shape}")
        return np.asarray(self._apply(v), dtype=float)

    def to_dense(self):
        """Dense matrix, materialized by probing if not already stored."""
        if self._dense is None:
            cols = [self.apply(e) for e in np.eye(self.dim)]
            self._dense = np.column_stack(cols)
        return self._dense

    @classmethod
    def identity(cls, n, role=""):
        return cls(n, lambda v: v.copy(), role=role)

    @classmethod
    def diagonal(cls, d, role=""):
        d = np.asarray(d, dtype=float)
        if np.any(d <= 0):
            raise ValueError("diagonal entries must be positive")
        return cls(d.size, lambda v: d * v, role=role, dense=np.diag(d))

    @classmethod
    def from_matrix(cls, mat, role=""):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("from_matrix expects a square 2-D array")
        return cls(mat.shape[0], lambda v, m=mat: m @ v, role=role, dense=mat)


class MaternSpec:
    """Parameters of a Matern covariance kernel on a fixed set of points."""

    def __init__(self, nu, ell, variance=1.0, coords=None):
        if not np.isfinite(nu) or nu <= 0:
            raise ValueError(f"smoothness nu must be positive, got {nu}")
        if not np.isfinite(ell) or ell <= 0:
            raise ValueError(f"correlation length ell must be positive, got {ell}")
        if not np.isfinite(variance) or variance <= 0:
            raise ValueError(f"variance must be positive, got {variance}")
        self.nu = float(nu)
        self.ell = float(ell)
        self.variance = float(variance)
        self.coords = None if coords is None else np.atleast_2d(np.asarray(coords, dtype=float))

    def with_coords(self, coords):
        return MaternSpec(self.nu, self.ell, self.variance, coords)


def matern_kernel(r, spec):
    """Evaluate the Matern kernel at distance(s) r.

    Closed forms are used for nu in {1/2, 3/2, 5/2}; any other nu goes
    through the modified Bessel function K_nu. k(0) = variance, and k is
    strictly decreasing in r.
    """
    r = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise ValueError("distances must be finite and nonnegative")
    nu, ell, var = spec.nu, spec.ell, spec.variance
    s = r / ell
    if nu == 0.5:
        out = var * np.exp(-s)
    elif nu == 1.5:
        t = np.sqrt(3.0) * s
        out = var * (1.0 + t) * np.exp(-t)
    elif nu == 2.5:
        t = np.sqrt(5.0) * s
        out = var * (1.0 + t + t * t / 3.0) * np.exp(-t)
    else:
        arg = np.sqrt(2.0 * nu) * s
        with np.errstate(invalid="ignore", over="ignore"):
            out = var * (2.0 ** (1.0 - nu) / gamma(nu)) * arg ** nu * kv(nu, arg)
        # kv(nu, 0) = inf and 0^nu = 0 produce nan at r = 0; the limit is the variance
        out = np.where(arg == 0, var, out)
        out = np.where(np.isnan(out), 0.0, out)  # extreme underflow far in the tail
    return out if out.ndim else float(out)


def build_matern_covariance(spec):
    """Assemble the dense Matern kernel matrix over spec.coords as an SpdOperator.

    Matrix-vector products use the stored dense matrix; no low-rank
    compression is attempted. Point counts above DENSE_COVARIANCE_CAP are
    rejected.
    """
    if spec.coords is None or spec.coords.size == 0:
        raise ValueError("MaternSpec must carry a non-empty coordinate list")
    pts = spec.coords
    n = pts.shape[0]
    if n > DENSE_COVARIANCE_CAP:
        raise ValueError(f"{n} points exceeds the dense covariance cap {DENSE_COVARIANCE_CAP}")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    if n > 1:
        off = dist + np.diag(np.full(n, np.inf))
        if np.min(off) == 0.0:
            warnings.warn("duplicate coordinates: kernel matrix is singular in exact arithmetic",
                          stacklevel=2)
    K = matern_kernel(dist, spec)
    K = np.asarray(K, dtype=float)
    np.fill_diagonal(K, spec.variance)
    K = 0.5 * (K + K.T)  # exact symmetry despite rounding in the distance matrix
    return SpdOperator.from_matrix(K, role="covariance")


def weighted_inner(u, v, M):
    """Inner product <u, Mv> for an SpdOperator M."""
    return float(np.dot(u, M.apply(v)))


def weighted_norm(v, M):
    """Norm sqrt(v' M v) induced by an SpdOperator M.

    Raises if the computed quadratic form is negative beyond rounding
    (-1e-14 * ||v||^2), which signals a non-SPD operator.
    """
    v = np.asarray(v, dtype=float)
    q = float(np.dot(v, M.apply(v)))
    nrm2 = float(np.dot(v, v))
    if q < -1e-14 * nrm2:
        raise ValueError(f"quadratic form {q} is negative: operator is not numerically SPD")
    return np.sqrt(max(q, 0.0))


def grid_coords(side, d=2):
    """Coordinates of a regular side^d grid on [0, 1]^d, row-major order."""
    axes = [np.linspace(0.0, 1.0, side)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _gaussian_psf(sigma, radius):
    """Normalized (sum = 1) truncated Gaussian PSF of side 2*radius + 1."""
    ax = np.arange(-radius, radius + 1, dtype=float)
    if sigma < 1e-8:
        k = np.zeros((ax.size, ax.size))
        k[radius, radius] = 1.0
        return k
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur_operator(image_side, psf_sigma, boundary="zero", psf_radius=None):
    """2-D Gaussian blur on a square image, as a LinearOperator on n = side^2 pixels.

    The PSF is a normalized truncated Gaussian; its support radius defaults
    to ceil(4*psf_sigma) (at least 1) and is exposed because no canonical
    value exists. ``boundary`` is "zero" (pixels outside the frame are zero)
    or "reflexive" (mirror padding). apply_transpose is the exact adjoint in
    both cases; for the symmetric PSF with zero boundary the operator is its
    own transpose.
    """
    if image_side < 2:
        raise ValueError(f"image_side must be >= 2, got {image_side}")
    if not np.isfinite(psf_sigma) or psf_sigma < 0:
        raise ValueError(f"psf_sigma must be finite and nonnegative, got {psf_sigma}")
    if boundary not in ("zero", "reflexive"):
        raise ValueError(f"boundary must be 'zero' or 'reflexive', got {boundary!r}")
    side = int(image_side)
    n = side * side
    if psf_radius is None:
        psf_radius = max(1, int(np.ceil(4.0 * psf_sigma)))
    p = int(psf_radius)
    psf = _gaussian_psf(psf_sigma, p)
    psf_flip = psf[::-1, ::-1]

    from scipy.signal import convolve2d

    if boundary == "zero":
        def apply(v):
            img = v.reshape(side, side)
            return convolve2d(img, psf, mode="same", boundary="fill").ravel()

        def apply_t(w):
            img = w.reshape(side, side)
            # adjoint of zero-padded convolution is correlation = convolution
            # with the flipped kernel
            return convolve2d(img, psf_flip, mode="same", boundary="fill").ravel()
    else:
        # Mirror padding implemented as an explicit gather so that the adjoint
        # (a scatter-add over the same index map) is exact.
        idx = np.pad(np.arange(n).reshape(side, side), p, mode="symmetric")

        def apply(v):
            padded = v[idx]
            return convolve2d(padded, psf, mode="valid").ravel()

        def apply_t(w):
            img = w.reshape(side, side)
            full = convolve2d(img, psf_flip, mode="full")
            out = np.zeros(n)
            np.add.at(out, idx.ravel(), full.ravel())
            return out

    op = LinearOperator(n, n, apply, apply_t, name=f"blur{side}x{side}")
    op.psf = psf
    op.psf_radius = p
    op.boundary = boundary
    op.image_side = side
    return op
