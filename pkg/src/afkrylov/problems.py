"""Synthetic smooth-plus-sparse test problems and their serialization.

The deblurring problem pairs a Gaussian blur with a Matern-sampled smooth
field plus sparse speckles; the projection problem replaces the blur with a
well-conditioned Gaussian random map (rectangular, m = factor * n). To avoid
the inverse crime, the prior covariance handed to the solver uses different
Matern parameters than the truth generator.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .operators import (LinearOperator, MaternSpec, SpdOperator,
                        build_matern_covariance, gaussian_blur_operator,
                        grid_coords)

__all__ = [
    "TestProblem",
    "TRUTH_MATERN",
    "SOLVER_MATERN",
    "smooth_plus_sparse_truth",
    "add_noise",
    "deblur_problem",
    "projection_problem",
    "save_problem",
    "load_problem",
]

# Paper-style defaults: the truth field and the solver prior intentionally
# disagree (inverse-crime guard).
TRUTH_MATERN = MaternSpec(nu=2.5, ell=0.05)
SOLVER_MATERN = MaternSpec(nu=1.0, ell=0.5)

# covariance factorizations are expensive and depend only on (spec, grid)
_factor_cache = {}


@dataclass
class TestProblem:
    """Bundle of operator, data, truth, and priors for one experiment."""

    A: LinearOperator
    b: np.ndarray
    u_true: np.ndarray
    x_true: np.ndarray
    xi_true: np.ndarray
    Q: SpdOperator
    Rinv: SpdOperator
    noise_level: float
    seed: int
    noise_sigma: float = np.nan
    meta: dict = None

    @property
    def n(self):
        return self.A.cols

    @property
    def m(self):
        return self.A.rows


def _covariance_factor(spec, coords):
    """Symmetric factor F with F F' = kernel matrix, cached per (spec, grid)."""
    key = (round(spec.nu, 12), round(spec.ell, 12), round(spec.variance, 12),
           coords.shape, coords.tobytes())
    if key in _factor_cache:
        return _factor_cache[key]
    K = build_matern_covariance(spec.with_coords(coords)).to_dense()
    try:
        F = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        try:
            F = np.linalg.cholesky(K + 1e-10 * np.eye(K.shape[0]))
            warnings.warn("kernel matrix not numerically PSD; added 1e-10 jitter",
                          stacklevel=2)
        except np.linalg.LinAlgError:
            warnings.warn("jittered Cholesky failed; using eigenvalue factor",
                          stacklevel=2)
            evals, evecs = np.linalg.eigh(K)
            F = evecs * np.sqrt(np.clip(evals, 0.0, None))
    _factor_cache[key] = F
    return F


def smooth_plus_sparse_truth(coords, matern, n_speckles, speckle_scale, seed):
    """Sample a truth u = x + xi: a Gaussian field plus scaled speckles.

    x is drawn from the Matern covariance via a dense symmetric
    factorization; xi places n_speckles distinct entries at
    speckle_scale * max(x).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = coords.shape[0]
    if n_speckles >= n:
        raise ValueError(f"n_speckles must be below the grid size, got {n_speckles} >= {n}")
    rng = np.random.default_rng(seed)
    F = _covariance_factor(matern, coords)
    x = F @ rng.standard_normal(n)
    xi = np.zeros(n)
    if n_speckles > 0:
        idx = rng.choice(n, size=n_speckles, replace=False)
        xi[idx] = speckle_scale * np.max(x)
    return x + xi, x, xi


def add_noise(b_exact, level, seed):
    """Add Gaussian noise scaled so that ||e|| / ||b_exact|| equals level exactly."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    b_exact = np.asarray(b_exact, dtype=float)
    if level == 0:
        return b_exact.copy()
    nrm = np.linalg.norm(b_exact)
    if nrm == 0:
        raise ValueError("cannot scale noise against a zero data vector")
    g = np.random.default_rng(seed).standard_normal(b_exact.size)
    e = level * nrm * g / np.linalg.norm(g)
    return b_exact + e


def _finish_problem(A, coords, noise_level, seed, truth_matern, solver_matern,
                    n_speckles, speckle_scale, meta):
    u, x, xi = smooth_plus_sparse_truth(coords, truth_matern, n_speckles,
                                        speckle_scale, seed)
    b_exact = A.apply(u)
    b = add_noise(b_exact, noise_level, seed + 1)
    Q = build_matern_covariance(solver_matern.with_coords(coords))
    Rinv = SpdOperator.identity(A.rows, role="noise precision")
    sigma = noise_level * np.linalg.norm(b_exact) / np.sqrt(A.rows)
    return TestProblem(A=A, b=b, u_true=u, x_true=x, xi_true=xi, Q=Q,
                       Rinv=Rinv, noise_level=noise_level, seed=seed,
                       noise_sigma=sigma, meta=meta)


def deblur_problem(side, psf_sigma=1.0, noise_level=1e-5, seed=0,
                   boundary="zero", psf_radius=None,
                   truth_matern=TRUTH_MATERN, solver_matern=SOLVER_MATERN,
                   n_speckles=None, speckle_scale=1.0):
    """Square image-deblurring problem on a side x side pixel grid."""
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    A = gaussian_blur_operator(side, psf_sigma, boundary=boundary,
                               psf_radius=psf_radius)
    coords = grid_coords(side)
    if n_speckles is None:
        n_speckles = max(3, side * side // 100)
    meta = {"generator": "deblur", "side": side, "psf_sigma": psf_sigma,
            "boundary": boundary, "psf_radius": A.psf_radius,
            "n_speckles": n_speckles, "speckle_scale": speckle_scale,
            "truth_nu": truth_matern.nu, "truth_ell": truth_matern.ell,
            "solver_nu": solver_matern.nu, "solver_ell": solver_matern.ell}
    return _finish_problem(A, coords, noise_level, seed, truth_matern,
                           solver_matern, n_speckles, speckle_scale, meta)


def projection_problem(side, m_factor=2, noise_level=0.04, seed=0,
                       truth_matern=TRUTH_MATERN, solver_matern=SOLVER_MATERN,
                       n_speckles=None, speckle_scale=1.0):
    """Rectangular problem: a well-conditioned Gaussian random forward map
    (m = m_factor * n) observing a smooth-plus-sparse field on a 2-D grid."""
    if side < 4:
        raise ValueError(f"side must be >= 4, got {side}")
    n = side * side
    m = int(m_factor * n)
    G = np.random.default_rng(seed + 10_000).standard_normal((m, n)) / np.sqrt(m)
    A = LinearOperator.from_matrix(G, name=f"proj{m}x{n}")
    coords = grid_coords(side)
    if n_speckles is None:
        n_speckles = max(3, n // 100)
    meta = {"generator": "projection", "side": side, "m_factor": m_factor,
            "n_speckles": n_speckles, "speckle_scale": speckle_scale,
            "truth_nu": truth_matern.nu, "truth_ell": truth_matern.ell,
            "solver_nu": solver_matern.nu, "solver_ell": solver_matern.ell}
    return _finish_problem(A, coords, noise_level, seed, truth_matern,
                           solver_matern, n_speckles, speckle_scale, meta)


GENERATORS = {"deblur": deblur_problem, "projection": projection_problem}


# -- serialization ------------------------------------------------------------

def _write_vector(path, v):
    np.savetxt(path, v, fmt="%.17g")


def _read_vector(path):
    return np.atleast_1d(np.loadtxt(path, dtype=float))


def save_problem(problem, outdir):
    """Serialize a generated problem to a directory.

    The operator is stored as its generator recipe (problem.txt, key=value);
    data and truth vectors go to one CSV each (%.17g round-trips doubles
    losslessly).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not problem.meta or "generator" not in problem.meta:
        raise ValueError("only generator-built problems can be serialized")
    lines = [f"generator={problem.meta['generator']}",
             f"seed={problem.seed}",
             f"noise_level={problem.noise_level!r}",
             f"noise_sigma={problem.noise_sigma!r}"]
    for key, val in problem.meta.items():
        if key != "generator":
            lines.append(f"{key}={val!r}")
    (outdir / "problem.txt").write_text("\n".join(lines) + "\n")
    for name in ("b", "u_true", "x_true", "xi_true"):
        _write_vector(outdir / f"{name}.csv", getattr(problem, name))
    return outdir


def load_problem(indir):
    """Rebuild a serialized problem: operators from the recorded recipe,
    vectors from the stored files."""
    indir = Path(indir)
    recipe = {}
    for line in (indir / "problem.txt").read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            recipe[key.strip()] = val.strip().strip("'\"")
    gen = recipe["generator"]
    seed = int(recipe["seed"])
    noise_level = float(recipe["noise_level"])
    truth = MaternSpec(float(recipe["truth_nu"]), float(recipe["truth_ell"]))
    solver = MaternSpec(float(recipe["solver_nu"]), float(recipe["solver_ell"]))
    common = dict(noise_level=noise_level, seed=seed, truth_matern=truth,
                  solver_matern=solver, n_speckles=int(recipe["n_speckles"]),
                  speckle_scale=float(recipe["speckle_scale"]))
    if gen == "deblur":
        problem = deblur_problem(int(recipe["side"]),
                                 psf_sigma=float(recipe["psf_sigma"]),
                                 boundary=recipe["boundary"],
                                 psf_radius=int(recipe["psf_radius"]), **common)
    elif gen == "projection":
        problem = projection_problem(int(recipe["side"]),
                                     m_factor=float(recipe["m_factor"]), **common)
    else:
        raise ValueError(f"unknown generator {gen!r} in {indir}")
    # stored vectors are authoritative
    problem.b = _read_vector(indir / "b.csv")
    problem.u_true = _read_vector(indir / "u_true.csv")
    problem.x_true = _read_vector(indir / "x_true.csv")
    problem.xi_true = _read_vector(indir / "xi_true.csv")
    return problem
