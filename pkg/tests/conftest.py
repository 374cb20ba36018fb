import numpy as np
import pytest

from afkrylov.operators import (LinearOperator, MaternSpec, SpdOperator,
                                build_matern_covariance)


@pytest.fixture
def rng():
    return np.random.default_rng(20240815)


def random_instance(seed, n, m=None, matern_nu=1.5, matern_ell=0.4):
    """Random dense operator with diagonal R^{-1} and a 1-D Matern Q."""
    rng = np.random.default_rng(seed)
    m = n if m is None else m
    Amat = rng.standard_normal((m, n))
    A = LinearOperator.from_matrix(Amat)
    coords = np.linspace(0.0, 1.0, n)[:, None]
    Q = build_matern_covariance(MaternSpec(matern_nu, matern_ell, coords=coords))
    rdiag = rng.uniform(0.5, 2.0, m)
    Rinv = SpdOperator.diagonal(rdiag)
    b = rng.standard_normal(m)
    return Amat, A, Q, Rinv, rdiag, b
