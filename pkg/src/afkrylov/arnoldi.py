"""Augmented flexible Arnoldi factorization.

Maintains A Zhat = Vhat Hhat where Zhat interleaves covariance-preconditioned
directions (Q v, "q" columns) with reweighted directions (W^{-1} v, "w"
columns), Vhat has R^{-1}-orthonormal columns, and the q-source vectors are
additionally kept Q-orthonormalized as Vtilde with triangular factor Htilde.
"""

import numpy as np

from ._basis import GrowingMatrix, WeightedBasis

__all__ = ["AFArnoldiState", "init", "expand_q_column", "expand_w_column", "split_h"]

DEFAULT_BREAKDOWN_TOL = 1e-12


class AFArnoldiState:
    """Growing state of the augmented flexible Arnoldi decomposition.

    One instance is mutated by a single solve at a time; the operators it
    holds are immutable and may be shared.
    """

    def __init__(self, A, Q, Rinv, b, reorthogonalize=True,
                 breakdown_tol=DEFAULT_BREAKDOWN_TOL, include_q=True):
        if A.rows != A.cols:
            raise ValueError(f"AF-GMRES requires a square operator, got {A.rows}x{A.cols}")
        b = np.asarray(b, dtype=float)
        if b.shape != (A.cols,):
            raise ValueError(f"b has shape {b.shape}, expected ({A.cols},)")
        self.A, self.Q, self.Rinv = A, Q, Rinv
        self.n = A.cols
        self.breakdown_tol = float(breakdown_tol)
        self.passes = 2 if reorthogonalize else 1
        self.include_q = include_q
        self.skipped = []          # (expansion ordinal, 'q'|'w')
        self._expansions = 0

        rb = Rinv.apply(b)
        beta = np.sqrt(max(float(np.dot(b, rb)), 0.0))
        if beta == 0.0:
            raise ValueError("b is zero: nothing to solve")
        self.beta = beta

        self._basis = WeightedBasis(self.n, Rinv)
        self._basis.append_normalized(b, rb, beta)

        self._Z = GrowingMatrix(self.n)
        self._z_parity = []        # 'q' or 'w' per Zhat column
        self._z_src = []           # basis index each Zhat column was built from
        self._H_cols = []          # coefficient column per Zhat column

        # source vector for the next w column: most recent w-created basis
        # vector, initially v1
        self._w_src_idx = 0

        if include_q:
            # Q-orthonormalized copy of the q-source sequence (Eq.-style
            # V_k = Vtilde Htilde), plus the staged direction Q v
            self._vt = WeightedBasis(self.n, Q)
            self._Ht_cols = []
            qv1 = Q.apply(self._basis.V.col(0))
            self._staged_q = (qv1.copy(), 0)
            qnorm = self._vt.norm(self._basis.V.col(0), qv1)
            self._vt.append_normalized(self._basis.V.col(0), qv1, qnorm)
            self._Ht_cols.append(np.array([qnorm]))
        else:
            self._vt = None
            self._Ht_cols = []
            self._staged_q = None

    # -- expansion ---------------------------------------------------------

    @property
    def can_expand_q(self):
        return self._staged_q is not None

    def _absorb(self, z, parity, src_idx):
        """Append direction z, apply A, orthogonalize; returns the new basis
        index or None on breakdown (the direction column is kept either way)."""
        self._expansions += 1
        self._Z.append(z)
        self._z_parity.append(parity)
        self._z_src.append(src_idx)
        w = self.A.apply(z)
        coeffs, w, rw, pre, post = self._basis.orthogonalize(w, passes=self.passes)
        if pre == 0.0 or post <= self.breakdown_tol * pre:
            self._H_cols.append(coeffs)
            self.skipped.append((self._expansions, parity))
            return None
        idx = self._basis.append_normalized(w, rw, post)
        self._H_cols.append(np.append(coeffs, post))
        return idx

    def expand_q_column(self):
        """Consume the staged Q-preconditioned direction; on success the new
        basis vector is Q-reorthogonalized into Vtilde and the next direction
        Q v is staged. Returns True if a basis vector was added."""
        if self._staged_q is None:
            raise RuntimeError("no staged Q-direction: the q column family has terminated")
        z, src = self._staged_q
        self._staged_q = None
        idx = self._absorb(z, "q", src)
        if idx is None:
            return False
        v_new = self._basis.V.col(idx)
        qv = self.Q.apply(v_new)
        self._staged_q = (qv.copy(), idx)
        coeffs, vt, qvt, _, qnorm = self._vt.orthogonalize(v_new.copy(), qv.copy(),
                                                           passes=self.passes)
        if qnorm == 0.0:
            raise ValueError("new basis vector has zero Q-norm: Q is not numerically SPD")
        self._vt.append_normalized(vt, qvt, qnorm)
        self._Ht_cols.append(np.append(coeffs, qnorm))
        return True

    def expand_w_column(self, weights):
        """Add the reweighted direction W^{-1} v from the latest w-source
        vector. Returns True if a basis vector was added."""
        if np.any(weights.w <= 0):
            raise ValueError("weights must be strictly positive")
        src = self._w_src_idx
        z = weights.inv_apply(self._basis.V.col(src))
        idx = self._absorb(z, "w", src)
        if idx is None:
            return False
        self._w_src_idx = idx
        return True

    # -- views -------------------------------------------------------------

    @property
    def num_basis(self):
        return len(self._basis)

    @property
    def num_z(self):
        return len(self._Z)

    @property
    def Vhat(self):
        return self._basis.V.mat.copy()

    @property
    def Zhat(self):
        return self._Z.mat.copy()

    @property
    def Hhat(self):
        H = np.zeros((self.num_basis, self.num_z))
        for j, col in enumerate(self._H_cols):
            H[: col.size, j] = col
        return H

    @property
    def Vtilde(self):
        return self._vt.V.mat.copy()

    @property
    def Htilde(self):
        k = len(self._Ht_cols)
        Ht = np.zeros((k, k))
        for j, col in enumerate(self._Ht_cols):
            Ht[: col.size, j] = col
        return Ht

    def _parity_cols(self, parity):
        return [j for j, p in enumerate(self._z_parity) if p == parity]

    @property
    def num_q(self):
        return len(self._parity_cols("q"))

    @property
    def num_w(self):
        return len(self._parity_cols("w"))

    @property
    def Zq(self):
        return self._Z.mat[:, self._parity_cols("q")]

    @property
    def Zw(self):
        return self._Z.mat[:, self._parity_cols("w")]

    @property
    def Vsources(self):
        """Source basis vectors of the q columns (Zq = Q Vsources)."""
        srcs = [self._z_src[j] for j in self._parity_cols("q")]
        return self._basis.V.mat[:, srcs]

    @property
    def z_parities(self):
        return list(self._z_parity)

    @property
    def L(self):
        """Triangular factor whose 2-norm matches the Q-norm on the q block."""
        return self.Htilde[: self.num_q, : self.num_q]

    def split_h(self):
        """Parity split of Hhat into (q-column block, w-column block)."""
        H = self.Hhat
        return H[:, self._parity_cols("q")], H[:, self._parity_cols("w")]

    def interleave(self, y):
        """Map stacked coefficients [y_q; y_w] back to Zhat column order."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(self.num_z)
        iq, iw = 0, self.num_q
        for j, p in enumerate(self._z_parity):
            if p == "q":
                out[j] = y[iq]
                iq += 1
            else:
                out[j] = y[iw]
                iw += 1
        return out

    def residual_vector(self, y):
        """A (Zhat y) - b evaluated through the factorization (no A products)."""
        coef = self.Hhat @ self.interleave(y)
        return self._basis.V.mat @ coef - self.beta * self._basis.V.col(0)

    def projected_problem(self, weights=None, prev_qr=None):
        from .projected import make_projected_problem

        return make_projected_problem(self, weights, prev_qr=prev_qr)


def init(A, Q, Rinv, b, **kwargs):
    """Construct an AFArnoldiState (functional alias for the constructor)."""
    return AFArnoldiState(A, Q, Rinv, b, **kwargs)


def expand_q_column(state):
    state.expand_q_column()
    return state


def expand_w_column(state, weights):
    state.expand_w_column(weights)
    return state


def split_h(state):
    return state.split_h()
