"""Augmented flexible Golub-Kahan factorization.

Maintains the paired partial decompositions

    A Zhat = Uhat Mhat,        A' R^{-1} Uhat[:, :t] = Vhat That,

with Uhat R^{-1}-orthonormal (data space) and Vhat Q-orthonormal (solution
space). Zhat interleaves Q v ("q") and W^{-1} v ("w") directions, both built
from the first right-basis vector produced in each iteration.
"""

import numpy as np

from ._basis import GrowingMatrix, WeightedBasis
from .arnoldi import DEFAULT_BREAKDOWN_TOL

__all__ = ["AFGKState", "init", "expand", "split_m"]


class AFGKState:
    """Growing state of the augmented flexible Golub-Kahan decomposition."""

    def __init__(self, A, Q, Rinv, b, reorthogonalize=True,
                 breakdown_tol=DEFAULT_BREAKDOWN_TOL, include_q=True):
        if not A.has_transpose:
            raise ValueError("AF-LSQR requires an operator with a transpose")
        b = np.asarray(b, dtype=float)
        if b.shape != (A.rows,):
            raise ValueError(f"b has shape {b.shape}, expected ({A.rows},)")
        self.A, self.Q, self.Rinv = A, Q, Rinv
        self.m, self.n = A.rows, A.cols
        self.breakdown_tol = float(breakdown_tol)
        self.passes = 2 if reorthogonalize else 1
        self.include_q = include_q
        self.skipped = []          # (expansion ordinal, 'q'|'w'|'right')
        self._expansions = 0

        rb = Rinv.apply(b)
        beta = np.sqrt(max(float(np.dot(b, rb)), 0.0))
        if beta == 0.0:
            raise ValueError("b is zero: nothing to solve")
        self.beta = beta

        self._left = WeightedBasis(self.m, Rinv)    # Uhat
        self._left.append_normalized(b, rb, beta)
        self._right = WeightedBasis(self.n, Q)      # Vhat

        self._Z = GrowingMatrix(self.n)
        self._z_parity = []
        self._z_src = []
        self._M_cols = []
        self._T_cols = []          # one per transpose-processed Uhat column
        self._t_cursor = 0

        self._z_src_idx = None     # right vector feeding the next z columns
        self._q_fresh = False      # whether Q*src has not yet been consumed

        self.advance_transpose_side()
        if include_q:
            self.expand_q_column()

    # -- transpose (right) side ---------------------------------------------

    def advance_transpose_side(self):
        """Process every Uhat column not yet seen by A' R^{-1}, appending one
        That column each and (barring breakdown) one Q-orthonormal right
        vector. The first fresh right vector becomes the z-column source."""
        added = 0
        while self._t_cursor < len(self._left):
            j = self._t_cursor
            self._expansions += 1
            v = self.A.apply_transpose(self._left.MV.col(j))
            coeffs, v, qv, pre, post = self._right.orthogonalize(v, passes=self.passes)
            if pre == 0.0 or post <= self.breakdown_tol * pre:
                self._T_cols.append(coeffs)
                self.skipped.append((self._expansions, "right"))
            else:
                idx = self._right.append_normalized(v, qv, post)
                self._T_cols.append(np.append(coeffs, post))
                if added == 0:
                    self._z_src_idx = idx
                    self._q_fresh = True
                added += 1
            self._t_cursor += 1
        return added

    # -- left-side expansions -------------------------------------------------

    def _absorb(self, z, parity, src_idx):
        self._expansions += 1
        self._Z.append(z)
        self._z_parity.append(parity)
        self._z_src.append(src_idx)
        u = self.A.apply(z)
        coeffs, u, ru, pre, post = self._left.orthogonalize(u, passes=self.passes)
        if pre == 0.0 or post <= self.breakdown_tol * pre:
            self._M_cols.append(coeffs)
            self.skipped.append((self._expansions, parity))
            return None
        idx = self._left.append_normalized(u, ru, post)
        self._M_cols.append(np.append(coeffs, post))
        return idx

    def expand_q_column(self):
        """Add the direction Q v for the current source vector (the cached
        Q-applied copy is reused, so this costs one A product only)."""
        if self._z_src_idx is None or not self._q_fresh:
            self.skipped.append((self._expansions + 1, "q"))
            self._expansions += 1
            return False
        self._q_fresh = False
        z = self._right.MV.col(self._z_src_idx).copy()
        return self._absorb(z, "q", self._z_src_idx) is not None

    def expand_w_column(self, weights):
        if np.any(weights.w <= 0):
            raise ValueError("weights must be strictly positive")
        if self._z_src_idx is None:
            self.skipped.append((self._expansions + 1, "w"))
            self._expansions += 1
            return False
        z = weights.inv_apply(self._right.V.col(self._z_src_idx))
        return self._absorb(z, "w", self._z_src_idx) is not None

    def expand(self, weights):
        """One full augmented iteration: advance the transpose side, then add
        the Q-preconditioned and the reweighted direction."""
        self.advance_transpose_side()
        added = False
        if self.include_q:
            added |= self.expand_q_column()
        added |= self.expand_w_column(weights)
        return added

    # -- views ----------------------------------------------------------------

    @property
    def num_left(self):
        return len(self._left)

    @property
    def num_right(self):
        return len(self._right)

    @property
    def num_z(self):
        return len(self._Z)

    @property
    def t_cursor(self):
        return self._t_cursor

    @property
    def Uhat(self):
        return self._left.V.mat.copy()

    @property
    def Vhat(self):
        return self._right.V.mat.copy()

    @property
    def Zhat(self):
        return self._Z.mat.copy()

    @property
    def Mhat(self):
        M = np.zeros((self.num_left, self.num_z))
        for j, col in enumerate(self._M_cols):
            M[: col.size, j] = col
        return M

    @property
    def That(self):
        T = np.zeros((self.num_right, self._t_cursor))
        for j, col in enumerate(self._T_cols):
            T[: col.size, j] = col
        return T

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
        srcs = [self._z_src[j] for j in self._parity_cols("q")]
        return self._right.V.mat[:, srcs]

    @property
    def z_parities(self):
        return list(self._z_parity)

    @property
    def L(self):
        """The q sources are Q-orthonormal, so the penalty factor is I."""
        return np.eye(self.num_q)

    def split_m(self):
        """Parity split of Mhat into (q-column block, w-column block)."""
        M = self.Mhat
        return M[:, self._parity_cols("q")], M[:, self._parity_cols("w")]

    def interleave(self, y):
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
        coef = self.Mhat @ self.interleave(y)
        return self._left.V.mat @ coef - self.beta * self._left.V.col(0)

    def projected_problem(self, weights=None, prev_qr=None):
        from .projected import make_projected_problem

        return make_projected_problem(self, weights, prev_qr=prev_qr)


def init(A, Q, Rinv, b, **kwargs):
    """Construct an AFGKState (functional alias for the constructor)."""
    return AFGKState(A, Q, Rinv, b, **kwargs)


def expand(state, weights):
    state.expand(weights)
    return state


def split_m(state):
    return state.split_m()
