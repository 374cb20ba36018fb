"""Shared machinery for weighted-orthonormal growing bases.

Both decompositions keep, for every basis column v, a cached copy of M v
(M = R^{-1} or Q) so that modified Gram-Schmidt in the M-inner product needs
exactly one fresh operator application per candidate vector.
"""

import numpy as np


class GrowingMatrix:
    """Column buffer that doubles capacity on demand."""

    def __init__(self, nrows, capacity=16):
        self._buf = np.empty((nrows, capacity))
        self.ncols = 0

    def append(self, col):
        if self.ncols == self._buf.shape[1]:
            grown = np.empty((self._buf.shape[0], 2 * self._buf.shape[1]))
            grown[:, : self.ncols] = self._buf[:, : self.ncols]
            self._buf = grown
        self._buf[:, self.ncols] = col
        self.ncols += 1
        return self.ncols - 1

    @property
    def mat(self):
        return self._buf[:, : self.ncols]

    def col(self, j):
        if not 0 <= j < self.ncols:
            raise IndexError(j)
        return self._buf[:, j]

    def __len__(self):
        return self.ncols


class WeightedBasis:
    """M-orthonormal basis with cached M-applied columns."""

    def __init__(self, nrows, M):
        self.M = M
        self.V = GrowingMatrix(nrows)
        self.MV = GrowingMatrix(nrows)

    def __len__(self):
        return len(self.V)

    def norm(self, v, mv):
        return np.sqrt(max(float(np.dot(v, mv)), 0.0))

    def orthogonalize(self, w, mw=None, passes=2):
        """MGS of w against the basis in the M-inner product.

        Returns (coeffs, w_orth, mw_orth, pre_norm, post_norm). Accumulated
        coefficients from all passes land in coeffs; mw is kept in sync with
        w using the cached M-applied columns, so no M products are spent.
        """
        w = np.array(w, dtype=float)
        mw = self.M.apply(w) if mw is None else np.array(mw, dtype=float)
        pre = self.norm(w, mw)
        k = len(self)
        coeffs = np.zeros(k)
        for _ in range(max(1, passes)):
            for i in range(k):
                c = float(np.dot(self.V.col(i), mw))
                coeffs[i] += c
                w -= c * self.V.col(i)
                mw -= c * self.MV.col(i)
        post = self.norm(w, mw)
        return coeffs, w, mw, pre, post

    def append_normalized(self, w, mw, nrm):
        self.V.append(w / nrm)
        self.MV.append(mw / nrm)
        return len(self) - 1
