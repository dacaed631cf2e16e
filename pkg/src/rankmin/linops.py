"""Linear measurement operators b = A vec(X) and their block structure.

All vectorization is column-major: ``x[i*n + j] == X[j, i]`` for an
``n x m`` matrix ``X``.  Column ``i`` of ``X`` therefore occupies the slice
``i*n:(i+1)*n`` of ``x``, and row ``j`` occupies positions
``j, j+n, ..., j+(m-1)n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

KINDS = ("dense", "completion", "dct-subsampled", "block-diagonal")
ENSEMBLES = ("gaussian", "correlated", "completion", "dct-subsampled", "block-diagonal")


def vec(X):
    """Column-stack a matrix."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, n, m):
    """Inverse of :func:`vec`."""
    return np.asarray(x).reshape((n, m), order="F")


def dct_matrix(n):
    """Orthonormal type-II DCT matrix, built from the cosine definition."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    D = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    D[0] *= np.sqrt(1.0 / n)
    D[1:] *= np.sqrt(2.0 / n)
    return D


class AffineOperator:
    """Base class for a linear map from n x m matrices to R^p.

    Subclasses implement :meth:`apply`, :meth:`adjoint` and
    :meth:`to_dense`.  The block accessors and Gram sums have dense
    fallbacks here; structured kinds override them.
    """

    kind = "dense"

    def __init__(self, n, m, p):
        if n < 1 or m < 1 or p < 1:
            raise ValueError(f"invalid operator dimensions n={n}, m={m}, p={p}")
        self.n = int(n)
        self.m = int(m)
        self.p = int(p)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.m}, p={self.p})"

    @property
    def shape(self):
        return (self.p, self.n * self.m)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape == (self.n, self.m):
            x = vec(x)
        if x.shape != (self.n * self.m,):
            raise ValueError(f"expected vector of length {self.n * self.m}, got shape {x.shape}")
        return x

    def _check_y(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.p,):
            raise ValueError(f"expected vector of length {self.p}, got shape {y.shape}")
        return y

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def to_dense(self):
        raise NotImplementedError

    @cached_property
    def dense(self):
        A = self.to_dense()
        A.setflags(write=False)
        return A

    @property
    def blocks3(self):
        """View of A as (p, m, n): ``blocks3[k, i, j] == A[k, i*n + j]``."""
        return self.dense.reshape(self.p, self.m, self.n)

    def column_block(self, i):
        """The p x n slice A_i of A acting on column ``i`` of X (0-based)."""
        if not 0 <= i < self.m:
            raise IndexError(f"column index {i} out of range for m={self.m}")
        return np.array(self.blocks3[:, i, :])

    def row_block(self, j):
        """The p x m slice of A acting on row ``j`` of X (0-based)."""
        if not 0 <= j < self.n:
            raise IndexError(f"row index {j} out of range for n={self.n}")
        return np.array(self.blocks3[:, :, j])

    def column_gram(self, psi, weights=None):
        """sum_i w_i A_i psi A_i^T, i.e. A (diag(w) kron psi) A^T."""
        A3 = self.blocks3
        T = A3 @ psi
        if weights is not None:
            T = T * np.asarray(weights, dtype=float)[None, :, None]
        return T.reshape(self.p, -1) @ self.dense.T

    def row_gram(self, psi_r):
        """sum_j B_j psi_r B_j^T, i.e. A (psi_r kron I_n) A^T."""
        T = np.einsum("kij,il->klj", self.blocks3, psi_r)
        return T.reshape(self.p, -1) @ self.dense.T

    def basis_transform(self, vc, vr):
        """Express every measurement row in the basis ``vr kron vc``.

        Returns ``T`` of shape (p, m, n) with
        ``T[k, a, b] = vc[:, b]^T R_k vr[:, a]`` where ``R_k`` is row ``k``
        of A reshaped to n x m.
        """
        return np.einsum("kij,ia,jb->kab", self.blocks3, vr, vc, optimize=True)

    def pinv_apply(self, b):
        """Minimum Frobenius-norm solution of A x = b (A assumed full row rank)."""
        A = self.dense
        return A.T @ np.linalg.solve(A @ A.T, b)

    def nullspace_project(self, x):
        """Orthogonal projection of x onto null(A)."""
        x = self._check_x(x)
        return x - self.pinv_apply(self.apply(x))

    def transpose(self):
        """Operator acting on X^T that produces the same measurements."""
        A3 = self.blocks3
        return DenseOperator(np.transpose(A3, (0, 2, 1)).reshape(self.p, -1), self.m, self.n)


class DenseOperator(AffineOperator):
    kind = "dense"

    def __init__(self, A, n, m):
        A = np.ascontiguousarray(A, dtype=float)
        if A.ndim != 2 or A.shape[1] != n * m:
            raise ValueError(f"dense operator must be p x {n * m}, got {A.shape}")
        super().__init__(n, m, A.shape[0])
        self._A = A
        self._A.setflags(write=False)

    def apply(self, x):
        return self._A @ self._check_x(x)

    def adjoint(self, y):
        return self._A.T @ self._check_y(y)

    def to_dense(self):
        return self._A.copy()

    @property
    def dense(self):
        return self._A


class RankOneRowOperator(AffineOperator):
    """Operator whose k-th row, reshaped n x m, is ``outer(u_k, v_k)``.

    Completion, sub-sampled DCT and block-diagonal operators with
    single-column blocks all have this form, which keeps the basis
    transform at O(p (n + m)) per basis vector instead of O(p n m).
    """

    @property
    def row_factors(self):
        """(U, V) with U of shape (p, n) and V of shape (p, m)."""
        raise NotImplementedError

    def to_dense(self):
        U, V = self.row_factors
        return (V[:, :, None] * U[:, None, :]).reshape(self.p, -1)

    def basis_transform(self, vc, vr):
        U, V = self.row_factors
        return (V @ vr)[:, :, None] * (U @ vc)[:, None, :]


class CompletionOperator(RankOneRowOperator):
    """Entry sampling on a sorted set of column-major flat indices."""

    kind = "completion"

    def __init__(self, indices, n, m):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("completion operator needs a nonempty 1-D index set")
        if np.any(idx < 0) or np.any(idx >= n * m):
            raise ValueError("observed index out of range")
        idx = np.sort(idx)
        if np.any(np.diff(idx) == 0):
            raise ValueError("observed indices must be unique")
        super().__init__(n, m, idx.size)
        self.indices = idx
        self.indices.setflags(write=False)
        self.rows = idx % n
        self.cols = idx // n

    def apply(self, x):
        return self._check_x(x)[self.indices]

    def adjoint(self, y):
        out = np.zeros(self.n * self.m)
        out[self.indices] = self._check_y(y)
        return out

    def to_dense(self):
        A = np.zeros((self.p, self.n * self.m))
        A[np.arange(self.p), self.indices] = 1.0
        return A

    @property
    def row_factors(self):
        U = np.zeros((self.p, self.n))
        V = np.zeros((self.p, self.m))
        U[np.arange(self.p), self.rows] = 1.0
        V[np.arange(self.p), self.cols] = 1.0
        return U, V

    def basis_transform(self, vc, vr):
        return vr[self.cols][:, :, None] * vc[self.rows][:, None, :]

    def column_block(self, i):
        if not 0 <= i < self.m:
            raise IndexError(f"column index {i} out of range for m={self.m}")
        B = np.zeros((self.p, self.n))
        sel = np.flatnonzero(self.cols == i)
        B[sel, self.rows[sel]] = 1.0
        return B

    def row_block(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"row index {j} out of range for n={self.n}")
        B = np.zeros((self.p, self.m))
        sel = np.flatnonzero(self.rows == j)
        B[sel, self.cols[sel]] = 1.0
        return B

    def column_gram(self, psi, weights=None):
        G = psi[np.ix_(self.rows, self.rows)] * (self.cols[:, None] == self.cols[None, :])
        if weights is not None:
            G = G * np.asarray(weights, dtype=float)[self.cols][:, None]
        return G

    def row_gram(self, psi_r):
        return psi_r[np.ix_(self.cols, self.cols)] * (self.rows[:, None] == self.rows[None, :])

    def pinv_apply(self, b):
        return self.adjoint(b)


class DCTOperator(RankOneRowOperator):
    """Orthonormal 2-D DCT-II of X followed by coefficient sampling.

    ``indices`` are column-major flat positions in the n x m coefficient
    array.
    """

    kind = "dct-subsampled"

    def __init__(self, indices, n, m):
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        if idx.ndim != 1 or idx.size == 0 or np.any(np.diff(idx) == 0):
            raise ValueError("DCT sample set must be nonempty and unique")
        if np.any(idx < 0) or np.any(idx >= n * m):
            raise ValueError("DCT coefficient index out of range")
        super().__init__(n, m, idx.size)
        self.indices = idx
        self.indices.setflags(write=False)

    def apply(self, x):
        X = unvec(self._check_x(x), self.n, self.m)
        return vec(fft.dctn(X, type=2, norm="ortho"))[self.indices]

    def adjoint(self, y):
        C = np.zeros(self.n * self.m)
        C[self.indices] = self._check_y(y)
        return vec(fft.idctn(unvec(C, self.n, self.m), type=2, norm="ortho"))

    @cached_property
    def row_factors(self):
        Dn, Dm = dct_matrix(self.n), dct_matrix(self.m)
        return Dn[self.indices % self.n], Dm[self.indices // self.n]

    def pinv_apply(self, b):
        # rows are orthonormal
        return self.adjoint(b)


class BlockDiagonalOperator(RankOneRowOperator):
    """b_i = A_i x_{:i} for each column i, with A_i of shape (p_i, n)."""

    kind = "block-diagonal"

    def __init__(self, blocks, n):
        blocks = [np.atleast_2d(np.asarray(B, dtype=float)) for B in blocks]
        for B in blocks:
            if B.shape[1] != n:
                raise ValueError(f"block has {B.shape[1]} columns, expected {n}")
        sizes = [B.shape[0] for B in blocks]
        super().__init__(n, len(blocks), sum(sizes))
        self.blocks = blocks
        self.block_sizes = np.array(sizes)
        self.block_of_row = np.repeat(np.arange(self.m), sizes)
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])

    def apply(self, x):
        X = unvec(self._check_x(x), self.n, self.m)
        return np.concatenate([B @ X[:, i] for i, B in enumerate(self.blocks)])

    def adjoint(self, y):
        y = self._check_y(y)
        X = np.empty((self.n, self.m))
        for i, B in enumerate(self.blocks):
            X[:, i] = B.T @ y[self._offsets[i] : self._offsets[i + 1]]
        return vec(X)

    @cached_property
    def row_factors(self):
        U = np.vstack(self.blocks)
        V = np.zeros((self.p, self.m))
        V[np.arange(self.p), self.block_of_row] = 1.0
        return U, V

    def column_gram(self, psi, weights=None):
        U, _ = self.row_factors
        same = self.block_of_row[:, None] == self.block_of_row[None, :]
        G = (U @ psi @ U.T) * same
        if weights is not None:
            G = G * np.asarray(weights, dtype=float)[self.block_of_row][:, None]
        return G


@dataclass(frozen=True)
class EnsembleSpec:
    """Recipe for a random operator; identical specs give identical operators."""

    kind: str
    n: int
    m: int
    p: int
    seed: int = 0
    decay: float = 0.5
    block_sizes: tuple | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLES:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n < 1 or self.m < 1 or self.p < 1:
            raise ValueError("ensemble dimensions must be positive")
        if self.kind in ("completion", "dct-subsampled") and self.p > self.n * self.m:
            raise ValueError(f"p={self.p} exceeds n*m={self.n * self.m} for {self.kind}")


def _block_sizes(p, m, rng):
    # every column gets at least 2 rows when p allows, remainder spread at random
    base = min(2, p // m)
    sizes = np.full(m, base)
    extra = p - base * m
    if extra < 0:
        raise ValueError(f"p={p} too small for {m} column blocks")
    if extra:
        sizes += np.bincount(rng.integers(0, m, size=extra), minlength=m)
    return sizes


def generate(spec):
    """Draw an operator from the ensemble described by ``spec``."""
    rng = np.random.default_rng(spec.seed)
    n, m, p = spec.n, spec.m, spec.p
    if spec.kind == "gaussian":
        return DenseOperator(rng.standard_normal((p, n * m)), n, m)
    if spec.kind == "correlated":
        # sum_i i^-decay u_i v_i^T with orthonormal u_i, v_i, scaled like a Gaussian draw
        k = min(p, n * m)
        U, _ = np.linalg.qr(rng.standard_normal((p, k)))
        V, _ = np.linalg.qr(rng.standard_normal((n * m, k)))
        w = np.arange(1, k + 1) ** (-spec.decay)
        return DenseOperator(np.sqrt(n * m) * (U * w) @ V.T, n, m)
    if spec.kind == "completion":
        return CompletionOperator(rng.choice(n * m, size=p, replace=False), n, m)
    if spec.kind == "dct-subsampled":
        return DCTOperator(rng.choice(n * m, size=p, replace=False), n, m)
    sizes = spec.block_sizes
    if sizes is None:
        sizes = _block_sizes(p, m, rng)
    elif len(sizes) != m or sum(sizes) != p:
        raise ValueError("block_sizes must have m entries summing to p")
    return BlockDiagonalOperator([rng.standard_normal((s, n)) for s in sizes], n)
