"""Bayesian affine rank minimization (BARM).

The prior on ``x = vec(X)`` is zero-mean Gaussian with covariance
``diag(nu) kron psi_c`` (column mode) or the Kronecker sum
``(psi_r kron I + I kron psi_c) / 2`` (symmetric mode).  Both forms are
diagonalized by ``vr kron vc`` where ``vc``, ``vr`` are eigenvectors of the
covariances, so every solve below works with the whitened factor

    F = A (vr kron vc) diag(sqrt(s))

and the p x p matrix ``F F^T + lam I``.  Forming covariance products in the
original coordinates instead loses all accuracy once the covariances
collapse towards low rank at lam ~ 1e-10.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .linops import unvec, vec

log = logging.getLogger(__name__)

MODES = ("column", "symmetric")


class SolveError(RuntimeError):
    """Raised when the measurement covariance cannot be factored."""


@dataclass
class BarmConfig:
    lam: float = 1e-10
    mode: str = "symmetric"
    max_iter: int = 500
    tol: float = 1e-8
    gamma: float = 0.0
    eig_floor: float = 1e-14

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass
class BarmState:
    psi_c: np.ndarray
    psi_r: np.ndarray | None = None
    nu: np.ndarray | None = None
    xhat: np.ndarray | None = None
    cost: float = np.nan
    iter: int = 0

    @property
    def mode(self):
        return "column" if self.psi_r is None else "symmetric"

    @classmethod
    def initial(cls, n, m, mode="symmetric"):
        return cls(
            psi_c=np.eye(n),
            psi_r=np.eye(m) if mode == "symmetric" else None,
            nu=np.ones(m),
        )


@dataclass
class RecoveryReport:
    X: np.ndarray
    iterations: int
    converged: bool
    residual: float
    singular_values: np.ndarray
    est_rank: int
    final_cost: float = np.nan
    algorithm: str = "barm"
    costs: list = field(default_factory=list, repr=False)


def rank_estimate(singular_values, threshold=1e3, zero_tol=1e-12):
    """Numerical rank from the first spectral gap exceeding ``threshold``.

    Values at or below ``zero_tol * s[0]`` count as exact zeros, so a clean
    rank-deficient spectrum always has a gap at its true rank.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or s[0] <= 0:
        return 0
    nonzero = int(np.sum(s > zero_tol * s[0]))
    for r in range(1, nonzero):
        if s[r - 1] > threshold * s[r]:
            return r
    return nonzero


def make_report(op, b, X, *, iterations, converged, cost=np.nan, algorithm="barm", costs=()):
    s = np.linalg.svd(X, compute_uv=False)
    nb = np.linalg.norm(b)
    res = np.linalg.norm(op.apply(vec(X)) - b)
    return RecoveryReport(
        X=X,
        iterations=iterations,
        converged=converged,
        residual=float(res / nb if nb > 0 else res),
        singular_values=s,
        est_rank=rank_estimate(s),
        final_cost=float(cost),
        algorithm=algorithm,
        costs=list(costs),
    )


def _eig(P):
    d, V = np.linalg.eigh(0.5 * (P + P.T))
    return np.maximum(d, 0.0), V


def _floor(P, eig_floor):
    d, V = _eig(P)
    top = d.max() if d.size else 0.0
    d = np.maximum(d, eig_floor * top)
    return (V * d) @ V.T


def _cholesky(K, lam):
    """Lower Cholesky factor of K with jitter escalation on failure."""
    try:
        return linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        pass
    cap = 1e-6 * np.trace(K) / K.shape[0]
    base = lam if lam > 0 else 1e-14 * np.trace(K) / K.shape[0]
    for j in (base, 10 * base, 100 * base):
        jitter = min(j, cap)
        try:
            L = linalg.cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
            log.debug("covariance factored with jitter %g", jitter)
            return L
        except linalg.LinAlgError:
            continue
    raise SolveError("measurement covariance is singular beyond jitter tolerance")


class _Whitened:
    """Cholesky of F F^T + lam I for a whitened factor F of shape (p, m*n)."""

    def __init__(self, T, scale, lam):
        self.p = T.shape[0]
        self.root = np.sqrt(scale)
        self.F = (T * self.root).reshape(self.p, -1)
        K = self.F @ self.F.T
        K[np.diag_indices_from(K)] += lam
        self.L = _cholesky(K, lam)

    def solve(self, b):
        return linalg.cho_solve((self.L, True), b)

    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.L)))

    def partial_gram(self, axis):
        """sum over the other index of Y^T Y, Y = L^{-1} F split into blocks.

        ``axis="column"`` sums over columns of X (result n x n),
        ``axis="row"`` over rows (result m x m).
        """
        Y = linalg.solve_triangular(self.L, self.F, lower=True)
        m, n = self.root.shape
        Y3 = Y.reshape(self.p, m, n)
        if axis == "column":
            return np.einsum("kab,kac->bc", Y3, Y3, optimize=True)
        return np.einsum("kab,kcb->ac", Y3, Y3, optimize=True)


def _basis(state):
    dc, vc = _eig(state.psi_c)
    if state.psi_r is None:
        nu = state.nu
        vr = np.eye(nu.size)
        scale = nu[:, None] * dc[None, :]
        return vc, dc, vr, None, scale
    dr, vr = _eig(state.psi_r)
    return vc, dc, vr, dr, 0.5 * (dr[:, None] + dc[None, :])


def _check_state(op, state):
    if state.psi_c.shape != (op.n, op.n):
        raise ValueError(f"psi_c must be {op.n} x {op.n}")
    if state.psi_r is not None and state.psi_r.shape != (op.m, op.m):
        raise ValueError(f"psi_r must be {op.m} x {op.m}")
    if state.nu is None:
        state.nu = np.ones(op.m)


def _mean(op, vc, vr, scale, lam, b, T=None):
    if T is None:
        T = op.basis_transform(vc, vr)
    W = _Whitened(T, scale, lam)
    z = W.solve(b)
    w = (W.F.T @ z).reshape(scale.shape) * W.root
    X = vc @ w.T @ vr.T
    return X, W, z, T


def posterior_mean(op, state, lam, b):
    """Posterior mean of vec(X) given b under the state's prior covariance."""
    _check_state(op, state)
    b = op._check_y(b)
    vc, _, vr, _, scale = _basis(state)
    X, _, _, _ = _mean(op, vc, vr, scale, lam, b)
    return vec(X)


def evaluate_cost(op, state, lam, b, gamma=0.0):
    """b^T Sigma_b^{-1} b + log|Sigma_b| (+ gamma tr(psi^{-1}) terms).

    Uses the SVD of the whitened factor, which stays accurate when
    Sigma_b has eigenvalues near ``lam``.
    """
    _check_state(op, state)
    b = op._check_y(b)
    vc, dc, vr, dr, scale = _basis(state)
    T = op.basis_transform(vc, vr)
    F = (T * np.sqrt(scale)).reshape(op.p, -1)
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    ev = s**2 + lam
    ub = U.T @ b
    quad = np.sum(ub**2 / ev) + max(b @ b - ub @ ub, 0.0) / lam
    logdet = np.sum(np.log(ev)) + (op.p - s.size) * np.log(lam)
    cost = quad + logdet
    if gamma > 0:
        cost += gamma * np.sum(1.0 / dc)
        if dr is not None:
            cost += gamma * np.sum(1.0 / dr)
    if not np.isfinite(cost):
        raise FloatingPointError("cost is not finite; Sigma_b numerically indefinite")
    return float(cost)


def _grad_from(W, d, v, axis, count):
    G = W.partial_gram(axis)
    M = count * np.eye(d.size) - G
    r = np.sqrt(d)
    out = v @ (r[:, None] * M * r[None, :]) @ v.T
    return 0.5 * (out + out.T)


def gradient_bound(op, psi, lam, side="column"):
    """Tangent of the log-determinant term with respect to psi^{-1}.

    ``side="column"`` gives sum_i [psi - psi A_i^T (A (I kron psi) A^T + lam I)^{-1} A_i psi]
    over column blocks A_i, for an n x n ``psi``.  ``side="row"`` is the
    analogue over row blocks for an m x m ``psi``.
    """
    d, v = _eig(psi)
    if side == "column":
        if psi.shape != (op.n, op.n):
            raise ValueError(f"psi must be {op.n} x {op.n}")
        T = op.basis_transform(v, np.eye(op.m))
        W = _Whitened(T, np.broadcast_to(d[None, :], (op.m, op.n)), lam)
        return _grad_from(W, d, v, "column", op.m)
    if side == "row":
        if psi.shape != (op.m, op.m):
            raise ValueError(f"psi must be {op.m} x {op.m}")
        T = op.basis_transform(np.eye(op.n), v)
        W = _Whitened(T, np.broadcast_to(d[:, None], (op.m, op.n)), lam)
        return _grad_from(W, d, v, "row", op.n)
    raise ValueError(f"side must be 'column' or 'row', got {side!r}")


def psi_update(X, grad, gamma=0.0):
    """Closed-form covariance update (X X^T + grad + gamma I) / (#columns of X)."""
    X = np.asarray(X, dtype=float)
    if grad.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"gradient shape {grad.shape} does not match X X^T {X.shape[0]}")
    P = (X @ X.T + grad) / X.shape[1]
    if gamma:
        P += gamma / X.shape[1] * np.eye(X.shape[0])
    return 0.5 * (P + P.T)


def _step(op, state, b, config):
    """One BARM iteration: mean at the current covariances, then updates."""
    lam = config.lam
    vc, dc, vr, dr, scale = _basis(state)
    X, W, z, T = _mean(op, vc, vr, scale, lam, b)
    cost = b @ z + W.logdet()
    if config.gamma > 0:
        cost += config.gamma * (np.sum(1.0 / dc) + (np.sum(1.0 / dr) if dr is not None else 0.0))
    new = BarmState(psi_c=state.psi_c, psi_r=state.psi_r, nu=state.nu, xhat=vec(X), cost=cost, iter=state.iter + 1)
    if state.psi_r is None:
        grad_c = _grad_from(W, dc, vc, "column", op.m)
        new.psi_c = _floor(psi_update(X, grad_c, config.gamma), config.eig_floor)
        return new
    Wc = _Whitened(T, np.broadcast_to(dc[None, :], scale.shape), lam)
    Wr = _Whitened(T, np.broadcast_to(dr[:, None], scale.shape), lam)
    grad_c = _grad_from(Wc, dc, vc, "column", op.m)
    grad_r = _grad_from(Wr, dr, vr, "row", op.n)
    new.psi_c = _floor(psi_update(X, grad_c, config.gamma), config.eig_floor)
    new.psi_r = _floor(psi_update(X.T, grad_r, config.gamma), config.eig_floor)
    return new


def solve(op, b, config=None, callback=None, state=None):
    """Run BARM from identity covariances until the mean stops moving.

    ``callback(state)`` is called after every iteration with a state whose
    ``xhat`` and ``cost`` refer to the covariances the iteration started
    from.  Non-convergence is reported through ``converged=False``.
    """
    config = config or BarmConfig()
    b = op._check_y(b)
    if state is None:
        state = BarmState.initial(op.n, op.m, config.mode)
    _check_state(op, state)
    costs = []
    x_prev = None
    converged = False
    for _ in range(config.max_iter):
        new = _step(op, state, b, config)
        costs.append(new.cost)
        if callback is not None:
            callback(new)
        x = new.xhat
        if x_prev is not None:
            change = np.linalg.norm(x - x_prev) / max(np.linalg.norm(x_prev), np.finfo(float).tiny)
            if change < config.tol:
                converged = True
        state = new
        x_prev = x
        if converged:
            break
    X = unvec(state.xhat, op.n, op.m)
    return make_report(
        op, b, X, iterations=state.iter, converged=converged, cost=state.cost, costs=costs
    )
