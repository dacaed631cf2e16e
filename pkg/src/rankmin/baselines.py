"""Reference solvers: nuclear-norm minimization and IRLS0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import barm
from .linops import unvec, vec


def svt(X, threshold):
    """Singular value soft-thresholding, the prox of ``threshold * ||.||_*``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    return (U * s) @ Vt


@dataclass
class NucConfig:
    """Nuclear-norm solver settings.

    ``mode="constrained"`` solves min ||X||_* s.t. A(X) = b by ADMM.
    ``mode="regularized"`` solves min (1/lam) ||b - A(X)||^2 + 2 ||X||_*
    by accelerated proximal gradient.
    """

    mode: str = "constrained"
    lam: float = 1e-3
    rho: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("constrained", "regularized"):
            raise ValueError(f"unknown nuclear-norm mode {self.mode!r}")
        if self.tol <= 0 or self.rho <= 0 or self.lam <= 0:
            raise ValueError("tolerances and penalties must be positive")


def _operator_norm_sq(op, iters=100, seed=0):
    if op.kind in ("completion", "dct-subsampled"):
        return 1.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.n * op.m)
    est = 0.0
    for _ in range(iters):
        x = op.adjoint(op.apply(x))
        nx = np.linalg.norm(x)
        if nx == 0:
            return 0.0
        if abs(nx - est) <= 1e-10 * nx:
            break
        est = nx
        x /= nx
    return 1.01 * nx


def _nuclear_admm(op, b, config):
    n, m = op.n, op.m
    b_feas = op.pinv_apply(b)

    def project(V):
        v = vec(V)
        return unvec(v - op.pinv_apply(op.apply(v)) + b_feas, n, m)

    rho = config.rho
    Z = unvec(b_feas, n, m)
    U = np.zeros((n, m))
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        X = project(Z - U)
        Z_old = Z
        Z = svt(X + U, 1.0 / rho)
        U = U + X - Z
        r = np.linalg.norm(X - Z)
        s = rho * np.linalg.norm(Z - Z_old)
        scale = max(np.linalg.norm(X), np.linalg.norm(Z), 1.0)
        if r < config.tol * scale and s < config.tol * max(rho * np.linalg.norm(U), 1.0):
            converged = True
            break
        # residual balancing
        if r > 10 * s:
            rho *= 2.0
            U /= 2.0
        elif s > 10 * r:
            rho /= 2.0
            U *= 2.0
    return project(Z), rho * U, it, converged


def _nuclear_prox_grad(op, b, config):
    # 1/2 ||b - A x||^2 + lam ||X||_*, same minimizer as the 1/lam, 2||X||_* form
    n, m = op.n, op.m
    L = _operator_norm_sq(op)
    step = 1.0 / L
    X = np.zeros((n, m))
    Y = X
    t = 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        grad = unvec(op.adjoint(op.apply(vec(Y)) - b), n, m)
        X_new = svt(Y - step * grad, step * config.lam)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        Y = X_new + (t - 1) / t_new * (X_new - X)
        change = np.linalg.norm(X_new - X) / max(np.linalg.norm(X), 1e-300)
        X, t = X_new, t_new
        if change < config.tol:
            converged = True
            break
    return X, None, it, converged


def nuclear_norm_solve(op, b, config=None, return_dual=False):
    """Minimum nuclear-norm recovery.

    In constrained mode the scaled ADMM multiplier is returned as a dual
    certificate when ``return_dual`` is set; see :func:`nuclear_certificate`.
    """
    config = config or NucConfig()
    b = op._check_y(b)
    if config.mode == "constrained":
        X, dual, it, ok = _nuclear_admm(op, b, config)
    else:
        X, dual, it, ok = _nuclear_prox_grad(op, b, config)
    cost = np.linalg.svd(X, compute_uv=False).sum()
    rep = barm.make_report(op, b, X, iterations=it, converged=ok, cost=cost, algorithm="nuclear")
    if return_dual:
        return rep, dual
    return rep


def nuclear_certificate(op, X, Y, rank=None):
    """Check the subgradient optimality conditions at X for min ||X||_* s.t. A(X)=b.

    ``Y`` is projected onto range(A^T) first.  Returns the tangent-space
    mismatch ``||P_T(Y) - U V^T||_F`` and the spectral norm of the
    complement ``||P_T^perp(Y)||_2``; optimality needs the first near zero
    and the second at most one.
    """
    n, m = op.n, op.m
    y = vec(Y)
    y = y - op.nullspace_project(y)
    Y = unvec(y, n, m)
    U, s, Vt = np.linalg.svd(X)
    r = barm.rank_estimate(s) if rank is None else rank
    Ur, Vr = U[:, :r], Vt[:r].T
    PU = Ur @ Ur.T
    PV = Vr @ Vr.T
    Y_perp = (np.eye(n) - PU) @ Y @ (np.eye(m) - PV)
    Y_tan = Y - Y_perp
    tangent_err = np.linalg.norm(Y_tan - Ur @ Vr.T)
    perp_norm = np.linalg.norm(Y_perp, 2) if Y_perp.size else 0.0
    return {"rank": r, "tangent_error": float(tangent_err), "complement_norm": float(perp_norm)}


@dataclass
class Irls0Config:
    """IRLS0 settings.  ``gamma_init=None`` means sigma_1(X0)^2 / 100."""

    gamma_init: float | None = None
    gamma_decay: float = 1 / 1.5
    gamma_floor: float = 1e-10
    inner_iter: int = 10
    max_outer: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.gamma_decay < 1:
            raise ValueError("gamma_decay must lie in (0, 1)")
        if self.gamma_floor <= 0:
            raise ValueError("gamma_floor must be positive")
        if self.inner_iter < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be positive")


def irls0_surrogate(X, gamma):
    """sum_i log(sigma_i(X)^2 + gamma)."""
    s = np.linalg.svd(X, compute_uv=False)
    extra = max(X.shape[0] - s.size, 0)
    return float(np.sum(np.log(s**2 + gamma)) + extra * np.log(gamma))


def weighted_ls_step(op, b, X, gamma):
    """argmin tr((X X^T + gamma I)^{-1} Z Z^T) subject to A(Z) = b."""
    psi = X @ X.T + gamma * np.eye(op.n)
    d, vc = np.linalg.eigh(psi)
    d = np.maximum(d, 0.0)
    scale = np.broadcast_to(d[None, :], (op.m, op.n))
    Z, _, _, _ = barm._mean(op, vc, np.eye(op.m), scale, 0.0, b)
    return Z


def irls0_solve(op, b, config=None, callback=None):
    """IRLS on sum_i log(sigma_i^2 + gamma) with a geometric gamma schedule.

    ``callback(X, gamma)`` sees every iterate.
    """
    config = config or Irls0Config()
    b = op._check_y(b)
    X = unvec(op.pinv_apply(b), op.n, op.m)
    gamma = config.gamma_init
    if gamma is None:
        gamma = np.linalg.norm(X, 2) ** 2 / 100.0
    gamma = max(gamma, config.gamma_floor)
    total = 0
    converged = False
    for _ in range(config.max_outer):
        change = np.inf
        for _ in range(config.inner_iter):
            X_new = weighted_ls_step(op, b, X, gamma)
            total += 1
            change = np.linalg.norm(X_new - X) / max(np.linalg.norm(X), 1e-300)
            X = X_new
            if callback is not None:
                callback(X, gamma)
            if change < config.tol:
                break
        if gamma <= config.gamma_floor and change < config.tol:
            converged = True
            break
        gamma = max(gamma * config.gamma_decay, config.gamma_floor)
    cost = irls0_surrogate(X, gamma)
    return barm.make_report(op, b, X, iterations=total, converged=converged, cost=cost, algorithm="irls0")
