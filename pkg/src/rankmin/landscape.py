"""Rank surrogates traced along a feasible line X* + eta V with A(V) = 0."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import barm, baselines
from .linops import unvec, vec


class DegenerateDirection(ValueError):
    """The requested null-space direction is zero."""


def nullspace_direction(op, xstar, mode="nn-difference", seed=0):
    """A nonzero V with A(V) = 0.

    ``nn-difference`` takes V = X1 - X* with X1 the minimum nuclear-norm
    matrix consistent with A(X*); ``random`` projects a Gaussian matrix onto
    null(A).
    """
    xstar = np.asarray(xstar, dtype=float)
    if op.p >= op.n * op.m:
        raise DegenerateDirection("operator has a trivial null space (p >= n*m)")
    if mode == "nn-difference":
        b = op.apply(vec(xstar))
        X1 = baselines.nuclear_norm_solve(op, b, baselines.NucConfig(tol=1e-10)).X
        V = X1 - xstar
    elif mode == "random":
        g = np.random.default_rng(seed).standard_normal(op.n * op.m)
        V = unvec(op.nullspace_project(g), op.n, op.m)
    else:
        raise ValueError(f"unknown direction mode {mode!r}")
    if np.linalg.norm(V) <= 1e-8 * max(np.linalg.norm(xstar), 1.0):
        raise DegenerateDirection(f"{mode} direction vanishes: X* already minimizes the nuclear norm")
    return V


@dataclass
class PenaltyResult:
    value: float
    psi: np.ndarray
    iterations: int
    converged: bool
    values: list = field(default_factory=list, repr=False)


def _implicit_objective(op, X, psi, lam):
    d, v = np.linalg.eigh(0.5 * (psi + psi.T))
    d = np.maximum(d, np.finfo(float).tiny)
    quad = np.sum((v.T @ X) ** 2 / d[:, None])
    T = op.basis_transform(v, np.eye(op.m))
    W = barm._Whitened(T, np.broadcast_to(d[None, :], (op.m, op.n)), lam)
    return float(quad + W.logdet())


def barm_implicit_penalty(op, X, lam=1e-6, max_iter=200, tol=1e-8, psi0=None, psi_floor=1e-12):
    """min over psi of vec(X)^T (I kron psi)^{-1} vec(X) + log|A (I kron psi) A^T + lam I|.

    Minimized by the BARM covariance update with X held fixed.  Eigenvalues
    of psi are kept at or above ``psi_floor`` so X = 0 has a finite value.
    """
    X = np.asarray(X, dtype=float)
    psi = np.eye(op.n) if psi0 is None else np.array(psi0, dtype=float)
    value = _implicit_objective(op, X, psi, lam)
    values = [value]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = barm.gradient_bound(op, psi, lam)
        cand = barm.psi_update(X, grad)
        d, v = np.linalg.eigh(cand)
        cand = (v * np.maximum(d, psi_floor)) @ v.T
        new = _implicit_objective(op, X, cand, lam)
        if new > value:
            # the floor clamp undid the descent step
            converged = True
            break
        decrease = value - new
        psi, value = cand, new
        values.append(value)
        if decrease <= tol * max(abs(value), 1.0):
            converged = True
            break
    return PenaltyResult(value=value, psi=psi, iterations=it, converged=converged, values=values)


@dataclass
class PenaltyTrace:
    eta: np.ndarray
    nuclear: np.ndarray
    logdet: dict
    barm: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        for k, val in self.metadata.items():
            buf.write(f"# {k}={val}\n")
        cols = ["eta", "nuclear"] + [f"logdet_gamma_{g:g}" for g in self.logdet] + ["barm"]
        buf.write(",".join(cols) + "\n")
        for i, e in enumerate(self.eta):
            row = [e, self.nuclear[i]] + [vals[i] for vals in self.logdet.values()] + [self.barm[i]]
            buf.write(",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def trace_penalties(op, xstar, V, etas, gammas=(), lam=1e-6, warm_start=True, metadata=None, **penalty_kw):
    """Evaluate nuclear, log-det and implicit BARM penalties along X* + eta V.

    With ``warm_start`` the implicit penalty sweeps outward from the grid
    point nearest zero, each point starting from its inner neighbour's
    optimal covariance.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.ndim != 1 or etas.size == 0 or np.any(np.diff(etas) <= 0):
        raise ValueError("eta grid must be a nonempty ascending sequence")
    xstar = np.asarray(xstar, dtype=float)
    V = np.asarray(V, dtype=float)
    nuclear = np.empty(etas.size)
    logdet = {float(g): np.empty(etas.size) for g in gammas}
    for i, e in enumerate(etas):
        s = np.linalg.svd(xstar + e * V, compute_uv=False)
        nuclear[i] = s.sum()
        for g in logdet:
            logdet[g][i] = np.sum(np.log(s**2 + g))

    values = np.empty(etas.size)
    center = int(np.argmin(np.abs(etas)))
    res = barm_implicit_penalty(op, xstar + etas[center] * V, lam, **penalty_kw)
    values[center] = res.value
    for order in (range(center + 1, etas.size), range(center - 1, -1, -1)):
        psi = res.psi if warm_start else None
        for i in order:
            r = barm_implicit_penalty(op, xstar + etas[i] * V, lam, psi0=psi, **penalty_kw)
            values[i] = r.value
            if warm_start:
                psi = r.psi
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("implicit penalty produced non-finite values")
    meta = {"lambda": lam, "warm_start": warm_start}
    meta.update(metadata or {})
    return PenaltyTrace(eta=etas, nuclear=nuclear, logdet=logdet, barm=values, metadata=meta)
