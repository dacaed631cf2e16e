"""Ground truths, recovery metrics and seeded sweeps over operator ensembles."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import barm, baselines
from .linops import CompletionOperator, EnsembleSpec, generate, vec

log = logging.getLogger(__name__)

ALGORITHMS = ("barm", "nuclear", "irls0")
DEFAULT_LAMBDA = {"barm": 1e-10, "nuclear": None, "irls0": None}


def dof(n, m, r):
    """Degrees of freedom r(n+m) - r^2 of an n x m rank-r matrix."""
    return r * (n + m) - r * r


def fr(r, n, m, p):
    """Degrees-of-freedom ratio dof / p."""
    if p <= 0:
        raise ValueError("p must be positive")
    return dof(n, m, r) / p


def p_from_fr(n, m, r, ratio):
    return int(round(dof(n, m, r) / ratio))


def gen_lowrank(n, m, r, seed, decay=0.0, min_sigma=0.1, min_ratio=1e-3, max_draws=100):
    """X0 = M_L M_R with iid N(0, 1) factors of inner dimension r.

    With ``decay`` q > 0 the i-th singular value is multiplied by i**-q.
    Draws with sigma_r < ``min_sigma`` or sigma_r / sigma_1 < ``min_ratio``
    are redrawn from the same stream.
    """
    if not 0 <= r <= min(n, m):
        raise ValueError(f"rank {r} outside [0, {min(n, m)}]")
    rng = np.random.default_rng(seed)
    if r == 0:
        return np.zeros((n, m))
    for draw in range(max_draws):
        X = rng.standard_normal((n, r)) @ rng.standard_normal((r, m))
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        if decay > 0:
            s = s * np.arange(1, s.size + 1) ** (-float(decay))
            X = (U * s) @ Vt
        if s[r - 1] >= min_sigma and s[r - 1] >= min_ratio * s[0]:
            if draw:
                log.info("gen_lowrank seed=%s resampled %d time(s)", seed, draw)
            return X
    raise RuntimeError(f"no acceptable rank-{r} draw after {max_draws} attempts")


def add_noise(x0, sigma, seed):
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    if sigma == 0:
        return x0.copy()
    return x0 + sigma * np.random.default_rng(seed).standard_normal(x0.shape)


def rel(x0, xhat):
    """Relative Frobenius error ||X0 - Xhat|| / ||X0||."""
    nx = np.linalg.norm(x0)
    if nx == 0:
        raise ValueError("relative error undefined for X0 = 0")
    return float(np.linalg.norm(np.asarray(x0) - np.asarray(xhat)) / nx)


def fos(rels, threshold=1e-3):
    """Fraction of trials with REL below ``threshold``.  Accepts records or floats."""
    vals = [r.rel if isinstance(r, TrialRecord) else float(r) for r in rels]
    if not vals:
        raise ValueError("fos needs at least one trial")
    return sum(v < threshold for v in vals) / len(vals)


def fors(xhat, r, op, b, ratio=1e3, tol=1e-6):
    """Feasible to ``tol`` relative residual with sigma_r / sigma_{r+1} > ``ratio``."""
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(op.apply(vec(xhat)) - b) > tol * np.linalg.norm(b):
        return False
    s = np.linalg.svd(xhat, compute_uv=False)
    if not 1 <= r < s.size:
        raise ValueError(f"rank {r} must lie in [1, {s.size - 1}]")
    return bool(s[r - 1] > ratio * s[r])


def trial_seed(master, n, m, r, p, kind, trial):
    """64-bit seed shared by every algorithm run on one (cell, trial)."""
    ss = np.random.SeedSequence([master, n, m, r, p, zlib.crc32(kind.encode()), trial])
    return int(ss.generate_state(1, np.uint64)[0])


def covered_completion(n, m, p, seed, max_draws=1000):
    """Completion operator whose mask touches every row and column of X."""
    if p < max(n, m):
        raise ValueError("cannot cover every row and column with p < max(n, m)")
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        idx = rng.choice(n * m, size=p, replace=False)
        if np.unique(idx % n).size == n and np.unique(idx // n).size == m:
            return CompletionOperator(idx, n, m)
    raise RuntimeError("no covering mask found")


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep over ranks for one operator ensemble.

    Exactly one of ``p``, ``observed_fraction`` and ``fr`` fixes the
    measurement count for each rank.  ``lambdas`` overrides the noise
    variance per algorithm.
    """

    kind: str
    n: int
    m: int
    ranks: tuple
    p: int | None = None
    observed_fraction: float | None = None
    fr: float | None = None
    trials: int = 10
    master_seed: int = 0
    algorithms: tuple = ("barm",)
    noise_sigma: float = 0.0
    decay: float = 0.0
    op_decay: float = 0.5
    lambdas: dict = field(default_factory=dict)
    barm_mode: str = "symmetric"
    max_iter: int = 500
    barm_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if not self.ranks:
            raise ValueError("rank list is empty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(not 1 <= r <= min(self.n, self.m) for r in self.ranks):
            raise ValueError(f"ranks must lie in [1, {min(self.n, self.m)}]")
        if sum(x is not None for x in (self.p, self.observed_fraction, self.fr)) != 1:
            raise ValueError("give exactly one of p, observed_fraction, fr")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad or not self.algorithms:
            raise ValueError(f"unknown algorithms {sorted(bad)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        # fail early on bad ensemble parameters
        for r in self.ranks:
            EnsembleSpec(self.kind, self.n, self.m, self.p_for(r), seed=0, decay=self.op_decay)

    def p_for(self, r):
        if self.p is not None:
            return int(self.p)
        if self.observed_fraction is not None:
            return int(math.ceil(self.n * self.m * self.observed_fraction))
        return p_from_fr(self.n, self.m, r, self.fr)

    def lam(self, algo):
        return self.lambdas.get(algo, DEFAULT_LAMBDA[algo])

    def cells(self):
        return [(r, self.p_for(r)) for r in self.ranks]

    def keys(self):
        """(r, trial, algorithm) in canonical order."""
        return [(r, t, a) for r in self.ranks for t in range(self.trials) for a in self.algorithms]


@dataclass
class TrialRecord:
    n: int
    m: int
    r: int
    p: int
    kind: str
    trial: int
    seed: int
    algorithm: str
    rel: float
    fos_success: bool
    fors_success: bool
    est_rank: int
    iterations: int
    wall_ms: float
    residual: float
    error: str | None = None

    @property
    def key(self):
        return (self.r, self.trial, self.algorithm)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        missing = names - set(d) - {"error"}
        if missing:
            raise ValueError(f"record missing fields {sorted(missing)}")
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown record fields {sorted(extra)}")
        return cls(**d)


@dataclass
class Instance:
    op: object
    x0: np.ndarray
    b: np.ndarray
    seed: int


def make_instance(spec, r, trial):
    p = spec.p_for(r)
    seed = trial_seed(spec.master_seed, spec.n, spec.m, r, p, spec.kind, trial)
    x_seed, op_seed, noise_seed = np.random.SeedSequence(seed).generate_state(3, np.uint64)
    x0 = gen_lowrank(spec.n, spec.m, r, int(x_seed), spec.decay)
    op = generate(EnsembleSpec(spec.kind, spec.n, spec.m, p, seed=int(op_seed), decay=spec.op_decay))
    b = op.apply(vec(add_noise(x0, spec.noise_sigma, int(noise_seed))))
    return Instance(op=op, x0=x0, b=b, seed=seed)


def nuclear_noise_lambda(n, m, p, sigma):
    """Regularization weight sigma (sqrt n + sqrt m) sqrt(p / nm) for noisy data."""
    return sigma * (math.sqrt(n) + math.sqrt(m)) * math.sqrt(p / (n * m))


def run_algorithm(algo, op, b, spec):
    lam = spec.lam(algo)
    if algo == "barm":
        cfg = barm.BarmConfig(mode=spec.barm_mode, max_iter=spec.max_iter, tol=spec.barm_tol, lam=lam)
        return barm.solve(op, b, cfg)
    if algo == "nuclear":
        if spec.noise_sigma > 0:
            if lam is None:
                lam = nuclear_noise_lambda(op.n, op.m, op.p, spec.noise_sigma)
            return baselines.nuclear_norm_solve(op, b, baselines.NucConfig(mode="regularized", lam=lam))
        return baselines.nuclear_norm_solve(op, b)
    if algo == "irls0":
        return baselines.irls0_solve(op, b)
    raise ValueError(f"unknown algorithm {algo!r}")


def archive_name(rec):
    return f"{rec.kind}_n{rec.n}_m{rec.m}_r{rec.r}_p{rec.p}_t{rec.trial}_{rec.algorithm}.npy"


def run_trial(spec, r, trial, algorithms=None, archive_dir=None):
    """Solve one instance with each algorithm; never raises on solver failure."""
    algorithms = spec.algorithms if algorithms is None else algorithms
    p = spec.p_for(r)
    inst = make_instance(spec, r, trial)
    out = []
    for algo in algorithms:
        base = dict(n=spec.n, m=spec.m, r=r, p=p, kind=spec.kind, trial=trial, seed=inst.seed, algorithm=algo)
        t0 = time.perf_counter()
        try:
            rep = run_algorithm(algo, inst.op, inst.b, spec)
        except Exception as exc:  # recorded, never fatal
            ms = 1e3 * (time.perf_counter() - t0)
            out.append(TrialRecord(**base, rel=math.inf, fos_success=False, fors_success=False, est_rank=-1,
                                   iterations=0, wall_ms=ms, residual=math.inf, error=f"{type(exc).__name__}: {exc}"))
            continue
        ms = 1e3 * (time.perf_counter() - t0)
        e = rel(inst.x0, rep.X)
        ok_rs = r < min(spec.n, spec.m) and fors(rep.X, r, inst.op, inst.b)
        rec = TrialRecord(**base, rel=e, fos_success=e < 1e-3, fors_success=bool(ok_rs), est_rank=int(rep.est_rank),
                          iterations=int(rep.iterations), wall_ms=ms, residual=float(rep.residual))
        if archive_dir is not None and not rec.fos_success:
            np.save(os.path.join(archive_dir, archive_name(rec)), rep.X)
        out.append(rec)
    return out


def _run_job(args):
    spec, r, trial, algos, archive_dir = args
    return run_trial(spec, r, trial, algos, archive_dir)


def run_sweep(spec, threads=1, skip=(), archive_dir=None, on_records=None):
    """Run every (rank, trial, algorithm) not in ``skip``.

    Records come back in canonical (rank, trial, algorithm) order however
    many worker processes are used.  ``on_records`` is called in the parent
    as each trial finishes.
    """
    skip = set(skip)
    if archive_dir is not None:
        os.makedirs(archive_dir, exist_ok=True)
    jobs = []
    for r in spec.ranks:
        for t in range(spec.trials):
            algos = tuple(a for a in spec.algorithms if (r, t, a) not in skip)
            if algos:
                jobs.append((spec, r, t, algos, archive_dir))
    results = []
    if threads <= 1 or len(jobs) <= 1:
        for job in jobs:
            recs = _run_job(job)
            if on_records:
                on_records(recs)
            results.extend(recs)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for recs in pool.map(_run_job, jobs):
                if on_records:
                    on_records(recs)
                results.extend(recs)
    order = {a: i for i, a in enumerate(spec.algorithms)}
    results.sort(key=lambda rec: (spec.ranks.index(rec.r), rec.trial, order[rec.algorithm]))
    return results


def write_jsonl(records, path, append=False):
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_jsonl(path):
    """Parse a record file; raises ValueError naming the offending line."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrialRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


SUMMARY_COLUMNS = ("n", "m", "r", "p", "kind", "algo", "fos", "fors", "mean_rel", "mean_iters")


def summarize(records):
    """Per-cell FoS, FoRS, mean REL and mean iterations, in first-seen order."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.n, rec.m, rec.r, rec.p, rec.kind, rec.algorithm), []).append(rec)
    rows = []
    for (n, m, r, p, kind, algo), recs in groups.items():
        rows.append(dict(
            n=n, m=m, r=r, p=p, kind=kind, algo=algo,
            fos=sum(x.fos_success for x in recs) / len(recs),
            fors=sum(x.fors_success for x in recs) / len(recs),
            mean_rel=float(np.mean([x.rel for x in recs])),
            mean_iters=float(np.mean([x.iterations for x in recs])),
        ))
    return rows


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def failure_spectrum(records, archive_dir):
    """Mean sorted singular-value vector over FoS failures with an archived Xhat.

    Returns an empty array when there are no such failures.
    """
    spectra = []
    for rec in records:
        if rec.fos_success:
            continue
        path = os.path.join(archive_dir, archive_name(rec))
        if os.path.exists(path):
            spectra.append(np.linalg.svd(np.load(path), compute_uv=False))
    if not spectra:
        return np.empty(0)
    k = min(s.size for s in spectra)
    return np.mean([s[:k] for s in spectra], axis=0)


def landscape_instance(n, m, r, p, seed):
    """(op, X*) for a feasible-line study; the mask observes every row and column."""
    x_seed, op_seed = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return covered_completion(n, m, p, int(op_seed)), gen_lowrank(n, m, r, int(x_seed))
