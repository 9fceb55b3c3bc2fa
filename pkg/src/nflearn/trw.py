"""Targeted random walk: neighbour moves mixed with uniform random jumps.

From node ``i`` with degree ``d_i`` the walk moves to a uniformly chosen
neighbour with probability ``d_i / (d_i + r)`` and otherwise jumps to a
uniformly chosen node of the frame (possibly ``i`` or a neighbour). The
stationary law is proportional to ``d_i + r``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .estimation import (DEFAULT_SIGMA, EstimateReport, EstimationError, SampleTerms,
                         VarianceSpec, estimate, node_bundle)
from .functions import Theta
from .graph import InfluenceMatrix, ValuedGraph, influence_matrix
from .rng import stream


@dataclass(frozen=True)
class WalkConfig:
    r: float = 1.0
    n: int = 100
    burn_in: int | None = None
    thin: int = 1
    seed: int = 0
    L: int = 2

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.n < 1 or self.thin < 1 or self.L < 1:
            raise ValueError("n, thin and L must be at least 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")

    def burn(self, N: int) -> int:
        return 50 * N if self.burn_in is None else int(self.burn_in)


@dataclass(frozen=True, eq=False)
class WalkTrace:
    """Extracted states of one walk with the degrees observed at each."""

    states: np.ndarray
    degrees: np.ndarray
    steps: np.ndarray

    def observed_graph(self, g: ValuedGraph) -> ValuedGraph:
        """What the walk observed: each visited state's incident edges and
        the values of the nodes they touch. Other values are NaN."""
        visited = np.unique(self.states)
        keep = np.isin(g.src, visited) | np.isin(g.dst, visited)
        seen = np.zeros(g.n, dtype=bool)
        seen[visited] = True
        seen[g.src[keep]] = True
        seen[g.dst[keep]] = True
        x = np.where(seen[:, None], g.x, np.nan)
        y = None if g.y is None else np.where(seen, g.y, np.nan)
        return ValuedGraph(g.n, g.src[keep], g.dst[keep], g.omega[keep], x, y)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "node", "degree"])
            for row in zip(self.steps, self.states, self.degrees):
                wr.writerow([int(v) for v in row])


def transition_probs(g: ValuedGraph, i: int, r: float) -> np.ndarray:
    """Row ``i`` of the walk's transition matrix."""
    d = g.degree[g._check(i)]
    p = np.full(g.n, r / ((d + r) * g.n))
    p[g.neighbor_array(i)] += 1.0 / (d + r)
    return p


def transition_matrix(g: ValuedGraph, r: float) -> np.ndarray:
    return np.array([transition_probs(g, i, r) for i in range(g.n)])


def stationary_probs(g: ValuedGraph, r: float) -> np.ndarray:
    """Closed-form stationary law ``(d_i + r) / sum_j (d_j + r)``."""
    a = g.degree + r
    return a / a.sum()


def run_trw(g: ValuedGraph, cfg: WalkConfig, start: int | None = None,
            rng: np.random.Generator | None = None) -> WalkTrace:
    """Simulate one walk: ``burn_in`` steps, then every ``thin``-th state
    until ``n`` states are extracted."""
    rng = stream(cfg.seed) if rng is None else rng
    if g.n == 0:
        raise ValueError("empty graph")
    s = int(rng.integers(g.n)) if start is None else g._check(start)
    states, steps = _walk_scalar(g, cfg, s, rng)
    return WalkTrace(states, g.degree[states].copy(), steps)


def run_trw_batch(g: ValuedGraph, cfg: WalkConfig, n_walks: int,
                  rng: np.random.Generator | None = None, starts=None) -> np.ndarray:
    """Simulate ``n_walks`` independent walks in lockstep; states ``(n_walks, n)``."""
    rng = stream(cfg.seed) if rng is None else rng
    if starts is None:
        starts = rng.integers(g.n, size=n_walks)
    state = np.asarray(starts, dtype=np.int64).copy()
    indptr = g.undirected.indptr
    indices = g.undirected.indices
    deg = g.degree
    move_p = deg / (deg + cfg.r)
    out = np.empty((n_walks, cfg.n), dtype=np.int64)

    def step(state):
        u = rng.random(n_walks)
        v = rng.random(n_walks)
        jump = rng.integers(g.n, size=n_walks)
        d = deg[state]
        move = u < move_p[state]
        nb = indices[np.minimum(indptr[state] + (v * d).astype(np.int64), indices.size - 1)] \
            if indices.size else jump
        return np.where(move, nb, jump)

    for _ in range(cfg.burn(g.n)):
        state = step(state)
    for k in range(cfg.n):
        if k:
            for _ in range(cfg.thin):
                state = step(state)
        out[:, k] = state
    return out


def _walk_scalar(g, cfg, s, rng):
    nbrs = [a.tolist() for a in g._nbrs]
    deg = g.degree.tolist()
    r, N = cfg.r, g.n
    burn = cfg.burn(N)
    total = burn + (cfg.n - 1) * cfg.thin
    states = np.empty(cfg.n, dtype=np.int64)
    steps = burn + cfg.thin * np.arange(cfg.n)
    targets = steps.tolist()
    chunk = 1 << 16
    k = 0
    t = 0
    if burn == 0:
        states[0] = s
        k = 1
    while t < total:
        m = min(chunk, total - t)
        us = rng.random(m).tolist()
        vs = rng.random(m).tolist()
        js = rng.integers(N, size=m).tolist()
        for a in range(m):
            d = deg[s]
            if us[a] * (d + r) < d:
                s = nbrs[s][int(vs[a] * d)]
            else:
                s = js[a]
            t += 1
            if k < cfg.n and t == targets[k]:
                states[k] = s
                k += 1
    return states, steps


def trw_weights(trace: WalkTrace, cfg: WalkConfig) -> np.ndarray:
    """``w = 1 / (n (d_i + r))`` per extracted state; repeats kept separate."""
    return 1.0 / (cfg.n * (trace.degrees + cfg.r))


def trace_terms(g: ValuedGraph, trace: WalkTrace, cfg: WalkConfig,
                m: InfluenceMatrix | None = None, sigma: VarianceSpec = DEFAULT_SIGMA,
                covariates: str = "xz", mode: str = "cnf") -> SampleTerms:
    """Weighted score terms from what the walk observed."""
    obs = trace.observed_graph(g)
    m = influence_matrix(obs, m.scheme if m is not None else "in-normalized")
    cache = {}
    bundles = []
    for i in trace.states.tolist():
        if i not in cache:
            cache[i] = node_bundle(obs, i, m, sigma, mode)
        bundles.append(cache[i])
    return SampleTerms.from_bundles(bundles, trw_weights(trace, cfg), covariates)


def replicate_estimate(g: ValuedGraph, cfg: WalkConfig, estimator=None, *, mode: str = "cnf",
                       population: SampleTerms | None = None, sigma: VarianceSpec = DEFAULT_SIGMA,
                       covariates: str = "xz", rng: np.random.Generator | None = None,
                       **est_kw) -> EstimateReport:
    """Run ``L`` independent walks and combine their estimates.

    When ``population`` terms are given, each walk's terms are taken from
    them by row (identical to the observed bundles, which hold the same
    values for every visited state).
    """
    rng = stream(cfg.seed) if rng is None else rng
    walks = run_trw_batch(g, cfg, cfg.L, rng)
    steps = cfg.burn(g.n) + cfg.thin * np.arange(cfg.n)
    traces = [WalkTrace(s, g.degree[s].copy(), steps) for s in walks]
    rep = estimate_walks(g, traces, cfg, estimator, mode=mode, population=population,
                         sigma=sigma, covariates=covariates, **est_kw)
    rep.config["burn_in"] = cfg.burn(g.n)
    return rep


def estimate_walks(g: ValuedGraph, traces, cfg: WalkConfig, estimator=None, *, mode: str = "cnf",
                   population: SampleTerms | None = None, sigma: VarianceSpec = DEFAULT_SIGMA,
                   covariates: str = "xz", scheme: str = "in-normalized",
                   **est_kw) -> EstimateReport:
    """Average of per-walk estimates with the between-walk variance
    ``sum (t_l - t)(t_l - t)' / (L (L - 1))``.

    ``g`` may be the full graph or only what the walks observed. Walks
    whose solver fails are dropped with a warning.
    """
    if estimator is None:
        def estimator(t):
            return estimate(t, mode, **est_kw)
    m = None if population is not None else influence_matrix(g, scheme)
    thetas, objectives, failures = [], [], []
    last = None
    for l, trace in enumerate(traces):
        try:
            if population is not None:
                terms = population.take(trace.states, trw_weights(trace, cfg))
            else:
                terms = trace_terms(g, trace, cfg, m, sigma, covariates, mode)
            rep = estimator(terms)
        except (EstimationError, np.linalg.LinAlgError, ValueError) as exc:
            failures.append({"replicate": l, "error": str(exc)})
            warnings.warn(f"walk {l} dropped: {exc}", RuntimeWarning, stacklevel=2)
            continue
        thetas.append(rep.theta.vector())
        objectives.append(rep.objective)
        last = rep.theta
    L = len(thetas)
    if L == 0:
        raise EstimationError("every replicate walk failed")
    th = np.array(thetas)
    mean = th.mean(axis=0)
    var = None
    if L >= 2:
        dev = th - mean
        var = dev.T @ dev / (L * (L - 1))
    theta = Theta.from_vector(mean, last.mode, last.beta.size)
    return EstimateReport(
        theta, var, float(np.mean(objectives)),
        diagnostics={"replicates": th.tolist(), "failures": failures, "L_used": L},
        config={"design": "trw", "r": cfg.r, "n": cfg.n, "burn_in": cfg.burn_in,
                "thin": cfg.thin, "L": cfg.L, "seed": cfg.seed},
    )
