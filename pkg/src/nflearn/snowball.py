"""T-wave snowball sampling under the reciprocal incident observation
procedure, with sample-dependent inclusion probabilities and weights."""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np

from .graph import ValuedGraph


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class SRSWOR:
    """Simple random sample of ``m`` initial nodes out of ``N``."""

    m: int
    N: int

    def __post_init__(self):
        if not (1 <= self.m <= self.N):
            raise DesignError(f"SRSWOR needs 1 <= m <= N, got m={self.m}, N={self.N}")

    def avoid_prob(self, k: int) -> float:
        """``Pr(s0 and F disjoint)`` for ``|F| = k``: C(N-k, m) / C(N, m)."""
        _check_size(k, self.N)
        if self.N - k < self.m:
            return 0.0
        return math.exp(_log_comb(self.N - k, self.m) - _log_comb(self.N, self.m))

    def draw(self, rng: np.random.Generator) -> frozenset[int]:
        return frozenset(int(i) for i in rng.choice(self.N, size=self.m, replace=False))

    def enumerate(self) -> Iterator[tuple[frozenset[int], float]]:
        p = 1.0 / math.comb(self.N, self.m)
        for s in itertools.combinations(range(self.N), self.m):
            yield frozenset(s), p

    def n_samples(self) -> int:
        return math.comb(self.N, self.m)

    def to_dict(self):
        return {"kind": "srswor", "m": self.m, "N": self.N}


@dataclass(frozen=True)
class Bernoulli:
    """Each node enters the initial sample independently with probability ``p``."""

    p: float
    N: int

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise DesignError(f"Bernoulli needs 0 < p < 1, got {self.p}")

    def avoid_prob(self, k: int) -> float:
        _check_size(k, self.N)
        return math.exp(k * math.log1p(-self.p))

    def draw(self, rng: np.random.Generator) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(rng.random(self.N) < self.p))

    def enumerate(self):
        for size in range(self.N + 1):
            p = self.p ** size * (1 - self.p) ** (self.N - size)
            for s in itertools.combinations(range(self.N), size):
                yield frozenset(s), p

    def n_samples(self) -> int:
        return 2 ** self.N

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p, "N": self.N}


def design_from_dict(d: dict, N: int):
    kind = d.get("kind")
    if kind == "srswor":
        return SRSWOR(int(d["m"]), N)
    if kind == "bernoulli":
        return Bernoulli(float(d["p"]), N)
    raise DesignError(f"unknown initial design {kind!r}")


def _check_size(k, n):
    if k > n or k < 0:
        raise DesignError(f"set size {k} outside frame of size {n}")


def _log_comb(a, b):
    return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)


def inclusion_prob(F, design) -> float:
    """``Pr(s0 meets F)`` under the initial design."""
    if len(F) == 0:
        raise DesignError("F must be nonempty")
    return 1.0 - design.avoid_prob(len(F))


def joint_inclusion_prob(Fi, Fj, design) -> float:
    """``Pr(s0 meets F_i and s0 meets F_j)`` by inclusion-exclusion."""
    Fi, Fj = set(Fi), set(Fj)
    return (1.0 - design.avoid_prob(len(Fi)) - design.avoid_prob(len(Fj))
            + design.avoid_prob(len(Fi | Fj)))


# targets ---------------------------------------------------------------------

@dataclass(frozen=True)
class QTau:
    """Learning target ``mu = Q_tau c`` (needs tau-order neighbourhoods)."""

    tau: int

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be positive")


def parse_target(target):
    if isinstance(target, QTau) or target in ("cnf", "rnf"):
        return target
    if isinstance(target, str) and target.startswith("qtau"):
        return QTau(int(target.split(":", 1)[1]))
    raise ValueError(f"unknown target {target!r}")


# sample graph ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleGraph:
    """Outcome of one T-wave snowball sample.

    Holds the waves and everything observed: the edges incident to seed
    nodes (with their values) and the values of every observed node.
    Non-edges between a seed node and any other node are known too.
    """

    N: int
    T: int
    s0: frozenset
    waves: tuple
    nodes: tuple
    x: np.ndarray
    y: np.ndarray | None
    edges: tuple

    @cached_property
    def seed_sample(self) -> frozenset:
        s = set(self.s0)
        for w in self.waves[:-1]:
            s |= w
        return frozenset(s)

    @property
    def observed_nodes(self) -> frozenset:
        return frozenset(self.nodes)

    @property
    def terminated(self) -> bool:
        """True when the last wave is empty, i.e. every observed node is a seed."""
        return len(self.waves[-1]) == 0

    @cached_property
    def _undirected(self) -> dict:
        adj = {i: set() for i in self.nodes}
        for i, j, _ in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def known(self, i: int, j: int) -> bool:
        """Whether ``a_ij`` has been observed (as an edge or a non-edge)."""
        return i in self.seed_sample or j in self.seed_sample

    def distances_from(self, sources, limit: int | None = None) -> dict:
        """Undirected BFS distances in the sample graph."""
        return _bfs(self._undirected, sources, limit)

    def observed_graph(self) -> ValuedGraph:
        """The sample as a graph over the full frame; unobserved values are NaN."""
        p = self.x.shape[1]
        x = np.full((self.N, p), np.nan)
        idx = np.array(self.nodes, dtype=np.int64)
        x[idx] = self.x
        y = None
        if self.y is not None:
            y = np.full(self.N, np.nan)
            y[idx] = self.y
        src = [e[0] for e in self.edges]
        dst = [e[1] for e in self.edges]
        om = [e[2] for e in self.edges]
        return ValuedGraph(self.N, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                           np.array(om, dtype=float), x, y)

    def to_dict(self) -> dict:
        return {
            "N": self.N, "T": self.T,
            "s0": sorted(self.s0), "waves": [sorted(w) for w in self.waves],
            "seed_sample": sorted(self.seed_sample),
            "nodes": [{"id": int(i), "x": self.x[k].tolist(),
                       "y": None if self.y is None else float(self.y[k])}
                      for k, i in enumerate(self.nodes)],
            "edges": [{"source": int(i), "target": int(j), "omega": float(w)}
                      for i, j, w in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleGraph":
        nodes = tuple(int(n["id"]) for n in d["nodes"])
        x = np.array([n["x"] for n in d["nodes"]], dtype=float).reshape(len(nodes), -1)
        ys = [n.get("y") for n in d["nodes"]]
        y = None if any(v is None for v in ys) else np.array(ys, dtype=float)
        edges = tuple((int(e["source"]), int(e["target"]), float(e["omega"])) for e in d["edges"])
        return cls(int(d["N"]), int(d["T"]), frozenset(d["s0"]),
                   tuple(frozenset(w) for w in d["waves"]), nodes, x, y, edges)


def _bfs(adj: dict, sources, limit=None) -> dict:
    dist = {s: 0 for s in sources}
    q = deque(dist)
    while q:
        v = q.popleft()
        dv = dist[v]
        if limit is not None and dv >= limit:
            continue
        for u in adj.get(v, ()):
            if u not in dist:
                dist[u] = dv + 1
                q.append(u)
    return dist


def run_tsbs(g: ValuedGraph, s0, T: int) -> SampleGraph:
    """Draw waves ``s_t = nu(s_{t-1})`` minus earlier waves, for t = 1..T."""
    s0 = frozenset(int(i) for i in s0)
    if not s0:
        raise DesignError("initial sample must be nonempty")
    if T < 1:
        raise DesignError("T must be a positive integer")
    for i in s0:
        g._check(i)
    nbrs = g._nbrs
    seen = set(s0)
    prev = s0
    waves = []
    for _ in range(T):
        nxt = set()
        for i in prev:
            nxt.update(int(j) for j in nbrs[i])
        nxt -= seen
        seen |= nxt
        prev = frozenset(nxt)
        waves.append(prev)
    seed = set(s0).union(*waves[:-1])
    # reciprocal incident OP: every edge touching a seed node is observed
    ev = g.edge_values
    edges = []
    for i in sorted(seed):
        for j in g.out_neighbors(i):
            edges.append((i, int(j), ev[(i, int(j))]))
        for j in g.in_neighbors(i):
            if int(j) not in seed:
                edges.append((int(j), i, ev[(int(j), i)]))
    nodes = tuple(sorted(seen))
    idx = np.array(nodes, dtype=np.int64)
    y = None if g.y is None else g.y[idx].copy()
    return SampleGraph(g.n, int(T), s0, tuple(waves), nodes, g.x[idx].copy(), y,
                       tuple(sorted(edges)))


def eligibility_flags(sample: SampleGraph, target="cnf") -> dict:
    """Flag ``delta_i`` for every observed node.

    CNF and RNF: the seed sample. ``QTau(tau)``: seed nodes within
    ``T - tau`` undirected hops of ``s0`` in the sample graph (every node
    within ``tau - 1`` hops of them is then a seed node); if the waves
    stopped early every seed node qualifies.
    """
    target = parse_target(target)
    seed = sample.seed_sample
    if isinstance(target, QTau):
        if sample.terminated:
            ok = seed
        else:
            radius = sample.T - target.tau
            ok = set() if radius < 0 else set(sample.distances_from(sample.s0, radius))
            ok &= seed
    else:
        ok = seed
    return {i: (i in ok) for i in sample.nodes}


def f_in_sample(sample: SampleGraph, i: int, target="cnf") -> frozenset:
    """Nodes that lead to ``i`` by the T-wave procedure within the sample
    graph: undirected sample-graph distance at most ``T - 1``."""
    if not eligibility_flags(sample, target).get(i, False):
        raise DesignError(f"node {i} is not eligible")
    return frozenset(sample.distances_from([i], sample.T - 1))


@dataclass(frozen=True, eq=False)
class SbsWeights:
    """Eligible nodes with their ancestry sets, inclusion probabilities and weights."""

    nodes: np.ndarray
    F: tuple
    pi: np.ndarray
    w: np.ndarray
    observed: tuple

    def weight(self, i: int) -> float:
        """``w_i``; zero for observed nodes that are not eligible."""
        hit = np.flatnonzero(self.nodes == i)
        if hit.size:
            return float(self.w[hit[0]])
        if i in self.observed:
            return 0.0
        raise KeyError(f"node {i} was not observed")

    def joint_matrix(self, design) -> np.ndarray:
        return joint_matrix(self.F, design)


def sbs_weights(sample: SampleGraph, design, target="cnf") -> SbsWeights:
    flags = eligibility_flags(sample, target)
    elig = [i for i in sample.nodes if flags[i]]
    F = tuple(frozenset(sample.distances_from([i], sample.T - 1)) for i in elig)
    pi = np.array([inclusion_prob(f, design) for f in F])
    if np.any(pi <= 0):
        raise AssertionError("eligible node with zero inclusion probability")
    return SbsWeights(np.array(elig, dtype=np.int64), F, pi, 1.0 / pi, sample.nodes)


def joint_matrix(F, design) -> np.ndarray:
    """Matrix of ``Pr(delta_i delta_j = 1)`` for a list of fixed sets."""
    n = len(F)
    avoid = np.array([design.avoid_prob(len(f)) for f in F])
    out = np.empty((n, n))
    for a in range(n):
        out[a, a] = 1.0 - avoid[a]
        for b in range(a + 1, n):
            v = 1.0 - avoid[a] - avoid[b] + design.avoid_prob(len(F[a] | F[b]))
            out[a, b] = out[b, a] = v
    return out


def population_ancestry(g: ValuedGraph, T: int) -> tuple:
    """``F_i`` in the full graph: nodes within ``T - 1`` undirected hops."""
    adj = {i: [int(j) for j in g._nbrs[i]] for i in range(g.n)}
    return tuple(frozenset(_bfs(adj, [i], T - 1)) for i in range(g.n))


def sample_terms(sample: SampleGraph, weights: SbsWeights, sigma=None,
                 scheme: str = "in-normalized", covariates: str = "xz", target="cnf"):
    """Score terms of the eligible nodes, built from observed values only."""
    from .estimation import DEFAULT_SIGMA, SampleTerms, node_bundle
    from .graph import influence_matrix

    obs = sample.observed_graph()
    m = influence_matrix(obs, scheme)
    t = "rnf" if parse_target(target) != "cnf" else "cnf"
    bundles = [node_bundle(obs, int(i), m, sigma or DEFAULT_SIGMA, t) for i in weights.nodes]
    return SampleTerms.from_bundles(bundles, weights.w, covariates)


def write_probability_csv(weights: SbsWeights, path):
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "F_size", "pi", "w"])
        for i, f, p, w in zip(weights.nodes, weights.F, weights.pi, weights.w):
            wr.writerow([int(i), len(f), repr(float(p)), repr(float(w))])


def sample_bundle_json(sample: SampleGraph, weights: SbsWeights, design, target) -> str:
    d = sample.to_dict()
    d["design"] = {"kind": "sbs", "initial": design.to_dict(), "T": sample.T,
                   "target": target if isinstance(target, str) else f"qtau:{target.tau}"}
    flags = eligibility_flags(sample, target)
    d["delta"] = {str(i): int(v) for i, v in flags.items()}
    d["weights"] = {str(int(i)): float(w) for i, w in zip(weights.nodes, weights.w)}
    return json.dumps(d, indent=2)
