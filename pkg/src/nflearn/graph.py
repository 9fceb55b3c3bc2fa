"""Valued digraphs: storage, neighbourhood queries and influence matrices.

Nodes are dense integers ``0..N-1``. A node feature entry of NaN means the
value has not been observed (sample graphs reuse this type).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

SCHEMES = ("in-normalized", "raw")


class GraphError(ValueError):
    """Invalid graph construction or query."""


@dataclass(frozen=True, eq=False)
class ValuedGraph:
    """Directed loop-free graph with node features, outcomes and edge values.

    Parameters
    ----------
    n : int
        Number of nodes.
    src, dst : ndarray of int
        Directed edge list, one entry per edge ``(src[k], dst[k])``.
    omega : ndarray of float
        Edge value for each listed edge.
    x : ndarray, shape (n, p)
        Node features.
    y : ndarray, shape (n,), optional
        Node outcomes.
    labels : tuple of str, optional
        External node labels, indexed by node id.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    omega: np.ndarray
    x: np.ndarray
    y: np.ndarray | None = None
    labels: tuple | None = None

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        omega = np.asarray(self.omega, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = int(self.n)
        if n < 0:
            raise GraphError("node count must be non-negative")
        if not (src.shape == dst.shape == omega.shape):
            raise GraphError("src, dst and omega must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(src == dst):
            raise GraphError("loops are not allowed")
        if src.size and np.unique(src * n + dst).size != src.size:
            raise GraphError("duplicate edges are not allowed")
        if not np.all(np.isfinite(omega)):
            raise GraphError("edge values must be finite")
        if x.shape[0] != n:
            raise GraphError(f"x has {x.shape[0]} rows, expected {n}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != n:
                raise GraphError(f"y has {y.shape[0]} entries, expected {n}")
            object.__setattr__(self, "y", y)
        if self.labels is not None:
            if len(self.labels) != n:
                raise GraphError("labels must have one entry per node")
            object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_edges(cls, n, edges, x=None, y=None, omega=None, labels=None):
        """Build a graph from ``(i, j)`` pairs; unit edge values and zero
        features unless given."""
        edges = list(edges)
        src = np.array([e[0] for e in edges], dtype=np.int64)
        dst = np.array([e[1] for e in edges], dtype=np.int64)
        if omega is None:
            omega = np.ones(len(edges))
        if x is None:
            x = np.zeros((n, 1))
        return cls(n, src, dst, omega, x, y, labels)

    def with_outcomes(self, y) -> "ValuedGraph":
        return replace(self, y=np.asarray(y, dtype=float))

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_edges(self) -> int:
        return self.src.size

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Sparse 0/1 adjacency matrix A with ``A[i, j] = a_ij``."""
        return sp.csr_matrix(
            (np.ones(self.n_edges), (self.src, self.dst)), shape=(self.n, self.n)
        )

    @cached_property
    def undirected(self) -> sp.csr_matrix:
        a = self.adjacency
        u = ((a + a.T) > 0).astype(float).tocsr()
        u.sort_indices()
        return u

    @cached_property
    def _out(self) -> list[np.ndarray]:
        a = self.adjacency.copy()
        a.sort_indices()
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n)]

    @cached_property
    def _in(self) -> list[np.ndarray]:
        at = self.adjacency.T.tocsr()
        at.sort_indices()
        return [at.indices[at.indptr[i]:at.indptr[i + 1]] for i in range(self.n)]

    @cached_property
    def _nbrs(self) -> list[np.ndarray]:
        u = self.undirected
        return [u.indices[u.indptr[i]:u.indptr[i + 1]] for i in range(self.n)]

    def out_neighbors(self, i: int) -> np.ndarray:
        return self._out[self._check(i)]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self._in[self._check(i)]

    def neighbor_array(self, i: int) -> np.ndarray:
        """Sorted undirected neighbourhood of ``i`` as an array."""
        return self._nbrs[self._check(i)]

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.undirected.indptr)

    @cached_property
    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n)

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n)

    @cached_property
    def edge_values(self) -> dict:
        return {(int(i), int(j)): float(w) for i, j, w in zip(self.src, self.dst, self.omega)}

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edge_values

    def checksum(self) -> str:
        """SHA-256 over the edge list, edge values and node values."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        order = np.lexsort((self.dst, self.src))
        for arr in (self.src[order], self.dst[order], self.omega[order], self.x):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.y is not None:
            h.update(self.y.tobytes())
        return h.hexdigest()

    def _check(self, i) -> int:
        if not (0 <= int(i) < self.n):
            raise GraphError(f"invalid node index {i} (N={self.n})")
        return int(i)


def neighbors(g: ValuedGraph, i: int) -> frozenset[int]:
    """Undirected neighbourhood: nodes ``j`` with ``a_ij + a_ji > 0``."""
    return frozenset(int(j) for j in g.neighbor_array(i))


def degrees(g: ValuedGraph, i: int) -> tuple[int, int, int]:
    """Return ``(degree, out-degree, in-degree)`` of node ``i``."""
    i = g._check(i)
    return int(g.degree[i]), int(g.out_degree[i]), int(g.in_degree[i])


def tau_neighborhood(g: ValuedGraph, i: int, tau: int) -> frozenset[int]:
    """Nodes with a directed walk of length 1..tau ending at ``i``.

    Expands the frontier one reverse edge at a time, so the cost is
    linear in the edges touched. ``i`` itself is included only when it
    lies on a directed cycle of length at most ``tau``.
    """
    i = g._check(i)
    if int(tau) < 1:
        raise GraphError("tau must be a positive integer")
    reached: set[int] = set()
    frontier = {i}
    # A node set repeating means later frontiers repeat too.
    seen_frontiers: set[frozenset] = set()
    for _ in range(int(tau)):
        nxt = set()
        for j in frontier:
            nxt.update(int(k) for k in g._in[j])
        if not nxt:
            break
        reached |= nxt
        key = frozenset(nxt)
        if key in seen_frontiers:
            break
        seen_frontiers.add(key)
        frontier = nxt
    return frozenset(reached)


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """Sparse coefficients ``m_ij`` of the linear neighbour function.

    ``m_ij`` is nonzero only when ``j -> i`` is an edge.
    """

    matrix: sp.csr_matrix
    scheme: str
    spectral_radius: float
    converged: bool
    row_sum_bound: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def lambda_bound(self) -> float:
        """Supremum of ``|lambda|`` for which the Neumann series converges."""
        return math.inf if self.spectral_radius == 0 else 1.0 / self.spectral_radius

    def entries(self) -> dict:
        coo = self.matrix.tocoo()
        return {(int(i), int(j)): float(v) for i, j, v in zip(coo.row, coo.col, coo.data)}

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.matrix
        sl = slice(m.indptr[i], m.indptr[i + 1])
        return m.indices[sl], m.data[sl]


def influence_matrix(g: ValuedGraph, scheme: str = "in-normalized") -> InfluenceMatrix:
    """Build M from the edges and edge values of ``g``.

    ``in-normalized``: ``m_ij = w_ji / sum_k w_ki`` over in-neighbours of
    ``i``, zero row when ``i`` has no in-edges. ``raw``: ``m_ij = w_ji``.
    """
    if scheme not in SCHEMES:
        raise GraphError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    if np.any(g.omega < 0):
        raise GraphError("negative edge values are not allowed")
    data = g.omega.copy()
    if scheme == "in-normalized":
        totals = np.bincount(g.dst, weights=g.omega, minlength=g.n)
        denom = totals[g.dst]
        data = np.divide(data, denom, out=np.zeros_like(data), where=denom > 0)
    # row = receiving node i, column = sending node j
    m = sp.csr_matrix((data, (g.dst, g.src)), shape=(g.n, g.n))
    m.eliminate_zeros()
    m.sort_indices()
    rho, ok = spectral_radius(m)
    return InfluenceMatrix(m, scheme, rho, ok, _max_row_sum(m))


class NormCheck(NamedTuple):
    ok: bool
    spectral_radius: float
    converged: bool
    row_sum_bound: float


def norm_check(m: InfluenceMatrix, lam: float, tol: float = 1e-9) -> NormCheck:
    """Check the convergence restriction on ``lam * M``.

    The spectral radius of ``lam * M`` is compared with ``1 - tol``. When
    the power iteration does not converge the estimate is replaced by a
    conservative upper bound and ``converged`` is False.
    """
    lam = abs(float(lam))
    rho = lam * m.spectral_radius
    return NormCheck(bool(rho < 1.0 - tol), float(rho), bool(m.converged), float(lam * m.row_sum_bound))


def _max_row_sum(m: sp.csr_matrix) -> float:
    if m.nnz == 0:
        return 0.0
    return float(np.abs(m).sum(axis=1).max())


def spectral_radius(m: sp.spmatrix, tol: float = 1e-13, max_iter: int = 20000) -> tuple[float, bool]:
    """Spectral radius of a nonnegative sparse matrix.

    Splits into strongly connected components; singleton components
    contribute zero (no loops), so acyclic graphs give exactly 0. On each
    nontrivial component the Perron root is bracketed by Collatz-Wielandt
    bounds from power iteration on ``I + B``, which is primitive.
    """
    m = sp.csr_matrix(m)
    if m.nnz == 0:
        return 0.0, True
    if m.data.min() < 0:
        raise GraphError("spectral_radius expects a nonnegative matrix")
    ncomp, labels = connected_components(m, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=ncomp)
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rho, converged = 0.0, True
    for c in np.flatnonzero(sizes >= 2):
        idx = order[bounds[c]:bounds[c + 1]]
        r, ok = _perron_root(m[idx][:, idx], tol, max_iter)
        rho = max(rho, float(r))
        converged &= ok
    return rho, converged


def _perron_root(b: sp.csr_matrix, tol: float, max_iter: int) -> tuple[float, bool]:
    shifted = b + sp.identity(b.shape[0], format="csr")
    v = np.ones(b.shape[0])
    hi = np.inf
    for _ in range(max_iter):
        bv = shifted @ v
        ratios = bv / v
        lo, hi = ratios.min(), min(hi, ratios.max())
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi) - 1.0, True
        v = bv / bv.max()
    return min(hi - 1.0, _max_row_sum(b)), False
