"""Estimating equations for network function learning.

Per-node score terms are held in :class:`SampleTerms`, a column store of
everything a node contributes: its own values, its contextual features
and the neighbourhood sums needed by the recursive score. The weighted
sample score is ``sum_i w_i H_i(theta)``; with unit weights over every
node it is the population score.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .functions import MissingValueError, Theta, get_c_function
from .graph import InfluenceMatrix, ValuedGraph, influence_matrix


class SingularGramError(np.linalg.LinAlgError):
    def __init__(self, rank, size):
        super().__init__(f"weighted Gram matrix is singular (rank {rank} < {size})")
        self.rank = rank
        self.size = size


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceSpec:
    """Chosen per-node constants ``sigma_i^2`` (all ones by default).

    Give either a scalar, a per-node array indexed by node id, or a
    function of the feature matrix returning one value per row.
    """

    constant: float = 1.0
    per_node: np.ndarray | None = None
    fn: Callable[[np.ndarray], np.ndarray] | None = None

    def values(self, nodes, x) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if self.per_node is not None:
            out = np.asarray(self.per_node, dtype=float)[nodes]
        elif self.fn is not None:
            out = np.asarray(self.fn(np.atleast_2d(x)), dtype=float).reshape(nodes.shape)
        else:
            out = np.full(nodes.shape, float(self.constant))
        if np.any(~(out > 0)) or not np.all(np.isfinite(out)):
            raise ValueError("sigma^2 values must be positive and finite")
        return out


DEFAULT_SIGMA = VarianceSpec()


@dataclass(frozen=True, eq=False)
class NodeBundle:
    """Local data of one node: own values plus those of its neighbours."""

    node: int
    x: np.ndarray
    y: float
    sigma2: float
    nbrs: np.ndarray
    nbr_in: np.ndarray
    m: np.ndarray
    nbr_x: np.ndarray
    nbr_y: np.ndarray
    nbr_sigma2: np.ndarray

    @property
    def z(self) -> np.ndarray:
        k = int(self.nbr_in.sum())
        if k == 0:
            return np.zeros(self.x.size)
        return self.nbr_x[self.nbr_in].mean(axis=0)

    @property
    def ydot(self) -> float:
        return float(self.m @ self.nbr_y) if self.m.size else 0.0

    @property
    def msig2(self) -> float:
        return float((self.m ** 2) @ self.nbr_sigma2) if self.m.size else 0.0


def node_bundle(g: ValuedGraph, i: int, m: InfluenceMatrix | None = None,
                sigma: VarianceSpec = DEFAULT_SIGMA, target: str = "rnf") -> NodeBundle:
    """Collect the values node ``i`` needs for its score term.

    Raises :class:`MissingValueError` when any of them is unobserved
    (NaN), i.e. when the node is not eligible.
    """
    if m is None:
        m = influence_matrix(g)
    if g.y is None:
        raise MissingValueError("graph carries no outcomes")
    nbrs = g.neighbor_array(i)
    nbr_in = np.isin(nbrs, g.in_neighbors(i))
    cols, vals = m.row(i)
    coef = np.zeros(nbrs.size)
    coef[np.searchsorted(nbrs, cols)] = vals
    nx, ny = g.x[nbrs], g.y[nbrs]
    if np.isnan(g.x[i]).any() or np.isnan(g.y[i]) or np.isnan(nx).any():
        raise MissingValueError(f"node {i}: own or neighbour features unobserved")
    if target == "rnf" and np.isnan(ny).any():
        raise MissingValueError(f"node {i}: neighbour outcomes unobserved")
    s_nb = sigma.values(nbrs, nx) if nbrs.size else np.empty(0)
    return NodeBundle(
        int(i), g.x[i].copy(), float(g.y[i]), float(sigma.values([i], g.x[[i]])[0]),
        nbrs.copy(), nbr_in, coef, nx.copy(), ny.copy(), s_nb,
    )


@dataclass(frozen=True)
class TildeQuantities:
    ytilde: float
    etilde: float
    s2plus: float
    ydot: float


def tilde_quantities(b: NodeBundle, lam: float, beta, c="linear") -> TildeQuantities:
    cf = get_c_function(c)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    ydot = b.ydot
    yt = b.y - lam * ydot
    ci = float(cf.value(b.x[None, :], beta)[0])
    return TildeQuantities(yt, yt - ci, b.sigma2 + lam ** 2 * b.msig2, ydot)


@dataclass(frozen=True, eq=False)
class SampleTerms:
    """Weighted per-node score data.

    ``covariates`` selects the CNF design: ``"xz"`` uses ``u = (x, z)``,
    ``"z"`` uses the contextual features alone.
    """

    nodes: np.ndarray
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    ydot: np.ndarray
    msig2: np.ndarray
    sigma2: np.ndarray
    covariates: str = "xz"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.shape != np.shape(self.nodes):
            raise ValueError("one weight per node is required")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if self.covariates not in ("xz", "z"):
            raise ValueError("covariates must be 'xz' or 'z'")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_bundles(cls, bundles, w, covariates="xz") -> "SampleTerms":
        bundles = list(bundles)
        if not bundles:
            raise EstimationError("no eligible nodes")
        return cls(
            np.array([b.node for b in bundles]), np.asarray(w, dtype=float),
            np.array([b.x for b in bundles]), np.array([b.y for b in bundles]),
            np.array([b.z for b in bundles]), np.array([b.ydot for b in bundles]),
            np.array([b.msig2 for b in bundles]), np.array([b.sigma2 for b in bundles]),
            covariates,
        )

    def take(self, idx, w=None) -> "SampleTerms":
        """Rows ``idx`` (repeats allowed), optionally with new weights."""
        idx = np.asarray(idx, dtype=np.int64)
        return SampleTerms(
            self.nodes[idx], self.w[idx] if w is None else w, self.x[idx], self.y[idx],
            self.z[idx], self.ydot[idx], self.msig2[idx], self.sigma2[idx], self.covariates,
        )

    def reweight(self, w) -> "SampleTerms":
        return replace(self, w=np.broadcast_to(np.asarray(w, dtype=float), self.w.shape).copy())

    @property
    def u(self) -> np.ndarray:
        return self.z if self.covariates == "z" else np.hstack([self.x, self.z])

    @property
    def n_beta_cnf(self) -> int:
        return 0 if self.covariates == "z" else self.x.shape[1]


def population_terms(g: ValuedGraph, m: InfluenceMatrix | None = None,
                     sigma: VarianceSpec = DEFAULT_SIGMA, covariates: str = "xz") -> SampleTerms:
    """Unit-weight terms for every node of a fully observed graph."""
    from .functions import contextual_matrix

    if g.y is None:
        raise MissingValueError("graph carries no outcomes")
    if m is None:
        m = influence_matrix(g)
    nodes = np.arange(g.n)
    s2 = sigma.values(nodes, g.x)
    mm = m.matrix
    return SampleTerms(
        nodes, np.ones(g.n), g.x.copy(), g.y.copy(), contextual_matrix(g),
        mm @ g.y, mm.multiply(mm) @ s2, s2, covariates,
    )


# CNF ----------------------------------------------------------------------

def _cnf_vector(terms: SampleTerms, theta: Theta) -> np.ndarray:
    if theta.mode != "cnf":
        raise ValueError("CNF mode theta required")
    vec = theta.vector()
    if vec.size != terms.u.shape[1] or theta.beta.size != terms.n_beta_cnf:
        raise ValueError(f"theta has dimension {vec.size}, design has {terms.u.shape[1]}")
    return vec


def cnf_contributions(terms: SampleTerms, theta: Theta) -> np.ndarray:
    """Unweighted ``H_i = u_i (u_i' theta - y_i) / sigma_i^2``, one row per node."""
    u = terms.u
    r = u @ _cnf_vector(terms, theta) - terms.y
    return u * (r / terms.sigma2)[:, None]


def score_cnf(terms: SampleTerms, theta: Theta) -> np.ndarray:
    return terms.w @ cnf_contributions(terms, theta)


def cnf_objective(terms: SampleTerms, theta: Theta) -> float:
    r = terms.u @ _cnf_vector(terms, theta) - terms.y
    return float(np.sum(terms.w * r ** 2 / (2 * terms.sigma2)))


def _wls(u, y, wt) -> np.ndarray:
    q = u.shape[1]
    if q == 0:
        return np.empty(0)
    sw = np.sqrt(wt)
    coef, _, rank, _ = np.linalg.lstsq(u * sw[:, None], y * sw, rcond=None)
    if rank < q:
        raise SingularGramError(int(rank), q)
    return coef


def wls_solve(terms: SampleTerms) -> Theta:
    """Weighted least squares root of the CNF estimating equation."""
    vec = _wls(terms.u, terms.y, terms.w / terms.sigma2)
    return Theta.from_vector(vec, "cnf", terms.n_beta_cnf)


# RNF ----------------------------------------------------------------------

def _tilde(terms: SampleTerms, lam: float, beta, c):
    cf = get_c_function(c)
    yt = terms.y - lam * terms.ydot
    cv = cf.value(terms.x, np.atleast_1d(beta))
    s2p = terms.sigma2 + lam ** 2 * terms.msig2
    return yt, yt - cv, s2p, cf


def rnf_contributions(terms: SampleTerms, theta: Theta, c="linear") -> np.ndarray:
    """Unweighted ``(H_i(beta), H_i(lambda))`` rows."""
    if theta.mode != "rnf":
        raise ValueError("RNF mode theta required")
    lam, beta = theta.lam, theta.beta
    if beta.size != terms.x.shape[1] and get_c_function(c).linear:
        raise ValueError(f"beta must have dimension {terms.x.shape[1]}")
    yt, e, s2p, cf = _tilde(terms, lam, beta, c)
    h_beta = cf.grad(terms.x, beta) * (-e / s2p)[:, None]
    h_lam = -e * terms.ydot / s2p - lam * e ** 2 * terms.msig2 / s2p ** 2
    return np.hstack([h_beta, h_lam[:, None]])


def score_rnf(terms: SampleTerms, theta: Theta, c="linear") -> np.ndarray:
    return terms.w @ rnf_contributions(terms, theta, c)


def rnf_objective(terms: SampleTerms, lam: float, beta, c="linear") -> float:
    """Weighted distance ``sum_i w_i e~_i^2 / (2 sigma_i+^2)``."""
    _, e, s2p, _ = _tilde(terms, lam, beta, c)
    return float(np.sum(terms.w * e ** 2 / (2 * s2p)))


def profile_beta(terms: SampleTerms, lam: float, c="linear") -> np.ndarray:
    """Root in beta of the RNF score at fixed ``lam`` (linear c only)."""
    if not get_c_function(c).linear:
        raise ValueError("closed-form profiling requires a linear c function")
    s2p = terms.sigma2 + lam ** 2 * terms.msig2
    return _wls(terms.x, terms.y - lam * terms.ydot, terms.w / s2p)


def default_grid(lambda_bound: float, size: int = 41, shrink: float = 0.02) -> np.ndarray:
    """Equispaced lambda grid over the feasible interval, endpoints shrunk."""
    if not math.isfinite(lambda_bound) or lambda_bound <= 0:
        raise ValueError("a finite positive lambda bound is needed for the default grid")
    b = (1.0 - shrink) * lambda_bound
    return np.linspace(-b, b, size)


def grid_search(terms: SampleTerms, grid=None, lambda_bound: float = 1.0, c="linear",
                rel_tie: float = 1e-12, refine: bool = False) -> "EstimateReport":
    """Profile estimate of ``(lambda, beta)`` over a lambda grid.

    Grid points with ``|lambda| >= lambda_bound`` are infeasible and
    skipped. Among points whose objective is within ``rel_tie`` of the
    minimum the smallest ``|lambda|`` wins. With ``refine`` the profile
    objective is then minimised between the neighbouring grid points.
    """
    grid = default_grid(lambda_bound) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise EstimationError("empty lambda grid")
    trace = []
    for lam in grid:
        lam = float(lam)
        if abs(lam) >= lambda_bound:
            trace.append({"lambda": lam, "feasible": False, "beta": None, "objective": None})
            continue
        beta = profile_beta(terms, lam, c)
        trace.append({"lambda": lam, "feasible": True, "beta": beta.tolist(),
                      "objective": rnf_objective(terms, lam, beta, c)})
    ok = [t for t in trace if t["feasible"]]
    if not ok:
        raise EstimationError("no feasible lambda on the grid")
    best = min(t["objective"] for t in ok)
    ties = [t for t in ok if t["objective"] <= best + rel_tie * abs(best)]
    pick = min(ties, key=lambda t: abs(t["lambda"]))
    theta = Theta(pick["beta"], lam=pick["lambda"])
    objective = pick["objective"]
    if refine and objective > 0:
        theta, objective = _refine_profile(terms, ok, pick, lambda_bound, c)
    return EstimateReport(
        theta, None, objective,
        diagnostics={"grid_trace": trace, "n_terms": len(terms)},
        config={"solver": "grid", "grid_size": int(grid.size), "lambda_bound": lambda_bound},
    )


def _refine_profile(terms, feasible, pick, lambda_bound, c):
    lams = [t["lambda"] for t in feasible]
    k = lams.index(pick["lambda"])
    lo = lams[k - 1] if k > 0 else max(-lambda_bound, pick["lambda"] - 1e-3)
    hi = lams[k + 1] if k + 1 < len(lams) else min(lambda_bound, pick["lambda"] + 1e-3)
    lo, hi = min(lo, hi), max(lo, hi)

    def prof(lam):
        return rnf_objective(terms, lam, profile_beta(terms, lam, c), c)

    res = optimize.minimize_scalar(prof, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    if res.fun > pick["objective"]:
        return Theta(pick["beta"], lam=pick["lambda"]), pick["objective"]
    lam = float(res.x)
    return Theta(profile_beta(terms, lam, c), lam=lam), float(res.fun)


def refine_rnf(terms: SampleTerms, start: Theta, c="linear", lambda_bound: float = 1.0) -> Theta:
    """Joint root of the RNF score from a starting point (cross-check)."""
    nb = start.beta.size
    sol = optimize.root(lambda v: score_rnf(terms, Theta.from_vector(v, "rnf", nb), c),
                        start.vector(), method="hybr")
    if not sol.success or abs(sol.x[-1]) >= lambda_bound:
        raise EstimationError(f"joint root finding failed: {sol.message}")
    return Theta.from_vector(sol.x, "rnf", nb)


# shared -------------------------------------------------------------------

def contributions(terms: SampleTerms, theta: Theta, c="linear") -> np.ndarray:
    if theta.mode == "cnf":
        return cnf_contributions(terms, theta)
    return rnf_contributions(terms, theta, c)


def score_derivative(terms: SampleTerms, theta: Theta, c="linear",
                     lambda_bound: float = math.inf) -> np.ndarray:
    """Derivative of the weighted score in theta.

    Exact for the CNF; central differences for the RNF, with the lambda
    step halved until both evaluation points stay feasible.
    """
    if theta.mode == "cnf":
        u = terms.u
        return (u * (terms.w / terms.sigma2)[:, None]).T @ u
    v = theta.vector()
    q = v.size
    out = np.empty((q, q))
    for k in range(q):
        h = 1e-5 * max(1.0, abs(v[k]))
        if k == q - 1:
            while abs(v[k]) + h >= lambda_bound and h > 1e-12:
                h /= 2
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        fp = score_rnf(terms, Theta.from_vector(vp, "rnf", q - 1), c)
        fm = score_rnf(terms, Theta.from_vector(vm, "rnf", q - 1), c)
        out[:, k] = (fp - fm) / (2 * h)
    return out


def sandwich_variance(terms: SampleTerms, theta: Theta, joint, *, plugin: bool = False,
                      c="linear", lambda_bound: float = math.inf) -> np.ndarray:
    """Linearisation variance ``A^-1 B A^-1`` of the SEE root.

    ``joint[i, j]`` is ``Pr(delta_i delta_j = 1)`` for the rows of
    ``terms`` (its diagonal holds the inclusion probabilities).

    Population mode (``plugin=False``): ``terms`` covers every node, ``A``
    is the unit-weight score derivative and
    ``B = sum_ij (w_i w_j P_ij - 1) H_i H_j'`` with ``w = 1 / diag(P)``.

    Plug-in mode: ``terms`` are the eligible sample nodes with their
    weights; each pair is further divided by ``P_ij``. Pairs with zero
    joint probability are dropped with a warning.
    """
    p = np.asarray(joint, dtype=float)
    n = len(terms)
    if p.shape != (n, n):
        raise ValueError(f"joint probability matrix must be {n}x{n}")
    h = contributions(terms, theta, c)
    if plugin:
        w = terms.w
        a = score_derivative(terms, theta, c, lambda_bound)
        zero = p <= 0
        if zero.any():
            warnings.warn(f"{int(zero.sum())} sample pairs have zero joint inclusion "
                          "probability and are dropped", RuntimeWarning, stacklevel=2)
        delta = np.divide(np.outer(w, w) * p - 1.0, p, out=np.zeros_like(p), where=~zero)
    else:
        w = 1.0 / np.diag(p)
        a = score_derivative(terms.reweight(1.0), theta, c, lambda_bound)
        delta = np.outer(w, w) * p - 1.0
    b = h.T @ delta @ h
    a_inv = np.linalg.inv(a)
    v = a_inv @ b @ a_inv.T
    return 0.5 * (v + v.T)


@dataclass
class EstimateReport:
    theta: Theta
    variance: np.ndarray | None
    objective: float
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "theta_vector": self.theta.vector().tolist(),
            "variance": None if self.variance is None else np.asarray(self.variance).tolist(),
            "objective": self.objective,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_json_default, **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def estimate(terms: SampleTerms, mode: str, *, grid=None, lambda_bound: float = 1.0,
             c="linear", refine: bool = False) -> EstimateReport:
    """Solve the sample estimating equation for a CNF or an RNF."""
    if mode == "cnf":
        theta = wls_solve(terms)
        return EstimateReport(theta, None, cnf_objective(terms, theta),
                              diagnostics={"n_terms": len(terms)}, config={"solver": "wls"})
    if mode == "rnf":
        return grid_search(terms, grid, lambda_bound, c, refine=refine)
    raise ValueError(f"unknown mode {mode!r}")


def write_residuals_csv(terms: SampleTerms, theta: Theta, path, c="linear"):
    """Per-node residuals: ``e_i`` for the CNF, ``e~_i`` for the RNF."""
    if theta.mode == "cnf":
        resid = terms.y - terms.u @ theta.vector()
        scale = terms.sigma2
    else:
        _, resid, scale, _ = _tilde(terms, theta.lam, theta.beta, c)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "weight", "residual", "scale"])
        for row in zip(terms.nodes, terms.w, resid, scale):
            wr.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
