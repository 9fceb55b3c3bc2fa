"""Synthetic graphs and outcomes, worked-example fixtures, Monte Carlo experiments
and exhaustive design enumeration."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import io as gio
from .estimation import (EstimateReport, EstimationError, SampleTerms, VarianceSpec,
                         contributions, default_grid, estimate, population_terms,
                         sandwich_variance)
from .functions import Theta, contextual_matrix, rnf_mu_exact
from .graph import GraphError, ValuedGraph, influence_matrix, norm_check
from .rng import stream
from .snowball import (DesignError, design_from_dict, joint_matrix,
                       parse_target, population_ancestry, run_tsbs, sbs_weights)
from .trw import WalkConfig, run_trw_batch

log = logging.getLogger(__name__)

MC_CHUNK = 1024


# graphs -------------------------------------------------------------------

def gen_er_digraph(N: int, p: float, seed: int = 0, dim: int = 1) -> ValuedGraph:
    """Directed Erdos-Renyi graph: every ordered pair ``i != j`` is an edge
    independently with probability ``p``. Edge values ~ U(0.5, 1.5),
    features ~ N(0, 1)."""
    if not 0.0 <= p <= 1.0:
        raise GraphError("edge probability must lie in [0, 1]")
    rng = stream(seed)
    hit = rng.random((N, N)) < p
    np.fill_diagonal(hit, False)
    src, dst = np.nonzero(hit)
    omega = rng.uniform(0.5, 1.5, size=src.size)
    x = rng.standard_normal((N, dim))
    return ValuedGraph(N, src, dst, omega, x)


_TEN_X = [1.1, 0.9, 1.3, 0.8, 1.0, 1.2, 0.7, 1.05, 0.95, 1.15]
_TEN_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 0),
              (5, 0), (2, 7), (8, 3), (6, 1), (4, 9)]

FIXTURES = {
    "fig1": (4, [(0, 1), (1, 2), (1, 3), (2, 3)]),
    "fig2": (5, [(0, 1), (1, 2), (2, 1), (2, 3), (3, 4), (4, 3)]),
    "ten": (10, _TEN_EDGES),
}


def fixture(fid: str) -> ValuedGraph:
    """Small named graphs. ``fig1`` and ``fig2`` are the 4- and 5-node
    digraphs with nodes ``i1..``; ``ten`` is a 10-node ring with chords."""
    try:
        n, edges = FIXTURES[fid]
    except KeyError:
        raise GraphError(f"unknown fixture {fid!r}") from None
    x = np.array(_TEN_X)[:, None] if fid == "ten" else np.ones((n, 1))
    return ValuedGraph.from_edges(n, edges, x=x, labels=tuple(f"i{k + 1}" for k in range(n)))


def load_graph(spec: dict, seed: int = 0) -> ValuedGraph:
    kind = spec.get("kind", "fixture")
    if kind == "fixture":
        return fixture(spec["id"])
    if kind == "er":
        return gen_er_digraph(int(spec["N"]), float(spec["p"]), int(spec.get("seed", seed)),
                              int(spec.get("dim", 1)))
    if kind == "file":
        g, _ = gio.read_graph(spec["path"], spec.get("edges"))
        return g
    raise GraphError(f"unknown graph kind {kind!r}")


# outcomes -----------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    kind: str
    beta: tuple
    gamma: tuple | None = None
    lam: float | None = None
    noise_sd: float = 1.0
    scheme: str = "in-normalized"
    covariates: str = "xz"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kind = d["kind"]
        gamma = tuple(d["gamma"]) if d.get("gamma") is not None else None
        lam = d.get("lambda", d.get("lam"))
        return cls(kind, tuple(d.get("beta", ())), gamma, lam, float(d.get("noise_sd", 1.0)),
                   d.get("scheme", "in-normalized"), d.get("covariates", "xz"))

    @property
    def theta(self) -> Theta:
        if self.kind == "cnf":
            return Theta(self.beta, gamma=self.gamma)
        return Theta(self.beta, lam=self.lam)


def gen_outcomes(g: ValuedGraph, model: ModelSpec, seed: int = 0) -> ValuedGraph:
    """Outcomes ``y = mu + e`` with ``e`` iid N(0, noise_sd^2)."""
    rng = stream(seed)
    if model.kind == "cnf":
        th = model.theta
        z = contextual_matrix(g)
        u = z if model.covariates == "z" else np.hstack([g.x, z])
        mu = u @ th.vector()
    elif model.kind == "rnf":
        m = influence_matrix(g, model.scheme)
        if not norm_check(m, model.lam).ok:
            raise ValueError(f"lambda={model.lam} violates the norm restriction")
        mu = rnf_mu_exact(g, m, model.theta).mu
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")
    e = rng.standard_normal(g.n) * model.noise_sd if model.noise_sd > 0 else np.zeros(g.n)
    return g.with_outcomes(mu + e)


def lambda_bound_for(g: ValuedGraph, scheme: str) -> float:
    m = influence_matrix(g, scheme)
    if math.isfinite(m.lambda_bound):
        return m.lambda_bound
    return 1.0 / m.row_sum_bound if m.row_sum_bound > 0 else 1.0


def full_graph_theta(g: ValuedGraph, model: ModelSpec, sigma: VarianceSpec = VarianceSpec(),
                     grid=None) -> tuple[EstimateReport, SampleTerms]:
    """Population parameter: the estimator applied to every node with unit weights."""
    m = influence_matrix(g, model.scheme)
    pop = population_terms(g, m, sigma, model.covariates)
    bound = lambda_bound_for(g, model.scheme)
    rep = estimate(pop, model.kind, grid=grid, lambda_bound=bound, refine=True)
    return rep, pop


# experiments --------------------------------------------------------------

@dataclass
class ExperimentConfig:
    graph: dict
    model: dict
    design: dict
    replicates: int = 100
    seed: int = 0
    out: str | None = None
    sigma: float = 1.0
    target: str | None = None
    grid: list | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})


def prepare(cfg: ExperimentConfig):
    g = load_graph(cfg.graph, cfg.seed)
    model = ModelSpec.from_dict(cfg.model)
    if g.y is None or cfg.graph.get("regenerate", False):
        g = gen_outcomes(g, model, seed=cfg.seed)
    return g, model


def run_mc(cfg: ExperimentConfig) -> dict:
    """Repeated sample/weight/solve cycles; writes ``replicates.csv`` and
    ``summary.json`` under ``cfg.out`` when it is set."""
    g, model = prepare(cfg)
    sigma = VarianceSpec(cfg.sigma)
    grid = None if cfg.grid is None else np.asarray(cfg.grid, dtype=float)
    theta0_rep, pop = full_graph_theta(g, model, sigma, grid)
    theta0 = theta0_rep.theta
    bound = lambda_bound_for(g, model.scheme)
    if model.kind == "rnf" and grid is None:
        grid = default_grid(bound)
    h0 = contributions(pop, theta0)
    kind = cfg.design.get("kind")
    if kind == "sbs":
        rows, extra = _mc_sbs(cfg, g, model, pop, h0, theta0, grid, bound)
    elif kind == "trw":
        rows, extra = _mc_trw(cfg, g, model, pop, h0, grid, bound)
    else:
        raise DesignError(f"unknown design kind {kind!r}")
    summary = _summarise(rows, theta0, extra)
    summary["config"] = asdict(cfg)
    summary["graph"] = {"N": g.n, "edges": g.n_edges, "checksum": g.checksum()}
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        _write_rows(os.path.join(cfg.out, "replicates.csv"), rows, theta0.vector().size)
        with open(os.path.join(cfg.out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, default=_jd)
            fh.write("\n")
    return summary


def _solve(terms, model, grid, bound):
    return estimate(terms, model.kind, grid=grid, lambda_bound=bound).theta.vector()


def _mc_sbs(cfg, g, model, pop, h0, theta0, grid, bound):
    design = design_from_dict(cfg.design["initial"], g.n)
    T = int(cfg.design.get("T", 1))
    target = parse_target(cfg.target or model.kind)
    rows = []
    for r in range(cfg.replicates):
        rng = stream(cfg.seed, r + 1)
        row = {"replicate": r, "ok": 0, "n_eligible": 0, "error": ""}
        s0 = design.draw(rng)
        try:
            sample = run_tsbs(g, s0, T)
            wts = sbs_weights(sample, design, target)
            row["n_eligible"] = int(wts.nodes.size)
            row["score"] = wts.w @ h0[wts.nodes] if wts.nodes.size else np.zeros(h0.shape[1])
            terms = pop.take(wts.nodes, wts.w)
            row["theta"] = _solve(terms, model, grid, bound)
            row["ok"] = 1
        except (DesignError, EstimationError, np.linalg.LinAlgError, ValueError) as exc:
            row["error"] = str(exc)
            if "score" not in row:
                row["score"] = np.zeros(h0.shape[1])
        rows.append(row)
    extra = {"design": "sbs", "T": T, "initial": design.to_dict()}
    if T <= 2 and isinstance(target, str):
        # with T <= 2 the sample-dependent ancestry equals the population one
        F = population_ancestry(g, T)
        extra["population_sandwich"] = sandwich_variance(
            pop, theta0, joint_matrix(F, design), lambda_bound=bound)
    return rows, extra


def _mc_trw(cfg, g, model, pop, h0, grid, bound):
    d = cfg.design
    wcfg = WalkConfig(r=float(d.get("r", 1.0)), n=int(d.get("n", 100)),
                      burn_in=d.get("burn_in"), thin=int(d.get("thin", 1)),
                      seed=cfg.seed, L=int(d.get("L", 1)))
    R, L = cfg.replicates, wcfg.L
    rows = []
    for c0 in range(0, R, MC_CHUNK):
        nrep = min(MC_CHUNK, R - c0)
        walks = run_trw_batch(g, wcfg, nrep * L, stream(cfg.seed, c0 // MC_CHUNK + 1))
        for k in range(nrep):
            row = {"replicate": c0 + k, "ok": 0, "n_eligible": wcfg.n, "error": ""}
            scores, thetas = [], []
            try:
                for states in walks[k * L:(k + 1) * L]:
                    w = 1.0 / (wcfg.n * (g.degree[states] + wcfg.r))
                    scores.append(w @ h0[states])
                    thetas.append(_solve(pop.take(states, w), model, grid, bound))
                th = np.array(thetas)
                row["theta"] = th.mean(axis=0)
                if L >= 2:
                    dev = th - row["theta"]
                    row["replicate_var"] = np.diag(dev.T @ dev) / (L * (L - 1))
                row["ok"] = 1
            except (EstimationError, np.linalg.LinAlgError, ValueError) as exc:
                row["error"] = str(exc)
            row["score"] = np.mean(scores, axis=0) if scores else np.zeros(h0.shape[1])
            rows.append(row)
    return rows, {"design": "trw", "walk": asdict(wcfg)}


def _summarise(rows, theta0: Theta, extra: dict) -> dict:
    q = theta0.vector().size
    ok = [r for r in rows if r["ok"]]
    scores = np.array([r["score"] for r in rows]).reshape(len(rows), q)
    R = len(rows)
    s_mean = scores.mean(axis=0)
    s_se = scores.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(q, np.nan)
    out = {
        "replicates": R, "failed": R - len(ok),
        "theta0": theta0.vector(), "theta0_detail": theta0.to_dict(),
        "score_mean": s_mean, "score_se": s_se,
        "score_z": np.divide(s_mean, s_se, out=np.zeros(q), where=s_se > 0),
    }
    if ok:
        th = np.array([r["theta"] for r in ok])
        out["theta_mean"] = th.mean(axis=0)
        out["bias"] = th.mean(axis=0) - theta0.vector()
        out["empirical_var"] = (np.cov(th, rowvar=False, ddof=1).reshape(q, q)
                                if len(ok) > 1 else np.zeros((q, q)))
        rv = [r["replicate_var"] for r in ok if "replicate_var" in r]
        if rv:
            out["mean_replicate_var"] = np.mean(rv, axis=0)
    for k, v in extra.items():
        out[k] = v
    return out


def _write_rows(path, rows, q):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["replicate", "ok", "n_eligible"] + [f"theta_{k}" for k in range(q)]
                    + [f"score_{k}" for k in range(q)] + ["error"])
        for r in rows:
            th = r.get("theta", np.full(q, np.nan))
            wr.writerow([r["replicate"], r["ok"], r["n_eligible"]]
                        + [repr(float(v)) for v in th] + [repr(float(v)) for v in r["score"]]
                        + [r["error"]])


def _jd(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


# enumeration --------------------------------------------------------------

@dataclass
class DesignTables:
    """Exact expectations over every initial sample of a design."""

    pr_delta: np.ndarray
    e_delta_w: np.ndarray
    pr_joint: np.ndarray
    n_samples: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node", "pr_delta", "e_delta_w"])
            for i, (a, b) in enumerate(zip(self.pr_delta, self.e_delta_w)):
                wr.writerow([i, repr(float(a)), repr(float(b))])


ENUM_LIMIT = 10 ** 5


def enumerate_designs(g: ValuedGraph, design, T: int, target="cnf") -> DesignTables:
    """Run the T-wave procedure from every possible initial sample."""
    if design.n_samples() > ENUM_LIMIT:
        raise DesignError(f"{design.n_samples()} initial samples exceed the enumeration limit")
    N = g.n
    pr = np.zeros(N)
    ew = np.zeros(N)
    pj = np.zeros((N, N))
    for s0, p in design.enumerate():
        if not s0:
            continue
        sample = run_tsbs(g, s0, T)
        wts = sbs_weights(sample, design, target)
        idx = wts.nodes
        pr[idx] += p
        ew[idx] += p * wts.w
        pj[np.ix_(idx, idx)] += p
    return DesignTables(pr, ew, pj, design.n_samples())
