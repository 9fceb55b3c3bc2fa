"""Command-line interface.

Subcommands: ``generate``, ``sample``, ``estimate``, ``mc`` and ``check``.
Failures exit nonzero and print a JSON error object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import harness, io as gio
from .estimation import VarianceSpec, estimate, sandwich_variance, write_residuals_csv
from .graph import ValuedGraph
from .rng import stream
from .snowball import (SampleGraph, design_from_dict, parse_target, run_tsbs, sample_bundle_json,
                       sample_terms, sbs_weights, write_probability_csv)
from .trw import WalkConfig, WalkTrace, estimate_walks, run_trw_batch

log = logging.getLogger("nflearn")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _graph_with_outcomes(cfg: dict, seed: int) -> ValuedGraph:
    g = harness.load_graph(cfg.get("graph", {"kind": "fixture", "id": "fig1"}), seed)
    if "model" in cfg and (g.y is None or cfg["graph"].get("regenerate", False)):
        g = harness.gen_outcomes(g, harness.ModelSpec.from_dict(cfg["model"]), seed)
    return g


def _walk_config(d: dict, seed: int) -> WalkConfig:
    return WalkConfig(r=float(d.get("r", 1.0)), n=int(d.get("n", 100)), burn_in=d.get("burn_in"),
                      thin=int(d.get("thin", 1)), seed=seed, L=int(d.get("L", 2)))


def cmd_generate(args, cfg):
    g = _graph_with_outcomes(cfg, args.seed)
    out = _out(args)
    gio.write_graph_csv(g, os.path.join(out, "nodes.csv"), os.path.join(out, "edges.csv"))
    gio.write_graph_json(g, os.path.join(out, "graph.json"))
    return {"nodes": g.n, "edges": g.n_edges, "checksum": g.checksum()}


def cmd_sample(args, cfg):
    g = _graph_with_outcomes(cfg, args.seed)
    design = cfg.get("design", {"kind": "sbs", "initial": {"kind": "srswor", "m": 1}, "T": 1})
    mode = cfg.get("model", {}).get("kind", "cnf")
    out = _out(args)
    rng = stream(args.seed, 1)
    if design["kind"] == "sbs":
        initial = design_from_dict(design["initial"], g.n)
        target = parse_target(cfg.get("target") or mode)
        s0 = initial.draw(rng)
        sample = run_tsbs(g, s0, int(design.get("T", 1)))
        wts = sbs_weights(sample, initial, target)
        text = json.loads(sample_bundle_json(sample, wts, initial, target))
        text["mode"] = mode
        with open(os.path.join(out, "sample.json"), "w") as fh:
            json.dump(text, fh, indent=2)
            fh.write("\n")
        write_probability_csv(wts, os.path.join(out, "probabilities.csv"))
        return {"seed_sample": len(sample.seed_sample), "observed": len(sample.nodes),
                "eligible": int(wts.nodes.size)}
    if design["kind"] == "trw":
        wcfg = _walk_config(design, args.seed)
        walks = run_trw_batch(g, wcfg, wcfg.L, rng)
        steps = wcfg.burn(g.n) + wcfg.thin * np.arange(wcfg.n)
        traces = [WalkTrace(s, g.degree[s].copy(), steps) for s in walks]
        visited = np.unique(walks)
        obs = WalkTrace(visited, g.degree[visited], visited).observed_graph(g)
        seen = np.flatnonzero(~np.isnan(obs.x[:, 0]))
        bundle = {
            "N": g.n, "mode": mode,
            "design": {"kind": "trw", "r": wcfg.r, "n": wcfg.n, "burn_in": wcfg.burn(g.n),
                       "thin": wcfg.thin, "L": wcfg.L},
            "walks": [{"states": t.states.tolist(), "degrees": t.degrees.tolist()} for t in traces],
            "nodes": [{"id": int(i), "x": obs.x[i].tolist(),
                       "y": None if obs.y is None else float(obs.y[i])} for i in seen],
            "edges": [{"source": int(i), "target": int(j), "omega": float(w)}
                      for i, j, w in zip(obs.src, obs.dst, obs.omega)],
        }
        with open(os.path.join(out, "sample.json"), "w") as fh:
            json.dump(bundle, fh, indent=2)
            fh.write("\n")
        for k, t in enumerate(traces):
            t.to_csv(os.path.join(out, f"trace_{k}.csv"))
        return {"walks": len(traces), "visited": int(visited.size)}
    raise ValueError(f"unknown design kind {design['kind']!r}")


def _observed_from_bundle(b: dict) -> ValuedGraph:
    N = int(b["N"])
    p = len(b["nodes"][0]["x"]) if b["nodes"] else 1
    x = np.full((N, p), np.nan)
    y = np.full(N, np.nan)
    for nd in b["nodes"]:
        x[int(nd["id"])] = nd["x"]
        if nd.get("y") is not None:
            y[int(nd["id"])] = nd["y"]
    src = np.array([e["source"] for e in b["edges"]], dtype=np.int64)
    dst = np.array([e["target"] for e in b["edges"]], dtype=np.int64)
    om = np.array([e["omega"] for e in b["edges"]], dtype=float)
    return ValuedGraph(N, src, dst, om, x, y)


def cmd_estimate(args, cfg):
    with open(args.sample) as fh:
        b = json.load(fh)
    mode = cfg.get("model", {}).get("kind", b.get("mode", "cnf"))
    covariates = cfg.get("model", {}).get("covariates", "xz")
    scheme = cfg.get("model", {}).get("scheme", "in-normalized")
    sigma = VarianceSpec(float(cfg.get("sigma", 1.0)))
    grid = cfg.get("grid")
    kw = {"grid": grid, "lambda_bound": float(cfg.get("lambda_bound", 1.0))}
    out = _out(args)
    kind = b["design"]["kind"]
    if kind == "sbs":
        sample = SampleGraph.from_dict(b)
        initial = design_from_dict(b["design"]["initial"], sample.N)
        target = parse_target(b["design"].get("target", mode))
        wts = sbs_weights(sample, initial, target)
        terms = sample_terms(sample, wts, sigma, scheme, covariates, target)
        rep = estimate(terms, mode, **kw)
        try:
            rep.variance = sandwich_variance(terms, rep.theta, wts.joint_matrix(initial),
                                             plugin=True, lambda_bound=kw["lambda_bound"])
        except np.linalg.LinAlgError as exc:
            rep.diagnostics["variance_error"] = str(exc)
        rep.config.update({"design": b["design"], "mode": mode})
    elif kind == "trw":
        d = b["design"]
        wcfg = WalkConfig(r=d["r"], n=d["n"], burn_in=d.get("burn_in"), thin=d.get("thin", 1),
                          L=max(1, len(b["walks"])))
        obs = _observed_from_bundle(b)
        traces = [WalkTrace(np.array(w["states"]), np.array(w["degrees"]), np.arange(len(w["states"])))
                  for w in b["walks"]]
        rep = estimate_walks(obs, traces, wcfg, mode=mode, sigma=sigma, covariates=covariates,
                             scheme=scheme, **kw)
        terms = None
    else:
        raise ValueError(f"unknown design kind {kind!r}")
    rep.to_json(os.path.join(out, "report.json"))
    if terms is not None:
        write_residuals_csv(terms, rep.theta, os.path.join(out, "residuals.csv"))
    return {"theta": rep.theta.vector().tolist(), "objective": rep.objective}


def cmd_mc(args, cfg):
    cfg = dict(cfg)
    cfg["seed"] = args.seed
    cfg["out"] = args.out
    summary = harness.run_mc(harness.ExperimentConfig.from_dict(cfg))
    return {k: summary[k] for k in ("replicates", "failed", "theta0", "score_z") if k in summary}


def cmd_check(args, cfg):
    from .checks import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    failed = [r[0] for r in results if not r[1]]
    if failed:
        raise RuntimeError(f"checks failed: {', '.join(failed)}")
    return {"checks": len(results), "failed": 0}


COMMANDS = {"generate": cmd_generate, "sample": cmd_sample, "estimate": cmd_estimate,
            "mc": cmd_mc, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nflearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        p.add_argument("--out", default="out", help="output directory")
        if name == "estimate":
            p.add_argument("--sample", required=True, help="sample bundle written by `sample`")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        result = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as JSON
        json.dump({"ok": False, "command": args.command, "error": type(exc).__name__,
                   "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    result = {"ok": True, "command": args.command, "seconds": round(time.perf_counter() - t0, 3),
              **result}
    print(json.dumps(result, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
