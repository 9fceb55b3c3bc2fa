"""Graph ingestion and export.

Two formats are accepted:

* a node CSV (``id, x1..xp[, y]``) plus an edge CSV (``source, target, omega``),
  both with header rows;
* a JSON bundle ``{"nodes": [{"id", "x", "y"}], "edges": [{"source", "target", "omega"}]}``.

Node ids may be arbitrary strings; they are mapped to ``0..N-1`` in file order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .graph import GraphError, ValuedGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadInfo:
    n_nodes: int
    n_edges: int
    file_checksums: dict
    graph_checksum: str


def _sha(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def read_graph(path, edges_path=None) -> tuple[ValuedGraph, LoadInfo]:
    """Load a graph from a JSON bundle, or from node and edge CSV files."""
    if edges_path is None:
        with open(path) as fh:
            g = graph_from_dict(json.load(fh))
        sums = {str(path): _sha(path)}
    else:
        g = _read_csv(path, edges_path)
        sums = {str(path): _sha(path), str(edges_path): _sha(edges_path)}
    info = LoadInfo(g.n, g.n_edges, sums, g.checksum())
    log.info("loaded graph: %d nodes, %d edges, checksum %s", g.n, g.n_edges, info.graph_checksum[:12])
    return g, info


def _read_csv(nodes_path, edges_path) -> ValuedGraph:
    with open(nodes_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[0].strip().lower() not in ("id", "node"):
        raise GraphError("node file must start with an 'id' column")
    cols = [h.strip().lower() for h in header]
    has_y = "y" in cols
    xcols = [k for k, h in enumerate(cols) if k > 0 and h != "y"]
    labels = [r[0].strip() for r in body]
    x = np.array([[_num(r[k]) for k in xcols] for r in body], dtype=float).reshape(len(body), -1)
    y = None
    if has_y:
        yk = cols.index("y")
        vals = [r[yk].strip() if yk < len(r) else "" for r in body]
        if all(v != "" for v in vals):
            y = np.array([float(v) for v in vals])
    with open(edges_path, newline="") as fh:
        erows = list(csv.reader(fh))
    edges = [(r[0].strip(), r[1].strip(), float(r[2]) if len(r) > 2 and r[2].strip() else 1.0)
             for r in erows[1:] if r]
    return _assemble(labels, x, y, edges)


def _num(v: str) -> float:
    v = v.strip()
    return float(v) if v else float("nan")


def graph_from_dict(d: dict) -> ValuedGraph:
    nodes = d["nodes"]
    labels = [str(n["id"]) for n in nodes]
    x = np.array([np.atleast_1d(n.get("x", [])) for n in nodes], dtype=float).reshape(len(nodes), -1)
    ys = [n.get("y") for n in nodes]
    y = None if any(v is None for v in ys) else np.array(ys, dtype=float)
    edges = [(str(e["source"]), str(e["target"]), float(e.get("omega", 1.0))) for e in d["edges"]]
    return _assemble(labels, x, y, edges)


def _assemble(labels, x, y, edges) -> ValuedGraph:
    index = {lab: k for k, lab in enumerate(labels)}
    if len(index) != len(labels):
        raise GraphError("duplicate node ids")
    try:
        src = np.array([index[e[0]] for e in edges], dtype=np.int64)
        dst = np.array([index[e[1]] for e in edges], dtype=np.int64)
    except KeyError as exc:
        raise GraphError(f"edge refers to unknown node {exc.args[0]!r}") from None
    omega = np.array([e[2] for e in edges], dtype=float)
    return ValuedGraph(len(labels), src, dst, omega, x, y, tuple(labels))


def graph_to_dict(g: ValuedGraph) -> dict:
    lab = g.labels or tuple(str(i) for i in range(g.n))
    return {
        "nodes": [{"id": lab[i], "x": g.x[i].tolist(),
                   "y": None if g.y is None else float(g.y[i])} for i in range(g.n)],
        "edges": [{"source": lab[i], "target": lab[j], "omega": float(w)}
                  for i, j, w in zip(g.src, g.dst, g.omega)],
    }


def write_graph_json(g: ValuedGraph, path):
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g), fh, indent=2)
        fh.write("\n")


def write_graph_csv(g: ValuedGraph, nodes_path, edges_path):
    lab = g.labels or tuple(str(i) for i in range(g.n))
    with open(nodes_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id"] + [f"x{k + 1}" for k in range(g.p)] + ([] if g.y is None else ["y"]))
        for i in range(g.n):
            row = [lab[i]] + [repr(float(v)) for v in g.x[i]]
            if g.y is not None:
                row.append(repr(float(g.y[i])))
            wr.writerow(row)
    with open(edges_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["source", "target", "omega"])
        for i, j, w in zip(g.src, g.dst, g.omega):
            wr.writerow([lab[i], lab[j], repr(float(w))])
