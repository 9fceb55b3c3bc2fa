import json

import numpy as np
import pytest

from nflearn import cli
from nflearn.graph import GraphError
from nflearn.harness import ModelSpec, fixture, gen_er_digraph, gen_outcomes
from nflearn.io import graph_from_dict, read_graph, write_graph_csv, write_graph_json


class TestIO:
    def test_json_round_trip(self, tmp_path):
        g = gen_outcomes(gen_er_digraph(15, 0.2, seed=1, dim=2), ModelSpec("cnf", (1, 0), gamma=(0, 1)))
        write_graph_json(g, tmp_path / "g.json")
        h, info = read_graph(tmp_path / "g.json")
        assert h.checksum() == g.checksum()
        assert info.n_nodes == 15 and info.graph_checksum == g.checksum()

    def test_csv_round_trip(self, tmp_path):
        g = gen_outcomes(fixture("fig2"), ModelSpec("cnf", (1.0,), gamma=(0.5,)))
        write_graph_csv(g, tmp_path / "n.csv", tmp_path / "e.csv")
        h, info = read_graph(tmp_path / "n.csv", tmp_path / "e.csv")
        assert h.checksum() == g.checksum()
        assert h.labels == g.labels
        assert len(info.file_checksums) == 2

    def test_string_labels_and_missing_values(self, tmp_path):
        (tmp_path / "n.csv").write_text("id,x1,y\nalice,1.0,2\nbob,,3\ncarol,0.5,1\n")
        (tmp_path / "e.csv").write_text("source,target,omega\nalice,bob,2.0\ncarol,bob\n")
        g, _ = read_graph(tmp_path / "n.csv", tmp_path / "e.csv")
        assert g.labels == ("alice", "bob", "carol")
        assert np.isnan(g.x[1, 0])
        assert g.edge_values == {(0, 1): 2.0, (2, 1): 1.0}

    def test_unknown_endpoint(self):
        with pytest.raises(GraphError):
            graph_from_dict({"nodes": [{"id": "a", "x": [1]}], "edges": [{"source": "a", "target": "b"}]})

    def test_duplicate_ids(self):
        with pytest.raises(GraphError):
            graph_from_dict({"nodes": [{"id": "a", "x": [1]}, {"id": "a", "x": [2]}], "edges": []})

    def test_bad_header(self, tmp_path):
        (tmp_path / "n.csv").write_text("name,x\na,1\n")
        (tmp_path / "e.csv").write_text("source,target\n")
        with pytest.raises(GraphError):
            read_graph(tmp_path / "n.csv", tmp_path / "e.csv")


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


SBS = {"graph": {"kind": "er", "N": 30, "p": 0.1},
       "model": {"kind": "cnf", "beta": [1.0], "gamma": [0.5]},
       "design": {"kind": "sbs", "initial": {"kind": "srswor", "m": 8}, "T": 2},
       "replicates": 10}
TRW = {"graph": {"kind": "er", "N": 30, "p": 0.12},
       "model": {"kind": "rnf", "beta": [1.0], "lambda": 0.4},
       "design": {"kind": "trw", "r": 1.0, "n": 60, "L": 3},
       "replicates": 4}


class TestCli:
    def test_check(self, capsys):
        code, out, _ = run(capsys, "check")
        assert code == 0
        assert out.count("PASS") == 7
        assert json.loads(out.strip().splitlines()[-1])["ok"]

    def test_generate(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SBS)
        code, out, _ = run(capsys, "generate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "g"))
        assert code == 0
        for name in ("nodes.csv", "edges.csv", "graph.json"):
            assert (tmp_path / "g" / name).exists()
        assert json.loads(out)["nodes"] == 30

    @pytest.mark.parametrize("cfg", [SBS, TRW], ids=["sbs", "trw"])
    def test_sample_then_estimate(self, tmp_path, capsys, cfg):
        path = write_cfg(tmp_path, cfg)
        code, out, err = run(capsys, "sample", "--config", path, "--seed", "2", "--out", str(tmp_path / "s"))
        assert code == 0, err
        bundle = json.loads((tmp_path / "s" / "sample.json").read_text())
        assert bundle["design"]["kind"] == cfg["design"]["kind"]
        code, out, err = run(capsys, "estimate", "--config", path, "--sample",
                             str(tmp_path / "s" / "sample.json"), "--out", str(tmp_path / "e"))
        assert code == 0, err
        report = json.loads((tmp_path / "e" / "report.json").read_text())
        assert report["theta"]["mode"] == cfg["model"]["kind"]
        assert report["variance"] is not None

    def test_sample_is_deterministic(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SBS)
        for sub in ("a", "b"):
            run(capsys, "sample", "--config", path, "--seed", "9", "--out", str(tmp_path / sub))
        assert (tmp_path / "a" / "sample.json").read_bytes() == (tmp_path / "b" / "sample.json").read_bytes()

    def test_mc(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SBS)
        code, out, _ = run(capsys, "mc", "--config", path, "--seed", "3", "--out", str(tmp_path / "m"))
        assert code == 0
        assert json.loads(out)["replicates"] == 10
        assert (tmp_path / "m" / "replicates.csv").exists()

    def test_failure_reports_json(self, tmp_path, capsys):
        code, _, err = run(capsys, "mc", "--config", str(tmp_path / "missing.json"))
        assert code != 0
        payload = json.loads(err)
        assert payload["ok"] is False and payload["error"] == "FileNotFoundError"

    def test_bad_design_reports_json(self, tmp_path, capsys):
        bad = dict(SBS, design={"kind": "teleport"})
        code, _, err = run(capsys, "sample", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path))
        assert code != 0
        assert "teleport" in json.loads(err)["message"]
