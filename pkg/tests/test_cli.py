import csv
import json
import math

import pytest

from semsearch.cli import main

from conftest import FARM_SCENARIO


def run_cli(*argv):
    return main(list(argv))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(autouse=True)
def no_ambient_credentials(monkeypatch):
    for name in ("SEMSEARCH_API_KEY", "OPENAI_API_KEY", "SEMSEARCH_BASE_URL",
                 "OPENAI_BASE_URL", "SEMSEARCH_MODEL"):
        monkeypatch.delenv(name, raising=False)


class TestScore:
    def test_table_scorer_prints_normalized_distribution(self, capsys):
        assert run_cli("score", "--scenario", str(FARM_SCENARIO)) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l.strip()]
        assert lines[0] == "target: drill"
        # first-ranked label is one of the drill-affine tools
        first = lines[2].split()[0]
        assert first == "screwdriver"
        total = [l for l in lines if l.startswith("sum")][0].split()[1]
        assert math.isclose(float(total), 1.0, abs_tol=1e-9)

    def test_missing_api_key_with_llm_scorer(self, capsys):
        code = run_cli("score", "--scenario", str(FARM_SCENARIO), "--scorer", "llm")
        assert code != 0
        assert "API key" in capsys.readouterr().err

    def test_target_equal_to_seen_label(self, capsys):
        assert run_cli("score", "--scenario", str(FARM_SCENARIO),
                       "--target", "screwdriver") == 0
        out = capsys.readouterr().out
        assert "target: screwdriver" in out

    def test_llm_scorer_against_stub_endpoint(self, monkeypatch, capsys):
        from stub_server import StubServer

        with StubServer() as server:
            monkeypatch.setenv("SEMSEARCH_BASE_URL", server.base_url)
            monkeypatch.setenv("SEMSEARCH_API_KEY", "test-key")
            assert run_cli("score", "--scenario", str(FARM_SCENARIO),
                           "--scorer", "llm") == 0
            assert len(server.requests) == 10  # one query per seen label
        out = capsys.readouterr().out
        # identical stub logprobs for every label normalize to uniform
        assert "0.100000" in out
        assert "model answers" in out


class TestPlan:
    def test_farm_plan_is_exhaustive_mode(self, capsys):
        assert run_cli("plan", "--scenario", str(FARM_SCENARIO), "--start", "hv1") == 0
        out = capsys.readouterr().out
        assert "mode: exhaustive" in out
        assert "total cost:" in out

    def test_single_scored_waypoint(self, tmp_path, capsys):
        doc = {
            "waypoints": [{"id": "w1", "x": 0.0, "y": 0.0}, {"id": "w2", "x": 1.0, "y": 0.0}],
            "edges": [{"a": "w1", "b": "w2"}],
            "objects": [{"instance_id": "obj-1", "label": "rake", "waypoint": "w2"}],
            "ground_truth": {"target_label": "drill", "host_object": "obj-1"},
            "scorer": {"kind": "table", "table": {"rake|drill": 0.5}},
        }
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(doc))
        assert run_cli("plan", "--scenario", str(path)) == 0
        out = capsys.readouterr().out
        assert out.count("\n   1 ") == 1
        assert "w2" in out

    def test_ten_scored_waypoints_use_bounded_mode(self, tmp_path, capsys):
        # a line of ten uniform-score waypoints: the optimal order is the sweep
        n = 10
        doc = {
            "waypoints": [{"id": f"w{i:02d}", "x": float(i), "y": 0.0} for i in range(n + 1)],
            "edges": [{"a": f"w{i:02d}", "b": f"w{i + 1:02d}"} for i in range(n)],
            "objects": [{"instance_id": f"obj-{i:02d}", "label": f"tool {i}",
                         "waypoint": f"w{i:02d}"} for i in range(1, n + 1)],
            "ground_truth": {"target_label": "drill", "host_object": "obj-01"},
            "scorer": {"kind": "table", "table": {"default": 0.5}},
        }
        path = tmp_path / "line.json"
        path.write_text(json.dumps(doc))
        assert run_cli("plan", "--scenario", str(path), "--start", "w00") == 0
        out = capsys.readouterr().out
        assert "mode: bounded" in out
        # uniform scores on a line: the nearest-first sweep is the optimum
        order = [line.split()[1] for line in out.splitlines()
                 if line.strip() and line.split()[0].isdigit()]
        assert order == [f"w{i:02d}" for i in range(1, n + 1)]


class TestRun:
    def test_single_trial_row(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert run_cli("run", "--scenario", str(FARM_SCENARIO), "--method", "losae",
                       "--trials", "1", "--seed", "3", "--out", str(out_dir)) == 0
        rows = read_csv(out_dir / "episodes.csv")
        assert len(rows) == 1
        assert rows[0]["method"] == "losae"
        assert rows[0]["error"] == ""

    def test_fifteen_trials_default(self, tmp_path):
        out_dir = tmp_path / "out"
        assert run_cli("run", "--scenario", str(FARM_SCENARIO), "--method", "losae",
                       "--out", str(out_dir)) == 0
        summary = read_csv(out_dir / "summary.csv")
        assert summary[0]["episodes"] == "15"

    def test_runs_are_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert run_cli("run", "--scenario", str(FARM_SCENARIO), "--method", "losae",
                           "--trials", "6", "--seed", "11", "--out", str(out_dir)) == 0
            outs.append({f.name: f.read_bytes() for f in sorted(out_dir.iterdir())})
        assert outs[0] == outs[1]

    def test_room_search_method(self, tmp_path):
        out_dir = tmp_path / "out"
        assert run_cli("run", "--scenario", str(FARM_SCENARIO), "--method", "room_search",
                       "--trials", "4", "--out", str(out_dir)) == 0
        rows = read_csv(out_dir / "episodes.csv")
        assert all(r["error"] == "" for r in rows)


class TestBench:
    def test_paired_sampling_across_methods(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert run_cli("bench", "--scenario", str(FARM_SCENARIO), "--trials", "5",
                       "--seed", "7", "--out", str(out_dir)) == 0
        rows = read_csv(out_dir / "episodes.csv")
        methods = sorted({r["method"] for r in rows})
        assert methods == ["hottest_object", "hottest_waypoint", "losae", "room_search"]
        by_method = {m: {r["trial"]: (r["start"], r["host_object"])
                         for r in rows if r["method"] == m} for m in methods}
        for m in methods[1:]:
            assert by_method[m] == by_method[methods[0]]
        out = capsys.readouterr().out
        assert "SR" in out and "PE_mean" in out

    def test_bench_is_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert run_cli("bench", "--scenario", str(FARM_SCENARIO), "--trials", "5",
                           "--seed", "7", "--out", str(out_dir)) == 0
            outs.append({f.name: f.read_bytes() for f in sorted(out_dir.iterdir())})
        assert outs[0] == outs[1]

    def test_unknown_method_rejected(self, capsys):
        assert run_cli("bench", "--scenario", str(FARM_SCENARIO),
                       "--methods", "losae", "teleport") == 2
        assert "teleport" in capsys.readouterr().err

    def test_single_method(self, tmp_path):
        out_dir = tmp_path / "out"
        assert run_cli("bench", "--scenario", str(FARM_SCENARIO), "--methods", "losae",
                       "--trials", "3", "--out", str(out_dir)) == 0
        summary = read_csv(out_dir / "summary.csv")
        assert [r["method"] for r in summary] == ["losae"]
