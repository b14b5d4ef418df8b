"""Command-line interface tests: exit codes, diagnostics, report files,
and byte-level determinism of the outputs.

Everything drives main(argv) in process; one smoke test exercises the
installed console script.
"""

import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from kvmix import PlantedSpec, TensorDump, dump_from_instance
from kvmix.cli import main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_args(tmp_path, *extra):
    """A fast `run` invocation: tiny instance, tiny cache."""
    return [
        "run",
        "--dim", "16",
        "--length", "32",
        "--outliers", "2,2,0",
        "--group-size", "8",
        "--residual-len", "16",
        "--sink-len", "2",
        "--seeds", "3",
        "--out", str(tmp_path / "rep"),
        *extra,
    ]


class TestRunCommand:
    def test_full_precision_rows_are_lossless(self, tmp_path, capsys):
        assert main(run_args(tmp_path, "--policy", "full-precision")) == 0
        rows = read_csv(tmp_path / "rep.csv")
        assert len(rows) == 3
        for row in rows:
            assert row["policy"] == "full-precision"
            assert float(row["output_error_frobenius"]) == 0.0
            assert float(row["e_attn_frobenius"]) == 0.0
            assert float(row["b_eff"]) == 16.0
        assert "full-precision" in capsys.readouterr().out

    def test_compare_pairs_policies_over_same_seeds(self, tmp_path):
        assert main(
            run_args(
                tmp_path,
                "--policy", "salience",
                "--compare", "error-only",
                "--budget", "2,4",
            )
        ) == 0
        rows = read_csv(tmp_path / "rep.csv")
        by_policy = {}
        for row in rows:
            by_policy.setdefault(row["policy"], []).append(row["seed"])
        assert by_policy["salience"] == by_policy["error-only"] == ["0", "1", "2"]
        # matched top-k budgets store the same number of bits
        for s_row, e_row in zip(rows[:3], rows[3:]):
            assert s_row["b_eff"] == e_row["b_eff"]
            assert s_row["budget_full"] == "2"
            assert s_row["budget_mid"] == "4"

    def test_json_mirrors_csv(self, tmp_path):
        assert main(run_args(tmp_path, "--policy", "fixed4")) == 0
        rows = read_csv(tmp_path / "rep.csv")
        payload = json.loads((tmp_path / "rep.json").read_text())
        assert payload["config"]["dim"] == 16
        assert len(payload["records"]) == len(rows)
        for rec, row in zip(payload["records"], rows):
            assert rec["policy"] == row["policy"]
            assert repr(rec["b_eff"]) == row["b_eff"]

    def test_reports_deterministic_up_to_wall_time(self, tmp_path):
        assert main(run_args(tmp_path, "--out", str(tmp_path / "one"))) == 0
        assert main(run_args(tmp_path, "--out", str(tmp_path / "two"))) == 0

        def stripped(path):
            rows = read_csv(path)
            for row in rows:
                row.pop("wall_time_s")
            return rows

        assert stripped(tmp_path / "one.csv") == stripped(tmp_path / "two.csv")
        one = json.loads((tmp_path / "one.json").read_text())
        two = json.loads((tmp_path / "two.json").read_text())
        for payload in (one, two):
            for rec in payload["records"]:
                rec.pop("wall_time_s")
        assert one == two

    def test_run_from_dump(self, tmp_path):
        inst = PlantedSpec(dim=16, length=32, n_outlier_scale=2, n_outlier_query=2).materialize(4)
        dump_path = tmp_path / "trace.mkvq"
        dump_from_instance(inst).write(dump_path)
        assert main(
            [
                "run",
                "--dump", str(dump_path),
                "--group-size", "8",
                "--residual-len", "16",
                "--sink-len", "2",
                "--out", str(tmp_path / "rep"),
            ]
        ) == 0
        rows = read_csv(tmp_path / "rep.csv")
        assert len(rows) == 1
        assert float(rows[0]["b_eff"]) < 16.0

    def test_missing_dump_exits_3(self, tmp_path, capsys):
        code = main(["run", "--dump", str(tmp_path / "absent.mkvq")])
        assert code == 3
        assert capsys.readouterr().err.startswith("error: missing-dump:")

    def test_corrupt_dump_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.mkvq"
        bad.write_bytes(b"NOPE" + b"\x00" * 16)
        code = main(["run", "--dump", str(bad)])
        assert code == 1
        assert capsys.readouterr().err.startswith("error: bad-dump:")

    def test_inverted_thresholds_exit_2(self, tmp_path, capsys):
        code = main(run_args(tmp_path, "--thresholds", "0.5,1.0"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")

    def test_bad_geometry_exits_2(self, tmp_path, capsys):
        code = main(run_args(tmp_path, "--group-size", "7"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")

    def test_malformed_budget_exits_2(self, tmp_path, capsys):
        code = main(run_args(tmp_path, "--budget", "3"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")

    def test_budget_on_fixed_policy_exits_2(self, tmp_path, capsys):
        code = main(run_args(tmp_path, "--policy", "fixed2", "--budget", "1,1"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")

    def test_unknown_policy_rejected_by_parser(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(run_args(tmp_path, "--policy", "psychic"))
        assert exc.value.code == 2


def search_args(tmp_path, *extra):
    return [
        "search",
        "--dim", "16",
        "--length", "32",
        "--outliers", "2,2,0",
        "--group-size", "8",
        "--residual-len", "16",
        "--sink-len", "2",
        "--seeds", "2",
        "--grid", "3",
        "--range", "0.1,2.0",
        "--out", str(tmp_path / "srch"),
        *extra,
    ]


class TestSearchCommand:
    def test_writes_grid_and_frontier(self, tmp_path, capsys):
        assert main(search_args(tmp_path)) == 0
        grid = read_csv(tmp_path / "srch_grid.csv")
        frontier = read_csv(tmp_path / "srch_frontier.csv")
        assert len(grid) == 3 * 4 // 2
        assert 1 <= len(frontier) <= len(grid)
        grid_coords = {(r["b_eff"], r["fidelity"]) for r in grid}
        for row in frontier:
            assert (row["b_eff"], row["fidelity"]) in grid_coords
        b_effs = [float(r["b_eff"]) for r in frontier]
        assert b_effs == sorted(b_effs)
        out = capsys.readouterr().out
        assert "frontier size" in out

    def test_budget_selection_lands_in_json(self, tmp_path):
        assert main(search_args(tmp_path, "--budget", "17.0")) == 0
        payload = json.loads((tmp_path / "srch_frontier.json").read_text())
        assert "selected" in payload
        assert payload["selected"] in payload["frontier"]
        assert payload["selected"]["b_eff"] <= 17.0

    def test_infeasible_budget_exits_1(self, tmp_path, capsys):
        code = main(search_args(tmp_path, "--budget", "0.5"))
        assert code == 1
        assert capsys.readouterr().err.startswith("error: budget-infeasible:")

    def test_search_deterministic(self, tmp_path):
        assert main(search_args(tmp_path, "--out", str(tmp_path / "s1"))) == 0
        assert main(search_args(tmp_path, "--out", str(tmp_path / "s2"))) == 0
        assert (tmp_path / "s1_grid.csv").read_bytes() == (tmp_path / "s2_grid.csv").read_bytes()
        assert (
            tmp_path / "s1_frontier.csv"
        ).read_bytes() == (tmp_path / "s2_frontier.csv").read_bytes()

    def test_inverted_range_exits_2(self, tmp_path, capsys):
        code = main(search_args(tmp_path, "--range", "2.0,0.1"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")


class TestStatsCommand:
    def test_planted_table_shape_and_decorrelation(self, tmp_path, capsys):
        out = tmp_path / "stats.csv"
        assert main(
            ["stats", "--planted", "32,64,4,4,0", "--seed", "0", "--out", str(out)]
        ) == 0
        rows = read_csv(out)
        assert len(rows) == 32
        assert list(rows[0].keys()) == [
            "channel",
            "importance",
            "sensitivity",
            "salience",
            "tier",
            "pearson_importance_sensitivity",
        ]
        for row in rows:
            assert int(row["tier"]) in (2, 4, 16)
            assert float(row["salience"]) == pytest.approx(
                float(row["importance"]) * float(row["sensitivity"])
            )
        # zero-overlap planting decorrelates the two scores
        assert float(rows[0]["pearson_importance_sensitivity"]) < 0.3
        assert "Pearson" in capsys.readouterr().out

    def test_constant_queries_make_salience_proportional_to_sensitivity(self, tmp_path):
        inst = PlantedSpec(dim=8, length=16, n_outlier_scale=2, n_outlier_query=0).materialize(3)
        dump = TensorDump()
        dump.add("layer0/head0/q", np.full((16, 8), 2.0, dtype=np.float32))
        dump.add("layer0/head0/k", inst.keys.astype(np.float32))
        dump.add("layer0/head0/v", inst.values.astype(np.float32))
        dump_path = tmp_path / "const.mkvq"
        dump.write(dump_path)
        out = tmp_path / "stats.csv"
        assert main(["stats", "--dump", str(dump_path), "--out", str(out)]) == 0
        rows = read_csv(out)
        for row in rows:
            assert float(row["importance"]) == 2.0
            assert float(row["salience"]) == pytest.approx(
                2.0 * float(row["sensitivity"])
            )
        # correlation against a constant vector is undefined
        assert rows[0]["pearson_importance_sensitivity"] == "nan"

    def test_requires_exactly_one_source(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stats"])
        assert exc.value.code == 2

    def test_missing_dump_exits_3(self, tmp_path, capsys):
        code = main(["stats", "--dump", str(tmp_path / "gone.mkvq")])
        assert code == 3
        assert capsys.readouterr().err.startswith("error: missing-dump:")

    def test_malformed_planted_exits_2(self, tmp_path, capsys):
        code = main(["stats", "--planted", "32,64", "--out", str(tmp_path / "s.csv")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error: invalid-config:")


class TestConsoleScript:
    def test_installed_entry_point(self, tmp_path):
        exe = shutil.which("kvmix")
        if exe is None:
            pytest.skip("console script not on PATH")
        proc = subprocess.run(
            [
                exe,
                "stats",
                "--planted", "8,16,1,1,0",
                "--out", str(tmp_path / "stats.csv"),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "stats.csv").exists()

    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "kvmix.cli",
                "stats",
                "--planted", "8,16,1,1,0",
                "--out", str(tmp_path / "stats.csv"),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
