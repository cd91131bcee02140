import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "semint", *args],
        capture_output=True,
        text=True,
        cwd=cwd or REPO,
    )


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


BOUNDS_BLOCK = {"center": [0.0, 0.0, 0.0, 0.0], "radius": 2.5, "samples_per_axis": 9}


class TestRun:
    def test_pendulum_run_writes_artifacts(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "run.json",
            {
                "model": {"name": "pendulum"},
                "initial": {"q0": 1.0, "p0": 0.5, "t0": 0.0, "lambda_target": 0.1},
                "steps": 50,
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("run", "--config", cfg)
        assert proc.returncode == 0, proc.stderr
        header, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert header == ["k", "lambda", "q1", "t", "p1", "wp", "abs_H_mid"]
        assert len(rows) == 51
        assert rows[-1][1] == ""  # the last vertex has no outgoing segment
        resids = [float(r[6]) for r in rows[:-1]]
        assert max(resids) <= 1e-10
        doc = json.loads((tmp_path / "out" / "events.json").read_text())
        assert len(doc["vertices"]) == 51
        assert len(doc["multipliers"]) == 50
        assert "max |H(z_bar)|" in proc.stdout

    def test_zero_steps_rejected(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "run.json",
            {
                "model": {"name": "pendulum"},
                "initial": {"q0": 1.0, "p0": 0.5, "lambda_target": 0.1},
                "steps": 0,
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("run", "--config", cfg)
        assert proc.returncode == 1

    def test_nonexistent_start_exits_2_with_case(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "run.json",
            {
                "model": {"name": "pendulum"},
                "initial": {"state": [0.0, 0.0, 1.0, 0.4]},  # H/psi < 0
                "steps": 10,
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("run", "--config", cfg)
        assert proc.returncode == 2
        assert "EU_1(i)" in proc.stdout

    def test_initial_state_exclusivity(self, tmp_path):
        both = {
            "model": {"name": "pendulum"},
            "initial": {"state": [0, 0, 1, 0.5], "lambda_target": 0.1},
            "steps": 5,
            "bounds": BOUNDS_BLOCK,
            "out": str(tmp_path / "out"),
        }
        proc = run_cli("run", "--config", write_config(tmp_path, "both.json", both))
        assert proc.returncode == 1
        neither = dict(both)
        neither["initial"] = {}
        proc = run_cli("run", "--config", write_config(tmp_path, "neither.json", neither))
        assert proc.returncode == 1

    def test_steps_flag_overrides_config(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "run.json",
            {
                "model": {"name": "pendulum"},
                "initial": {"q0": 1.0, "p0": 0.5, "lambda_target": 0.1},
                "steps": 50,
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("run", "--config", cfg, "--steps", "7")
        assert proc.returncode == 0
        _, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert len(rows) == 8


class TestScan:
    @pytest.fixture()
    def scan_rows(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "scan.json",
            {
                "model": {"name": "pendulum"},
                "state": [0.0, 0.0, 1.0, 0.501],
                "lambda_range": [-0.11, 0.11],
                "count": 45,  # odd: includes lambda = 0 exactly
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("scan", "--config", cfg)
        assert proc.returncode == 0, proc.stderr
        return read_csv(tmp_path / "out" / "scan.csv")

    def test_columns(self, scan_rows):
        header, rows = scan_rows
        assert header == ["lambda", "g", "model", "bound", "dg_dlambda"]
        assert len(rows) == 45

    def test_zero_row_equals_hamiltonian(self, scan_rows):
        _, rows = scan_rows
        zero = min(rows, key=lambda r: abs(float(r[0])))
        assert float(zero[0]) == 0.0
        assert float(zero[1]) == pytest.approx(1e-3, abs=1e-13)  # H(z_k)
        assert abs(float(zero[4])) <= 1e-12  # zero slope at 0

    def test_model_envelope_holds(self, scan_rows):
        _, rows = scan_rows
        for r in rows:
            if r[1] == "":
                continue
            assert abs(float(r[1]) - float(r[2])) <= float(r[3]) + 1e-11

    def test_deterministic_output(self, tmp_path):
        payload = {
            "model": {"name": "pendulum"},
            "state": [0.3, 0.0, 0.9, 0.2],
            "lambda_range": [-0.1, 0.1],
            "count": 21,
            "bounds": BOUNDS_BLOCK,
        }
        outs = []
        for run_id in ("a", "b"):
            payload["out"] = str(tmp_path / run_id)
            proc = run_cli("scan", "--config", write_config(tmp_path, f"{run_id}.json", payload))
            assert proc.returncode == 0
            outs.append((tmp_path / run_id / "scan.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_unsolvable_rows_marked_missing(self, tmp_path):
        # q = pi makes the midpoint Jacobian singular exactly at lambda = 2
        cfg = write_config(
            tmp_path,
            "scan.json",
            {
                "model": {"name": "pendulum"},
                "state": [np.pi, 0.0, 0.0, -1.0],
                "lambda_range": [1.9, 2.1],
                "count": 3,
                "bounds": BOUNDS_BLOCK,
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("scan", "--config", cfg)
        assert proc.returncode == 0, proc.stderr
        _, rows = read_csv(tmp_path / "out" / "scan.csv")
        middle = [r for r in rows if float(r[0]) == 2.0]
        assert middle and middle[0][1] == "" and middle[0][4] == ""
        assert middle[0][2] != ""  # the cubic model column is still filled


class TestMap:
    def test_small_map(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "map.json",
            {
                "model": {"name": "pendulum"},
                "grid": {"q_min": -np.pi, "q_max": np.pi, "p_min": -3.0, "p_max": 3.0,
                         "nq": 21, "np": 21},
                "t": 0.0,
                "wp_rule": {"kind": "h-zero"},
                "bounds": {"center": [0.0, 0.0, 0.0, 0.0], "radius": 4.0, "samples_per_axis": 9},
                "out": str(tmp_path / "out"),
            },
        )
        proc = run_cli("map", "--config", cfg)
        assert proc.returncode == 0, proc.stderr
        header, rows = read_csv(tmp_path / "out" / "map.csv")
        assert header == ["q", "p", "psi", "psi_prime", "region", "vertex_class"]
        assert len(rows) == 21 * 21
        from semint.models import pendulum_psi, pendulum_psi_prime

        degenerate = 0
        for r in rows:
            q, p = float(r[0]), float(r[1])
            assert float(r[2]) == pytest.approx(pendulum_psi(q, p), abs=1e-10)
            assert float(r[3]) == pytest.approx(pendulum_psi_prime(q, p), abs=1e-8)
            if r[4] == "degenerate":
                degenerate += 1
        # the equilibria rows (p = 0 with q in {0, +-pi}) are tagged degenerate
        assert degenerate >= 3

    def test_grid_validation(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "map.json",
            {
                "model": {"name": "pendulum"},
                "grid": {"q_min": 0, "q_max": 1, "p_min": 0, "p_max": 1, "nq": 1, "np": 5},
                "out": str(tmp_path / "out"),
            },
        )
        assert run_cli("map", "--config", cfg).returncode == 1

    def test_parallel_map_matches_serial(self, tmp_path):
        payload = {
            "model": {"name": "pendulum"},
            "grid": {"q_min": -2.0, "q_max": 2.0, "p_min": -2.0, "p_max": 2.0,
                     "nq": 9, "np": 9},
            "bounds": {"center": [0.0, 0.0, 0.0, 0.0], "radius": 3.0, "samples_per_axis": 7},
        }
        outputs = []
        for jobs, tag in ((1, "serial"), (2, "parallel")):
            payload["jobs"] = jobs
            payload["out"] = str(tmp_path / tag)
            cfg = write_config(tmp_path, f"{tag}.json", payload)
            proc = run_cli("map", "--config", cfg)
            assert proc.returncode == 0, proc.stderr
            outputs.append((tmp_path / tag / "map.csv").read_bytes())
        assert outputs[0] == outputs[1]


class TestVerify:
    def test_battery_passes(self):
        import time

        start = time.perf_counter()
        proc = run_cli("verify")
        elapsed = time.perf_counter() - start
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "quartic-bound" in proc.stdout
        assert "FAIL" not in proc.stdout
        assert elapsed < 60.0

    def test_injected_bad_k_fails(self):
        proc = run_cli("verify", "--inject-k-scale", "0.5")
        assert proc.returncode == 3
        assert "quartic-bound" in proc.stdout
        assert "FAIL" in proc.stdout


class TestBoundsReuse:
    def test_save_then_load(self, tmp_path):
        saved = tmp_path / "bounds.json"
        cfg1 = write_config(
            tmp_path,
            "first.json",
            {
                "model": {"name": "pendulum"},
                "state": [0.0, 0.0, 1.0, 0.501],
                "lambda_range": [-0.05, 0.05],
                "count": 11,
                "bounds": dict(BOUNDS_BLOCK, save=str(saved)),
                "out": str(tmp_path / "a"),
            },
        )
        assert run_cli("scan", "--config", cfg1).returncode == 0
        assert saved.exists()
        cfg2 = write_config(
            tmp_path,
            "second.json",
            {
                "model": {"name": "pendulum"},
                "state": [0.0, 0.0, 1.0, 0.501],
                "lambda_range": [-0.05, 0.05],
                "count": 11,
                "bounds": {"path": str(saved)},
                "out": str(tmp_path / "b"),
            },
        )
        assert run_cli("scan", "--config", cfg2).returncode == 0
        assert (tmp_path / "a" / "scan.csv").read_bytes() == (
            tmp_path / "b" / "scan.csv"
        ).read_bytes()
