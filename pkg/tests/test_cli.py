"""Tests for the command-line interface: exit codes, JSON output, sweeps."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from incver.cli import (
    EXIT_ARCH_MISMATCH,
    EXIT_COUNTEREXAMPLE,
    EXIT_TIMEOUT,
    EXIT_USAGE,
    EXIT_VERIFIED,
    RESULTS_COLUMNS,
    main,
)
from incver.model import Affine, Network, Relu, save_network
from incver.props import InputBox, OutputConstraint, Property, save_property
from incver.spectree import load_tree, leaves

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

DEMO_FLAGS = ["--heuristic", "random", "--seed", "27", "--alpha", "0.25", "--theta", "1.0"]


def demo_args(*extra):
    return [
        "verify",
        "--network", str(FIXTURES / "demo_network.json"),
        "--property", str(FIXTURES / "demo_property.json"),
        *DEMO_FLAGS,
        *extra,
    ]


def demo_incremental_args(mode, *extra):
    return [
        "verify-incremental",
        "--network", str(FIXTURES / "demo_network.json"),
        "--updated-network", str(FIXTURES / "demo_updated.json"),
        "--property", str(FIXTURES / "demo_property.json"),
        "--mode", mode,
        *DEMO_FLAGS,
        *extra,
    ]


def last_json(capsys):
    return json.loads(capsys.readouterr().out)


def write_pair(tmp_path, net, prop, names=("net.json", "prop.json")):
    net_path = tmp_path / names[0]
    prop_path = tmp_path / names[1]
    save_network(net, net_path)
    save_property(prop, prop_path)
    return str(net_path), str(prop_path)


def tiny_net():
    return Network(
        (
            Affine(np.array([[1.0], [-1.0]]), np.array([0.0, 1.0])),
            Relu(),
            Affine(np.array([[1.0, 1.0]]), np.array([0.0])),
        )
    )


def test_verify_demo_fixture_metrics(capsys):
    assert main(demo_args()) == EXIT_VERIFIED
    doc = last_json(capsys)
    assert doc["verdict"] == "Verified"
    assert doc["metrics"]["boundings"] == 9
    assert doc["metrics"]["branchings"] == 4
    assert doc["counterexample"] is None
    assert doc["schema_version"] == 1


def test_verify_missing_required_flag_exits_64():
    with pytest.raises(SystemExit) as err:
        main(["verify", "--network", str(FIXTURES / "demo_network.json")])
    assert err.value.code == EXIT_USAGE


def test_missing_subcommand_exits_64():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == EXIT_USAGE


def test_verify_trivial_property_single_bounding(tmp_path, capsys):
    prop = Property(InputBox(np.zeros(1), np.ones(1)), OutputConstraint(np.array([1.0]), 100.0))
    net_path, prop_path = write_pair(tmp_path, tiny_net(), prop)
    assert main(["verify", "--network", net_path, "--property", prop_path]) == EXIT_VERIFIED
    doc = last_json(capsys)
    assert doc["metrics"]["boundings"] == 1
    assert doc["metrics"]["branchings"] == 0


def test_verify_counterexample_exit_and_payload(tmp_path, capsys):
    prop = Property(InputBox(np.zeros(1), np.ones(1)), OutputConstraint(np.array([1.0]), -100.0))
    net_path, prop_path = write_pair(tmp_path, tiny_net(), prop)
    assert main(["verify", "--network", net_path, "--property", prop_path]) == EXIT_COUNTEREXAMPLE
    doc = last_json(capsys)
    assert doc["verdict"] == "Counterexample"
    assert isinstance(doc["counterexample"], list)
    assert len(doc["counterexample"]) == 1


def test_verify_timeout_exit(capsys):
    assert main(demo_args("--timeout", "1e-9")) == EXIT_TIMEOUT
    doc = last_json(capsys)
    assert doc["verdict"] == "Timeout"


def test_verify_tree_roundtrip(tmp_path, capsys):
    tree_path = str(tmp_path / "tree.json")
    assert main(demo_args("--tree-out", tree_path)) == EXIT_VERIFIED
    capsys.readouterr()
    saved = load_tree(tree_path)
    assert saved.num_nodes() == 9
    assert main(demo_args("--tree-in", tree_path)) == EXIT_VERIFIED
    doc = last_json(capsys)
    # Starting from the finished proof just re-bounds its leaves.
    assert doc["metrics"]["boundings"] == len(leaves(saved))
    assert doc["metrics"]["branchings"] == 0


def test_verify_out_file_matches_stdout(tmp_path, capsys):
    out_path = tmp_path / "result.json"
    assert main(demo_args("--out", str(out_path))) == EXIT_VERIFIED
    doc = last_json(capsys)
    assert json.loads(out_path.read_text(encoding="utf-8")) == doc


def test_incremental_ivan_demo(capsys):
    assert main(demo_incremental_args("ivan")) == EXIT_VERIFIED
    doc = last_json(capsys)
    assert doc["first"]["metrics"]["boundings"] == 9
    assert doc["first"]["metrics"]["branchings"] == 4
    assert doc["second"]["metrics"]["boundings"] == 3
    assert doc["second"]["metrics"]["branchings"] == 0
    assert doc["speedup"]["call_units"] == pytest.approx(13 / 3)


def test_incremental_reuse_identical_networks(tmp_path, capsys):
    prop = Property(InputBox(np.zeros(1), np.ones(1)), OutputConstraint(np.array([1.0]), 100.0))
    net_path, prop_path = write_pair(tmp_path, tiny_net(), prop)
    args = [
        "verify-incremental",
        "--network", net_path,
        "--updated-network", net_path,
        "--property", prop_path,
        "--mode", "reuse",
    ]
    assert main(args) == EXIT_VERIFIED
    doc = last_json(capsys)
    # Reusing a finished proof on the same network re-bounds each leaf once.
    assert doc["second"]["metrics"]["boundings"] == doc["first"]["metrics"]["leaves_final"]
    assert doc["second"]["metrics"]["branchings"] == 0


def test_incremental_baseline_matches_plain_verify(capsys):
    assert main(demo_incremental_args("baseline")) == EXIT_VERIFIED
    paired = last_json(capsys)
    assert (
        main(
            [
                "verify",
                "--network", str(FIXTURES / "demo_updated.json"),
                "--property", str(FIXTURES / "demo_property.json"),
                *DEMO_FLAGS,
            ]
        )
        == EXIT_VERIFIED
    )
    single = last_json(capsys)
    for key in ("boundings", "branchings", "nodes_final", "leaves_final"):
        assert paired["second"]["metrics"][key] == single["metrics"][key]


def test_incremental_architecture_mismatch_exits_65(tmp_path, capsys):
    prop = Property(InputBox(np.zeros(1), np.ones(1)), OutputConstraint(np.array([1.0]), 100.0))
    net_path, prop_path = write_pair(tmp_path, tiny_net(), prop)
    other = Network(
        (
            Affine(np.array([[1.0], [1.0], [1.0]]), np.zeros(3)),
            Relu(),
            Affine(np.ones((1, 3)), np.zeros(1)),
        )
    )
    other_path = str(tmp_path / "other.json")
    save_network(other, other_path)
    args = [
        "verify-incremental",
        "--network", net_path,
        "--updated-network", other_path,
        "--property", prop_path,
    ]
    assert main(args) == EXIT_ARCH_MISMATCH
    assert "architecture" in capsys.readouterr().err


def make_plan(tmp_path, modes, networks=None, out_name="exp"):
    plan = {
        "networks": networks or [str(FIXTURES / "demo_network.json")],
        "perturbations": [{"kind": "quantize_int8"}],
        "properties": [str(FIXTURES / "demo_property.json")],
        "modes": modes,
        "timeout": 30.0,
        "output_dir": str(tmp_path / out_name),
    }
    plan_path = tmp_path / f"{out_name}_plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")
    return str(plan_path), Path(plan["output_dir"])


def demo_mode(name):
    return {"mode": name, "heuristic": "random", "seed": 27, "alpha": 0.25, "theta": 1.0}


def read_rows(out_dir):
    with open(out_dir / "results.csv", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_experiment_sweep_outputs(tmp_path, capsys):
    plan_path, out_dir = make_plan(tmp_path, [demo_mode("baseline"), demo_mode("ivan")])
    assert main(["experiment", "--plan", plan_path]) == EXIT_VERIFIED
    capsys.readouterr()
    rows = read_rows(out_dir)
    assert len(rows) == 2
    assert [r["mode"] for r in rows] == ["baseline", "ivan"]
    assert list(rows[0].keys()) == list(RESULTS_COLUMNS)
    ivan = rows[1]
    assert ivan["first_cost_units"] == "13"
    assert ivan["second_cost_units"] == "3"
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["instances"] == 2
    assert summary["errors"] == 0
    # The demo proof tree has 9 > 5 nodes, so the instance lands in "hard".
    assert summary["modes"]["ivan"]["hard"]["count"] == 1
    assert summary["modes"]["ivan"]["easy"]["Sp"] == "n/a"
    assert summary["modes"]["ivan"]["overall"]["Sp"] > 1.0
    scatter = list(csv.DictReader(open(out_dir / "scatter.csv", encoding="utf-8", newline="")))
    assert len(scatter) == 1
    assert scatter[0]["bucket"] == "hard"


def test_experiment_results_deterministic(tmp_path, capsys):
    plan_path, out_dir = make_plan(tmp_path, [demo_mode("baseline"), demo_mode("reuse")])
    assert main(["experiment", "--plan", plan_path]) == EXIT_VERIFIED
    first = (out_dir / "results.csv").read_bytes()
    assert main(["experiment", "--plan", plan_path]) == EXIT_VERIFIED
    capsys.readouterr()
    assert (out_dir / "results.csv").read_bytes() == first


def test_experiment_speedup_na_without_baseline(tmp_path, capsys):
    plan_path, out_dir = make_plan(tmp_path, [demo_mode("ivan")])
    assert main(["experiment", "--plan", plan_path]) == EXIT_VERIFIED
    capsys.readouterr()
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["modes"]["ivan"]["overall"]["Sp"] == "n/a"


def test_experiment_records_failure_and_continues(tmp_path, capsys):
    plan_path, out_dir = make_plan(
        tmp_path,
        [demo_mode("ivan")],
        networks=[str(tmp_path / "missing.json"), str(FIXTURES / "demo_network.json")],
    )
    assert main(["experiment", "--plan", plan_path]) == EXIT_VERIFIED
    capsys.readouterr()
    rows = read_rows(out_dir)
    assert len(rows) == 2
    assert rows[0]["error"] != ""
    assert rows[0]["first_verdict"] == ""
    assert rows[1]["error"] == ""
    assert rows[1]["second_verdict"] == "Verified"
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["errors"] == 1


def test_experiment_rejects_empty_plan_sections(tmp_path, capsys):
    plan = {
        "networks": [],
        "perturbations": [{"kind": "quantize_int8"}],
        "properties": [str(FIXTURES / "demo_property.json")],
        "modes": [demo_mode("ivan")],
        "output_dir": str(tmp_path / "exp"),
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")
    assert main(["experiment", "--plan", str(plan_path)]) > EXIT_TIMEOUT
    assert "networks" in capsys.readouterr().err


def test_experiment_jobs_matches_serial(tmp_path, capsys):
    serial_plan, serial_dir = make_plan(
        tmp_path, [demo_mode("baseline"), demo_mode("ivan")], out_name="serial"
    )
    parallel_plan, parallel_dir = make_plan(
        tmp_path, [demo_mode("baseline"), demo_mode("ivan")], out_name="parallel"
    )
    assert main(["experiment", "--plan", serial_plan]) == EXIT_VERIFIED
    assert main(["experiment", "--plan", parallel_plan, "--jobs", "2"]) == EXIT_VERIFIED
    capsys.readouterr()
    assert (serial_dir / "results.csv").read_bytes() == (parallel_dir / "results.csv").read_bytes()


def test_unreadable_network_exits_70(tmp_path, capsys):
    missing = str(tmp_path / "missing.json")
    code = main(["verify", "--network", missing, "--property", missing])
    assert code > EXIT_TIMEOUT
    assert code != EXIT_USAGE and code != EXIT_ARCH_MISMATCH
    assert "error:" in capsys.readouterr().err


def test_log_env_controls_verbosity():
    cmd = [
        sys.executable, "-m", "incver.cli",
        *demo_incremental_args("reuse"),
    ]
    quiet = subprocess.run(cmd, capture_output=True, text=True, env={"PATH": "/usr/bin:/bin"})
    assert quiet.returncode == EXIT_VERIFIED
    noisy = subprocess.run(
        cmd,
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "INCVER_LOG": "DEBUG"},
    )
    assert noisy.returncode == EXIT_VERIFIED
    assert len(noisy.stderr) >= len(quiet.stderr)
    junk = subprocess.run(
        cmd,
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "INCVER_LOG": "not-a-level"},
    )
    assert junk.returncode == EXIT_VERIFIED
