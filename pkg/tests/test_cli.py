import json

import numpy as np
import pytest
import yaml

from grouphess.cli import DEFAULT_CONFIG, load_config, main


def write_config(tmp_path, name="config.yaml", **overrides):
    cfg = overrides
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


def test_config_print_defaults(capsys):
    assert main(["config", "--print-defaults"]) == 0
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed == DEFAULT_CONFIG


def test_load_config_rejects_unknown_keys(tmp_path):
    path = write_config(tmp_path, metod="gd")
    assert main(["run", "--config", str(path)]) == 2


def test_run_quadratic_partitioned_discrete(tmp_path, capsys):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 5},
        method="partitioned",
        partition="discrete",
        out=str(tmp_path / "out"),
    )
    assert main(["run", "--config", str(path)]) == 0
    trace = (tmp_path / "out" / "trace.csv").read_text()
    rows = trace.strip().splitlines()
    assert len(rows) == 2  # header + one productive Newton-equivalent step
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["result"]["termination"] == "converged"
    assert manifest["result"]["iterations"] == 1


def test_run_invalid_method_lists_valid_ones(tmp_path, capsys):
    path = write_config(tmp_path, method="sgd")
    assert main(["run", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "gd" in err and "cauchy" in err and "newton" in err and "partitioned" in err


def test_run_byte_identical_reruns(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "mlp", "widths": [2, 4, 2],
                 "dataset": {"kind": "moons", "n": 24}},
        step={"max_iterations": 5},
        seed=3,
        out=str(tmp_path / "a"),
    )
    assert main(["run", "--config", str(path)]) == 0
    first = (tmp_path / "a" / "trace.csv").read_bytes()
    first_manifest = (tmp_path / "a" / "manifest.json").read_bytes()
    assert main(["run", "--config", str(path)]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == first
    assert (tmp_path / "a" / "manifest.json").read_bytes() == first_manifest


def test_rerun_from_manifest_reproduces_trace(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        method="cauchy",
        step={"max_iterations": 20},
        out=str(tmp_path / "a"),
    )
    assert main(["run", "--config", str(path)]) == 0
    trace = (tmp_path / "a" / "trace.csv").read_bytes()
    manifest_path = tmp_path / "a" / "manifest.json"
    assert main(["run", "--config", str(manifest_path), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "trace.csv").read_bytes() == trace


def test_seed_flag_changes_artifacts(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        out=str(tmp_path / "a"),
        step={"max_iterations": 3},
    )
    assert main(["run", "--config", str(path)]) == 0
    a = (tmp_path / "a" / "trace.csv").read_text()
    assert main(["run", "--config", str(path), "--seed", "9",
                 "--out", str(tmp_path / "b")]) == 0
    b = (tmp_path / "b" / "trace.csv").read_text()
    assert a != b


def test_inspect_mlp_blocks(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "mlp", "widths": [2, 3, 3, 2],
                 "dataset": {"kind": "moons", "n": 20}},
        out=str(tmp_path / "out"),
    )
    assert main(["inspect", "--config", str(path), "--at", "init"]) == 0
    hbar = json.loads((tmp_path / "out" / "hbar.json").read_text())
    m = np.array(hbar["hbar"])
    assert m.shape == (6, 6)
    assert np.max(np.abs(m - m.T)) <= 1e-12 * max(np.max(np.abs(m)), 1e-300)
    assert hbar["labels"][0] == "layer1/weight"

    for name in ("ww", "bb", "wb"):
        block = (tmp_path / "out" / "blocks" / f"{name}.csv").read_text().splitlines()
        assert len(block) == 4  # header + 3 layers
        assert len(block[1].split(",")) == 4

    inv = json.loads((tmp_path / "out" / "hbar_inv.json").read_text())
    assert "hbar_inv" in inv
    assert "pseudo_inverse" in inv


def test_inspect_quadratic_trivial_is_1x1(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 5},
        partition="trivial",
        out=str(tmp_path / "out"),
    )
    assert main(["inspect", "--config", str(path)]) == 0
    hbar = json.loads((tmp_path / "out" / "hbar.json").read_text())
    assert np.array(hbar["hbar"]).shape == (1, 1)
    assert not (tmp_path / "out" / "blocks").exists()


def test_inspect_export_round_trip_idempotent(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        partition="discrete",
        out=str(tmp_path / "out"),
    )
    assert main(["inspect", "--config", str(path)]) == 0
    text = (tmp_path / "out" / "hbar.json").read_text()
    obj = json.loads(text)
    again = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    assert again == text


def test_inspect_checkpoint_stamps_steps(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        partition="discrete",
        step={"max_iterations": 7},
        out=str(tmp_path / "out"),
    )
    assert main(["inspect", "--config", str(path), "--at", "checkpoint"]) == 0
    hbar = json.loads((tmp_path / "out" / "hbar.json").read_text())
    assert hbar["step"] >= 1


def test_check_quadratic_battery_passes(tmp_path, capsys):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 6},
        partition="discrete",
        out=str(tmp_path / "out"),
    )
    assert main(["check", "--config", str(path), "--order", "3"]) == 0
    out = capsys.readouterr().out
    assert "PASS gradient-fd" in out
    assert "PASS hessian-oracle" in out
    assert "PASS pass-audit" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["first_failure"] is None
    # third-order summaries of a quadratic are identically zero
    assert report["summary_max_abs"]["3"] == 0.0


def test_check_mlp_battery_passes(tmp_path):
    path = write_config(
        tmp_path,
        problem={"kind": "mlp", "widths": [2, 3, 2],
                 "dataset": {"kind": "moons", "n": 12}},
        out=str(tmp_path / "out"),
    )
    assert main(["check", "--config", str(path)]) == 0


def test_check_corrupted_tolerance_fails_and_names_check(tmp_path, capsys):
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        check={"tolerances": {"gradient-fd": 0.0}},
        out=str(tmp_path / "out"),
    )
    assert main(["check", "--config", str(path)]) == 4
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["first_failure"] == "gradient-fd"
    assert "FAIL gradient-fd" in capsys.readouterr().out


def test_partition_file_round_trip(tmp_path):
    from grouphess.partition import custom_partition

    part = custom_partition([(0, 2), (1, 3)], labels=("even", "odd"))
    pfile = tmp_path / "part.json"
    pfile.write_text(part.to_json())
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        partition=f"file:{pfile}",
        out=str(tmp_path / "out"),
    )
    assert main(["run", "--config", str(path)]) == 0
    trace = (tmp_path / "out" / "trace.csv").read_text().splitlines()
    assert trace[0].endswith("eta_1,eta_2")


def test_partition_file_malformed_is_config_error(tmp_path):
    pfile = tmp_path / "part.json"
    pfile.write_text("{not json")
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        partition=f"file:{pfile}",
    )
    assert main(["run", "--config", str(path)]) == 2


def test_partition_file_size_mismatch(tmp_path):
    from grouphess.partition import custom_partition

    pfile = tmp_path / "part.json"
    pfile.write_text(custom_partition([(0, 1)]).to_json())
    path = write_config(
        tmp_path,
        problem={"kind": "quadratic", "size": 4},
        partition=f"file:{pfile}",
    )
    assert main(["run", "--config", str(path)]) == 2


def test_csv_dataset_through_cli(tmp_path):
    from grouphess.problems import dataset_to_csv, synth_dataset

    data = synth_dataset("blobs", 16, seed=2)
    csv_path = tmp_path / "data.csv"
    dataset_to_csv(data, csv_path)
    path = write_config(
        tmp_path,
        problem={"kind": "mlp", "widths": [2, 3, 2],
                 "dataset": {"kind": "csv", "path": str(csv_path)}},
        step={"max_iterations": 3},
        out=str(tmp_path / "out"),
    )
    assert main(["run", "--config", str(path)]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "dataset" in manifest["hashes"]


def test_missing_config_file_is_config_error():
    assert main(["run", "--config", "/nonexistent/nowhere.yaml"]) == 2


def test_defaults_need_no_config_file(tmp_path):
    assert main(["run", "--out", str(tmp_path / "out"), "--method", "gd"]) == 0
