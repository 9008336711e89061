"""Command-line driver: exit statuses, archives, reports, and series export."""

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from maflow import cli
from maflow.io import config_hash, load_trajectory, save_trajectory
from maflow.scenarios import available, scenario_path


def base_doc(out, **overrides):
    doc = {
        "name": "cli-test",
        "grid": {"n": 1, "resolution": 16},
        "metric": {"kind": "constant"},
        "volume": {"kind": "constant"},
        "driving": {"kind": "affine", "constant": 0.0, "slope": 0.5},
        "initial": {"kind": "fourier-sum", "modes": [[0.01, [1, 0], 0.0]]},
        "flow": {"horizon": 0.05, "t_min": 1e-3, "ratio": 1.3},
        "checks": ["residual-certificate"],
        "out": str(out),
    }
    doc.update(overrides)
    return doc


def write_doc(tmp_path, name="scenario.json", **overrides):
    doc = base_doc(tmp_path / "out", **overrides)
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path, doc


def test_bundled_scenarios_are_listed():
    stems = available()
    assert len(stems) == 14
    assert stems[0].startswith("01-")
    assert scenario_path(stems[0]).is_file()
    with pytest.raises(FileNotFoundError, match="01-"):
        scenario_path("no-such-scenario")


def test_run_archives_reload_bit_exact(tmp_path):
    cfg_path, doc = write_doc(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(doc)

    reloaded = load_trajectory(out)
    _, ctx, _ = cli.integrate_scenario(doc)
    assert len(reloaded.fields) == len(ctx.traj.fields)
    for a, b in zip(reloaded.fields, ctx.traj.fields):
        assert a.values.tobytes() == b.values.tobytes()

    margins = json.loads((out / "margins.json").read_text())
    assert all(m["details"]["config_hash"] == manifest["config_hash"] for m in margins)
    rows = list(csv.reader((out / "margins.csv").open()))
    assert rows[0] == ["check", "anchor", "margin", "constants"]


@pytest.mark.parametrize(
    "overrides,expected",
    [
        ({}, "single"),
        ({"initial": {"kind": "max-kink"}, "grid": {"n": 1, "resolution": 64},
          "flow": {"horizon": 0.01, "t_min": 1e-3, "ratio": 1.4, "backend": "fd"},
          "schedule": {"delta0": 0.25, "ratio": 0.5, "levels": 3}}, "cascade"),
        ({"metric": {"kind": "nef", "theta0": [[1.0]], "eps": [0.2, 0.1]},
          "initial": {"kind": "constant", "value": 0.0},
          "flow": {"horizon": 0.005, "t_min": 1e-4, "ratio": 1.3}}, "nef"),
        ({"mode": "audit"}, "audit"),
    ],
)
def test_mode_resolution(tmp_path, overrides, expected):
    doc = base_doc(tmp_path / "out", **overrides)
    mode, _, _ = cli.integrate_scenario(doc)
    assert mode == expected


def test_uncertified_driving_term_is_flagged(tmp_path):
    doc = base_doc(
        tmp_path / "out",
        driving={"kind": "counterexample"},
        initial={"kind": "constant", "value": 0.0},
        flow={"horizon": 0.01, "t_min": 1e-3, "ratio": 1.4},
        checks=[],
    )
    mode, ctx, _ = cli.integrate_scenario(doc)
    assert mode == "single"
    assert any("NO-UNIQUENESS-CERTIFICATE" in n for n in ctx.traj.notices)


def test_exit_one_on_failing_check(tmp_path):
    cfg_path, _ = write_doc(
        tmp_path,
        driving={"kind": "counterexample"},
        initial={"kind": "constant", "value": 0.0},
        flow={"horizon": 0.01, "t_min": 1e-3, "ratio": 1.4},
        checks=["uniqueness"],
    )
    assert cli.main(["run", "--config", str(cfg_path)]) == 1


def test_exit_two_on_configuration_problems(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", "--config", str(bad)]) == 2
    cfg_path, _ = write_doc(tmp_path, flow={"horizon": 0.05, "cadence": 3})
    assert cli.main(["run", "--config", str(cfg_path)]) == 2
    assert "unknown flow settings" in capsys.readouterr().err
    cfg_path, _ = write_doc(tmp_path, checks=["spectra"])
    assert cli.main(["run", "--config", str(cfg_path)]) == 2
    with pytest.raises(SystemExit) as exc:  # argparse usage error
        cli.main(["run"])
    assert exc.value.code == 2


def test_exit_three_on_numeric_failure(tmp_path, capsys):
    cfg_path, _ = write_doc(
        tmp_path,
        initial={"kind": "fourier-sum", "modes": [[0.2, [1, 0], 0.0]]},
    )
    assert cli.main(["run", "--config", str(cfg_path)]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_verify_replays_archive_checks(tmp_path):
    cfg_path, doc = write_doc(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    rc = cli.main(["verify", str(out), "--check", "residual-certificate"])
    assert rc == 0
    margins = json.loads((out / "margins.json").read_text())
    assert margins[0]["check"] == "residual-certificate"
    assert margins[0]["details"]["config_hash"] == config_hash(doc)


def test_verify_reports_missing_snapshot_pairs(tmp_path, capsys):
    cfg_path, _ = write_doc(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    rc = cli.main(["verify", str(out), "--check", "gradient-laplacian"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "missing snapshot pair:" in err


def test_verify_rejects_live_only_checks(tmp_path, capsys):
    cfg_path, _ = write_doc(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    assert cli.main(["verify", str(out), "--check", "stability"]) == 2
    assert "need the live scenario" in capsys.readouterr().err


def test_verify_compares_two_archives(tmp_path):
    doc_a = base_doc(tmp_path / "outA")
    cfg_a = tmp_path / "a.json"
    cfg_a.write_text(json.dumps(doc_a))
    doc_b = base_doc(tmp_path / "outB")
    doc_b["initial"]["modes"] = [[0.01, [1, 0], 0.0], [-0.05, [0, 0], 0.0]]
    cfg_b = tmp_path / "b.json"
    cfg_b.write_text(json.dumps(doc_b))
    assert cli.main(["run", "--config", str(cfg_a), "--out", str(tmp_path / "outA")]) == 0
    assert cli.main(["run", "--config", str(cfg_b), "--out", str(tmp_path / "outB")]) == 0
    rc = cli.main(["verify", str(tmp_path / "outA"), str(tmp_path / "outB")])
    assert rc == 0
    margins = json.loads((tmp_path / "outA" / "margins.json").read_text())
    assert [m["check"] for m in margins] == ["comparison"]
    assert margins[0]["passed"]


def test_series_oscillation_of_flat_run_is_zero(tmp_path, capsys):
    cfg_path, _ = write_doc(
        tmp_path, initial={"kind": "constant", "value": 0.3}, checks=[]
    )
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    assert cli.main(["series", str(out), "osc"]) == 0
    rows = list(csv.reader(_io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["t", "value"]
    assert len(rows) > 2
    assert all(float(v) == 0.0 for _, v in rows[1:])


def test_series_writes_csv_file(tmp_path):
    cfg_path, _ = write_doc(tmp_path, checks=[])
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    assert cli.main(["series", str(out), "sup", "--out", str(tmp_path / "csv")]) == 0
    target = tmp_path / "csv" / "series-sup.csv"
    rows = list(csv.reader(target.open()))
    assert rows[0] == ["t", "value"]
    assert float(rows[1][0]) == 0.0
    assert float(rows[1][1]) == pytest.approx(0.01, rel=1e-9)
    with pytest.raises(SystemExit):  # unknown quantity is an argparse error
        cli.main(["series", str(out), "volume"])


def test_series_min_phidot_tracks_log_time(tmp_path, scenario):
    """Near-degenerate Lipschitz data: min phidot follows n log t + O(1)."""
    outcome = scenario("07-derivative-asymptotics")
    arch = tmp_path / "arch"
    save_trajectory(arch, outcome.ctx.traj, run_config=outcome.ctx.doc)
    assert cli.main(["series", str(arch), "min-phidot", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "series-min-phidot.csv").open()))
    pts = [(float(t), float(v)) for t, v in rows[1:] if float(t) > 0]
    ts = np.array([t for t, _ in pts])
    ys = np.array([v for _, v in pts])
    slope, _ = np.polyfit(np.log(ts), ys, 1)
    assert 0.9 <= slope <= 1.3
    resid = ys - np.log(ts)  # n = 1
    assert float(resid.max() - resid.min()) <= 1.0


def test_regularize_builds_ladder_archive(tmp_path, capsys):
    doc = {
        "grid": {"n": 1, "resolution": 64},
        "initial": {"kind": "max-kink"},
        "schedule": {"delta0": 0.25, "ratio": 0.5, "levels": 3},
    }
    cfg_path = tmp_path / "ladder.json"
    cfg_path.write_text(json.dumps(doc))
    out = tmp_path / "lad"
    assert cli.main(["regularize", "--config", str(cfg_path), "--out", str(out)]) == 0
    report = json.loads((out / "ladder.json").read_text())
    assert set(report) == {"config_hash", "deltas", "shifts", "margins", "oscillation"}
    assert report["config_hash"] == config_hash(doc)
    assert len(report["deltas"]) == 3
    for j in range(3):
        assert (out / f"level_{j:03d}.bin").is_file()
    assert (out / "base.bin").is_file()
    assert "level 0: delta=0.25" in capsys.readouterr().out


def test_nef_family_archive_layout(tmp_path):
    cfg_path, doc = write_doc(
        tmp_path,
        metric={"kind": "nef", "theta0": [[1.0]], "eps": [0.2, 0.1]},
        initial={"kind": "constant", "value": 0.0},
        flow={"horizon": 0.005, "t_min": 1e-4, "ratio": 1.3},
        checks=[],
    )
    out = tmp_path / "out"
    assert cli.main(["nef", "--config", str(cfg_path)]) == 0
    family = json.loads((out / "family.json").read_text())
    assert family["format"] == "nef-family-v1"
    assert family["config_hash"] == config_hash(doc)
    assert family["eps"] == [0.2, 0.1]
    assert family["witness"] == "witness"
    for member in family["members"].values():
        assert (out / member / "manifest.json").is_file()
    assert (out / "witness" / "manifest.json").is_file()
    assert family["monotone_violation"] <= family["monotone_tol"]
