"""Command-line interface: exit codes, artifacts, determinism, schemas."""

import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import polaronlab as pl
from polaronlab import cli, storage

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "docs" / "schemas"


def _schema(name):
    return json.loads((SCHEMA_DIR / name).read_text())


def _write_config(tmp_path, **overrides):
    cfg = {
        "grid": {"d": 1, "K": 1.0, "h": 1.0},
        "form_factor": {"profile": "gaussian", "g": 0.2},
        "nmax": [2, 3],
        "epsilon_grid": [0.25, 0.5, 0.75],
        "scan": {"couplings": [0.0, 0.1]},
        "bs_ladder": [0.1, 0.01],
        "spectrum_count": 4,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _tree_digest(root):
    """Stable digest of an entire directory tree (paths + bytes)."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_unknown_config_key_is_fatal(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"grid": {"d": 1, "K": 1.0, "h": 1.0, "spacing": 0.5}}))
    assert cli.main(["build", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_required_key_is_fatal(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"grid": {"d": 1, "K": 1.0}, "form_factor": {"profile": "gaussian"}}))
    assert cli.main(["build", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "grid.h" in capsys.readouterr().err


def test_value_validation_is_fatal(tmp_path):
    cfg = _write_config(tmp_path, xi=[0.1, 0.2])  # xi length != d
    assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    cfg2 = _write_config(tmp_path, epsilon_grid=[0.0, 0.5])
    assert cli.main(["verify", "--config", cfg2, "--out", str(tmp_path / "o2")]) == 2
    path = tmp_path / "nojson.json"
    path.write_text("{not json")
    assert cli.main(["build", "--config", str(path), "--out", str(tmp_path / "o3")]) == 2
    assert cli.main(["build", "--config", str(tmp_path / "absent.json")]) == 2


def test_build_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "build"
    assert cli.main(["build", "--config", cfg, "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(manifest, _schema("manifest.schema.json"))
    assert manifest["command"] == "build"
    for rel in (
        "tables/form_factor.csv",
        "matrices/hamiltonian_n2.bin",
        "matrices/hamiltonian_n3.bin",
        "results/build.json",
    ):
        assert rel in manifest["artifacts"], rel
        blob = (out / rel).read_bytes()
        assert storage.sha256_bytes(blob) == manifest["artifacts"][rel]
    # the persisted operator round-trips and has the advertised dimension
    op, sidecar = storage.load_operator(out / "matrices" / "hamiltonian_n3")
    build_info = json.loads((out / "results" / "build.json").read_text())
    assert op.dim == build_info["levels"]["3"]["dimension"] == pl.fock_dimension(2, 3)
    assert sidecar["meta"]["nmax"] == 3
    assert build_info["levels"]["3"]["sector_dimensions"] == [1, 2, 3, 4]


def test_spectrum_artifacts_and_values(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "spec"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
    payload = json.loads((out / "results" / "spectrum.json").read_text())
    jsonschema.validate(payload, _schema("spectrum.schema.json"))
    # cross-check the top level against a direct library computation
    grid = pl.build_grid(1, 1.0, 1.0)
    ff = pl.sample_form_factor(grid, "gaussian", 0.2)
    basis = pl.enumerate_basis(grid.size, 3)
    ham = pl.assemble_hamiltonian(basis, grid, ff)
    e0, _ = pl.ground_energy(ham, pl.SolverConfig())
    level = payload["levels"]["3"]
    assert level["eigenvalues"][0] == pytest.approx(e0, abs=1e-12)
    assert level["count_below_window"] == 1
    csv_text = (out / "tables" / "spectrum.csv").read_text()
    assert csv_text.splitlines()[0] == "nmax,dimension,e0,nu1,nu2,vacuum_overlap,count_below_window"
    assert len(csv_text.splitlines()) == 3


def test_verify_passes_and_prints_summary(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "verify"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    identity_lines = [l for l in lines if l.startswith("[")]
    # one line per identity plus the spectral-correspondence line
    assert len(identity_lines) == len(pl.IDENTITY_IDS) + 1
    assert all("[  ok]" in l or "[ n/a]" in l for l in identity_lines)
    assert lines[-1] == "verification passed"
    payload = json.loads((out / "results" / "verification.json").read_text())
    jsonschema.validate(payload, _schema("verification.schema.json"))
    assert payload["passed"] is True
    assert payload["equivalence"]["consistent"] is True
    assert payload["assumptions"]["all_hold"] is True
    assert payload["bs_limit"]["values"]
    assert (out / "tables" / "identities.csv").exists()


def test_verify_filter(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "vf"
    rc = cli.main(
        ["verify", "--config", cfg, "--out", str(out), "--filter", "vacuum-schur,c0-identity"]
    )
    assert rc == 0
    payload = json.loads((out / "results" / "verification.json").read_text())
    assert [r["identity"] for r in payload["identities"]] == ["vacuum-schur", "c0-identity"]
    assert cli.main(["verify", "--config", cfg, "--out", str(out), "--filter", "nope"]) == 2


def test_verify_nonzero_fiber_shift(tmp_path, capsys):
    """With a fiber shift only the spectral correspondence applies; the
    decomposition-based identities are skipped rather than faked."""
    cfg = _write_config(
        tmp_path,
        grid={"d": 1, "K": 1.0, "h": 0.25},
        form_factor={"profile": "gaussian", "g": 0.05},
        nmax=[2],
        xi=[0.45],
    )
    out = tmp_path / "shifted"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
    payload = json.loads((out / "results" / "verification.json").read_text())
    assert payload["identities"] == []
    assert payload["assumptions"] is None
    eq = payload["equivalence"]
    assert eq["consistent"] is True
    assert len(eq["window_eigenvalues"]) == 3
    assert all(m["matched"] for m in eq["spectrum_to_kernel"])


def test_env_overrides(tmp_path, monkeypatch):
    cfg = _write_config(tmp_path)
    out1 = tmp_path / "base"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out1)]) == 0
    e0_base = json.loads((out1 / "results" / "spectrum.json").read_text())["levels"]["3"][
        "eigenvalues"
    ][0]

    monkeypatch.setenv("POLARONLAB_FORM_FACTOR__G", "0.05")
    out2 = tmp_path / "weak"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out2)]) == 0
    manifest = json.loads((out2 / "manifest.json").read_text())
    assert manifest["config"]["form_factor"]["g"] == 0.05
    e0_weak = json.loads((out2 / "results" / "spectrum.json").read_text())["levels"]["3"][
        "eigenvalues"
    ][0]
    assert e0_weak > e0_base  # weaker coupling binds less
    monkeypatch.delenv("POLARONLAB_FORM_FACTOR__G")

    monkeypatch.setenv("POLARONLAB_NOSUCH", "1")
    assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
    monkeypatch.delenv("POLARONLAB_NOSUCH")
    monkeypatch.setenv("POLARONLAB_SOLVER", "1")  # targets a section
    assert cli.main(["spectrum", "--config", cfg, "--out", str(tmp_path / "y")]) == 2


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out2)]) == 0
    assert _tree_digest(out1) == _tree_digest(out2)


def test_report_detects_corruption(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["build", "--config", cfg, "--out", str(out)]) == 0
    assert cli.main(["report", "--out", str(out)]) == 0
    assert "intact" in capsys.readouterr().out

    target = out / "tables" / "form_factor.csv"
    target.write_bytes(target.read_bytes() + b"tampered\n")
    assert cli.main(["report", "--out", str(out)]) == 4
    err = capsys.readouterr().err
    assert "form_factor.csv" in err

    target.unlink()
    assert cli.main(["report", "--out", str(out)]) == 4
    assert cli.main(["report", "--out", str(tmp_path / "missing")]) == 2


def test_report_summarizes_verification(tmp_path, capsys):
    cfg = _write_config(tmp_path, nmax=[2])
    out = tmp_path / "vrun"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "overall: passed" in text


def test_scan_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "scan"
    assert cli.main(["scan", "--config", cfg, "--out", str(out)]) == 0
    payload = json.loads((out / "results" / "scan.json").read_text())
    jsonschema.validate(payload, _schema("scan.schema.json"))
    rows = payload["rows"]
    assert [r["coupling"] for r in rows] == [0.0, 0.1]
    free, coupled = rows
    assert free["e0"] == pytest.approx(0.0, abs=1e-12)
    assert free["a_norm"] is None
    assert free["assumptions"]["all_hold"] is True
    assert coupled["e0"] < 0
    assert coupled["c0"] > 0
    assert coupled["count_below_window"] == 1
    # the CSV renders the absent entries as empty cells
    csv_lines = (out / "tables" / "scan.csv").read_text().splitlines()
    free_line = csv_lines[1]
    assert free_line.split(",")[6] == ""  # a_norm column


def test_scan_parallel_matches_serial(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["scan", "--config", cfg, "--out", str(out1), "--jobs", "1"]) == 0
    assert cli.main(["scan", "--config", cfg, "--out", str(out2), "--jobs", "2"]) == 0
    assert _tree_digest(out1) == _tree_digest(out2)


def test_default_out_name_is_config_hash(tmp_path, monkeypatch):
    cfg = _write_config(tmp_path)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["build", "--config", cfg]) == 0
    candidates = list(tmp_path.glob("run-build-*"))
    assert len(candidates) == 1
    # the directory name embeds the config hash: rerunning reuses it
    assert cli.main(["build", "--config", cfg]) == 0
    assert list(tmp_path.glob("run-build-*")) == candidates
