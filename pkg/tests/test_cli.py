import json
import shutil
import subprocess

import pytest

from rmlab.cli import config_hash, run, verify_manifest
from rmlab.locallaw import ERRORS_HEADER, SPECTRA_HEADER


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data, indent=2))
    return str(p)


def outputs(out, sub):
    return sorted(p.name for p in out.iterdir() if p.name.startswith(sub))


def test_mde_run_writes_csv_and_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"kind": "wigner", "N": 8, "symmetry": "complex"},
                                  "z": [[0, 1], [0, 2]]})
    out = tmp_path / "out"
    assert run(["mde", "--config", cfg, "--out", str(out)]) == 0
    stem = "mde-" + config_hash("mde", json.loads((tmp_path / "cfg.json").read_text()))[:8]
    lines = (out / f"{stem}.csv").read_text().splitlines()
    assert lines[0] == "z_re,z_im,m_re,m_im,rho,residual,iterations,im_min"
    assert float(lines[1].split(",")[3]) == pytest.approx(0.6180339887, abs=1e-8)
    manifest = json.loads((out / f"{stem}.manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["config_hash"].startswith(stem[4:])
    assert {f["file"] for f in manifest["files"]} == {f"{stem}.csv", f"{stem}.json"}
    assert verify_manifest(out / f"{stem}.manifest.json") == []
    (out / f"{stem}.csv").write_text("tampered\n")
    assert verify_manifest(out / f"{stem}.manifest.json") == [f"{stem}.csv"]
    assert "<M>" in capsys.readouterr().out


def test_rerun_refuses_then_force(tmp_path, capsys):
    cfg = write_config(tmp_path, {"model": {"kind": "wigner", "N": 8}, "samples": 2, "seed": 5})
    out = str(tmp_path / "o")
    assert run(["sample", "--config", cfg, "--out", out]) == 0
    first = {n: (tmp_path / "o" / n).read_bytes() for n in outputs(tmp_path / "o", "sample") if "manifest" not in n}
    assert run(["sample", "--config", cfg, "--out", out]) == 1
    assert "--force" in capsys.readouterr().err
    assert run(["sample", "--config", cfg, "--out", out, "--force"]) == 0
    second = {n: (tmp_path / "o" / n).read_bytes() for n in first}
    assert first == second
    assert any(n.endswith(".mdem") for n in first)


def test_seed_flag_changes_hash(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "wigner", "N": 4}})
    out = str(tmp_path / "o")
    assert run(["sample", "--config", cfg, "--out", out]) == 0
    assert run(["sample", "--config", cfg, "--out", out, "--seed", "9"]) == 0
    assert len([n for n in outputs(tmp_path / "o", "sample") if n.endswith(".csv")]) == 2


def test_diagrams_summary(tmp_path, capsys):
    out = tmp_path / "d"
    assert run(["diagrams", "--p", "2", "--R", "2", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "p,R,mode,graph_count,max_violations" in printed
    assert "2,2,av,2,0" in printed and "2,2,iso,2,0" in printed


def test_cumulant_check(tmp_path, capsys):
    assert run(["cumulant-check", "--out", str(tmp_path)]) == 0
    csv = next(tmp_path.glob("cumulant-check-*.csv")).read_text().splitlines()
    assert all(line.endswith(",1") for line in csv[1:])
    assert "identity checks passed" in capsys.readouterr().out


def test_audit_exit_codes(tmp_path):
    bad = write_config(tmp_path, {"model": {"kind": "fourfold", "N": 16}}, "bad.json")
    good = write_config(tmp_path, {"model": {"kind": "wigner", "N": 16}}, "good.json")
    assert run(["audit", "--config", bad, "--out", str(tmp_path)]) == 2
    assert run(["audit", "--config", good, "--out", str(tmp_path)]) == 0
    table = next(p for p in tmp_path.glob("audit-*.csv")).read_text().splitlines()[0]
    assert table == "assumption,status,detail"


def test_locallaw_and_spectra_headers(tmp_path):
    cfg = write_config(tmp_path, {"model": {"kind": "wigner", "N": 64}, "N_list": [64, 128],
                                  "etas": [0.5], "samples": 5})
    assert run(["locallaw", "--config", cfg, "--out", str(tmp_path), "--jobs", "1"]) == 0
    head = next(tmp_path.glob("locallaw-*.csv")).read_text().splitlines()[0]
    assert head == ",".join(ERRORS_HEADER)
    cfg2 = write_config(tmp_path, {"model": {"kind": "wigner", "N": 64}, "samples": 2}, "s.json")
    assert run(["spectra", "--config", cfg2, "--out", str(tmp_path), "--jobs", "1"]) == 0
    head = next(tmp_path.glob("spectra-*.csv")).read_text().splitlines()[0]
    assert head == ",".join(SPECTRA_HEADER)


def test_config_diagnostics(tmp_path, capsys):
    text = '{\n  "model": {"kind": "wigner", "N": 8},\n  "sampels": 3\n}\n'
    (tmp_path / "typo.json").write_text(text)
    assert run(["sample", "--config", str(tmp_path / "typo.json"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "typo.json:3" in err and "sampels" in err
    (tmp_path / "neg.json").write_text('{\n  "model": {\n    "kind": "wigner",\n    "N": -1\n  }\n}\n')
    assert run(["sample", "--config", str(tmp_path / "neg.json"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "neg.json:4" in err and "model.N" in err
    (tmp_path / "broken.json").write_text('{"model": ')
    assert run(["sample", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 1
    assert not list(tmp_path.glob("sample-*"))


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RMLAB_OUT", str(tmp_path / "env"))
    assert run(["diagrams", "--p", "1", "--R", "2"]) == 0
    assert outputs(tmp_path / "env", "diagrams")


def test_console_script(tmp_path):
    exe = shutil.which("rmlab")
    if exe is None:
        pytest.skip("package not installed")
    proc = subprocess.run([exe, "diagrams", "--p", "2", "--R", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "2,2,av,2,0" in proc.stdout
