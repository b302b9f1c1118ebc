import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from chaotic_gd.cli import COMMANDS, build_parser, main

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = sorted(COMMANDS)


def _help(argv, monkeypatch, capsys):
    monkeypatch.setenv("COLUMNS", "80")
    assert main(argv + ["--help"]) == 0
    return capsys.readouterr().out


@pytest.mark.parametrize("cmd", [None] + SUBCOMMANDS)
def test_help_matches_golden(cmd, monkeypatch, capsys):
    text = _help([] if cmd is None else [cmd], monkeypatch, capsys)
    path = GOLDEN / f"{cmd or 'main'}.txt"
    if os.environ.get("UPDATE_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_every_flag(cmd, monkeypatch, capsys):
    text = _help([cmd], monkeypatch, capsys)
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.dest != "help":
            assert action.help


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


def test_bad_flag_value_exits_2(tmp_path):
    assert main(["orbit", "--eta", "abc", "--out", str(tmp_path)]) == 2
    assert main(["orbit", "--macro", "cubic", "--out", str(tmp_path)]) == 2
    assert main(["suite", "--only", "nope", "--out", str(tmp_path)]) == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[chaotic-gd]\nversion = 1\nexperiment = bifurcation\nbogus = 3\n")
    assert main(["bifurcation", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["escape", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_divergence_exits_3(tmp_path, capsys):
    code = main(["orbit", "--macro", "quadratic", "--micro", "none", "--eta", "3",
                 "--x0", "1", "--n", "100", "--out", str(tmp_path)])
    assert code == 3
    assert "divergence" in capsys.readouterr().err


def test_lyapunov_json(tmp_path, capsys):
    code = main(["lyapunov", "--eta", "0.1", "--epsilon", "1e-6", "--micro", "sin",
                 "--macro", "double-well:k=1", "--n", "1000000", "--out", str(tmp_path)])
    assert code == 0
    data = json.loads(capsys.readouterr().out)
    assert data["residual"] == pytest.approx(-0.6931, abs=0.1)
    assert data["m_reference"] == pytest.approx(-0.6931, abs=1e-3)
    assert json.loads((tmp_path / "lyapunov.json").read_text())["lambda"] == data["lambda"]


def test_orbit_outputs(tmp_path):
    assert main(["orbit", "--macro", "matyas", "--micro", "sincos2d", "--epsilon", "1e-3",
                 "--x0", "0.5", "0.5", "--n", "20", "--format", "binary",
                 "--out", str(tmp_path)]) == 0
    from chaotic_gd.dynamics import read_binary
    assert read_binary(tmp_path / "orbit.bin").shape == (21, 2)
    assert json.loads((tmp_path / "orbit.json").read_text())["states"] == 21


def test_ensemble_and_gibbs_outputs(tmp_path):
    assert main(["ensemble", "--members", "2000", "--steps", "200", "--epsilon", "1e-6",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "ensemble.json").read_text())
    assert summary["ks_vs_gibbs"] < 0.05
    assert main(["gibbs", "--macro", "quadratic", "--samples", "100",
                 "--out", str(tmp_path)]) == 0
    g = json.loads((tmp_path / "gibbs.json").read_text())
    assert g["quadrature"] == pytest.approx(1.0)
    assert (tmp_path / "gibbs_samples.csv").read_text().startswith("x1\n")


def test_flags_override_config(tmp_path):
    from chaotic_gd.experiments import default_config
    cfg = default_config("bifurcation", "quick", seed=1)
    cfg.save(tmp_path / "b.ini")
    assert main(["bifurcation", "--config", str(tmp_path / "b.ini"), "--seed", "9",
                 "--out", str(tmp_path / "o")]) == 0
    v = json.loads((tmp_path / "o" / "bifurcation.verdict.json").read_text())
    assert v["seed"] == 9


def test_failed_criterion_exits_1(tmp_path):
    from chaotic_gd.experiments import default_config
    cfg = default_config("bifurcation", "quick")
    cfg.tolerances["first_aperiodic"] = 3.1
    cfg.save(tmp_path / "b.ini")
    assert main(["bifurcation", "--config", str(tmp_path / "b.ini"),
                 "--out", str(tmp_path / "o")]) == 1


def _snapshot(root):
    return {p for p in Path(root).rglob("*")}


@pytest.mark.parametrize("argv", [
    ["orbit", "--n", "10"],
    ["ensemble", "--members", "100", "--steps", "10"],
    ["gibbs", "--macro", "quadratic"],
    ["escape", "--quick"],
])
def test_writes_only_inside_output_dir(argv, tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    out = tmp_path / "out"
    assert main(argv + ["--out", str(out)]) == 0
    assert _snapshot(work) == set()
    assert all(out in p.parents for p in _snapshot(tmp_path) if p != out and p != work)


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CHAOTIC_GD_OUT", str(tmp_path / "env_out"))
    assert main(["gibbs", "--macro", "quadratic"]) == 0
    assert (tmp_path / "env_out" / "gibbs.json").exists()


def test_suite_twice_gives_identical_verdicts(tmp_path):
    runs = []
    for name in ("a", "b"):
        code = main(["suite", "--quick", "--seed", "42", "--out", str(tmp_path / name)])
        # residual-orders carries the two known failing criteria
        assert code == 1
        runs.append({p.name: p.read_bytes()
                     for p in (tmp_path / name).glob("*.verdict.json")})
    assert len(runs[0]) == 8 and runs[0] == runs[1]


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "chaotic_gd", "nosuch"], capture_output=True,
                       text=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "chaotic_gd", "gibbs", "--macro", "quadratic",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
