import json

import pytest

from chaotic_gd.errors import ConfigError
from chaotic_gd.experiments import (CRITERIA, EXPERIMENT_IDS, Criterion, ExperimentConfig,
                                    Verdict, default_config, run, write_verdict)


def test_every_experiment_has_schema_and_criteria():
    assert set(EXPERIMENT_IDS) == set(CRITERIA)
    for i in EXPERIMENT_IDS:
        for profile in ("full", "quick"):
            cfg = default_config(i, profile)
            assert cfg["seed"] == 42 and cfg["workers"] == 1


@pytest.mark.parametrize("exp", EXPERIMENT_IDS)
def test_config_text_round_trip(exp, tmp_path):
    cfg = default_config(exp, "quick", seed=7)
    cfg.tolerances[CRITERIA[exp][0].name] = 0.123
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back.params == cfg.params and back.tolerances == cfg.tolerances
    cfg.save(tmp_path / "c.ini")
    assert ExperimentConfig.load(tmp_path / "c.ini").params == cfg.params


def test_config_rejects_unknown_keys_and_criteria():
    with pytest.raises(ConfigError):
        default_config("bifurcation", bogus=1)
    with pytest.raises(ConfigError):
        ExperimentConfig("bifurcation", tolerances={"nope": 1.0})
    with pytest.raises(ConfigError):
        ExperimentConfig("no-such-experiment")
    with pytest.raises(ConfigError):
        ExperimentConfig("bifurcation", profile="medium")
    with pytest.raises(ConfigError):
        default_config("bifurcation", seed=-1)


@pytest.mark.parametrize("text", [
    "not an ini",
    "[other]\nversion = 1\nexperiment = bifurcation\n",
    "[chaotic-gd]\nversion = 2\nexperiment = bifurcation\n",
    "[chaotic-gd]\nversion = 1\n",
    "[chaotic-gd]\nversion = 1\nexperiment = bifurcation\nseed = abc\n",
    "[chaotic-gd]\nversion = 1\nexperiment = bifurcation\ntol.first_aperiodic = x\n",
])
def test_malformed_config_text(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.ini")


def test_with_overrides_keeps_other_values():
    cfg = default_config("bifurcation", "quick")
    new = cfg.with_overrides(seed=5, epsilon=None)
    assert new["seed"] == 5 and new["epsilon"] == cfg["epsilon"]


@pytest.mark.parametrize("op,thr,target,value,ok", [
    ("<=", 1.0, 0.0, 1.0, True), ("<=", 1.0, 0.0, 1.1, False),
    (">=", 0.9, 0.0, 0.89, False), ("within", 0.1, 3.0, 2.95, True),
    ("within", 0.1, 3.0, 2.8, False), ("between", 4.0, 3.0, 3.5, True),
    ("between", 4.0, 3.0, 4.1, False), ("true", 0.0, 0.0, True, True),
    ("true", 0.0, 0.0, 1, False), ("<=", 1.0, 0.0, float("nan"), False),
])
def test_criterion_ops(op, thr, target, value, ok):
    assert Criterion("c", "m", op, thr, target).check({"m": value}) is ok


def test_criterion_missing_metric_fails():
    assert not Criterion("c", "m", "<=", 1.0).check({})


def test_verdict_flags_follow_metrics():
    v = Verdict("bifurcation", {"first_aperiodic_ratio": 3.5,
                                "period2_window_contains_2.5": True}, 42, {})
    assert v.passed
    v.metrics["first_aperiodic_ratio"] = 5.0
    assert not v.passed and not v.flags["first_aperiodic"]
    v.tolerances["first_aperiodic"] = 6.0
    assert v.passed
    assert len(v.lines()) == 2 and v.lines()[0].startswith("PASS bifurcation/first_aperiodic")


def test_verdict_errors_fail_and_flag_divergence():
    v = Verdict("bifurcation", {}, 42, {}, errors=["divergence: boom"])
    assert not v.passed and v.diverged


def test_run_is_deterministic_and_timing_separate(tmp_path):
    cfg = default_config("escape-dichotomy", "quick")
    a, b = run(cfg, tmp_path / "a"), run(cfg.with_overrides(workers=3), tmp_path / "b")
    assert a.to_json() == b.to_json()
    assert "workers" not in a.parameters
    path = write_verdict(a, tmp_path)
    data = json.loads(open(path).read())
    assert data["experiment"] == "escape-dichotomy" and "runtime" not in json.dumps(data)
    assert (tmp_path / "escape-dichotomy.timing.json").exists()


def test_bifurcation_quick_passes(tmp_path):
    v = run(default_config("bifurcation", "quick"), tmp_path)
    assert v.passed, v.lines()
    assert any(p.suffix == ".csv" for p in tmp_path.iterdir())
