import json
from pathlib import Path

import pytest

from degenlab import ConfigError
from degenlab.cli import main
from degenlab.config import parse_config
from degenlab.runner import SUITES, bundled_config, run_config

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "degenlab" / "scenarios"

NONUNIQ = """
[scenario]
name = "tiny"
steps = ["nonuniqueness"]

[nonuniqueness]
a = 0.5
slopes = [1.0, 2.0]
eps = 0.1
n = 257
"""

WRONG_BAND = """
[scenario]
name = "wrong-band"
steps = ["exponent"]

[grid]
d = 1
bounds = [-1.0, 1.0]
n = 1025

[exponent]
u = "abs(t)**1.5"
probes = [[0.0]]
k_range = [1, 6]
expect = [[0.9, 0.95]]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_syntax_error_reports_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config("[scenario]\nname = \nsteps = []\n", "bad.toml")
    assert "line 2" in str(err.value) and "bad.toml" in str(err.value)


def test_ellipticity_key_named():
    text = NONUNIQ + "\n[operator]\nkind = \"pucci-plus\"\nlambda = 2.0\nLambda = 1.0\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == "operator.lambda"
    assert "operator.lambda" in str(err.value)


@pytest.mark.parametrize("extra,key", [
    ("\n[grid]\nd = 1\nbounds = [-1.0, 1.0]\nn = 11\nsize = 3\n", "grid.size"),
    ("\n[plots]\nkind = 1\n", "plots"),
])
def test_unknown_keys_and_sections(extra, key):
    with pytest.raises(ConfigError) as err:
        parse_config(NONUNIQ + extra)
    assert err.value.key == key


@pytest.mark.parametrize("text,key", [
    ("[scenario]\nname = \"x\"\nsteps = [\"fly\"]\n", "scenario.steps"),
    ("[scenario]\nsteps = [\"nonuniqueness\"]\n", "scenario.name"),
    ("[scenario]\nname = \"x\"\nsteps = [\"exponent\"]\n[grid]\nd = 1\nbounds = [-1.0, 1.0]\n"
     "n = 65\n[exponent]\nprobes = [[0.0]]\n", "exponent.u"),
])
def test_structural_errors(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key


@pytest.mark.parametrize("name", sorted(p.stem for p in SCENARIOS.glob("*.toml")))
def test_bundled_configs_validate(name):
    cfg = bundled_config(name)
    assert cfg.name == name and cfg.steps


def test_every_suite_member_is_bundled():
    bundled = {p.stem for p in SCENARIOS.glob("*.toml")}
    for members in SUITES.values():
        assert set(members) <= bundled


def test_hash_tracks_content():
    a, b = parse_config(NONUNIQ), parse_config(NONUNIQ + "\n")
    assert a.config_hash == b.config_hash
    assert parse_config(NONUNIQ.replace("eps = 0.1", "eps = 0.2")).config_hash != a.config_hash
    assert a.with_seed(5).config_hash != a.config_hash


def test_run_writes_manifest_listing_every_file(tmp_path):
    cfg = parse_config(NONUNIQ)
    m = run_config(cfg, tmp_path / "out")
    assert m.passed
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert sorted(man["files"]) == files
    assert man["config_hash"] == cfg.config_hash
    assert all(s["status"] == "pass" and s["seconds"] >= 0 for s in man["steps"])


def test_failed_assertion_exits_one(tmp_path, capsys):
    # a correct estimate checked against a deliberately wrong expectation
    cfg = write(tmp_path, WRONG_BAND)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["failed_step"] == "exponent"
    assert "FAIL" in capsys.readouterr().out


def test_cli_run_sharp_exit_zero(tmp_path, capsys):
    code = main(["run", str(SCENARIOS / "sharp-1d-a050.toml"), "--out", str(tmp_path)])
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [s["name"] for s in man["steps"]] == ["solve", "exponent"]
    assert "PASS" in capsys.readouterr().out


def test_cli_quiet(tmp_path, capsys):
    cfg = write(tmp_path, NONUNIQ)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def test_cli_seed_changes_hash(tmp_path):
    cfg = write(tmp_path, NONUNIQ)
    main(["run", str(cfg), "--out", str(tmp_path / "a"), "--quiet"])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--quiet", "--seed", "7"])
    main(["run", str(cfg), "--out", str(tmp_path / "c"), "--quiet"])
    h = {k: json.loads((tmp_path / k / "manifest.json").read_text())["config_hash"]
         for k in "abc"}
    assert h["a"] == h["c"] != h["b"]


def test_seed_shifts_envelope_corpus(tmp_path):
    assert bundled_config("envelope-audit").seed == 0
    assert main(["suite", "envelope-audit", "--seed", "100", "--out", str(tmp_path),
                 "--quiet"]) == 0
    rows = (tmp_path / "envelope-audit" / "envelope_audit.csv").read_text().splitlines()[1:]
    assert sorted({int(r.split(",")[0]) for r in rows}) == list(range(100, 120))


def test_cli_unknown_suite(capsys):
    assert main(["suite", "nope"]) == 2
    assert "unknown suite" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["run"], ["frobnicate"], ["run", "x.toml", "--seed", "z"]])
def test_cli_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_cli_missing_and_invalid_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    bad = write(tmp_path, "[scenario]\nname = \n")
    assert main(["run", str(bad)]) == 2
    assert "line" in capsys.readouterr().err


def test_cli_suite_outputs_per_scenario(tmp_path):
    assert main(["suite", "nonuniqueness", "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "nonuniqueness" / "manifest.json").exists()


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, NONUNIQ)
    for k in "ab":
        main(["run", str(cfg), "--out", str(tmp_path / k), "--quiet"])
    for p in (tmp_path / "a").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
