import re

import pytest

from flowmeter import cli, harness
from flowmeter.errors import ConfigError
from flowmeter.harness import CheckResult, ExperimentConfig, csv_body, load_config, parse_config_text

NUMBER = re.compile(r"^-?\d\.\d{9}e[+-]\d{2,3}$|^nan$|^-?inf$")
SMALL_DETECT = ["--set", "grid_points=200", "--set", "times=0.02", "--trials", "2000"]


def test_defaults_are_reference_values():
    cfg = ExperimentConfig()
    p = cfg.params
    assert (p.diffusion_coeff, p.burst_size, p.tx_rx_distance, p.receiver_radius) == (1e-8, 1e4, 1e-4, 1.5e-5)
    assert p.release_time == 0.0


def test_parse_config_text():
    vals = parse_config_text("# comment\nD = 2e-8\nvelocities = 0, 5e-4  # trailing\nL=3\nobjectives=ci,pe\n")
    assert vals == {"D": 2e-8, "velocities": (0.0, 5e-4), "L": 3, "objectives": ("ci", "pe")}
    with pytest.raises(ConfigError):
        parse_config_text("not_a_key = 1")
    with pytest.raises(ConfigError):
        parse_config_text("D 1e-8")
    with pytest.raises(ConfigError):
        parse_config_text("L = three")


def test_file_then_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("seed = 5\nv_max = 8e-4\n")
    cfg = load_config(f, {"seed": "9"})
    assert cfg.seed == 9 and cfg.v_max == 8e-4
    with pytest.raises(ConfigError):
        load_config(f, {"velocities": "1e-4,1e-4"})


@pytest.mark.parametrize(
    "argv",
    [
        ["detect", "--set", "bogus=1"],
        ["detect", "--set", "D=-1"],
        ["detect", "--set", "t_lo=2", "--set", "t_hi=1"],
        ["estimate", "--set", "estimators=map,median"],
        ["detect", "--config", "/nonexistent/file.cfg"],
        ["detect", "--set", "missing_equals"],
    ],
)
def test_config_errors_exit_1(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_detect_csv_format(tmp_path):
    assert cli.main(["detect", "--out", str(tmp_path)] + SMALL_DETECT) == cli.EXIT_OK
    text = (tmp_path / "detect_given_schedule.csv").read_text(encoding="utf-8")
    lines = text.splitlines()
    meta = [l for l in lines if l.startswith("#")]
    assert lines[0] == "# table=detect_given_schedule"
    assert any(l == "# seed=0" for l in meta)
    assert any(re.fullmatch(r"# input_hash=[0-9a-f]{40}", l) for l in meta)
    assert any(l == "# config.grid_points=200" for l in meta)
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "L,pe_exact,pe_gauss,pe_ci,pe_mc,pe_mc_se"
    for row in body[1:]:
        assert all(NUMBER.match(x) for x in row.split(","))
    optima = csv_body((tmp_path / "detect_optima.csv").read_text())
    assert len(optima.splitlines()) >= 2


def test_rerun_is_byte_identical(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["detect", "--out", str(a), "--seed", "3"] + SMALL_DETECT) == 0
    assert cli.main(["detect", "--out", str(b), "--seed", "3"] + SMALL_DETECT) == 0
    assert cli.main(["detect", "--out", str(c), "--seed", "3", "--threads", "2"] + SMALL_DETECT) == 0
    for name in ("detect_given_schedule.csv", "detect_optima.csv"):
        ta = (a / name).read_text()
        assert csv_body(ta) == csv_body((b / name).read_text())
        assert csv_body(ta) == csv_body((c / name).read_text())
        # metadata differs only in the echoed output directory
        strip = lambda text: [l for l in text.splitlines() if not l.startswith("# config.out=")]
        assert strip(ta) == strip((b / name).read_text())


def test_seed_changes_monte_carlo_column(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["detect", "--out", str(a), "--seed", "1"] + SMALL_DETECT)
    cli.main(["detect", "--out", str(b), "--seed", "2"] + SMALL_DETECT)
    ra = csv_body((a / "detect_given_schedule.csv").read_text()).splitlines()[1].split(",")
    rb = csv_body((b / "detect_given_schedule.csv").read_text()).splitlines()[1].split(",")
    assert ra[1:4] == rb[1:4]  # analytic columns do not depend on the seed
    assert ra[4] != rb[4]


def test_content_hash_ignores_run_control():
    a = ExperimentConfig(out="x", threads=1)
    b = ExperimentConfig(out="y", threads=4)
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != ExperimentConfig(seed=1).content_hash()


def test_validate_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(harness, "run_validate", lambda seed, quick: [CheckResult("a", True, "ok")])
    assert cli.main(["validate", "--out", str(tmp_path)]) == cli.EXIT_OK
    monkeypatch.setattr(
        harness, "run_validate", lambda seed, quick: [CheckResult("a", True, "ok"), CheckResult("b", False, "bad")]
    )
    assert cli.main(["validate", "--out", str(tmp_path)]) == cli.EXIT_VALIDATION
    out = capsys.readouterr().out
    assert "PASS a: ok" in out and "FAIL b: bad" in out
    assert (tmp_path / "validate.csv").exists()


@pytest.mark.slow
def test_quick_validate_passes(tmp_path, capsys):
    assert cli.main(["validate", "--quick", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert "FAIL" not in capsys.readouterr().out
