import json
import math

import pytest

from bordered_lcft.cli import ConfigError, main, parse_config, run_experiment

MINIMAL = """
[experiment]
command = correlate
[liouville]
gamma = 1.0
[insertions]
bulk = 0.5 0.0 1.0; 0.5 0.5 1.0
[mc]
n_samples = 256
"""


def _strip_timing(text):
    d = json.loads(text)
    d.pop("wall_time")
    return d


def test_round_trip_hash():
    cfg = parse_config(MINIMAL)
    again = parse_config(cfg.to_text())
    assert again.config_hash == cfg.config_hash
    assert again.values == cfg.values


def test_hash_ignores_listing_order_but_not_values():
    a = parse_config(MINIMAL)
    b = parse_config(MINIMAL.replace("0.5 0.0 1.0; 0.5 0.5 1.0", "0.5 0.5 1.0; 0.5 0.0 1.0"))
    c = parse_config(MINIMAL, {"mc.seed": "4"})
    assert a.config_hash == b.config_hash != c.config_hash


@pytest.mark.parametrize("override,match", [
    ({"liouville.gamma": "2.5"}, r"\(0, 2\]"),
    ({"liouville.mu": "0", "liouville.mu_boundary": "0"}, "renormalizable"),
    ({"mc.n_samples": "1"}, "n_samples"),
    ({"mc.bogus": "1"}, "unknown key"),
    ({"insertions.bulk": "0.5 0.5"}, "three numbers"),
    ({"insertions.bulk": "1.5 0.5 1.0"}, "inside"),
    ({"experiment.command": "launch"}, "command"),
])
def test_parse_errors(override, match):
    with pytest.raises(ValueError, match=match):
        parse_config(MINIMAL, override)


def test_missing_gamma():
    with pytest.raises(ConfigError, match="liouville.gamma"):
        parse_config("[experiment]\ncommand = correlate\n")
    # commands without Liouville parameters do not need it
    assert parse_config("[experiment]\ncommand = weyl-check\n").params is None


def test_weyl_check_default(tmp_path, capsys):
    assert main(["weyl-check", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "weyl-check.json").read_text())
    (m,) = rep["metrics"]
    assert m["name"] == "weyl_slope" and m["pass"] is True
    assert m["target"] == pytest.approx(4 * math.pi)
    assert rep["schema_version"] == 1 and "wall_time" in rep
    assert json.loads(capsys.readouterr().out) == rep


def test_check_seiberg_inadmissible_exits_2(capsys):
    code = main(["check-seiberg", "--set", "liouville.gamma=1",
                 "--set", "insertions.bulk=0.5 0.5 3.0"])
    assert code == 2
    err = capsys.readouterr().err
    assert "bound2" in err


def test_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\ncommand = correlate\n[liouville]\ngamma = 3\n")
    assert main(["--config", str(bad)]) == 1
    assert "(0, 2]" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.ini")]) == 1


def test_reports_reproducible(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(MINIMAL)
    outs = []
    for run in ("a", "b"):
        assert main(["--config", str(path), "--seed", "3", "--workers", "2",
                     "--out", str(tmp_path / run)]) == 0
        outs.append((tmp_path / run / "correlate.json").read_text())
    assert _strip_timing(outs[0]) == _strip_timing(outs[1])
    assert outs[0].split('"wall_time"')[0] == outs[1].split('"wall_time"')[0]
    rep = json.loads(outs[0])
    assert rep["seed"] == 3 and rep["workers"] == 2


def test_fusion_scan_writes_csv(tmp_path):
    cfg = parse_config("[experiment]\ncommand = fusion-scan\n[liouville]\ngamma = 1\n"
                       "[mc]\nn_samples = 1000\n")
    rec = run_experiment(cfg, tmp_path)
    assert rec.artifacts == ["fusion_scan.csv"]
    assert (tmp_path / "fusion_scan.csv").read_text().startswith("distance,statistic,stderr")
    assert rec.exit_code == 0


def test_fusion_needs_zero_boundary_mu():
    with pytest.raises(ConfigError, match="mu_boundary"):
        parse_config("[experiment]\ncommand = fusion-scan\n[liouville]\ngamma = 1\n"
                     "mu_boundary = 1\n")


def test_divergent_correlate_report(tmp_path):
    cfg = parse_config(MINIMAL, {"insertions.bulk": "0.5 0.5 3.0"})
    rec = run_experiment(cfg)
    assert rec.diverged and rec.exit_code == 2
    assert json.loads(rec.to_json())["metrics"][0]["value"] == "nan"
