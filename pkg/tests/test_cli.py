import math
import re
from pathlib import Path

import numpy as np
import pytest

from spacetime_tbm import cli
from spacetime_tbm.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _fields(line):
    return dict(re.findall(r'(\w+)=("(?:[^"\\]|\\.)*"|\S+)', line))


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_catalog_minkowski_expands():
    cfg = cli.config_from_dict({"spacetime": {"catalog": "minkowski2"}})
    assert cfg.st.n == 2 and cfg.st.sources == {"g": [["1", "0"], ["0", "-1"]], "psi": "0"}


def test_catalog_weighted_expands():
    cfg = cli.config_from_dict({"spacetime": {"catalog": "weighted_minkowski2", "weight_slope": 1.0, "N": 3}})
    assert cfg.st.sources["psi"] == "x0" and cfg.st.N == 3
    with pytest.raises(ConfigError) as exc:
        cli.config_from_dict({"spacetime": {"catalog": "weighted_minkowski2", "N": 2}})
    assert exc.value.key.startswith("spacetime")


def test_wrong_signature_rejected():
    with pytest.raises(ConfigError) as exc:
        cli.config_from_dict({"spacetime": {"n": 2, "g": [["1", "0"], ["0", "1"]]}})
    assert exc.value.key == "spacetime.g"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        cli.config_from_dict({"spacetime": {"catalog": "minkowski2", "colour": 1}})
    assert "colour" in str(exc.value)
    with pytest.raises(ConfigError):
        cli.config_from_dict({"spacetime": {"catalog": "minkowski2"}, "extra": {}})


def test_task_preconditions():
    sp = {"catalog": "minkowski2"}
    with pytest.raises(ConfigError) as exc:
        cli.config_from_dict({"spacetime": sp, "task": {"command": "check-ode", "v0": [2.0, 0.0]}})
    assert exc.value.key == "task.v0"
    with pytest.raises(ConfigError):
        cli.config_from_dict({"spacetime": sp, "task": {"command": "nope"}})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        cli.load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        cli.load_config(_write(tmp_path, "[spacetime\n"))


def test_curvature_zero_record(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\ncatalog = "minkowski2"\n[task]\ncommand = "curvature"\nx0 = [0.0, 0.0]\n')
    assert cli.main(["--config", str(p)]) == 0
    f = _fields(capsys.readouterr().out.strip())
    assert f["record"] == "curvature" and f["ricci"] == "[[0.0,0.0],[0.0,0.0]]"


def test_distortion_table_zero_curvature(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\ncatalog = "minkowski2"\nN = 3\n'
                         '[task]\ncommand = "distortion-table"\nK = 0.0\ntheta = 1.3\n'
                         'ts = [0.0, 0.1, 0.37, 0.5, 1.0]\n')
    assert cli.main(["--config", str(p)]) == 0
    rows = [_fields(l) for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 5
    for r in rows:
        assert float(r["tau"]) == pytest.approx(float(r["t"]), abs=1e-15)


def test_counterexample_command(capsys):
    status = cli.main(["--config", str(CONFIGS / "counterexample_weighted.toml")])
    out = capsys.readouterr().out.splitlines()
    assert status == 0
    last = _fields(out[-1])
    assert last["record"] == "counterexample" and last["status"] == "violation"
    assert float(last["certified_margin"]) < 0


def test_counterexample_none_exit_status(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\ncatalog = "minkowski2"\n[task]\ncommand = "counterexample"\nK = 0.0\n')
    assert cli.main(["--config", str(p)]) == 1
    assert "status=none" in capsys.readouterr().out


def test_separation_minus_infinity(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\ncatalog = "minkowski2"\n'
                         '[task]\ncommand = "separation"\nx0 = [0.0, 0.0]\ny = [0.0, 1.0]\n')
    assert cli.main(["--config", str(p)]) == 0
    f = _fields(capsys.readouterr().out.strip())
    assert f["ell"] == "-inf" and f["ell_plus"] == "0.0"


@pytest.mark.parametrize("name", ["geodesic_minkowski", "lw_distance", "check_ode_weighted",
                                  "distortion_table", "curvature_warped"])
def test_records_are_deterministic(tmp_path, name):
    outs = []
    for k in range(2):
        out = tmp_path / f"{name}{k}.txt"
        assert cli.main(["--config", str(CONFIGS / f"{name}.toml"), "--out", str(out), "--seed", "3"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and outs[0]


def test_module_error_becomes_one_record(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\ncatalog = "warped2"\n'
                         '[task]\ncommand = "geodesic"\nx0 = [1.9, 0.0]\nv0 = [3.0, 0.0]\n')
    assert cli.main(["--config", str(p)]) == cli.EXIT_ERROR
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 and _fields(out[0])["record"] == "error"
    assert _fields(out[0])["type"] == "LeftChart"


def test_config_error_record(tmp_path, capsys):
    p = _write(tmp_path, '[spacetime]\nn = 2\ng = [["1", "0"], ["0", "-1"]]\npsi = "x0 +"\n')
    assert cli.main(["curvature", "--config", str(p)]) == cli.EXIT_ERROR
    f = _fields(capsys.readouterr().out.strip())
    assert f["record"] == "error" and f["key"] == "spacetime.psi"


def test_record_formatting():
    line = cli.format_record("x", [("a", 1.5), ("b", None), ("c", True), ("d", "two words"),
                                   ("e", np.array([1.0, 2.0])), ("f", np.float64(0.1))])
    assert line == 'record=x a=1.5 b=-inf c=true d="two words" e=[1.0,2.0] f=0.1'


def test_out_file_gets_records_and_stdout_summary(tmp_path, capsys):
    out = tmp_path / "rec.txt"
    assert cli.main(["--config", str(CONFIGS / "lw_distance.toml"), "--out", str(out)]) == 0
    assert out.read_text().startswith("record=lw_distance")
    assert "l_q" in capsys.readouterr().out
