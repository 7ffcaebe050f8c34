import json
import subprocess
import sys

import pytest

from cscklab.cli import main
from cscklab.config import ConfigError, config_hash, parse_config
from cscklab.report import ReportError, emit_report

SMALL = """\
[geometry]
backend = mesh
fibre = origami:3
base = origami:3
twist = 0.05

[ladder]
order = 2

[sweep]
r = 32, 64, 128, 256

[solve]
r = 128
tol = 1e-8

[output]
dir = {out}
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL.format(out=tmp_path / "run"))
    return path


def test_unknown_key_names_the_line(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[geometry]\nfibre = origami:3\nbase = origami:3\n\n[solve]\nrr = 3\n")
    assert main(["solve", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert f"{path}:6" in err and "unknown key 'rr'" in err


@pytest.mark.parametrize("text,needle", [
    ("[geometry]\nfibre = origami:3\n", "missing key 'base'"),
    ("[geometry]\nfibre = origami:2\nbase = origami:3\n", ":2: origami needs at least three cells"),
    ("[geometry]\nfibre = torus:8\nbase = origami:3\n", "torus backend needs"),
    ("[geometry]\nfibre = origami:3\nbase = origami:3\n[sweep]\nr = 64, 32\n", ":5: r-list"),
    ("[geometry]\nfibre = origami:3\nbase = origami:3\n[ladder]\norder = 9\n", ":5: ladder order"),
    ("[geometry]\nfibre = origami:3\nbase = origami:3\nperturbation = wiggle\n", ":4: perturbation"),
    ("[geom]\nfibre = origami:3\n", "unknown section [geom]"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "c.ini")
    assert needle in str(exc.value)


def test_config_hash_ignores_comments_and_spacing():
    a = "[geometry]\nfibre = origami:3 ; comment\nbase=origami:3\n"
    b = "# header\n[geometry]\n\nfibre=origami:3\nbase = origami:3   # other\n"
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(a.replace("base=origami:3", "base=origami:4"))


def test_missing_mesh_file_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "off.ini"
    path.write_text("[geometry]\nfibre = off:nowhere.off\nbase = origami:3\n")
    assert main(["uniformize", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "nowhere.off" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["ladder", "--config", str(tmp_path / "absent.ini")]) == 2


def test_order_override_is_range_checked(small):
    assert main(["ladder", "--config", str(small), "--order", "7"]) == 2


def test_ladder_output_is_deterministic(small, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["ladder", "--config", str(small), "--out", str(a)]) == 0
    assert main(["ladder", "--config", str(small), "--out", str(b)]) == 0
    for name in ("ladder_residuals.csv", "ladder_fit.json", "ladder.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["status"] == "ok" and man["config_hash"] == config_hash(small.read_text())
    assert "ladder_residuals.csv" in " ".join(man["outputs"])


def test_uniformize_writes_meshes(small, tmp_path):
    out = tmp_path / "u"
    assert main(["uniformize", "--config", str(small), "--out", str(out)]) == 0
    for name in ("fibre.off", "base.off", "uniformization.json", "uniformize.csv"):
        assert (out / name).is_file()
    assert (out / "fibre.off").read_text().startswith("OFF")


def test_validate_exit_code(small, tmp_path):
    out = tmp_path / "v"
    assert main(["validate", "--config", str(small), "--out", str(out)]) == 0
    rows = (out / "validate.csv").read_text().splitlines()
    assert rows[0] == "config_hash,module,check,value,tolerance,passed"
    assert all(line.endswith("true") for line in rows[1:])


def test_solve_and_report(small, tmp_path, capsys):
    d2, d1 = tmp_path / "o2", tmp_path / "o1"
    assert main(["solve", "--config", str(small), "--out", str(d2)]) == 0
    assert main(["solve", "--config", str(small), "--out", str(d1), "--order", "1"]) == 0
    assert json.loads((d1 / "manifest.json").read_text())["overrides"] == {"order": 1}
    text = emit_report([d2, d1])
    rows = [l.split() for l in text.splitlines() if not l.startswith("#")]
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(r[1] == "128" for r in rows)
    # spectral columns were not measured
    assert rows[0][5] == "NaN"
    assert emit_report([d2, d1]) == text
    target = tmp_path / "table.dat"
    assert main(["report", str(d2), str(d1), "-o", str(target)]) == 0
    assert target.read_text() == text


def test_report_rejects_bad_input(small, tmp_path):
    with pytest.raises(ReportError):
        emit_report([])
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ReportError, match="manifest"):
        emit_report([empty])
    a = tmp_path / "a"
    assert main(["solve", "--config", str(small), "--out", str(a)]) == 0
    other = tmp_path / "other.ini"
    other.write_text(small.read_text().replace("twist = 0.05", "twist = 0.04"))
    b = tmp_path / "b"
    assert main(["solve", "--config", str(other), "--out", str(b)]) == 0
    with pytest.raises(ReportError, match="different configurations"):
        emit_report([a, b])
    assert main(["report", str(a), str(b)]) == 2


def test_require_certified(small, tmp_path):
    # the bare product metric (order 0) is too far from cscK to be certified
    out = tmp_path / "c"
    code = main(["solve", "--config", str(small), "--out", str(out), "--order", "0",
                 "--require-certified"])
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["certified"] is False
    assert code == 4
    assert json.loads((out / "manifest.json").read_text())["status"] != "ok"


def test_console_entry_point(small, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cscklab.cli", "validate", "--config", str(small),
                           "--out", str(tmp_path / "e")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
