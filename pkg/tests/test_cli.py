from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from ptace.cli import emit_csv, main, parse_config
from ptace.errors import ValidationError
from ptace.propagate import TimeSeries

CENTRAL = """\
[scenario]
kind = central_spin   # small instance
n_spins = 2
n_steps = 20
dt = 0.01
eps = 1e-10
seed = 7
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# -- parsing ---------------------------------------------------------------------


def test_parse_applies_defaults_and_types():
    params = parse_config(CENTRAL)
    assert params["kind"] == "central_spin"
    assert params["n_spins"] == 2 and isinstance(params["n_spins"], int)
    assert params["eps"] == 1e-10
    assert params["splitting"] == "auto"
    assert params["unreliable_window"] == 5


@pytest.mark.parametrize(
    ("text", "key"),
    [
        (CENTRAL + "bogus = 1\n", "bogus"),
        (CENTRAL.replace("dt = 0.01", "dt = -0.01"), "dt"),
        (CENTRAL.replace("eps = 1e-10", "eps = 1.5"), "eps"),
        (CENTRAL.replace("n_spins = 2", "n_spins = two"), "n_spins"),
        (CENTRAL.replace("dt = 0.01\n", ""), "dt"),
        ("[scenario]\nn_steps = 3\n", "kind"),
    ],
)
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ValidationError, match=key):
        parse_config(text)


def test_parse_rejects_structure_problems():
    with pytest.raises(ValidationError):
        parse_config("kind = central_spin\n")
    with pytest.raises(ValidationError):
        parse_config(CENTRAL + "[extra]\nx = 1\n")
    with pytest.raises(ValidationError):
        parse_config(CENTRAL + "dt = 0.02\n")
    with pytest.raises(ValidationError):
        parse_config(CENTRAL.replace("central_spin", "quantum_dot"))


def test_parse_lists_and_choices():
    text = """\
[scenario]
kind = photon_lorentzian
n_modes = 4
n_steps = 4
dt = 0.1
eps = 1e-6
pulse_areas = 3.14, 3.14
pulse_centers = 1.0 2.0
pulse_fwhm = 0.2, 0.2
observables = n_e
"""
    params = parse_config(text)
    assert params["pulse_areas"] == (3.14, 3.14)
    assert params["pulse_centers"] == (1.0, 2.0)
    assert params["observables"] == ("n_e",)
    with pytest.raises(ValidationError, match="pulse"):
        parse_config(text.replace("pulse_fwhm = 0.2, 0.2", "pulse_fwhm = 0.2"))
    with pytest.raises(ValidationError, match="splitting"):
        parse_config(text + "splitting = sideways\n")


# -- CSV -----------------------------------------------------------------------------


def _series():
    times = np.array([0.0, 0.1, 0.2])
    rho = np.broadcast_to(np.eye(2) / 2, (3, 2, 2)).copy()
    s = TimeSeries(times, rho, reliable=np.array([True, True, False]))
    s.add_channel("b", [1 / 3, np.pi + 1e-17j, -2.5e-300])
    s.add_channel("a", [1j / 7, np.exp(1), 0.0])
    return s


def test_csv_header_order_and_round_trip(tmp_path):
    s = _series()
    path = tmp_path / "out.csv"
    emit_csv(s, path, ["a", "b"])
    header, rows = _read_csv(path)
    assert header == ["t", "a.re", "a.im", "b.re", "b.im", "reliable"]
    assert [r[-1] for r in rows] == ["1", "1", "0"]
    for i, row in enumerate(rows):
        assert float(row[0]) == s.times[i]
        assert complex(float(row[1]), float(row[2])) == s.channels["a"][i]
        assert complex(float(row[3]), float(row[4])) == s.channels["b"][i]


def test_csv_empty_channel_list(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv(_series(), path, [])
    header, rows = _read_csv(path)
    assert header == ["t", "reliable"]
    assert len(rows) == 3


def test_csv_skips_unreported_points(tmp_path):
    s = _series()
    s.reported = np.array([True, False, True])
    path = tmp_path / "out.csv"
    emit_csv(s, path)
    _, rows = _read_csv(path)
    assert [float(r[0]) for r in rows] == [0.0, 0.2]


# -- end to end -------------------------------------------------------------------------


def test_run_writes_csv_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, CENTRAL)
    out = tmp_path / "cs.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((tmp_path / "cs.report.json").read_text())
    for key in ("peak_bond_dims", "splitting", "eps", "residuals", "wall_time_build_s", "max_bond_dim"):
        assert key in report
    assert report["residuals"]["total_sx_conservation"] < 1e-6
    check = report["brute_force_check"]
    assert check["max_rho_deviation"] < 1e-9 and check["max_sx_env_deviation"] < 1e-7
    header, rows = _read_csv(out)
    assert header[0] == "t" and header[-1] == "reliable"
    assert len(rows) == 21
    assert "central_spin: max bond" in capsys.readouterr().out


def test_run_is_deterministic(tmp_path):
    cfg = _write(tmp_path, CENTRAL)
    for name in ("a.csv", "b.csv"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_observables_key_selects_channel_order(tmp_path):
    cfg = _write(tmp_path, CENTRAL + "observables = S_x, total_sx\n")
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    header, _ = _read_csv(out)
    assert header == ["t", "S_x.re", "S_x.im", "total_sx.re", "total_sx.im", "reliable"]


def test_save_and_load_pt(tmp_path):
    cfg = _write(tmp_path, CENTRAL)
    pt = tmp_path / "pt.bin"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a.csv"), "--save-pt", str(pt)]) == 0
    assert pt.is_file()
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b.csv"), "--load-pt", str(pt)]) == 0
    # same tensors, but buffer alignment may change the last bit of BLAS sums
    a = np.loadtxt(tmp_path / "a.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert np.allclose(a, b, rtol=0, atol=1e-14)
    report = json.loads((tmp_path / "b.report.json").read_text())
    assert report["loaded_pt"] is True


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, CENTRAL.replace("dt = 0.01", "dt = -0.01"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert "dt" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    cfg = _write(tmp_path, CENTRAL + "colour = blue\n", "unknown.cfg")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_pt_file_exits_2(tmp_path):
    cfg = _write(tmp_path, CENTRAL)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv"), "--load-pt", str(tmp_path / "no.bin")]) == 2


def test_mismatched_pt_file_exits_2(tmp_path):
    cfg = _write(tmp_path, CENTRAL)
    pt = tmp_path / "pt.bin"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a.csv"), "--save-pt", str(pt)]) == 0
    other = _write(tmp_path, CENTRAL.replace("n_steps = 20", "n_steps = 30"), "other.cfg")
    assert main(["run", "--config", str(other), "--out", str(tmp_path / "b.csv"), "--load-pt", str(pt)]) == 2


def test_thread_variable_validated(tmp_path, monkeypatch):
    cfg = _write(tmp_path, CENTRAL)
    monkeypatch.setenv("PTMPO_THREADS", "many")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    monkeypatch.setenv("PTMPO_THREADS", "1")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 0
