import csv
import json
import xml.etree.ElementTree as ET

import pytest

from diskbot.cli import main


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_magnet_force_pole_face_view(capsys, out_dir):
    assert main(["magnet", "force", "--eq1"]) == 0
    text = capsys.readouterr().out
    assert "21.6354 N" in text and "7.24 N" in text
    assert "note:" in text


def test_magnet_force_at_gap(capsys, out_dir):
    assert main(["magnet", "force", "--gap-mm", "0"]) == 0
    text = capsys.readouterr().out
    assert "coupling force at shell gap 0 mm: 7.24 N" in text


def test_magnet_flux_two_samples(out_dir):
    assert main(["magnet", "flux", "--preset", "H", "--samples", "2"]) == 0
    data = rows(out_dir / "flux_H.csv")
    assert data[0] == ["distance_m", "flux_T"] and len(data) == 3
    ET.parse(out_dir / "flux_H.svg")


def test_magnet_presets(capsys):
    assert main(["magnet", "presets"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


@pytest.mark.parametrize("argv", [
    ["magnet", "flux", "--preset", "Q"],
    ["magnet", "flux", "--from-mm", "20", "--to-mm", "5"],
    ["magnet", "force", "--gap-mm", "-1"],
])
def test_magnet_errors_exit_2(argv, out_dir, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_gains_check_deployed_gains(capsys):
    assert main(["gains", "check", "--kp", "2.5", "--kd", "0.5"]) == 0
    text = capsys.readouterr().out
    assert "kp*l*m - (M+m)*m*g*l > 0 : FALSE" in text
    assert "2.6095" in text
    assert "full Hurwitz: unstable" in text
    assert "closed-loop poles" in text


def test_gains_check_without_gravity(capsys):
    assert main(["gains", "check", "--kp", "3", "--kd", "0.5", "--g", "0", "--b", "0.01"]) == 0
    text = capsys.readouterr().out
    assert "full Hurwitz: marginal" in text
    assert "after cancelling the s=0 pole-zero pair: stable" in text


def test_gains_bad_number_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["gains", "check", "--kp", "abc"])
    assert err.value.code == 2


def test_gains_sweep_grid(out_dir):
    assert main(["gains", "sweep", "--n", "2"]) == 0
    data = rows(out_dir / "gain_region.csv")
    assert data[0] == ["kp", "kd", "stable"] and len(data) == 5
    ET.parse(out_dir / "gain_region.svg")


def test_sim_zero_duration_is_config_error(out_dir):
    assert main(["sim", "run", "--scenario", "pendulum", "--duration", "0"]) == 2


def test_sim_unknown_scenario(out_dir):
    assert main(["sim", "run", "--scenario", "dance"]) == 2


def test_sim_balance_expected_failure(capsys, out_dir):
    assert main(["sim", "run", "--scenario", "balance"]) == 0
    assert "expected failure observed" in capsys.readouterr().out
    d = out_dir / "balance"
    for name in ("trajectory.csv", "theta.svg", "phi.svg", "report.txt", "report.json", "manifest.json"):
        assert (d / name).exists()
    ET.parse(d / "theta.svg")
    man = json.loads((d / "manifest.json").read_text())
    assert man["outcome"] == "expected failure observed"
    assert man["parameters"]["gains.kp"]["value"] == 2.5


def test_sim_failing_metric_exits_1(out_dir):
    assert main(["sim", "run", "--scenario", "joint", "--duration", "1"]) == 1


def test_manifest_reproduces_outputs(tmp_path, monkeypatch):
    monkeypatch.delenv("DISKBOT_OUT", raising=False)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "sim", "run", "--scenario", "spin", "--duration", "0.3",
                 "--set", "scenario.spin.speed_rad_s=2.0"]) == 1
    assert main(["sim", "run", "--scenario", "spin", "--out", str(b),
                 "--config", str(a / "spin" / "manifest.json")]) == 1
    for name in ("trajectory_counter.csv", "trajectory_co.csv", "report.json", "theta_co.svg"):
        assert (a / "spin" / name).read_bytes() == (b / "spin" / name).read_bytes()


def test_set_requires_key_value(out_dir):
    assert main(["gains", "check", "--set", "gains.kp"]) == 2
    assert main(["gains", "check", "--set", "gains.kq=3"]) == 2


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[module]\npendulem_mass = 1\n")
    assert main(["--config", str(bad), "gains", "check"]) == 2


def test_sim_sweep_one_directory_per_point(out_dir, capsys):
    code = main(["sim", "sweep", "--scenario", "spin", "--param", "scenario.spin.speed_rad_s",
                 "--values", "0.5,1.5", "--duration", "0.2"])
    assert code == 1  # 0.2 s is too short for the relative angle threshold
    base = out_dir / "sweep_spin_scenario.spin.speed_rad_s"
    dirs = sorted(p.name for p in base.iterdir() if p.is_dir())
    assert dirs == ["000_0.5", "001_1.5"]
    man = json.loads((base / "001_1.5" / "manifest.json").read_text())
    assert man["parameters"]["scenario.spin.speed_rad_s"]["value"] == 1.5


def test_sim_sweep_needs_values(out_dir):
    assert main(["sim", "sweep", "--scenario", "spin", "--param", "scenario.spin.speed_rad_s"]) == 2
    assert main(["sim", "sweep", "--scenario", "spin", "--param", "nope", "--values", "1"]) == 2


@pytest.mark.slow
def test_sim_all_writes_five_reports(out_dir, capsys):
    assert main(["sim", "all"]) == 0
    reports = sorted(out_dir.glob("*/report.json"))
    assert len(reports) == 5
    assert "all behavioural metrics pass" in (out_dir / "summary.txt").read_text()


def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert "diskbot" in capsys.readouterr().out
