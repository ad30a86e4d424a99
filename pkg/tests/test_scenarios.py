import json

import numpy as np
import pytest

from diskbot import scenarios as sc
from diskbot.dynamics import TrajectoryLog
from diskbot.errors import InvalidParameterError
from diskbot.linmodel import PDGains


def metrics(report):
    return {m.name: m for m in report.metrics}


@pytest.fixture(scope="module")
def suite():
    out = {}
    for scen in sc.default_suite():
        out[scen.name] = (scen,) + sc.run_scenario(scen)
    return out


def test_default_suite_passes(suite):
    assert len(suite) == 5
    for name, (_, _, report) in suite.items():
        assert report.passed, report.to_text()
    assert sc.suite_flag([r for _, _, r in suite.values()]) == 0


def test_balance_is_an_expected_failure(suite):
    _, logs, report = suite["balance"]
    assert report.expected_failure
    assert report.outcome == "expected failure observed"
    assert logs["main"].status == "stopped"


def test_pendulum_metrics(suite):
    m = metrics(suite["pendulum"][2])
    assert m["tracking"].value < sc.TRACKING_TOL_DEG
    assert m["counter_rotation"].value == 4


def test_replay_from_csv_gives_same_report(suite, tmp_path):
    scen, logs, report = suite["joint"]
    replayed = {}
    for label, log in logs.items():
        log.to_csv(tmp_path / f"{label}.csv")
        back = TrajectoryLog.from_csv(tmp_path / f"{label}.csv")
        back.status, back.message = log.status, log.message
        replayed[label] = back
    again = sc.evaluate(scen, replayed)
    assert again.to_dict() == report.to_dict()


def test_report_serialisation(suite):
    report = suite["spin"][2]
    doc = json.loads(report.to_json())
    assert doc["scenario"] == "spin"
    assert {m["name"] for m in doc["metrics"]} >= {"relative_angle", "co_relative"}
    assert "PASS" in report.to_text()


def test_wrong_motor_sign_breaks_pendulum_mode():
    _, report = sc.run_scenario(sc.scenario_pendulum(motor_sign=+1.0))
    assert not report.passed
    assert not metrics(report)["counter_rotation"].passed


def test_coupling_from_far_away_fails():
    _, report = sc.run_scenario(sc.scenario_coupling(start_gap=3.0, offset_deg=0.5, duration=3.0))
    assert not metrics(report)["coupled"].passed


def test_no_drive_no_magnet_never_couples():
    logs, report = sc.run_scenario(sc.scenario_coupling(offset_deg=0.0, magnet_scale=0.0, duration=2.0))
    assert not logs["main"].coupled.any()
    assert not report.passed


def test_weak_magnet_loses_the_joint():
    _, report = sc.run_scenario(sc.scenario_joint(magnet_scale=0.1))
    assert not metrics(report)["link_held"].passed


def test_joint_without_drive_does_not_pivot():
    _, report = sc.run_scenario(sc.scenario_joint(drive_speed=0.0, duration=2.0))
    assert metrics(report)["pivot"].value < 1e-3


def test_spin_without_speed_keeps_angles():
    logs, _ = sc.run_scenario(sc.scenario_spin(speed=0.0, duration=0.5))
    for log in logs.values():
        for i in range(2):
            assert np.ptp(log.column("phi", i)) < 1e-12


def test_balance_zero_tilt_is_degenerate():
    _, report = sc.run_scenario(sc.scenario_balance(tilt_deg=0.0, duration=1.0))
    assert report.degenerate
    assert report.outcome == "degenerate: perturbation required"
    assert sc.suite_flag([report]) == 1


def test_balance_fails_with_stiffer_gains():
    _, report = sc.run_scenario(sc.scenario_balance(gains=PDGains(5.0, 0.5)))
    assert report.outcome == "expected failure observed"


def test_spin_modes_split():
    assert [r.label for r in sc.scenario_spin("counter").runs] == ["counter"]
    assert len(sc.scenario_spin("both").runs) == 2


def test_run_all_serial_matches_report_order():
    scen = [sc.scenario_balance(duration=1.0), sc.scenario_spin("co", duration=0.5)]
    reports = sc.run_all(scen)
    assert [r.scenario for r in reports] == ["balance", "spin-co"]


def test_with_overrides():
    s = sc.with_overrides("coupling", start_gap=0.2)
    assert s.name == "coupling"
    with pytest.raises(InvalidParameterError):
        sc.with_overrides("dance")
