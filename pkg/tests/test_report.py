import numpy as np

from sstnet.netmodel import SetpointSet, Setpoints
from sstnet.report import SETTLE_FRACTION, setpoint_table, settling_time, stability_report
from sstnet.scenario import read_scenario


def test_settling_time_window():
    t = np.linspace(0, 1, 101)
    delta = np.where((t >= 0.5) & (t < 0.7), 1.0, 0.0)[:, None]
    assert np.isclose(settling_time(t, delta, 12.0, 0.5), 0.2)
    assert settling_time(t, delta, 12.0, 0.8) == 0.0
    # a later disturbance outside the window does not count
    assert np.isclose(settling_time(t, delta, 12.0, 0.1, t_next=0.5), 0.0)
    never = np.ones((101, 1))
    assert settling_time(t, never, 12.0, 0.2) is None
    assert settling_time(t, never, 12.0, 2.0) is None


def test_settle_threshold_is_relative_to_limit():
    t = np.linspace(0, 1, 11)
    delta = np.full((11, 1), 0.9 * SETTLE_FRACTION * 50.0)
    assert settling_time(t, delta, 50.0, 0.0) == 0.0
    assert settling_time(t, delta, 10.0, 0.0) is None


def test_setpoint_table_rows():
    a = SetpointSet([Setpoints(1000.0, 1.0, 1.0, 1.0), Setpoints(-500.0, 1.0, 1.0, 1.0)])
    b = a.replace(1, p_rec=-1000.0, i_d=0.25)
    rows = setpoint_table(a, b).splitlines()
    assert len(rows) == 3
    assert rows[2].split()[:4] == ["2", "-0.50000", "-1.00000", "0.25"]


def test_stability_report_reports_both_envelope_readings():
    text = stability_report(read_scenario("fig7_sharing"), eigen=False, p_max=5000.0)
    assert text.count("closed forms printed") == 9 and "dimensional" in text
