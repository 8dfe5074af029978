import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstnet.controller import (ControllerFault, ControllerState, InfeasibleDutyError,
                               control_law, duty_from_phase_shift, filter_step,
                               idab_setpoint, phase_shift_from_duty, reference_current,
                               v_l_rate)
from sstnet.dynamics import DesdState, desd_rhs
from sstnet.netmodel import DesdParams, ParameterError


def test_idab_setpoint_examples():
    assert idab_setpoint(1000.0, 3800.0, 3800.0, 200.0, 1.0) == 5.0
    assert idab_setpoint(1000.0, 3800.0, 3790.0, 200.0, 10.0) == pytest.approx(4.95)
    assert idab_setpoint(700.0, 50.0, 50.0, 350.0, 3.0) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        idab_setpoint(1000.0, 3800.0, 3800.0, 0.0, 1.0)


def test_reference_current_examples():
    assert reference_current(3.0, 6.0, 6.0) == 3.0
    assert reference_current(2.0, 7.0, 10.0) == 5.0


def test_filter_fixed_point():
    cs = ControllerState(filt_Ibr=2.0, tau_f=1e-3)
    nxt = filter_step(cs, 2.0, 1e-5)
    assert nxt.filt_Ibr == 2.0 and nxt.filt_dIbr == 0.0


def test_filter_step_response():
    tau = 1e-3
    dt = tau / 100
    cs = ControllerState(tau_f=tau)
    for k in range(1, 501):
        cs = filter_step(cs, 1.0, dt)
        assert cs.filt_Ibr == pytest.approx(1 - math.exp(-k * dt / tau), abs=0.01)


def test_filter_derivative_of_ramp():
    tau, a = 1e-3, 40.0
    dt = tau / 100
    cs = ControllerState(tau_f=tau)
    for k in range(1, 501):
        cs = filter_step(cs, a * k * dt, dt)
    assert cs.filt_dIbr == pytest.approx(a, rel=0.02)


def test_filter_rejects_bad_dt():
    with pytest.raises(ValueError):
        filter_step(ControllerState(), 1.0, 0.0)
    with pytest.raises(ValueError):
        ControllerState(tau_f=0.0)


def test_control_law_examples():
    d = DesdParams(kappa_p=1.0)
    assert control_law(DesdState(400.0, 330.0), 390.0, 0.0, 0.0, 0.0, d) == 0.0
    d = DesdParams(kappa_p=2.0, r_o=0.5)
    u = control_law(DesdState(405.0, 400.0), 400.0, 10.0, 0.0, 0.0, d)
    assert u == pytest.approx(0.025, rel=1e-14)


def test_control_law_guard():
    d = DesdParams()
    with pytest.raises(ControllerFault):
        control_law(DesdState(400.0, 0.01 * d.v_b_min), 400.0, 1.0, 0.0, 0.0, d)
    assert control_law(DesdState(400.0, 1.0), 400.0, 1.0, 0.0, 0.0, d, v_in_guard=0.5) != 0


@settings(max_examples=100, deadline=None)
@given(v_o=st.floats(380, 420), v_in=st.floats(250, 380), v_l=st.floats(380, 420),
       I_ref=st.floats(-50, 50), dI=st.floats(-1e4, 1e4), phi_vl=st.floats(-1e3, 1e3),
       kappa=st.floats(0.01, 2.0))
def test_closed_loop_substitution(v_o, v_in, v_l, I_ref, dI, phi_vl, kappa):
    # dI_b/dt = dI_ref - kappa (I_b - I_ref) / (r_o C_o) once the duty is applied
    d = DesdParams(kappa_p=kappa)
    ds = DesdState(v_o, v_in)
    u = control_law(ds, v_l, I_ref, dI, phi_vl, d)
    dv_o, _ = desd_rhs(ds, v_l, u, 330.0, d)
    dI_b = (dv_o - phi_vl) / d.r_o
    delta = (v_o - v_l) / d.r_o - I_ref
    expected = dI - kappa * delta / (d.r_o * d.C_o)
    scale = abs(dv_o / d.r_o) + abs(phi_vl / d.r_o) + abs(expected) + 1.0
    assert abs(dI_b - expected) / scale < 1e-10


def test_v_l_rate_matches_bus_equation():
    assert v_l_rate(12000.0, 400.0, 0.0, 5.0, 30, 20e3, 18.75e-3, 5e-3) == pytest.approx(-1000.0)


@pytest.mark.parametrize("n_b, f_b, L_b", [(1.0, 20e3, 20e-6), (2.0, 10e3, 5e-6)])
def test_phase_shift_endpoints(n_b, f_b, L_b):
    d = DesdParams(n_b=n_b, f_b=f_b, L_b=L_b)
    assert phase_shift_from_duty(0.0, d).phi == 0.0
    assert phase_shift_from_duty(d.u_b_max, d).phi == pytest.approx(0.5, abs=1e-12)
    assert phase_shift_from_duty(d.u_b_min, d).phi == pytest.approx(-1.0, abs=1e-12)
    assert duty_from_phase_shift(0.5, d) == pytest.approx(n_b / (8 * f_b * L_b))
    assert duty_from_phase_shift(-1.0, d) == pytest.approx(-n_b / (f_b * L_b))
    assert duty_from_phase_shift(0.0, d) == 0.0


def test_out_of_range_duty_is_clipped_and_flagged():
    d = DesdParams()
    ps = phase_shift_from_duty(2 * d.u_b_max, d)
    assert ps.saturated and ps.phi == pytest.approx(0.5)
    ps = phase_shift_from_duty(2 * d.u_b_min, d)
    assert ps.saturated and ps.phi == pytest.approx(-1.0)
    assert not phase_shift_from_duty(0.1, d).saturated


def test_infeasible_duty_error_type():
    assert issubclass(InfeasibleDutyError, ValueError)


def test_phase_shift_is_monotone():
    d = DesdParams()
    u = np.linspace(d.u_b_min, d.u_b_max, 2001)
    phi = phase_shift_from_duty(u, d).phi
    assert np.all(np.diff(phi) > 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_round_trip_property(s):
    d = DesdParams()
    u = d.u_b_min + s * (d.u_b_max - d.u_b_min)
    back = duty_from_phase_shift(phase_shift_from_duty(u, d).phi, d)
    assert abs(back - u) <= 1e-12 * d.n_b / (d.f_b * d.L_b)
