import math
from dataclasses import replace

import numpy as np
import pytest

from overloadx.ftsp import FluidState
from overloadx.fluid import (REGIME_AP, integrate_fluid, ode_rhs,
                             stationary_point, time_to_stationarity)

from conftest import random_admissible_params


def xstar_array(p):
    sp = stationary_point(p)
    return np.array([sp.q1, sp.q2, sp.z12])


def test_stationary_point_reference(base_params):
    sp = stationary_point(base_params)
    assert sp.z12 == pytest.approx(0.2111111111, abs=1e-9)
    assert sp.q1 == pytest.approx(0.6555555556, abs=1e-9)
    assert sp.q2 == pytest.approx(0.5555555556, abs=1e-9)
    assert sp.pi_star == pytest.approx(0.1763341067, abs=1e-9)
    assert sp.in_A
    # manifold relation with the threshold offset
    assert sp.q1 - base_params.kappa12 == pytest.approx(float(base_params.r12) * sp.q2)


def test_stationary_point_zero_offset(base_params):
    p = replace(base_params, kappa12=0.0, kappa21=0.0)
    sp = stationary_point(p)
    assert sp.z12 == pytest.approx(0.08 / 0.36, abs=1e-12)
    assert sp.q1 == pytest.approx(0.6111111111, abs=1e-9)
    assert sp.q2 == pytest.approx(sp.q1, abs=1e-12)


def test_stationary_point_capped(base_params):
    p = replace(base_params, lambda1=8.0)
    sp = stationary_point(p)
    assert sp.z12 == p.m2
    assert not sp.in_A


def test_ode_rhs_vanishes_at_stationary_point(base_params):
    sp = stationary_point(base_params)
    rhs = ode_rhs(base_params, sp.as_state(), sp.pi_star)
    assert np.max(np.abs(rhs)) < 1e-12
    # with the four-decimal quoted coordinates the residual is only
    # rounding-sized
    rhs_rounded = ode_rhs(base_params, FluidState(0.6556, 0.5556, 0.2111), 0.1763)
    assert np.max(np.abs(rhs_rounded)) < 5e-4


def test_ode_rhs_saturated_pool(base_params):
    rhs = ode_rhs(base_params, FluidState(1.0, 1.0, base_params.m2), 1.0)
    assert rhs[2] == 0.0   # no class-2 agents left in pool 2


def test_ode_rhs_forced_sharing_rate(base_params):
    rhs = ode_rhs(base_params, FluidState(1.5, 0.0, 0.0), 1.0)
    assert rhs[0] == pytest.approx(1.3 - 1.0 - 1.0 - 0.3)


def test_ode_rhs_rejects_bad_pi(base_params):
    with pytest.raises(ValueError):
        ode_rhs(base_params, FluidState(1.0, 1.0, 0.5), 1.5)


def test_integrate_stationary_start_is_constant(base_params):
    sp = stationary_point(base_params)
    path = integrate_fluid(base_params, sp.as_state(), T=20.0, h=1e-3)
    dev = np.max(np.abs(path.states - xstar_array(base_params)))
    assert dev < 1e-6


def test_integrate_converges_from_off_manifold(base_params):
    path = integrate_fluid(base_params, FluidState(1.0, 0.2, 0.0), T=40.0, h=1e-3)
    err = np.max(np.abs(path.states - xstar_array(base_params)), axis=1)
    assert err[-1] < 1e-4
    # error decreasing once past the initial sharing transient
    after = err[path.t >= 1.0]
    assert np.all(np.diff(after) <= 1e-12)
    # cross-check against a half-step integration
    path2 = integrate_fluid(base_params, FluidState(1.0, 0.2, 0.0), T=40.0, h=5e-4)
    assert abs(path2.states[-1] - xstar_array(base_params)).max() < 1e-4


def test_integrate_pool_dependent_total_queue_closed_form(base_params):
    # with equal pool-2 rates and equal thetas the total queue solves a
    # scalar linear ODE regardless of the routing split
    p = replace(base_params, mu12=1.0)
    path = integrate_fluid(p, FluidState(1.0, 0.2, 0.0), T=20.0, h=1e-3)
    eta1 = p.lambda1 + p.lambda2 - p.m1 * p.mu11 - p.m2 * p.mu22
    eta2 = p.theta1
    closed = eta1 / eta2 + (1.2 - eta1 / eta2) * np.exp(-eta2 * path.t)
    assert np.max(np.abs(path.qs - closed)) < 1e-6


def test_integrate_argument_validation(base_params):
    x0 = FluidState(1.0, 0.5, 0.0)
    with pytest.raises(ValueError):
        integrate_fluid(base_params, x0, T=10.0, h=0.0)
    with pytest.raises(ValueError):
        integrate_fluid(base_params, x0, T=-1.0, h=1e-3)
    with pytest.raises(ValueError):
        integrate_fluid(base_params, FluidState(-1.0, 0.5, 0.0), T=1.0, h=1e-3)


def test_manifold_preservation(base_params):
    # start on the ratio manifold inside the recurrence set
    sp = stationary_point(base_params)
    q2 = sp.q2 + 0.2
    x0 = FluidState(base_params.kappa12 + q2, q2, sp.z12)
    h = 1e-3
    path = integrate_fluid(base_params, x0, T=10.0, h=h)
    ap_steps = path.regime == REGIME_AP
    assert ap_steps.all()
    assert np.max(np.abs(path.manifold_gap()[ap_steps])) < 5.0 * h


def test_step_halving_order(base_params):
    # smooth single-regime segment: on-manifold start, exact pi each step
    sp = stationary_point(base_params)
    q2 = sp.q2 + 0.3
    x0 = FluidState(base_params.kappa12 + q2, q2, sp.z12 + 0.1)
    sols = {}
    for h in (4e-3, 2e-3, 1e-3):
        path = integrate_fluid(base_params, x0, T=2.0, h=h, pi_cache_tol=0.0)
        sols[h] = path.states[-1]
    ref = sols[1e-3]
    err4 = np.max(np.abs(sols[4e-3] - ref))
    err2 = np.max(np.abs(sols[2e-3] - ref))
    assert err4 < 1e-8
    if err2 > 1e-14:   # above rounding noise, check the order-4 ratio
        assert err4 / err2 > 8.0


def test_absorption_flag(base_params):
    path = integrate_fluid(base_params, FluidState(1.0, 0.2, 0.0), T=40.0, h=1e-3)
    flags = path.in_A
    # permanently true after some finite entry time
    first_true = np.argmax(flags)
    assert flags[first_true:].all()
    assert path.t[first_true] < 10.0


def test_integrate_general_ratio(base_params):
    # non-unit lattice ratio end to end: stationary start stays fixed, a
    # nearby start converges onto the kappa-offset 3:2 manifold
    from fractions import Fraction
    p = replace(base_params, r12=Fraction(3, 2), r21=Fraction(3, 2))
    sp = stationary_point(p)
    assert sp.in_A
    assert sp.q1 - p.kappa12 == pytest.approx(1.5 * sp.q2, rel=1e-12)
    target = np.array([sp.q1, sp.q2, sp.z12])
    path = integrate_fluid(p, sp.as_state(), T=2.0, h=1e-3)
    assert np.max(np.abs(path.states - target)) < 1e-9
    x0 = FluidState(sp.q1 + 0.075, sp.q2 + 0.05, sp.z12 + 0.05)
    path2 = integrate_fluid(p, x0, T=10.0, h=2e-3)
    err = np.max(np.abs(path2.states - target), axis=1)
    assert err[-1] < 0.2 * err[0]
    ap = path2.regime == REGIME_AP
    assert np.abs(path2.manifold_gap()[ap]).max() < 1e-10


def test_stationarity_residual_on_random_admissible_sets(base_params):
    rng = np.random.default_rng(123)
    for p in random_admissible_params(rng, 200):
        sp = stationary_point(p)
        rhs = ode_rhs(p, sp.as_state(), sp.pi_star)
        assert np.max(np.abs(rhs)) < 1e-9, p


def test_time_to_stationarity(base_params):
    sp = stationary_point(base_params)
    path0 = integrate_fluid(base_params, sp.as_state(), T=5.0, h=1e-3)
    assert time_to_stationarity(path0, 1e-3) == 0.0

    path = integrate_fluid(base_params, FluidState(1.0, 0.2, 0.0), T=40.0, h=1e-3)
    tts = time_to_stationarity(path, 1e-3)
    assert 0.0 < tts < 40.0
    # exponential approach: log error affine in t over the tail
    err = np.max(np.abs(path.states - xstar_array(base_params)), axis=1)
    sel = (path.t >= 15.0) & (path.t <= 35.0) & (err > 1e-12)
    slope, intercept = np.polyfit(path.t[sel], np.log(err[sel]), 1)
    fit = slope * path.t[sel] + intercept
    resid = np.log(err[sel]) - fit
    assert slope < -0.05
    assert np.max(np.abs(resid)) < 0.05

    with pytest.raises(ValueError):
        time_to_stationarity(path, 0.0)
    short = integrate_fluid(base_params, FluidState(1.0, 0.2, 0.0), T=0.5, h=1e-3)
    with pytest.raises(RuntimeError):
        time_to_stationarity(short, 1e-6)
