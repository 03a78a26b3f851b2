import math
import time

import numpy as np
import pytest

from gradolab.model import MonodKinetics, NetworkState, Species, make_network
from gradolab.ode import IntegratorOptions, rhs
from gradolab.rtm import (
    NewtonFailure,
    RtmDiagnostics,
    RtmFailure,
    RtmOptions,
    rtm_advance,
    rtm_integrate,
    rtm_jacobian,
    rtm_newton_step,
    rtm_residual,
    rtm_run_to_steady,
)
from gradolab.sweeps import ode_steady_state

FLOOR = 1e-15
SP = Species("b", MonodKinetics(4e-5, 1.0))
SP2 = Species("c", MonodKinetics(1e-4, 5.0), 0.6)


def one_cell(q, s0=5.0, b0=2.0, species=SP, reactions=True, s_in=3.0):
    return make_network([1 / 3], q, s_in, [species], (s0, [b0]), reactions)


def test_residual_matches_hand_computation():
    cfg = make_network([0.5, 0.25], 1e-5, 3.0, [SP], [(2.0, [1.0]), (1.0, [0.5])])
    new = NetworkState.from_cells([(2.0, [1.0]), (1.0, [0.5])])
    old = NetworkState.from_cells([(2.5, [0.8]), (0.5, [0.6])])
    dt = 100.0
    R = rtm_residual(new, old, dt, cfg, inflow_biomass=1e-9)
    mu1, mu2 = 4e-5 * 2.0 / 3.0, 4e-5 * 1.0 / 2.0
    want = [
        0.5 * (2.0 - 2.5) / dt - 1e-5 * (3.0 - 2.0) + 0.5 * mu1 * 1.0,
        0.5 * (1.0 - 0.8) / dt - 1e-5 * (1e-9 - 1.0) - 0.5 * mu1 * 1.0,
        0.25 * (1.0 - 0.5) / dt - 1e-5 * (2.0 - 1.0) + 0.25 * mu2 * 0.5,
        0.25 * (0.5 - 0.6) / dt - 1e-5 * (1.0 - 0.5) - 0.25 * mu2 * 0.5,
    ]
    assert R == pytest.approx(want, rel=1e-13, abs=1e-20)


def test_residual_vanishes_at_advective_steady_state():
    cfg = make_network([0.2, 0.3, 0.5], 1e-5, 3.0, [SP], (3.0, [FLOOR]), reactions=False)
    R = rtm_residual(cfg.initial, cfg.initial, 1e3, cfg)
    assert np.max(np.abs(R)) < 1e-20 * 1e-5 * 3.0


def test_residual_with_no_accumulation_is_minus_volume_times_ode_rhs():
    cfg = make_network([0.2, 0.3], 2e-5, 4.0, [SP, SP2], [(2.0, [1.0, 0.4]), (1.0, [0.5, 0.9])])
    R = rtm_residual(cfg.initial, cfg.initial, 1.0, cfg, inflow_biomass=FLOOR)
    f = rhs(cfg.initial, cfg)
    V = np.repeat(cfg.volumes, cfg.width)
    ghost = np.zeros_like(R)
    ghost[1:3] = -cfg.flow_q * FLOOR  # inflow biomass the ODE does not have
    assert R == pytest.approx(-V * f + ghost, rel=1e-12, abs=1e-25)


def test_biomass_residual_is_the_seeding_flux_at_the_ode_steady_state():
    q = 2e-6
    D = q / (1 / 3)
    lam = 1.0 * D / (4e-5 - D)
    ss = NetworkState.from_cells([(lam, [3.0 - lam])])
    R = rtm_residual(ss, ss, 1e5, one_cell(q), inflow_biomass=FLOOR)
    assert R[1] == pytest.approx(-q * FLOOR, rel=1e-6)


def test_residual_errors():
    cfg = one_cell(1e-5)
    with pytest.raises(ValueError):
        rtm_residual(cfg.initial, cfg.initial, 0.0, cfg)
    zero = NetworkState.from_cells([(1.0, [0.0])])
    with pytest.raises(ValueError):
        rtm_residual(zero, cfg.initial, 1.0, cfg)
    with pytest.raises(ValueError):
        rtm_residual(NetworkState.from_cells([(1.0, [1.0])] * 2), cfg.initial, 1.0, cfg)


def test_jacobian_matches_fd_of_residual():
    cfg = make_network([0.2, 0.3, 0.5], 2e-5, 4.0, [SP, SP2],
                       [(2.0, [1.0, 0.4]), (1.0, [0.5, 0.9]), (0.3, [2.0, 0.1])])
    c = cfg.initial
    old = NetworkState.from_cells([(1.5, [0.9, 0.5])] * 3)
    dt = 250.0
    J = rtm_jacobian(c, dt, cfg)
    x = c.vector()
    Jf = np.empty_like(J)
    for k in range(x.size):
        h = 1e-6 * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        Rp = rtm_residual(NetworkState.from_vector(xp, 3), old, dt, cfg)
        Rm = rtm_residual(NetworkState.from_vector(xm, 3), old, dt, cfg)
        Jf[:, k] = (Rp - Rm) / (2 * h)
    assert np.max(np.abs(J - Jf)) <= 1e-6 * np.max(np.abs(J))


def test_newton_at_exact_solution_stops_immediately():
    cfg = one_cell(1e-5, reactions=False, b0=FLOOR, s0=3.0)
    step = rtm_newton_step(np.log(cfg.initial.vector()), cfg.initial, 50.0, cfg)
    assert step.converged(1e-8)
    assert step.delta_norm < 1e-14


def test_newton_solves_linear_scalar_dilution_within_three_iterations():
    # log-variable Newton contracts as d -> d + 1 - exp(d), so three
    # iterations reach 1e-12 from a step that changes c by about a percent
    q, V, s_in, dt = 1e-5, 1 / 3, 3.0, 100.0
    D = q / V
    cfg = one_cell(q, s0=0.5, b0=0.7, reactions=False, s_in=s_in)
    exact_s = (0.5 / dt + D * s_in) / (1 / dt + D)
    exact_b = (0.7 / dt + D * FLOOR) / (1 / dt + D)
    u = np.log(cfg.initial.vector())
    for _ in range(3):
        u = rtm_newton_step(u, cfg.initial, dt, cfg).u
    c = np.exp(u)
    assert c[0] == pytest.approx(exact_s, rel=1e-12)
    assert c[1] == pytest.approx(exact_b, rel=1e-12)


@pytest.mark.parametrize("dt", [1.0, 1e3, 1e6])
def test_accepted_linear_steps_match_closed_form(dt):
    q, V, s_in = 1e-5, 1 / 3, 3.0
    D = q / V
    cfg = one_cell(q, s0=0.5, b0=0.7, reactions=False, s_in=s_in)
    res = rtm_advance(cfg.initial, RtmOptions(dt_init=dt, dt_max=dt), cfg)
    assert res.dt == dt
    assert res.state.S[0] == pytest.approx((0.5 / dt + D * s_in) / (1 / dt + D), rel=1e-12)
    assert res.state.B[0, 0] == pytest.approx((0.7 / dt + D * FLOOR) / (1 / dt + D), rel=1e-12)


def test_newton_clamps_at_the_floor():
    # heavy consumption drives the exact substrate below the floor
    sp = Species("hungry", MonodKinetics(1e-3, 1.0))
    cfg = make_network([1.0], 1e-5, 1e-12, [sp], (2e-15, [1e3]))
    step = rtm_newton_step(np.log(cfg.initial.vector()), cfg.initial, 1e3, cfg)
    assert step.floor_activations >= 1
    assert step.u[0] == pytest.approx(math.log(FLOOR), abs=0)


def test_newton_rejects_bad_input():
    cfg = one_cell(1e-5)
    with pytest.raises(ValueError):
        rtm_newton_step([np.nan, 0.0], cfg.initial, 1.0, cfg)
    with pytest.raises(NewtonFailure):
        # exp(800) overflows, so no finite update exists
        rtm_newton_step([800.0, 800.0], cfg.initial, 1.0, cfg)


def test_advance_policy():
    cfg = one_cell(1e-5)
    opts = RtmOptions(dt_init=1.0, dt_max=20.0)
    res = rtm_advance(cfg.initial, opts, cfg)
    assert res.dt == 1.0 and res.state.time == 1.0
    state, dt = res.state, res.dt_next
    for k in range(1, 7):
        assert dt == min(2.0**k, 20.0)
        res = rtm_advance(state, opts, cfg, dt)
        state, dt = res.state, res.dt_next
    assert res.diagnostics.steps_taken == 1


def test_dilution_cascade_approaches_inflow_monotonically():
    # from a uniform start below the inflow; an uneven start can first move
    # a cell away from S_in while a poorer upstream cell drains into it
    cfg = make_network([0.2, 0.3, 0.5], 1e-5, 3.0, [SP], (0.5, [1.0]), reactions=False)
    opts = RtmOptions(dt_init=10.0, dt_max=2e4)
    state, dt = cfg.initial, None
    prev = 3.0 - state.S
    for _ in range(120):
        res = rtm_advance(state, opts, cfg, dt)
        state, dt = res.state, res.dt_next
        gap = 3.0 - state.S
        assert np.all(gap >= 0) and np.all(gap <= prev + 1e-15)
        prev = gap
    assert np.max(prev) < 1e-3


def test_no_species_steady_state_is_the_inflow():
    cfg = make_network([0.2, 0.3, 0.5], 1e-5, 3.0, [SP], [(0.5, [FLOOR]), (1.0, [FLOOR]), (0.1, [FLOOR])], reactions=False)
    # the stop test bounds |dc|/dt, so the remaining gap is about ss_tol/D
    ss, diag = rtm_run_to_steady(cfg, RtmOptions(ss_tol=1e-15, t_max=1e9))
    assert ss.converged
    assert ss.state.S == pytest.approx(3.0, rel=1e-10)
    assert diag.steps_taken > 0 and diag.newton_iterations_total >= diag.steps_taken


def test_far_from_washout_the_input_cell_matches_the_ode():
    cfg = make_network([1 / 3] * 3, 2e-6, 3.0, [SP], (5.0, [2.0]))
    rtm, _ = rtm_run_to_steady(cfg, RtmOptions(t_max=1e9))
    ode = ode_steady_state(cfg, IntegratorOptions(t_max=1e9, ss_tol=1e-12))
    assert rtm.converged and ode.converged
    assert rtm.state.S[0] == pytest.approx(ode.state.S[0], rel=1e-3)


def test_above_washout_the_input_cell_biomass_drops_to_floor_level():
    q = 1.2e-5  # analytic threshold is 1e-5
    cfg = make_network([1 / 3] * 3, q, 3.0, [SP], (5.0, [2.0]))
    ss, _ = rtm_run_to_steady(cfg, RtmOptions(t_max=1e9, ss_tol=1e-14))
    D = q / (1 / 3)
    mu_in = 4e-5 * 3.0 / 4.0
    # the only steady biomass is the amplified inflow seed
    assert ss.state.B[0, 0] < 1e-12
    assert ss.state.B[0, 0] >= FLOOR * D / (D - mu_in) * (1 - 1e-6)


def test_steady_mass_balance_per_cell():
    cfg = make_network([0.1, 0.2, 0.3], 1e-6, 3.0, [SP, SP2], (2.0, [1.0, 1.0]))
    opts = RtmOptions(t_max=1e10, ss_tol=1e-12)
    ss, _ = rtm_run_to_steady(cfg, opts)
    assert ss.converged
    c = ss.state
    # with c_old = c the residual is exactly the transport plus reaction balance
    R = rtm_residual(c, c, 1.0, cfg, opts.inflow).reshape(cfg.n_reactors, cfg.width)
    for j in range(cfg.n_reactors):
        V = cfg.volumes[j]
        assert abs(R[j, 0]) < 10 * opts.ss_tol * V * max(1.0, float(np.max(c.values)))


def test_positivity_and_diagnostics():
    cfg = make_network([1 / 3] * 3, 1.5e-5, 3.0, [SP], (5.0, [2.0]))
    traj, diag = rtm_integrate(cfg, RtmOptions(), 5e5)
    assert traj[-1].time == 5e5
    assert all(np.all(s.values >= FLOOR) for s in traj)
    assert [s.time for s in traj] == sorted(s.time for s in traj)
    assert diag.steps_taken == len(traj) - 1
    assert diag.floor_activations >= 0
    assert math.isfinite(diag.max_log_magnitude) and diag.max_log_magnitude > 0
    assert 0 < diag.dt_min <= diag.dt_max <= RtmOptions().dt_max
    d = diag.as_dict()
    assert d["steps_taken"] == diag.steps_taken
    assert RtmDiagnostics().as_dict()["dt_min"] is None


def test_clamped_substrate_does_not_stall_the_step_size():
    # in a long chain the washed-out tail drives substrate to the floor; the
    # clamped components must not hold Newton convergence back
    sp = Species("b", MonodKinetics(5e-4, 1.0))
    cfg = make_network([1 / 20] * 20, 1e-5, 3.0, [sp], (5.0, [2.0]))
    t0 = time.perf_counter()
    traj, diag = rtm_integrate(cfg, RtmOptions(), 3e4)
    assert traj[-1].time == 3e4
    assert time.perf_counter() - t0 < 30
    assert diag.dt_last >= RtmOptions().dt_max / 4


def test_options_validation():
    for kw in (dict(dt_init=0.0), dict(dt_init=10.0, dt_max=1.0), dict(floor=0.0),
               dict(inflow_biomass=1e-20), dict(newton_tol=0.0), dict(ss_tol=-1.0),
               dict(newton_max_iter=0), dict(dt_growth=0.5), dict(t_max=-1.0)):
        with pytest.raises(ValueError):
            RtmOptions(**kw)
    assert RtmOptions().inflow == FLOOR
    assert RtmOptions(inflow_biomass=1e-9).inflow == 1e-9
    assert RtmOptions().dt_max == pytest.approx(86.4)
    assert RtmOptions().dt_init == pytest.approx(8.64e-6)


def test_hard_failure_on_step_underflow():
    cfg = one_cell(1e-5)
    opts = RtmOptions(newton_max_iter=1, newton_tol=1e-300, dt_init=1.0, dt_max=1.0)
    with pytest.raises(RtmFailure):
        rtm_advance(cfg.initial, opts, cfg)


def _seeded_biomass(q, inflow, V=1 / 3, s_in=3.0, mu_max=4e-5, k_s=1.0):
    # steady single cell with unit yield: B (D - mu(S_in - B)) = D * inflow,
    # i.e. a quadratic in B after clearing the Monod denominator
    D = q / V
    a = -(D - mu_max)
    b = D * (k_s + s_in) - mu_max * s_in + D * inflow
    c = -D * inflow * (k_s + s_in)
    roots = np.roots([a, b, c])
    return float(min(r.real for r in roots if r.real > 0 and abs(r.imag) == 0))


# large steps plus a tight stop test reach the true seeded equilibrium
SEED_OPTS = dict(dt_max=1e9, t_max=1e14, ss_tol=1e-22)
NEAR_THRESHOLD = (0.99, 1 + 1e-5, 1 + 1e-4, 1 + 5e-4, 1 + 2e-3, 1 + 1e-2)


@pytest.mark.parametrize("inflow", [1e-15, 1e-12, 1e-9])
def test_above_threshold_biomass_is_the_amplified_seed(inflow):
    for f in NEAR_THRESHOLD[1:]:
        q = 1e-5 * f
        ss, _ = rtm_run_to_steady(one_cell(q), RtmOptions(inflow_biomass=inflow, **SEED_OPTS))
        assert ss.converged
        # the stop test is absolute, so a 1e-13 biomass is only resolved to
        # about a percent; larger seeds land within 1e-5
        assert ss.state.B[0, 0] == pytest.approx(_seeded_biomass(q, inflow), rel=1e-2)


def test_washout_threshold_moves_up_with_the_inflow_seed():
    from gradolab.sweeps import EXTINCTION_THRESHOLD

    thresholds = []
    for inflow in (1e-15, 1e-12, 1e-9):
        first = None
        for f in NEAR_THRESHOLD:
            ss, _ = rtm_run_to_steady(one_cell(1e-5 * f), RtmOptions(inflow_biomass=inflow, **SEED_OPTS))
            if ss.state.B[0, 0] < EXTINCTION_THRESHOLD:
                first = f
                break
        thresholds.append(first)
    assert None not in thresholds
    assert thresholds == sorted(thresholds)
    assert thresholds[-1] > thresholds[0]
