import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_params
from roadsense.errors import DimensionMismatch, ImproperComposition, UnstableLoop
from roadsense.fleet import table_row
from roadsense.lti import SignalTrace, TransferFunction, dc_gain, filter_trace, freq_response
from roadsense.observer import (
    AgentLog,
    AgentLoop,
    QFilterSpec,
    make_m,
    make_q,
    pid_tf,
    reconstruct_road,
    run_agent,
    synth_gd,
    synth_gf,
    synth_omega,
    synth_one_minus_omega,
)
from roadsense.roads import RoadSpec, generate
from roadsense.vehicle import delta, plant_p1, simulate_plant

DT = 1e-3


def rel_l2(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


def multisine(t, freqs, amp=0.005, seed=0):
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0, 2 * np.pi, len(freqs))
    x = np.sum(amp * (np.sin(np.outer(t, freqs) + ph) - np.sin(ph)), axis=1)
    return x * np.clip(t / 0.5, 0, 1) ** 2


@pytest.fixture
def exact_loop(row0, pid0):
    return AgentLoop(row0, row0, pid0)


@pytest.fixture
def sine_road():
    return generate(RoadSpec(kind="sinusoid"))


# ---------------------------------------------------------------- Q and M


@given(st.floats(0.5, 500), st.integers(2, 6))
def test_q_unity_dc_and_relative_degree(cutoff, order):
    q = make_q(QFilterSpec(cutoff, order))
    assert dc_gain(q) == pytest.approx(1.0, rel=1e-12)
    assert q.relative_degree == order


def test_q_half_power_point():
    q = make_q(QFilterSpec(100.0, 2))
    mag = abs(freq_response(q, [100.0])[0])
    assert mag == pytest.approx(abs(1 / (1j + 1) ** 2), rel=1e-12)
    assert 20 * np.log10(mag) == pytest.approx(-6.0206, abs=1e-4)


def test_q_spec_validation():
    with pytest.raises(ValueError):
        QFilterSpec(7.5, 1)
    with pytest.raises(ValueError):
        QFilterSpec(0.0, 2)


def test_m_inverts_the_nominal_plant(row0):
    q = make_q(QFilterSpec())
    m = make_m(plant_p1(row0), q)
    w = np.logspace(-2, 3, 60)
    np.testing.assert_allclose(
        freq_response(m, w) * freq_response(plant_p1(row0), w), freq_response(q, w), rtol=1e-10
    )
    assert m.relative_degree == 0
    assert dc_gain(m) == pytest.approx(row0.k_s, rel=1e-10)


def test_m_rejects_low_order_q(row0):
    first_order = TransferFunction([7.5], [7.5, 1.0])
    with pytest.raises(ImproperComposition):
        make_m(plant_p1(row0), first_order)


def test_pid_transfer_function(pid0):
    c = pid_tf(pid0, 75.0)
    w = np.array([0.3, 2.0, 40.0])
    s = 1j * w
    expected = pid0.kp + pid0.ki / s + pid0.kd * s * 75.0 / (s + 75.0)
    np.testing.assert_allclose(freq_response(c, w), expected, rtol=1e-12)


# ---------------------------------------------------------------- synthesis


@pytest.mark.parametrize("synth", [synth_gd, synth_gf, synth_omega])
@pytest.mark.parametrize("use_nominal", [False, True])
def test_structured_matches_literal_composition(synth, use_nominal, rng):
    p, g = table_row(int(rng.integers(1, 91)))
    loop = AgentLoop(p, p.scaled(rng.uniform(0.9, 1.1, 6)), g)
    w = np.logspace(-2, 2.5, 80)
    np.testing.assert_allclose(
        freq_response(synth(loop, use_nominal, reduce=True), w),
        freq_response(synth(loop, use_nominal, reduce=False), w),
        rtol=1e-9,
    )


def test_gd_vanishes_at_dc(exact_loop):
    # the (1 - Q) factor removes any constant disturbance
    assert abs(dc_gain(synth_gd(exact_loop))) < 1e-12


def test_gf_is_minus_gd_over_one_minus_q(row0, pid0):
    loop = AgentLoop(row0, row0.scaled([1.05, 0.95, 1.1, 0.9, 1.0, 1.02]), pid0)
    w = np.logspace(-1, 2, 40)
    q = freq_response(make_q(loop.q), w)
    np.testing.assert_allclose(
        freq_response(synth_gf(loop), w), -freq_response(synth_gd(loop), w) / (1 - q), rtol=1e-9
    )


def test_gf_dc_sign(exact_loop):
    # low frequencies: the learning force pushes z_s opposite to its sign
    assert freq_response(synth_gf(exact_loop), [1e-3])[0].real < 0


def test_omega_equals_q_under_exact_model(exact_loop):
    w = np.linspace(0, 200, 501)
    np.testing.assert_allclose(
        freq_response(synth_omega(exact_loop, reduce=False), w),
        freq_response(make_q(exact_loop.q), w),
        rtol=1e-8, atol=1e-12,
    )
    assert dc_gain(synth_omega(exact_loop)) == pytest.approx(1.0, rel=1e-12)


def test_one_minus_omega_is_complement(row0, pid0):
    loop = AgentLoop(row0, row0.scaled([1.1, 0.9, 0.95, 1.05, 1.0, 0.9]), pid0)
    w = np.logspace(-2, 2, 50)
    np.testing.assert_allclose(
        freq_response(synth_one_minus_omega(loop), w), 1 - freq_response(synth_omega(loop), w),
        rtol=1e-9, atol=1e-12,
    )
    assert abs(dc_gain(synth_one_minus_omega(loop))) < 1e-12


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_omega_close_to_q_under_suspension_stiffness_mismatch(factor):
    w = np.linspace(0, 20, 401)
    worst = 0.0
    for j in range(1, 91):
        p, g = table_row(j)
        loop = AgentLoop(p, dataclasses.replace(p, k_s=p.k_s * factor), g)
        dev = np.abs(freq_response(synth_omega(loop), w) - freq_response(make_q(loop.q), w))
        worst = max(worst, dev.max())
    assert worst < 0.15


@pytest.mark.parametrize("j", range(1, 91))
def test_every_table_agent_is_closed_loop_stable(j):
    p, g = table_row(j)
    loop = AgentLoop(p, p, g)
    assert np.all(synth_gd(loop).poles().real < 0)


def test_unstable_configuration_is_rejected(row0, pid0):
    # a grossly wrong nominal model (stiff suspension, soft tire) destabilises the DOB loop
    with pytest.raises(UnstableLoop):
        AgentLoop(row0, row0.scaled([4.7, 1.08, 13.1, 0.074, 7.75, 0.074]), pid0)


# ---------------------------------------------------------------- time domain


def test_zero_road_zero_traces(exact_loop):
    log = run_agent(exact_loop, SignalTrace.zeros(DT, 2000))
    for name in AgentLog.COLUMNS[1:]:
        assert not np.any(getattr(log, name).samples), name


def test_dob_recovers_low_passed_disturbance(exact_loop, sine_road):
    log = run_agent(exact_loop, sine_road)
    ref = filter_trace(make_q(exact_loop.q), log.d).samples
    assert rel_l2(log.d_hat_prime.samples, ref) < 1e-3


def test_estimate_is_scaled_down_and_lagging(exact_loop, sine_road):
    log = run_agent(exact_loop, sine_road)
    tail = slice(2000, None)
    est, road = log.z_r_hat.samples[tail], sine_road.samples[tail]
    # amplitude shrinks by |Q| at the road frequency
    q_gain = abs(freq_response(make_q(exact_loop.q), [5.0])[0])
    assert np.ptp(est) / np.ptp(road) == pytest.approx(q_gain, rel=0.05)
    lag = np.argmax(np.correlate(est - est.mean(), road - road.mean(), "full")) - (len(road) - 1)
    assert lag > 0


def test_dual_path_equivalence(row0, pid0, rng, sine_road):
    loop = AgentLoop(row0, row0.scaled(rng.uniform(0.9, 1.1, 6)), pid0)
    t = sine_road.t
    d_f = SignalTrace(DT, 20 * multisine(t, [2.0, 5.0, 9.0], seed=1))
    log = run_agent(loop, sine_road, d_f)
    zs_ode, _ = simulate_plant(row0, log.F_a, sine_road)
    assert rel_l2(log.z_s.samples, zs_ode.samples) < 1e-4
    zs_block = filter_trace(plant_p1(row0), log.F_a + filter_trace(delta(row0), sine_road)).samples
    assert rel_l2(log.z_s.samples, zs_block) < 1e-4


def test_dual_path_gap_is_second_order_in_dt(row0, pid0):
    # the gap comes only from interpolating F_a between samples, so it shrinks as dt**2
    gaps = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        loop = AgentLoop(row0, row0.scaled([1.05, 0.95, 1.08, 0.93, 1.0, 1.1]), pid0, dt=dt)
        t = np.arange(0, 4, dt)
        road = SignalTrace(dt, multisine(t, [1.0, 3.0, 7.0, 12.0, 18.0]))
        log = run_agent(loop, road, SignalTrace(dt, 20 * multisine(t, [2.0, 5.0], seed=1)))
        gaps.append(rel_l2(log.z_s.samples, simulate_plant(row0, log.F_a, road)[0].samples))
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(orders > 1.8), orders


def test_dob_spectral_ratio_matches_q(exact_loop):
    period = 20.0
    t = np.arange(0, 3 * period, DT)
    k = np.arange(1, 12)
    freqs = 2 * np.pi * k / period  # 0.31 .. 3.46 rad/s, below cutoff / 2
    assert freqs.max() <= exact_loop.q.cutoff / 2
    rng = np.random.default_rng(7)
    ph = rng.uniform(0, 2 * np.pi, k.size)
    road = SignalTrace(DT, np.sum(0.003 * np.sin(np.outer(t, freqs) + ph), axis=1))
    log = run_agent(exact_loop, road)
    last = slice(len(t) - int(period / DT), None)
    D = np.fft.rfft(log.d.samples[last])[k]
    H = np.fft.rfft(log.d_hat_prime.samples[last])[k]
    q = freq_response(make_q(exact_loop.q), freqs)
    np.testing.assert_allclose(np.abs(H / D), np.abs(q), rtol=0.02)
    assert np.max(np.abs(H / D - q) / np.abs(q)) < 0.02


def test_error_recursion_identity_exact_model(exact_loop, rng):
    t = np.arange(0, 6, DT)
    road = SignalTrace(DT, multisine(t, rng.uniform(0.5, 15, 4)))
    d_f = SignalTrace(DT, 30 * multisine(t, rng.uniform(0.5, 10, 3), seed=2))
    log = run_agent(exact_loop, road, d_f)
    predicted = filter_trace(synth_one_minus_omega(exact_loop), log.d) - d_f
    assert rel_l2(log.e_d.samples, predicted.samples) < 1e-3


def test_error_identity_with_mismatch_no_learning(row0, pid0, rng):
    loop = AgentLoop(row0, row0.scaled(rng.uniform(0.9, 1.1, 6)), pid0)
    t = np.arange(0, 6, DT)
    road = SignalTrace(DT, multisine(t, rng.uniform(0.5, 15, 4)))
    log = run_agent(loop, road)
    predicted = filter_trace(synth_one_minus_omega(loop), log.d)
    assert rel_l2(log.e_d.samples, predicted.samples) < 1e-3


@pytest.mark.parametrize("j", range(1, 91))
def test_dob_reduces_body_motion(j, sine_road):
    p, g = table_row(j)
    loop = AgentLoop(p, p, g)
    with_dob = run_agent(loop, sine_road).z_s.samples
    without = run_agent(loop, sine_road, use_dob=False).z_s.samples
    assert np.sqrt(np.mean(with_dob**2)) < np.sqrt(np.mean(without**2))


def test_learning_signal_enters_the_command(exact_loop, sine_road):
    base = run_agent(exact_loop, sine_road)
    d_f = SignalTrace(DT, np.full(len(sine_road), 1.0))
    log = run_agent(exact_loop, sine_road, d_f)
    np.testing.assert_allclose(log.d_hat.samples, log.d_hat_prime.samples + 1.0)
    assert not np.allclose(log.F_a.samples, base.F_a.samples)


def test_divergence_guard(exact_loop):
    d_f = SignalTrace(DT, np.full(1000, 1e9))
    with pytest.raises(UnstableLoop):
        run_agent(exact_loop, SignalTrace.zeros(DT, 1000), d_f)


def test_dt_mismatch(exact_loop):
    with pytest.raises(DimensionMismatch):
        run_agent(exact_loop, SignalTrace.zeros(2e-3, 100))
    with pytest.raises(DimensionMismatch):
        run_agent(exact_loop, SignalTrace.zeros(DT, 100), SignalTrace.zeros(DT, 99))


def test_agent_log_csv_round_trip(exact_loop, sine_road, tmp_path):
    log = run_agent(exact_loop, sine_road)
    path = tmp_path / "agent.csv"
    log.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(AgentLog.COLUMNS)
    back = AgentLog.from_csv(path)
    assert back.dt == pytest.approx(DT, rel=1e-9)
    for name in AgentLog.COLUMNS[1:]:
        np.testing.assert_array_equal(getattr(back, name).samples, getattr(log, name).samples)


# ---------------------------------------------------------------- road reconstruction


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_reconstruct_road_round_trip(seed):
    # the round trip is exact up to sample interpolation, O(dt**2); dt = 1e-5 puts it below 1e-6
    dt = 1e-5
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    t = np.arange(0, 1, dt)
    road = SignalTrace(dt, multisine(t, rng.uniform(0.5, 20, 5)))
    d = filter_trace(delta(p), road)
    assert rel_l2(reconstruct_road(d, p).samples, road.samples) < 1e-6


def test_reconstruct_road_round_trip_converges_second_order(row0):
    errs = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        t = np.arange(0, 2, dt)
        road = SignalTrace(dt, multisine(t, [1.0, 4.0, 9.0, 17.0]))
        errs.append(rel_l2(reconstruct_road(filter_trace(delta(row0), road), row0).samples, road.samples))
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 1.8)


def test_reconstruct_road_dc(row0):
    h = 0.01
    d = SignalTrace(DT, np.full(20000, row0.k_s * h))
    assert reconstruct_road(d, row0).samples[-1] == pytest.approx(h, rel=1e-9)


def test_reconstruct_road_under_mismatch(rng):
    t = np.arange(0, 6, DT)
    # band-limited below the wheel-hop mode, which the nominal inverse cannot place exactly
    for _ in range(40):
        p, _ = table_row(int(rng.integers(1, 91)))
        nominal = p.scaled(rng.uniform(0.9, 1.1, 6))
        road = SignalTrace(DT, multisine(t, rng.uniform(0.5, 10, 5)))
        d = filter_trace(delta(p), road)
        assert rel_l2(reconstruct_road(d, nominal).samples, road.samples) < 0.15
