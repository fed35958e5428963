import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inertdrift.integrator import (StepConfig, Trajectory, contact, reflect_step,
                                   reflect_step_arrays, shared_noise_pair, simulate,
                                   simulate_until, strong_errors, sup_distance, v_at_most)
from inertdrift.model import ModelParams, SystemState, interior_velocity
from inertdrift.rng import NoiseSource

P = ModelParams()
finite = dict(allow_nan=False, allow_infinity=False)


@given(st.floats(0, 10, **finite), st.floats(-0.99, 10, **finite),
       st.floats(-1, 1, **finite), st.sampled_from([1e-4, 1e-3, 1e-2]),
       st.floats(0.1, 5), st.floats(0.1, 5))
def test_single_step_complementarity(h, v, dB, dt, gamma, g):
    p = ModelParams(gamma, g)
    s0 = SystemState.initial(h, v)
    s1 = reflect_step(s0, p, dB, dt)
    dl = s1.l - s0.l
    assert s1.h >= 0 and dl >= 0
    assert dl * s1.h == 0.0
    # the gap, the velocity and the positions obey the same increments
    assert abs(s1.h - (h + v * dt - dB + dl)) <= 1e-12 * max(1, abs(h), abs(dB))
    assert abs(s1.v - (v - (gamma * v + g) * dt + dl)) <= 1e-12 * max(1, abs(v), g)
    assert abs((s1.s - s1.x) - s1.h) <= 1e-12 * max(1, abs(s1.s))


def test_array_step_matches_scalar_step():
    rng = np.random.default_rng(1)
    h = rng.exponential(size=500) * rng.integers(0, 2, 500)
    v = rng.normal(size=500)
    dB = rng.normal(0, 0.1, 500)
    hn, vn, dl = reflect_step_arrays(h, v, dB, 1e-2, P)
    for i in range(0, 500, 37):
        s = reflect_step(SystemState.initial(h[i], v[i]), P, dB[i], 1e-2)
        assert (s.h, s.v, s.l) == (hn[i], vn[i], dl[i])


@pytest.mark.parametrize("bad", [dict(dB=math.nan), dict(dt=0.0), dict(dt=-1e-3)])
def test_step_rejects_bad_input(bad):
    kw = dict(dB=0.0, dt=1e-3) | bad
    with pytest.raises(ValueError):
        reflect_step(SystemState.initial(0.0, 0.0), P, kw["dB"], kw["dt"])


def test_kernel_path_agrees_with_python_step():
    noise = NoiseSource(11)
    tr = simulate(P, SystemState.initial(0.0, -0.5), StepConfig(dt=1e-3), noise, 0.5)
    dB = noise.increments(1e-3, 0, 500)
    st_ = SystemState.initial(0.0, -0.5)
    for k in range(500):
        st_ = reflect_step(st_, P, dB[k], 1e-3)
    last = tr.final
    for name in ("h", "v", "s", "x", "b", "l"):
        assert getattr(last, name) == pytest.approx(getattr(st_, name), abs=1e-12)


@pytest.mark.parametrize("gamma,g", [(0.5, 0.5), (0.5, 2.0), (1.0, 1.0), (2.0, 0.5), (2.0, 2.0)])
def test_noise_free_interior_error_is_first_order(gamma, g):
    # explicit Euler on v' = -gamma v - g started at v0: the worst error over
    # a horizon longer than 1/gamma tends to (v0 + g/gamma) gamma/(2e) per unit dt
    p = ModelParams(gamma, g)
    v0 = 1.0
    K_theory = (v0 + g / gamma) * gamma / (2 * math.e)
    Ks = []
    for dt in (1e-2, 1e-3, 1e-4):
        tr = simulate(p, SystemState.initial(50.0, v0), StepConfig(dt=dt), NoiseSource.silent(), 2.0)
        assert tr.h.min() > 0      # the path never touched the wall
        exact = np.array([interior_velocity(p, v0, t) for t in tr.t])
        Ks.append(np.abs(tr.v - exact).max() / dt)
    assert max(Ks) / min(Ks) < 1.02
    assert Ks[-1] == pytest.approx(K_theory, rel=2e-3)


def test_restart_reproduces_one_long_run():
    noise = NoiseSource(5, 2)
    cfg = StepConfig(dt=1e-3)
    whole = simulate(P, SystemState.initial(0.3, 0.0), cfg, noise, 2.0)
    first = simulate(P, SystemState.initial(0.3, 0.0), cfg, noise, 0.7)
    second = simulate(P, first.final, cfg, noise, 1.3)
    np.testing.assert_allclose(second.data[-1], whole.data[-1], rtol=0, atol=1e-12)


def test_record_stride_and_csv_round_trip(tmp_path):
    tr = simulate(P, SystemState.initial(0.0, 0.0), StepConfig(dt=1e-3, record_stride=10),
                  NoiseSource(1), 1.0)
    assert len(tr) == 101
    tr.to_csv(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv", P, 1e-3)
    np.testing.assert_array_equal(back.data, tr.data)


def test_step_cap_is_reported():
    tr = simulate(P, SystemState.initial(0.0, 0.0), StepConfig(dt=1e-3, max_steps=100),
                  NoiseSource(1), 1.0)
    assert tr.stop_info.reason == "step_cap" and len(tr) == 101


def test_stop_rule_interpolates_the_crossing():
    tr = simulate_until(P, SystemState.initial(5.0, 1.0), StepConfig(dt=1e-2),
                        NoiseSource.silent(), v_at_most(0.0), 10.0)
    assert tr.stop_info.reason == "predicate"
    # noise-free and far from the wall: the crossing time is known in closed form
    assert tr.stop_info.t_cross == pytest.approx(math.log(2.0), abs=2e-2)
    tr = simulate_until(P, SystemState.initial(0.5, 0.0), StepConfig(dt=1e-3),
                        NoiseSource(3), contact(), 50.0)
    assert tr.final.h == 0.0
    tr = simulate_until(P, SystemState.initial(0.5, 0.0), StepConfig(dt=1e-3),
                        NoiseSource(3), v_at_most(-5.0), 0.5)
    assert tr.stop_info.reason == "timeout"


def test_identical_noise_gives_identical_paths():
    a, b = shared_noise_pair(P, SystemState.initial(0.2, 0.1), SystemState.initial(0.2, 0.1),
                             StepConfig(dt=1e-3), NoiseSource(8), 3.0)
    assert sup_distance(a, b) == 0.0


@given(st.floats(1e-6, 1e-3))
def test_shared_noise_perturbation_is_linear(eps):
    base = SystemState.initial(0.5, -0.5)
    a, b = shared_noise_pair(P, base, SystemState.initial(0.5 + eps, -0.5 + eps),
                             StepConfig(dt=1e-3), NoiseSource(4), 1.0)
    d = sup_distance(a, b)
    assert eps <= d * (1 + 1e-6) and d <= 3 * eps


def test_measured_strong_order():
    dts = (8e-3, 4e-3, 2e-3, 1e-3)
    # with wall contact the projection costs half an order
    d, e = strong_errors(P, 0.5, -0.5, 1.0, dts, 50, seed=0)
    assert np.all(np.diff(e) < 0)
    assert 0.35 < np.polyfit(np.log(d), np.log(e), 1)[0] < 0.7
    # far from the wall it is the plain Euler rate
    d, e = strong_errors(P, 5.0, 0.0, 1.0, dts, 20, seed=0)
    assert 0.9 < np.polyfit(np.log(d), np.log(e), 1)[0] < 1.1


def test_strong_errors_needs_nested_grids():
    with pytest.raises(ValueError):
        strong_errors(P, 0.5, 0.0, 1.0, (3e-3, 2e-3), 2)


@pytest.mark.parametrize("dh,dv", [(1e-6, 0.0), (0.0, 1e-6)])
def test_frozen_continuity_constant(dh, dv):
    # measured once over 20 seeds: a unit shift of h or v never grows within
    # one time unit (C = 1 up to rounding), so freeze C <= 1 + 1e-6
    base = SystemState.initial(0.5, -0.5)
    for seed in range(20):
        a, b = shared_noise_pair(P, base, SystemState.initial(0.5 + dh, -0.5 + dv),
                                 StepConfig(dt=1e-3), NoiseSource(seed), 1.0)
        assert sup_distance(a, b) <= (1 + 1e-6) * 1e-6


def test_shift_in_s_alone_leaves_gap_and_velocity_unchanged():
    base = SystemState.initial(0.4, 0.2)
    moved = SystemState(0.0, 0.4, 0.2, 7.0, 6.6, 0.0, 0.0)
    a, b = shared_noise_pair(P, base, moved, StepConfig(dt=1e-3), NoiseSource(2), 2.0)
    assert sup_distance(a, b) == 0.0
    np.testing.assert_allclose(b.s - a.s, 7.0)


@given(st.integers(0, 2**32), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_velocity_stays_above_the_floor(seed, gamma, g):
    p = ModelParams(gamma, g)
    tr = simulate(p, SystemState.initial(0.0, p.renewal_v), StepConfig(dt=1e-3),
                  NoiseSource(seed), 20.0)
    assert tr.v.min() > p.velocity_floor
