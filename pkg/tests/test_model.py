import math

import pytest
from hypothesis import given, strategies as st

from inertdrift.model import (ModelParams, SystemState, derive_renewal_config,
                              interior_hitting_time, interior_velocity)

pos = st.floats(0.05, 20.0)


def test_unit_model_constants():
    p = ModelParams()
    rc = derive_renewal_config(p)
    assert (rc.a, rc.renewal_v, rc.b) == (-0.75, -0.5, -0.375)
    assert p.velocity_floor == -1.0 and p.drift_rate == -0.5


@given(pos, pos)
def test_renewal_levels_are_ordered_above_the_floor(gamma, g):
    p = ModelParams(gamma, g)
    rc = derive_renewal_config(p)
    assert p.velocity_floor < rc.a < rc.renewal_v < rc.b < 0
    # both levels sit a fixed fraction of g/(1+gamma) away from the renewal velocity
    assert math.isclose(rc.renewal_v - rc.a, g / (2 * gamma * (1 + gamma)), rel_tol=1e-12)
    assert math.isclose(rc.b - rc.renewal_v, g / (2 * (1 + gamma) ** 2), rel_tol=1e-12)


@pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"gamma": -1.0}, {"g": 0.0},
                                {"gamma": 1.0, "gamma_zero_mode": True}])
def test_bad_parameters(kw):
    with pytest.raises(ValueError):
        ModelParams(**kw)


def test_inviscid_mode_has_no_renewal_structure():
    p = ModelParams.inviscid()
    assert p.velocity_floor == -math.inf
    with pytest.raises(ValueError, match="undefined without viscosity"):
        derive_renewal_config(p)


def test_params_are_hashable_values():
    assert hash(ModelParams(1.0, 2.0)) == hash(ModelParams(1.0, 2.0))
    assert ModelParams(1.0, 2.0).as_dict() == {"gamma": 1.0, "g": 2.0, "gamma_zero_mode": False}


@pytest.mark.parametrize("h,v", [(-1e-9, 0.0), (0.0, -1.0), (0.0, -2.0), (math.nan, 0.0)])
def test_state_validation(h, v):
    with pytest.raises(ValueError):
        SystemState.initial(h, v).validate(ModelParams())


@given(pos, pos, st.floats(-0.99, 5.0), st.floats(0.01, 0.98))
def test_hitting_time_composes_exactly(gamma, g, v_frac, a_frac):
    p = ModelParams(gamma, g)
    floor = -g / gamma
    v0 = floor + (1 + v_frac) * (g / gamma)
    a = floor + a_frac * (v0 - floor)
    t = interior_hitting_time(p, v0, a)
    assert t > 0
    assert abs(interior_velocity(p, v0, t) - a) <= 1e-12 * max(1.0, abs(a), abs(v0))


def test_interior_velocity_limits():
    p = ModelParams(2.0, 1.0)
    assert interior_velocity(p, 3.0, 0.0) == 3.0
    assert interior_velocity(p, 3.0, math.inf) == -0.5
    assert interior_velocity(ModelParams.inviscid(2.0), 1.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        interior_hitting_time(p, 0.0, -0.5)
    with pytest.raises(ValueError):
        interior_hitting_time(p, 0.0, 0.5)
