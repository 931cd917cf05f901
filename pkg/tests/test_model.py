import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathdrift.exceptions import DomainError, NumericError
from pathdrift.model import (
    BangBangDrift, ConstantDrift, ConstantDiffusion, DiagonalDiffusion, FunctionalSpec, Heston32Drift, LinearDrift,
    LinearNu, TanhDrift, ZeroDrift, delay_drift, eval_drift, functional_state, functional_values, model_from_dict,
    running_integral_drift, running_max_drift, simple_model, validate_growth,
)
from pathdrift.rng import DiscretePath, brownian_path, uniform_grid

PATH = DiscretePath([0.0, 0.5, 1.0], [[0.0], [1.0], [0.5]])


def test_running_max_drift_example():
    assert eval_drift(simple_model(running_max_drift()), 1.0, PATH)[0] == 1.0
    # before the peak only the first two nodes are visible
    assert eval_drift(simple_model(running_max_drift()), 0.4, PATH)[0] == 0.0


def test_constant_and_linear_drifts():
    assert eval_drift(simple_model(ConstantDrift(0.7)), 0.3, PATH)[0] == 0.7
    assert eval_drift(simple_model(LinearDrift(2.0)), 1.0, PATH)[0] == -1.0
    assert eval_drift(simple_model(ZeroDrift()), 0.0, PATH)[0] == 0.0


def test_delay_lookup_floors_onto_grid():
    spec = FunctionalSpec(delays=(0.5,))
    assert functional_state(spec, PATH, 1.0).delayed[0, 0] == 1.0
    assert functional_state(spec, PATH, 0.9).delayed[0, 0] == 0.0
    # delay reaching before time zero uses the starting point
    assert functional_state(FunctionalSpec(delays=(3.0,)), PATH, 1.0).delayed[0, 0] == 0.0


def test_delay_drift_value():
    drift = delay_drift([0.5], [2.0])
    assert eval_drift(simple_model(drift), 1.0, PATH)[0] == 2.0


def test_integral_left_rule():
    spec = FunctionalSpec(integrand="one")
    p = DiscretePath(uniform_grid(1.0, 4), np.zeros(5))
    assert functional_state(spec, p, 1.0).integral[0] == 1.0
    ident = FunctionalSpec(integrand="identity")
    # left rule: 0 * 0.5 + 1 * 0.5
    assert functional_state(ident, PATH, 1.0).integral[0] == pytest.approx(0.5)
    assert eval_drift(simple_model(running_integral_drift(2.0)), 1.0, PATH)[0] == pytest.approx(1.0)


def test_functional_coarsening_hides_fine_nodes():
    spec = FunctionalSpec(zeta="abs")
    grid = uniform_grid(1.0, 4)
    states = np.array([0.0, 3.0, 1.0, 0.5, 0.2])[None, :, None]
    fine = functional_values(spec, grid, states, [3])
    coarse = functional_values(spec, grid, states, [3], stride=2)
    assert fine.running_max[0, 0] == 3.0
    assert coarse.running_max[0, 0] == 1.0
    assert coarse.t[0, 0] == 0.5


def test_truncated_delays_are_zero():
    spec = FunctionalSpec(delays=(0.25, 0.5), weights=(0.5, 0.25), tail=0.25)
    grid = uniform_grid(1.0, 4)
    states = np.arange(5.0)[None, :, None]
    st_all = functional_values(spec, grid, states, [4])
    st_one = functional_values(spec, grid, states, [4], m=1)
    assert st_all.delayed[0, 0, :, 0].tolist() == [3.0, 2.0]
    assert st_one.delayed[0, 0, :, 0].tolist() == [3.0, 0.0]
    assert spec.tail_mass(1) == pytest.approx(0.5)
    assert spec.tail_mass(2) == pytest.approx(0.25)


def test_functional_spec_validation():
    with pytest.raises(DomainError):
        FunctionalSpec(delays=(-1.0,))
    with pytest.raises(DomainError):
        FunctionalSpec(zeta="nope")
    with pytest.raises(DomainError):
        FunctionalSpec(delays=(0.1,), weights=(1.0, 2.0))
    with pytest.raises(DomainError):
        FunctionalSpec(beta=1.5)


def test_linear_nu_cap_bounds_output():
    nu = LinearNu(1, w=10.0, cap=2.0)
    out = nu(np.zeros(3), np.array([[1.0], [-5.0], [0.0]]), np.zeros(3), None, None)
    assert np.all(np.abs(out) <= 2.0)
    assert nu.growth(1.0, (0, 1), (0, 0)) == 2.0


def test_eval_drift_rejects_bad_input():
    bad = DiscretePath([0.0, 1.0], [[0.0], [np.nan]])
    with pytest.raises(NumericError):
        eval_drift(simple_model(ZeroDrift()), 0.5, bad)
    with pytest.raises(DomainError):
        eval_drift(simple_model(ZeroDrift()), 2.0, PATH)


def test_model_validation():
    with pytest.raises(DomainError):
        simple_model(ZeroDrift(), sigma=1.0, dim=2, ellipticity=(2.0, 3.0))
    with pytest.raises(DomainError):
        simple_model(LinearDrift(1.0, dim=2))
    m = simple_model(ZeroDrift(), sigma=[[2.0, 0.0], [0.0, 1.0]], dim=2)
    assert m.ellipticity == pytest.approx((1.0, 4.0))


def test_model_from_dict_roundtrip():
    cfg = {
        "dim": 1,
        "drift": {"kind": "tanh", "params": {"scale": 0.5}},
        "diffusion": {"kind": "constant", "matrix": 1.0},
        "growth": {"sublinear": [{"delta": 0.5, "K_delta": 0.5}]},
    }
    m = model_from_dict(cfg)
    assert isinstance(m.drift, TanhDrift)
    assert m.linear_growth_K == 0.5
    assert m.K_delta(0.75) == 0.5
    with pytest.raises(DomainError):
        model_from_dict({"dim": 1, "drift": {"kind": "unknown"}})


def test_validate_growth_detects_violation():
    paths = [brownian_path(1, uniform_grid(1.0, 64), s) for s in range(3)]
    ok = validate_growth(simple_model(TanhDrift(0.5)), paths)
    assert ok.ok and ok.max_ratio <= 0.5
    lying = simple_model(LinearDrift(3.0), linear_growth_K=0.1)
    assert not validate_growth(lying, paths).ok


def test_heston_and_bangbang_values():
    h = Heston32Drift(1.0, 1.0)
    assert h.value(0, np.array([2.0]))[0] == -2.0
    bb = BangBangDrift(0.0, 0.5)
    assert bb.value(0, np.array([-1.0]))[0] == 0.5
    assert bb.value(0, np.array([0.0]))[0] == -0.5
    d = DiagonalDiffusion("heston32", xi=2.0)
    assert d.diag(0, np.array([4.0]))[0] == pytest.approx(16.0)
    with pytest.raises(DomainError):
        DiagonalDiffusion("bogus")


@given(st.floats(-50, 50), st.floats(0.01, 5.0))
def test_tanh_drift_bounded(x, scale):
    assert abs(TanhDrift(scale).value(0, np.array([x]))[0]) <= scale


def test_constant_diffusion_inverse():
    c = ConstantDiffusion([[2.0, 1.0], [0.0, 1.0]], dim=2)
    np.testing.assert_allclose(c.inverse @ c.matrix(), np.eye(2), atol=1e-15)
