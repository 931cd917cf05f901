import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from pathdrift.exceptions import DomainError, UnsupportedMethodError
from pathdrift.girsanov import (
    FirstOrderDensity, GirsanovAccumulator, GirsanovKernelDensity, default_bandwidth, density_first_order,
    density_girsanov_kernel, first_order_nodes, girsanov_weight, holder_modulus_diagnostic, holder_scaling,
    martingale_check, novikov_partition, t_threshold, z_moment_bound,
)
from pathdrift.closedforms import ou_density
from pathdrift.model import (
    ConstantDrift, DiagonalDiffusion, LinearDrift, ScaledDrift, TanhDrift, ZeroDrift, running_max_drift, simple_model,
)
from pathdrift.parametrix import gaussian_density
from pathdrift.rng import DiscretePath, brownian_path, uniform_grid


def test_weight_trivial_cases():
    bp = brownian_path(1, uniform_grid(1.0, 16), 3)
    assert girsanov_weight(simple_model(ZeroDrift()), bp) == 1.0
    assert girsanov_weight(simple_model(ConstantDrift(0.5)), bp, q=0.0) == 1.0


def test_weight_single_step_closed_form():
    c, h, w = 0.4, 0.5, 0.3
    path = DiscretePath([0.0, h], [[0.0], [w]], [[w]])
    z = girsanov_weight(simple_model(ConstantDrift(c)), path)
    assert z == pytest.approx(math.exp(c * w - c * c * h / 2), rel=1e-14)


def test_weight_uses_sigma_inverse():
    c, h, w = 0.4, 0.5, 0.3
    path = DiscretePath([0.0, h], [[0.0], [2 * w]], [[w]])
    z = girsanov_weight(simple_model(ConstantDrift(c), sigma=2.0), path)
    mu = c / 2
    assert z == pytest.approx(math.exp(mu * w - mu * mu * h / 2), rel=1e-14)


@given(st.integers(0, 10_000), st.floats(-2.0, 2.0))
def test_weight_positive_and_q_scaling(seed, q):
    bp = brownian_path(1, uniform_grid(1.0, 8), seed)
    base = TanhDrift(0.5)
    z_q = girsanov_weight(simple_model(base), bp, q=q)
    z_scaled = girsanov_weight(simple_model(ScaledDrift(base, q)), bp)
    assert z_q > 0
    assert z_q == pytest.approx(z_scaled, rel=1e-12)


def test_accumulator_matches_direct_sum():
    acc = GirsanovAccumulator(q=1.0, n_paths=2)
    mu = np.array([[0.5], [1.0]])
    dw = np.array([[0.1], [-0.2]])
    acc.update(mu, dw, 0.25)
    expected = np.exp((mu * dw)[:, 0] - 0.5 * mu[:, 0] ** 2 * 0.25)
    np.testing.assert_allclose(acc.weight, expected, rtol=1e-14)


def test_martingale_zero_drift_exact():
    m, se, ok = martingale_check(simple_model(ZeroDrift()), 1.0, 64, seed=1, n_steps=8)
    assert (m, se, ok) == (1.0, 0.0, True)


def test_martingale_tanh_frozen():
    m, se, ok = martingale_check(simple_model(TanhDrift(1.0)), 1.0, 2000, seed=3, n_steps=32)
    assert m == pytest.approx(0.9990410517244537, rel=1e-10)
    assert se == pytest.approx(0.014777362146268774, rel=1e-10)
    assert ok


def test_martingale_ou():
    m, se, ok = martingale_check(simple_model(LinearDrift(0.5)), 1.0, 20_000, seed=0, n_steps=64)
    assert ok and abs(m - 1) <= 3 * se


def test_novikov_partition_examples():
    np.testing.assert_allclose(novikov_partition(1, 1, 1, 1, 1), [0, 0.5, 1])
    assert len(novikov_partition(2, 1, 1, 1, 1)) == 9
    assert novikov_partition(1, 1, 1e-3, 1, 1).tolist() == [0.0, 1.0]


@given(st.floats(0.1, 5), st.floats(0.1, 3), st.floats(0.1, 3))
def test_novikov_mesh_bound_and_monotonicity(T, q, K):
    grid = novikov_partition(T, q, K, 1.0, 1.0)
    bound = 1.0 / (2 * (q * K) ** 2 * T)
    assert np.max(np.diff(grid)) <= bound * (1 + 1e-9) or len(grid) == 2
    assert len(novikov_partition(T * 1.5, q, K, 1.0, 1.0)) >= len(grid)


def test_threshold_examples():
    assert t_threshold(0.5, 1, 1, 1, 3.0) == 3.0
    assert t_threshold(1, 1, 1, 1, 10) == pytest.approx(1 / (2 * math.sqrt(3)))
    assert t_threshold(1, 1, 1, 1, 0.1) == 0.1


def test_z_moment_bound_cases():
    assert z_moment_bound(0.25, 1, [0.0], 1, 1, 1, 1, 1) == 1.0
    # case two: 2^{5/4} exp(3/2 * 1 * 0.1)
    v = z_moment_bound(1, 0.1, [0.0], 1, 1, 1, 1, 10)
    assert v == pytest.approx(2 ** 1.25 * math.exp(0.15), rel=1e-14)
    assert v == pytest.approx(2.763323095812545, rel=1e-12)
    with pytest.raises(DomainError):
        z_moment_bound(1, 5.0, [0.0], 1, 1, 1, 1, 10)
    assert z_moment_bound(1, 5.0, [0.0], 1, 1, 1, 1, 10, K_T_of_delta=lambda d: 1.0) > v


def test_z_moment_bound_dominates_mc():
    model = simple_model(TanhDrift(0.5))
    rng = np.random.default_rng(0)
    from pathdrift.girsanov import driftless_with_weight

    _, logz, _ = driftless_with_weight(model, np.zeros(1), uniform_grid(0.1, 32), rng, 20_000)
    mc = float(np.mean(np.exp(logz)))
    assert mc <= z_moment_bound(1, 0.1, [0.0], 0.5, 1, 1, 1, 10)


def test_default_bandwidth():
    assert default_bandwidth(1.0, 10_000, 1) == pytest.approx(10_000 ** -0.2)


def test_kernel_density_frozen_and_estimator_api(ou_model):
    est = GirsanovKernelDensity(ou_model, t=0.5, n_samples=4000, n_steps=32, bandwidth=0.1, seed=5)
    e = est.fit([1.0]).estimate([[0.0]])[0]
    assert e.value == pytest.approx(0.3823803485456265, rel=1e-10)
    assert e.stderr == pytest.approx(0.02177241356051243, rel=1e-10)
    assert e.method == "girsanov-kernel"
    params = est.get_params()
    assert params["bandwidth"] == 0.1 and params["n_samples"] == 4000
    twin = clone(est).fit([1.0])
    assert twin.predict([[0.0]])[0] == e.value


def test_kernel_density_ou_oracle(ou_model):
    e = density_girsanov_kernel(ou_model, [1.0], [0.0], 1.0, bandwidth=0.05, N=40_000, seed=1, n_steps=64)
    exact = ou_density(1.0, 0.0, 1.0, 1.0)
    assert abs(e.value - exact) <= 3 * e.stderr + 0.02


def test_kernel_density_null_model_near_gaussian(null_model):
    e = density_girsanov_kernel(null_model, [0.0], [0.0], 1.0, bandwidth=0.05, N=100_000, seed=0, n_steps=8)
    assert abs(e.value - 1 / math.sqrt(2 * math.pi)) <= 3 * e.stderr + 0.01


def test_first_order_frozen(ou_model):
    e = FirstOrderDensity(ou_model, t=0.5, n_samples=4000, n_steps=32, seed=5).fit([1.0]).estimate([[0.0]])[0]
    assert e.value == pytest.approx(0.39714993212616256, rel=1e-10)
    assert e.stderr == pytest.approx(0.001030075088638082, rel=1e-10)


def test_first_order_null_model_exact(null_model):
    e = density_first_order(null_model, [0.0], [0.3], 1.0, N=100, seed=0)
    assert e.value == pytest.approx(float(gaussian_density(1.0, 0.0, 0.3)), rel=1e-14)
    assert e.stderr == 0.0


def test_first_order_constant_drift():
    m = simple_model(ConstantDrift(0.3))
    e = density_first_order(m, [0.0], [0.3], 1.0, N=20_000, seed=0, n_steps=64)
    exact = 1 / math.sqrt(2 * math.pi)
    assert abs(e.value - exact) <= 3 * e.stderr + 0.005


def test_first_order_rejects_state_dependent_sigma():
    m = simple_model(ZeroDrift(), sigma=DiagonalDiffusion("affine", c0=1.0, c1=0.1))
    with pytest.raises(UnsupportedMethodError):
        FirstOrderDensity(m, t=1.0).fit([0.0])


def test_first_order_and_kernel_agree_on_running_max():
    m = simple_model(running_max_drift(0.5))
    a = density_first_order(m, [0.0], [0.5], 0.5, N=20_000, seed=2, n_steps=64)
    b = density_girsanov_kernel(m, [0.0], [0.5], 0.5, bandwidth=0.05, N=40_000, seed=3, n_steps=64)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr) + 0.02


def test_first_order_nodes_cover_interval():
    s, w = first_order_nodes(1.0, 8)
    assert np.all((s > 0) & (s < 1))
    # weights integrate a constant exactly
    assert w.sum() == pytest.approx(1.0, rel=1e-12)


def test_holder_diagnostic():
    flat = {0.0: 0.3, 0.1: 0.3, 0.2: 0.3}
    assert holder_modulus_diagnostic(flat, 0.5) == 0.0
    g = {y: float(gaussian_density(1.0, 0.0, y)) for y in (0.0, 0.1, 0.2)}
    pairs = [(0.0, 0.1), (0.0, 0.2), (0.1, 0.2)]
    exp = max(abs(g[a] - g[b]) / abs(a - b) ** 0.5 for a, b in pairs)
    assert holder_modulus_diagnostic(g, 0.5) == pytest.approx(exp, rel=1e-14)
    with pytest.raises(DomainError):
        holder_modulus_diagnostic({0.0: 1.0}, 0.5)
    with pytest.raises(DomainError):
        holder_modulus_diagnostic(g, 1.5)


def test_holder_scaling_gaussian():
    by_t = {t: {y: float(gaussian_density(t, 0.0, y)) for y in (0.0, 0.01)} for t in (0.25, 1.0)}
    res = holder_scaling(by_t, 1.0)
    assert res.ratio > 0 and math.isfinite(res.ratio)
