import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from pathdrift.closedforms import ou_density
from pathdrift.exceptions import DomainError
from pathdrift.model import DiagonalDiffusion, TanhDrift, ZeroDrift, simple_model
from pathdrift.parametrix import (
    CountingSpec, UnbiasedDensity, beta_convolution, frozen_chain, gaussian_density, hermite_first, hermite_second,
    parametrix_term_bound, sample_counting, theta_weight, unbiased_density_sample, unbiased_expectation,
)
from pathdrift.girsanov import density_girsanov_kernel


def test_gaussian_density_examples():
    assert float(gaussian_density(1.0, 0.0, 0.0)) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    v = float(gaussian_density(np.eye(2), [0.0, 0.0], [1.0, 1.0]))
    assert v == pytest.approx(math.exp(-1) / (2 * math.pi), rel=1e-14)
    with pytest.raises(DomainError):
        gaussian_density(-1.0, 0.0, 0.0)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.floats(0.1, 3))
def test_gaussian_density_symmetric(x, y, s):
    A = np.array([[s, 0.2], [0.2, 1.0]])
    assert float(gaussian_density(A, x, y)) == pytest.approx(float(gaussian_density(A, y, x)), rel=1e-13)


def test_hermite_examples():
    assert hermite_first(1.0, [2.0]).tolist() == [-2.0]
    assert hermite_second(1.0, [2.0]).tolist() == [[3.0]]
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(hermite_second(A, [0.0, 0.0]), -np.linalg.inv(A))


def test_hermite_integrals_vanish():
    z, w = np.polynomial.hermite_e.hermegauss(40)
    A = 0.7
    v = math.sqrt(A) * z
    wts = w / math.sqrt(2 * math.pi)
    h1 = np.array([hermite_first(A, [vi])[0] for vi in v])
    h2 = np.array([hermite_second(A, [vi])[0, 0] for vi in v])
    assert abs(np.sum(wts * h1)) < 1e-8
    assert abs(np.sum(wts * h2)) < 1e-8


def test_theta_weight_examples():
    assert float(theta_weight([1.0], 1.0, 1.0, 1.0, [1.0], [2.0])) == pytest.approx(1.0)
    assert float(theta_weight([0.0], 1.0, 1.0, 0.7, [0.3], [-1.2])) == 0.0
    # x = y: first-order term vanishes, second-order term is -(a_x - a_y) / (2 t a_y)
    assert float(theta_weight([0.4], 2.0, 1.0, 0.5, [0.3], [0.3])) == pytest.approx(-1.0, rel=1e-12)


@given(st.floats(-3, 3), st.floats(0.05, 2), st.floats(-2, 2))
def test_theta_vanishes_on_diagonal_for_constant_sigma(x, t, b):
    assert float(theta_weight([b], 1.0, 1.0, t, [x], [x])) == 0.0


def test_counting_spec():
    assert float(CountingSpec("beta", beta=0.5, T=1.0).cdf(1.0)) == pytest.approx(math.sqrt(0.5))
    assert CountingSpec.parse("exp:2").lam == 2.0
    assert CountingSpec.parse("beta:0.3", T=2.0).label == "beta:0.3"
    with pytest.raises(DomainError):
        CountingSpec.parse("gamma:1")
    with pytest.raises(DomainError):
        CountingSpec("beta", beta=1.0)
    with pytest.raises(DomainError):
        CountingSpec("beta", beta=0.5, T=0.25).check_horizon(1.0)


@given(st.floats(0.0, 2.0), st.floats(0.05, 0.95))
def test_counting_cdf_matches_pdf_integral(s, beta):
    spec = CountingSpec("beta", beta=beta, T=1.0)
    if s == 0:
        assert float(spec.cdf(s)) == 0.0
        return
    val, _ = integrate.quad(lambda u: float(spec.pdf(u)), 0, s, points=[0.0], limit=200)
    assert float(spec.cdf(s)) == pytest.approx(val, rel=1e-6, abs=1e-8)
    exp = CountingSpec("exponential", lam=1.0 / beta)
    assert float(exp.cdf(s) + exp.survival(s)) == pytest.approx(1.0)


def test_sample_counting_mean():
    spec = CountingSpec("exponential", lam=2.0)
    counts = np.array([sample_counting(spec, 1.0, s)[1] for s in range(4000)])
    assert abs(counts.mean() - 2.0) <= 3 * counts.std() / math.sqrt(counts.size)


def test_sample_counting_no_jump_survival():
    spec = CountingSpec("exponential", lam=1e-9)
    times, R, surv = sample_counting(spec, 1.0, 0)
    assert R == 0 and times.size == 0
    assert surv == pytest.approx(float(spec.survival(1.0)))


def test_frozen_chain_examples():
    sig = lambda x: 1.0 + 0.1 * x  # noqa: E731
    st_ = frozen_chain(sig, [1.0], [0.25], increments=[[0.5]])
    np.testing.assert_allclose(st_[:, 0], [1.0, 1.55])
    assert frozen_chain(sig, [0.3], []).tolist() == [[0.3]]
    const = frozen_chain(lambda x: 2.0, [1.0], [0.1, 0.4], increments=[[0.2], [-0.1]])
    np.testing.assert_allclose(const[:, 0], [1.0, 1.4, 1.2])
    with pytest.raises(DomainError):
        frozen_chain(sig, [0.0], [0.5, 0.2])


def test_unbiased_sample_frozen(ou_model):
    v, ch = unbiased_density_sample(ou_model, [1.0], [0.0], 0.5, CountingSpec("exponential", lam=2.0), seed=9)
    assert v == pytest.approx(0.00833172379354441, rel=1e-10)
    np.testing.assert_allclose(ch.jump_times, [0.09221761207744787, 0.2687794777687774], rtol=1e-12)
    np.testing.assert_allclose(ch.states[:, 0], [0.0, 0.21953465952577486, 0.27580157818879203], rtol=1e-12)
    assert ch.gamma == pytest.approx(0.019658219736579177, rel=1e-10)
    assert ch.survival == pytest.approx(0.629744533344698, rel=1e-12)


def test_unbiased_null_model_zero_variance(null_model):
    g = float(gaussian_density(1.0, 0.0, 0.3))
    vals = UnbiasedDensity(null_model, t=1.0, n_samples=512, seed=1).fit([0.0]).sample_values([0.3])
    assert np.all(vals == vals[0]) and vals[0] == pytest.approx(g, rel=1e-15)
    spec = CountingSpec()
    for s in range(20):
        v, ch = unbiased_density_sample(null_model, [0.0], [0.3], 1.0, spec, seed=s)
        exact, _ = unbiased_density_sample(null_model, [0.0], [0.3], 1.0, spec, seed=s, null_term="exact")
        assert exact == pytest.approx(g, rel=1e-14)
        # literal representation: theta vanishes, so only the no-jump event carries mass
        if len(ch.jump_times):
            assert v == 0.0
        else:
            assert v == pytest.approx(g / float(spec.survival(1.0)), rel=1e-14)


def test_unbiased_frozen_estimate(ou_model):
    e = UnbiasedDensity(ou_model, t=0.5, n_samples=4000, seed=5).fit([1.0]).estimate([[0.0]])[0]
    assert e.value == pytest.approx(0.4334349085755969, rel=1e-10)
    assert e.stderr == pytest.approx(0.03955429843826326, rel=1e-10)
    assert e.extras["mean_jumps"] == pytest.approx(0.51825)
    assert e.extras["counting"] == "exp:1"


def test_unbiased_ou_oracle(ou_model):
    e = UnbiasedDensity(ou_model, t=0.5, n_samples=100_000, seed=0).fit([1.0]).estimate([[0.0]])[0]
    assert abs(e.value - ou_density(1.0, 0.0, 0.5, 1.0)) <= 3 * e.stderr


def test_unbiased_worker_invariance(ou_model):
    a = UnbiasedDensity(ou_model, t=0.5, n_samples=3000, seed=2, block_size=500, workers=1).fit([1.0]).predict([[0.0]])
    b = UnbiasedDensity(ou_model, t=0.5, n_samples=3000, seed=2, block_size=500, workers=3).fit([1.0]).predict([[0.0]])
    assert a[0] == b[0]


def test_unbiased_agrees_with_kernel_on_tanh():
    m = simple_model(TanhDrift(0.5))
    u = UnbiasedDensity(m, t=0.5, n_samples=100_000, seed=0).fit([0.0]).estimate([[0.3]])[0]
    k = density_girsanov_kernel(m, [0.0], [0.3], 0.5, bandwidth=0.05, N=50_000, seed=1, n_steps=64)
    assert abs(u.value - k.value) <= 3 * math.hypot(u.stderr, k.stderr) + 0.01


def test_unbiased_state_dependent_sigma_runs():
    m = simple_model(ZeroDrift(), sigma=DiagonalDiffusion("sine", base=1.0, amp=0.2))
    e = UnbiasedDensity(m, t=0.5, n_samples=2000, seed=0, counting="beta:0.5").fit([0.0]).estimate([[0.2]])[0]
    assert math.isfinite(e.value) and e.stderr > 0


def test_unbiased_expectation_examples(null_model, ou_model):
    spec = CountingSpec()
    m, se, n = unbiased_expectation(null_model, lambda z: np.ones_like(z), stats.norm(), [0.0], 1.0, spec, 20_000)
    assert abs(m - 1) <= 3 * se + 1e-12
    m, se, n = unbiased_expectation(null_model, lambda z: (z >= 0).astype(float), stats.norm(), [0.0], 1.0, spec, 20_000)
    assert abs(m - 0.5) <= 3 * se
    m, se, n = unbiased_expectation(ou_model, lambda z: z, stats.norm(0.5, 1.0), [1.0], 0.5, spec, 40_000, seed=1)
    assert abs(m - math.exp(-0.5)) <= 3 * se


def test_term_bound_examples():
    assert parametrix_term_bound(2, 1.0, 1.0, 1, 1.0) == pytest.approx(math.pi)
    assert parametrix_term_bound(1, 0.5, 2.0, 1, 0.25) == pytest.approx(1.0 / 0.5)
    for n in range(1, 6):
        r = parametrix_term_bound(n + 1, 0.7, 1.3, 2, 0.4) / parametrix_term_bound(n, 0.7, 1.3, 2, 0.4)
        from scipy.special import gamma

        exp = math.sqrt(2) * 0.7 * 1.3 * math.sqrt(0.4) * gamma(0.5) * gamma(n / 2) / gamma((n + 1) / 2)
        assert r == pytest.approx(exp, rel=1e-12)


def test_beta_convolution_examples():
    assert beta_convolution(1, 0.0, 0.0, 1.0) == pytest.approx(1.0)
    assert beta_convolution(1, 0.5, 0.5, 1.0) == pytest.approx(math.pi / 2, rel=1e-12)
    a, b, t0 = 0.3, 0.2, 2.0

    def inner(t1):
        return integrate.quad(lambda t2: t2 ** b * (t1 - t2) ** -a, 0, t1, limit=200)[0]

    nested = integrate.quad(lambda t1: inner(t1) * (t0 - t1) ** -a, 0, t0, limit=200)[0]
    assert beta_convolution(2, a, b, t0) == pytest.approx(nested, rel=1e-6)
