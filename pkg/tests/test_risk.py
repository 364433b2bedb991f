import numpy as np
import pytest
from scipy import integrate

from riskbudget.risk import (
    DiscreteDistribution,
    DistortionSpec,
    atom_weights,
    distortion_batch,
    distortion_exact,
    empirical_var_es,
    gamma,
)


def test_gamma_values():
    assert gamma(DistortionSpec(0.5, 0.75), 0.8) == pytest.approx(2.5)
    assert np.all(gamma(DistortionSpec(0.0, 0.9), np.linspace(0, 1, 11)) == 1.0)


def test_gamma_integrates_to_one_by_quadrature():
    spec = DistortionSpec(1.0, 0.75)
    val, _ = integrate.quad(lambda u: gamma(spec, u), 0.0, 1.0, points=[0.75])
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("p,alpha", [(0.3, 0.6), (1.0, 0.9), (0.0, 0.5)])
def test_square_integral_matches_quadrature(p, alpha):
    spec = DistortionSpec(p, alpha)
    val, _ = integrate.quad(lambda u: gamma(spec, u) ** 2, 0.0, 1.0, points=[alpha])
    assert spec.square_integral() == pytest.approx(val, rel=1e-10)


def test_gamma_rejects_outside_unit_interval():
    with pytest.raises(ValueError):
        gamma(DistortionSpec(0.5, 0.5), 1.2)
    with pytest.raises(ValueError):
        DistortionSpec(1.5, 0.5)
    with pytest.raises(ValueError):
        DistortionSpec(0.5, 1.0)


def test_distortion_on_one_to_hundred():
    dist = DiscreteDistribution.equiprobable(np.arange(1, 101))
    assert distortion_exact(DistortionSpec(1.0, 0.75), dist) == pytest.approx(88.0, abs=1e-12)
    assert distortion_exact(DistortionSpec(0.5, 0.75), dist) == pytest.approx(69.25, abs=1e-12)


@pytest.mark.parametrize("p,alpha", [(0.0, 0.5), (0.5, 0.75), (1.0, 0.9)])
def test_point_mass(p, alpha):
    assert distortion_exact(DistortionSpec(p, alpha), DiscreteDistribution([3.7], [1.0])) == pytest.approx(3.7)


def test_atom_weights_simple_cases():
    w = atom_weights(DistortionSpec(1.0, 0.5), DiscreteDistribution.equiprobable([5.0, -1.0]))
    np.testing.assert_allclose(w, [2.0, 0.0])
    assert atom_weights(DistortionSpec(0.7, 0.3), DiscreteDistribution([2.0], [1.0]))[0] == pytest.approx(1.0)


def test_atom_weights_resum_to_distortion():
    rng = np.random.default_rng(3)
    for _ in range(20):
        dist = DiscreteDistribution(rng.normal(size=5), rng.dirichlet(np.ones(5)))
        spec = DistortionSpec(rng.uniform(), rng.uniform(0, 0.95))
        w = atom_weights(spec, dist)
        # brute-force quantile integral on a fine partition of [0, 1]
        order = np.argsort(dist.values)
        cum = np.concatenate([[0.0], np.cumsum(dist.probs[order])])
        direct = sum(dist.values[order][k] * (spec.cumulative(cum[k + 1]) - spec.cumulative(cum[k])) for k in range(5))
        assert np.sum(dist.probs * dist.values * w) == pytest.approx(direct, abs=1e-12)
        assert distortion_exact(spec, dist) == pytest.approx(direct, abs=1e-12)


def test_tied_atoms_share_weight():
    w = atom_weights(DistortionSpec(1.0, 0.5), DiscreteDistribution([1.0, 2.0, 2.0, 0.0], [0.25] * 4))
    assert w[1] == w[2] == pytest.approx(2.0)


def test_empirical_var_es():
    assert empirical_var_es(np.arange(1, 101), 0.75) == pytest.approx((75.0, 88.0))
    assert empirical_var_es(np.full(10, 2.5), 0.9) == pytest.approx((2.5, 2.5))
    x = np.random.default_rng(0).normal(size=40)
    v, e = empirical_var_es(x, 0.8)
    v2, e2 = empirical_var_es(3.0 * x, 0.8)
    assert (v2, e2) == pytest.approx((3 * v, 3 * e))
    with pytest.raises(ValueError):
        empirical_var_es(np.arange(3), 0.75)


def test_homogeneity_translation_and_monotonicity_in_p():
    rng = np.random.default_rng(1)
    for _ in range(50):
        dist = DiscreteDistribution(rng.normal(size=7), rng.dirichlet(np.ones(7)))
        spec = DistortionSpec(rng.uniform(), rng.uniform(0, 0.95))
        base = distortion_exact(spec, dist)
        a, c = rng.uniform(0.1, 5.0), rng.normal()
        assert distortion_exact(spec, DiscreteDistribution(a * dist.values, dist.probs)) == pytest.approx(a * base, rel=1e-12)
        assert distortion_exact(spec, DiscreteDistribution(dist.values + c, dist.probs)) == pytest.approx(base + c, abs=1e-12)
        ps = np.linspace(0, 1, 6)
        vals = [distortion_exact(DistortionSpec(p, spec.alpha), dist) for p in ps]
        assert np.all(np.diff(vals) >= -1e-12)


def test_subadditivity_spot_check():
    rng = np.random.default_rng(7)
    m, k = 10_000, 4
    spec = DistortionSpec(0.6, 0.7)
    x = rng.normal(size=(m, k))
    y = rng.normal(size=(m, k)) * rng.uniform(0.1, 3, size=(m, 1))
    q = rng.dirichlet(np.ones(k), size=m)
    rx, ry = distortion_batch(spec, x, q), distortion_batch(spec, y, q)
    # comonotone coupling: equal masses, i-th smallest of x paired with i-th smallest of y
    eq = np.full((m, k), 1.0 / k)
    ex, ey = distortion_batch(spec, x, eq), distortion_batch(spec, y, eq)
    como = distortion_batch(spec, np.sort(x, axis=1) + np.sort(y, axis=1), eq)
    assert np.max(como - ex - ey) <= 1e-10
    indep_vals = (x[:, :, None] + y[:, None, :]).reshape(m, k * k)
    indep_probs = (q[:, :, None] * q[:, None, :]).reshape(m, k * k)
    assert np.max(distortion_batch(spec, indep_vals, indep_probs) - rx - ry) <= 1e-10
