import numpy as np
import pytest
from scipy.integrate import quad

from radet import errors
from radet import manifold as mf


def test_flat_line_bases():
    model = mf.make_manifold(mf.ManifoldSpec.flat_line(2))
    t = np.array([0.3])
    assert np.allclose(model.tangent_basis(t), [[1.0], [0.0]])
    assert np.allclose(np.abs(model.normal_basis(t)), [[0.0], [1.0]])


def test_sine_graph_tangent_at_zero():
    model = mf.make_manifold(mf.ManifoldSpec.sine_graph(2))
    tb = model.tangent_basis(np.array([0.0]))[:, 0]
    assert np.allclose(np.abs(tb), 1.0 / np.sqrt(2.0), atol=1e-12)


def test_random_manifold_deterministic():
    spec = mf.ManifoldSpec(intrinsic_dim=2, ambient_dim=8, seed=7)
    a, b = mf.make_manifold(spec), mf.make_manifold(spec)
    t = np.random.default_rng(1).uniform(-1, 1, (16, 2))
    assert np.array_equal(a.chart(t), b.chart(t))


def test_bad_dims_rejected():
    with pytest.raises(errors.ConfigurationError):
        mf.make_manifold(mf.ManifoldSpec(intrinsic_dim=2, ambient_dim=2, seed=0))


def test_sample_real_on_manifold(rng):
    flat = mf.make_manifold(mf.ManifoldSpec.flat_line(2))
    pts = mf.sample_real(flat, 3, rng)
    assert np.all(pts[:, 1] == 0.0)
    sine = mf.make_manifold(mf.ManifoldSpec.sine_graph(2))
    pts = mf.sample_real(sine, 10_000, rng)
    assert np.max(np.abs(pts[:, 1] - np.sin(pts[:, 0]))) < 1e-12


def test_sample_real_deterministic():
    model = mf.make_manifold(mf.ManifoldSpec.sine_graph(2))
    a = mf.sample_real(model, 64, np.random.default_rng(3))
    b = mf.sample_real(model, 64, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_tube_logdensity_single_anchor():
    tube = mf.TubeMixture(np.zeros((1, 1)), 1.0)
    val = mf.tube_logdensity(tube, np.zeros((1, 1)))[0]
    assert np.isclose(val, np.log(1.0 / np.sqrt(2 * np.pi)), atol=1e-12)


def test_tube_symmetry():
    a = 0.7
    two = mf.TubeMixture(np.array([[a], [-a]]), 0.5)
    one = mf.TubeMixture(np.array([[a]]), 0.5)
    assert np.isclose(mf.tube_logdensity(two, np.array([[0.0]]))[0],
                      mf.tube_logdensity(one, np.array([[0.0]]))[0], atol=1e-12)


def test_tube_density_integrates_to_one():
    tube = mf.TubeMixture(np.array([[-1.0], [0.3], [2.0]]), 0.4)
    total, _ = quad(lambda v: np.exp(
        mf.tube_logdensity(tube, np.array([[v]]))[0]), -8, 10, limit=200)
    assert abs(total - 1.0) < 1e-3


def test_tube_sample_mean_sq_distance(rng):
    eps0 = 0.2
    anchors = np.array([[0.0, 0.0], [5.0, 5.0]])
    tube = mf.TubeMixture(anchors, eps0)
    x = mf.tube_sample(tube, 100_000, rng)
    d2 = np.min(np.sum((x[:, None, :] - anchors[None]) ** 2, axis=2), axis=1)
    assert abs(d2.mean() / (2 * eps0 ** 2) - 1.0) < 0.02


def test_tube_bad_radius():
    with pytest.raises(errors.ConfigurationError):
        mf.TubeMixture(np.zeros((1, 1)), 0.0)


def test_gen_lam0_is_broad():
    anchors = np.array([[0.0], [1.0]])
    gen = mf.GenModel(anchors, 0.0, 0.1, 2.0)
    x = np.array([[0.4], [-1.0], [3.0]])
    center = anchors.mean(axis=0)
    expect = -0.5 * ((x - center) ** 2).sum(axis=1) / 4.0 \
        - 0.5 * np.log(2 * np.pi * 4.0)
    assert np.allclose(mf.gen_logdensity(gen, x), expect, atol=1e-12)


def test_gen_lam1_matches_tube():
    anchors = np.array([[0.0], [1.0], [-2.0]])
    eps0 = 0.3
    gen = mf.GenModel(anchors, 1.0, eps0, 2.0)
    tube = mf.TubeMixture(anchors, eps0)
    x = np.linspace(-3, 3, 11)[:, None]
    assert np.allclose(mf.gen_logdensity(gen, x),
                       mf.tube_logdensity(tube, x), atol=1e-12)


def test_gen_mixture_hand_formula():
    anchors = np.array([[0.0], [2.0]])
    gen = mf.GenModel(anchors, 0.5, 0.5, 3.0)

    def norm_pdf(v, mu, s):
        return np.exp(-0.5 * ((v - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi))

    for q in (-1.0, 0.0, 0.7, 1.5, 4.0):
        mem = 0.5 * (norm_pdf(q, 0.0, 0.5) + norm_pdf(q, 2.0, 0.5))
        broad = norm_pdf(q, 1.0, 3.0)
        expect = np.log(0.5 * mem + 0.5 * broad)
        got = mf.gen_logdensity(gen, np.array([[q]]))[0]
        assert np.isclose(got, expect, atol=1e-12)


def test_gen_sample_matches_density_moments(rng):
    anchors = np.array([[0.0], [1.0]])
    gen = mf.GenModel(anchors, 0.5, 0.2, 2.0)
    x = mf.gen_sample(gen, 200_000, rng).ravel()
    # analytic mean: 0.5 * mean(anchors) + 0.5 * broad_center = 0.5
    assert abs(x.mean() - 0.5) < 0.02
    # E[X^2] over components minus mean^2
    second = 0.5 * (0.2 ** 2 + 0.5 * (0.0 + 1.0)) + 0.5 * (4.0 + 0.25)
    var = second - 0.25
    assert abs(x.var() / var - 1.0) < 0.05


def test_gen_bad_lam():
    with pytest.raises(errors.ConfigurationError):
        mf.GenModel(np.zeros((1, 1)), 1.5, 0.1, 1.0)
