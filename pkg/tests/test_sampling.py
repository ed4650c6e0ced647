import numpy as np
import pytest
import scipy.linalg
import scipy.stats

import stochpod as sp
from stochpod.errors import GapError


def random_modes(n, r, seed=5):
    gen = np.random.default_rng(seed)
    q, _ = np.linalg.qr(gen.normal(size=(n, r)))
    return q


# ---------------------------------------------------------------------------
# reduced draws


def test_full_dimensional_draw_is_orthogonal():
    model = sp.StochasticSubspaceModel(np.array([3.0, 2.0, 1.0]), 3, 3)
    basis = sp.sample_reduced(model, sp.RandomStream(11, 0))
    assert np.allclose(basis.projector(), np.eye(3), atol=1e-10)


def test_beta_equals_k_matches_polar():
    scales = np.array([4.0, 2.0, 1.0, 0.5])
    model = sp.StochasticSubspaceModel(scales, 2, 2)
    stream = sp.RandomStream(21, 7)
    basis = sp.sample_reduced(model, stream)
    z = stream.normal_matrix(4, 2)
    oracle = sp.polar_orthonormalize(scales[:, None] * z)
    assert sp.projector_distance(basis, oracle) <= 1e-10


def test_reduced_requires_integer_beta():
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 1.5)
    with pytest.raises(ValueError):
        sp.sample_reduced(model, sp.RandomStream(0))


def test_model_validation():
    with pytest.raises(ValueError):
        sp.StochasticSubspaceModel(np.array([1.0, 2.0]), 1, 1)   # increasing scales
    with pytest.raises(ValueError):
        sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 2, 1)   # beta < k
    with pytest.raises(ValueError):
        sp.StochasticSubspaceModel(np.array([2.0, -1.0]), 1, 1)  # nonpositive


def test_angle_density_matches_analytic_acg():
    """r=2, k=1: the subspace angle follows the angular central Gaussian law.

    Oracle: chi-square goodness of fit against the numerically normalized
    density p(theta) ~ (cos^2/4 + sin^2)^(-1) on [0, pi).
    """
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 1)
    n_samples = 10_000
    angles = np.empty(n_samples)
    for i in range(n_samples):
        u = sp.sample_reduced(model, sp.RandomStream(314, i)).matrix.ravel()
        angles[i] = np.arctan2(u[1], u[0]) % np.pi

    bins = 20
    edges = np.linspace(0.0, np.pi, bins + 1)
    observed, _ = np.histogram(angles, bins=edges)
    theta = np.linspace(0.0, np.pi, 200_001)
    density = 1.0 / (np.cos(theta)**2 / 4.0 + np.sin(theta)**2)
    cdf = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) / 2.0)])
    cdf /= cdf[-1]
    probs = np.diff(np.interp(edges, theta, cdf))
    chi2 = np.sum((observed - n_samples * probs)**2 / (n_samples * probs))
    p_value = scipy.stats.chi2.sf(chi2, bins - 1)
    assert p_value > 0.01


# ---------------------------------------------------------------------------
# fractional beta


def test_fractional_integer_beta_is_bitwise_reduced():
    model = sp.StochasticSubspaceModel(np.array([3.0, 2.0, 1.0]), 2, 4)
    stream = sp.RandomStream(99, 3)
    a = sp.sample_reduced(model, stream).matrix
    b = sp.sample_fractional(model, stream).matrix
    assert np.array_equal(a, b)


def test_fractional_structure_matches_column_weight_rule():
    scales = np.array([3.0, 2.5, 2.0, 1.5, 1.0, 0.5])
    beta = 4.32
    model = sp.StochasticSubspaceModel(scales, 4, beta)
    stream = sp.RandomStream(7, 3)
    got = sp.sample_fractional(model, stream)
    # independent construction: ceil(beta)=5 Gaussian columns, last one
    # weighted by the fractional part
    weight = beta - np.floor(beta)
    assert weight == pytest.approx(0.32, abs=1e-12)
    z = stream.normal_matrix(6, 5)
    assert z.shape == (6, 5)
    z[:, -1] *= weight
    oracle = sp.principal_subspace_map(scales[:, None] * z, 4)
    assert np.array_equal(got.matrix, oracle.matrix)


def test_fractional_continuity_at_integer():
    scales = np.array([3.0, 2.0, 1.0, 0.5])
    k = 2
    base = sp.StochasticSubspaceModel(scales, k, float(k))
    bumped = sp.StochasticSubspaceModel(scales, k, k + 1e-9)
    distances = []
    for seed in range(100):
        stream = sp.RandomStream(1000, seed)
        a = sp.sample_fractional(base, stream)
        b = sp.sample_fractional(bumped, stream)
        distances.append(sp.projector_distance(a, b))
    assert np.median(distances) <= 1e-4


# ---------------------------------------------------------------------------
# ambient draws


def test_ambient_canonical_embedding():
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 3)
    modes = np.eye(6, 2)
    stream = sp.RandomStream(4, 0)
    w = sp.sample_ambient(model, modes, stream).matrix
    u = sp.sample_fractional(model, stream).matrix
    assert np.allclose(w[:2], u)
    assert np.allclose(w[2:], 0.0)


def test_ambient_preserves_constraints():
    n, r, k = 12, 4, 2
    modes = random_modes(n, r)
    # any B orthogonal to the modes is annihilated by every draw
    proj = np.eye(n) - modes @ modes.T
    b = proj @ np.random.default_rng(3).normal(size=(n, 3))
    model = sp.StochasticSubspaceModel(np.array([3.0, 2.0, 1.0, 0.5]), k, 6)
    for i in range(50):
        w = sp.sample_ambient(model, modes, sp.RandomStream(8, i)).matrix
        assert np.linalg.norm(b.T @ w) <= 1e-10
        assert np.linalg.norm(w.T @ w - np.eye(k)) <= 1e-10


def test_ambient_rejects_non_orthonormal_modes():
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 2)
    with pytest.raises(ValueError):
        sp.sample_ambient(model, np.ones((5, 2)), sp.RandomStream(0))


def test_ambient_matches_direct_definition():
    """Low-rank sampling equals the direct definition in distribution.

    Oracle: draw from the definition (orthonormalize the top-k left factor
    of an n-by-beta Gaussian with the full rank-r covariance, built via a
    symmetric square root) and compare largest principal angles with a
    two-sample KS test.
    """
    n, r, k, beta = 8, 4, 2, 6
    count = 2000
    modes = random_modes(n, r, seed=17)
    lam = np.array([6.0, 3.0, 1.5, 0.75])
    model = sp.StochasticSubspaceModel(np.sqrt(lam), k, beta)
    v_k = modes[:, :k]

    fast = np.empty(count)
    for i in range(count):
        w = sp.sample_ambient(model, modes, sp.RandomStream(2468, i)).matrix
        fast[i] = np.max(scipy.linalg.subspace_angles(w, v_k))

    sigma = (modes * lam) @ modes.T
    w_eig, v_eig = np.linalg.eigh(sigma)
    root = (v_eig * np.sqrt(np.clip(w_eig, 0.0, None))) @ v_eig.T
    gen = np.random.default_rng(13579)
    direct = np.empty(count)
    for i in range(count):
        x = root @ gen.standard_normal((n, beta))
        w = sp.principal_subspace_map(x, k).matrix
        direct[i] = np.max(scipy.linalg.subspace_angles(w, v_k))

    assert scipy.stats.ks_2samp(fast, direct).pvalue > 0.01


# ---------------------------------------------------------------------------
# ensembles


def test_ensemble_singleton_matches_ambient():
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 2)
    modes = random_modes(5, 2)
    only = sp.sample_ensemble(model, modes, 1, 42)[0]
    direct = sp.sample_ambient(model, modes, sp.RandomStream(42, 0))
    assert np.array_equal(only.matrix, direct.matrix)


def test_ensemble_is_deterministic():
    model = sp.StochasticSubspaceModel(np.array([3.0, 1.0, 0.5]), 2, 5)
    modes = random_modes(7, 3)
    a = sp.sample_ensemble(model, modes, 20, 7)
    b = sp.sample_ensemble(model, modes, 20, 7)
    for x, y in zip(a, b):
        assert np.array_equal(x.matrix, y.matrix)


def test_ensemble_validates_count():
    model = sp.StochasticSubspaceModel(np.array([2.0, 1.0]), 1, 1)
    with pytest.raises(ValueError):
        sp.sample_ensemble(model, np.eye(4, 2), 0, 1)


def test_concentration_monotone_in_beta():
    n, r, k = 20, 8, 3
    modes = random_modes(n, r, seed=23)
    scales = np.sqrt(np.array([8.0, 6.0, 4.0, 2.0, 1.0, 0.6, 0.3, 0.1]))
    v_k = modes[:, :k]
    means = []
    for beta in (k, 4 * k, 16 * k, 64 * k):
        model = sp.StochasticSubspaceModel(scales, k, float(beta))
        angles = [
            np.max(scipy.linalg.subspace_angles(
                sp.sample_ambient(model, modes, sp.RandomStream(31, i)).matrix, v_k))
            for i in range(500)
        ]
        means.append(np.mean(angles))
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_uniformity_at_identity_covariance():
    r, k, count = 6, 2, 3000
    model = sp.StochasticSubspaceModel(np.ones(r), k, k)
    projectors = np.empty((count, r, r))
    for i in range(count):
        u = sp.sample_fractional(model, sp.RandomStream(55, i)).matrix
        projectors[i] = u @ u.T
    mean = projectors.mean(axis=0)
    stderr = projectors.std(axis=0, ddof=1) / np.sqrt(count)
    target = (k / r) * np.eye(r)
    assert np.all(np.abs(mean - target) <= 5.0 * np.maximum(stderr, 1e-12))


def test_samples_concentrate_at_mode():
    r, k = 6, 2
    scales = np.array([3.0, 2.5, 1.0, 0.8, 0.5, 0.3])
    model = sp.StochasticSubspaceModel(scales, k, 50.0 * k)
    cov = sp.ppca_mle(scales**2, k)
    at_mode = sp.macg_log_pdf(np.eye(r, k), cov)
    below = 0
    count = 500
    for i in range(count):
        u = sp.sample_fractional(model, sp.RandomStream(77, i))
        if sp.macg_log_pdf(u, cov) <= at_mode:
            below += 1
    assert below >= 0.99 * count


# ---------------------------------------------------------------------------
# batched path


def test_batched_draws_match_sequential():
    scales = np.array([4.0, 2.0, 1.0, 0.5, 0.25])
    for beta in (3, 4.62):
        model = sp.StochasticSubspaceModel(scales, 3, beta)
        batch = sp.batch_fractional_draws(model, 101, range(40))
        for i in range(40):
            single = sp.sample_fractional(model, sp.RandomStream(101, i)).matrix
            assert np.array_equal(batch[i], single)


def test_tied_spectrum_raises_gap_error():
    # exactly tied singular values (probability zero in sampling) surface
    # as GapError instead of an arbitrary subspace
    with pytest.raises(GapError):
        sp.principal_subspace_map(np.eye(2), 1)
