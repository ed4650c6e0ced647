import numpy as np
import pytest

import stochpod as sp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def covariance_from_dense(sigma: np.ndarray) -> sp.CovarianceModel:
    """Full-rank covariance model from a dense SPD matrix."""
    w, v = np.linalg.eigh(sigma)
    order = np.argsort(w)[::-1]
    return sp.CovarianceModel(eigvecs=v[:, order], eigvals=w[order], noise_floor=0.0)


def sample_macg_subspace(sigma: np.ndarray, k: int, rng) -> sp.SubspaceBasis:
    """Classical angular central Gaussian subspace draw.

    Orthonormalizes a matrix whose columns are iid N(0, Sigma); built from
    the symmetric square root, independently of the package's sampler.
    """
    w, v = np.linalg.eigh(sigma)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return sp.polar_orthonormalize(root @ rng.standard_normal((sigma.shape[0], k)))
