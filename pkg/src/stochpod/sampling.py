"""Random principal subspaces.

Draws k-dimensional subspaces whose law concentrates around the principal
subspace of a covariance spectrum, with a single concentration parameter
``beta`` (the resample size): the subspace is the span of the top-k left
singular vectors of diag(scales) Z, where Z is r-by-beta standard normal.
``beta = k`` recovers the classical angular central Gaussian subspace
law; larger beta concentrates the draw near the deterministic principal
subspace.  Real-valued beta is supported by weighting the last Gaussian
column by the fractional part.

Draws are deterministic functions of (master_seed, stream_index) through
a counter-based generator, so ensembles replay identically under any
degree of concurrency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GapError
from .subspace import SubspaceBasis, principal_subspace_map

__all__ = [
    "StochasticSubspaceModel",
    "RandomStream",
    "sample_reduced",
    "sample_fractional",
    "sample_ambient",
    "sample_ensemble",
]


@dataclass(frozen=True)
class StochasticSubspaceModel:
    """Spectrum-scaled random subspace model.

    ``scales`` are the square roots of the covariance eigenvalues
    (strictly positive, non-increasing), ``k`` the subspace dimension,
    ``beta`` the concentration (resample size), real-valued, >= k.
    """

    scales: np.ndarray
    k: int
    beta: float

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scales, dtype=float))
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "beta", float(self.beta))
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        if np.any(np.diff(s) > 0):
            raise ValueError("scales must be non-increasing")
        if not 1 <= self.k <= s.shape[0]:
            raise ValueError(f"k must lie in [1, {s.shape[0]}], got {self.k}")
        if self.beta < self.k:
            raise ValueError(f"beta must be >= k={self.k}, got {self.beta}")

    @property
    def rank(self) -> int:
        return self.scales.shape[0]

    def with_beta(self, beta: float) -> "StochasticSubspaceModel":
        return StochasticSubspaceModel(self.scales, self.k, beta)


@dataclass(frozen=True)
class RandomStream:
    """One substream of a counter-based random number generator.

    (master_seed, stream_index) fully determines the Gaussian sequence;
    distinct stream indices give statistically independent sequences.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(seq))

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        """Standard normal matrix filled column by column.

        Column-major fill means widening the matrix extends the draw
        instead of permuting it, which keeps paired-seed comparisons
        across nearby beta values meaningful.
        """
        flat = self.generator().standard_normal(rows * cols)
        return flat.reshape(cols, rows).T


def sample_reduced(model: StochasticSubspaceModel, stream: RandomStream) -> SubspaceBasis:
    """One draw in the r-dimensional spectral coordinates (integer beta).

    Returns the top-k left singular factor of diag(scales) Z with Z an
    r-by-beta standard normal matrix.
    """
    if not float(model.beta).is_integer():
        raise ValueError("sample_reduced requires integer beta; use sample_fractional")
    z = stream.normal_matrix(model.rank, int(model.beta))
    return principal_subspace_map(model.scales[:, None] * z, model.k)


def sample_fractional(model: StochasticSubspaceModel, stream: RandomStream) -> SubspaceBasis:
    """One draw with real-valued beta.

    Z gets ceil(beta) columns and the final column is weighted by
    beta - floor(beta).  Integer beta appends no zero-weight column, so
    the draw coincides exactly with ``sample_reduced``.
    """
    z = _fractional_gaussian(model, stream)
    return principal_subspace_map(model.scales[:, None] * z, model.k)


def _fractional_gaussian(model: StochasticSubspaceModel, stream: RandomStream) -> np.ndarray:
    beta = model.beta
    if float(beta).is_integer():
        return stream.normal_matrix(model.rank, int(beta))
    cols = int(np.ceil(beta))
    z = stream.normal_matrix(model.rank, cols)
    z[:, -1] *= beta - np.floor(beta)
    return z


def sample_ambient(model: StochasticSubspaceModel, modes, stream: RandomStream) -> SubspaceBasis:
    """One draw lifted to the ambient space: W = V_r U_k.

    ``modes`` must have orthonormal columns (the rank-r spectral basis);
    the draw then lies inside range(modes), so any linear constraint the
    modes satisfy is inherited exactly.
    """
    v = modes.matrix if isinstance(modes, SubspaceBasis) else np.asarray(modes, dtype=float)
    if v.shape[1] != model.rank:
        raise ValueError("modes column count must equal the model rank")
    if not np.allclose(v.T @ v, np.eye(v.shape[1]), atol=1e-9):
        raise ValueError("modes must have orthonormal columns")
    u = sample_fractional(model, stream)
    return SubspaceBasis(v @ u.matrix)


def sample_ensemble(model: StochasticSubspaceModel, modes, count: int,
                    master_seed: int) -> list[SubspaceBasis]:
    """Independent ambient draws; draw i uses stream index i.

    Output order is by index, identical for any degree of concurrent
    execution by construction.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    return [
        sample_ambient(model, modes, RandomStream(master_seed, i))
        for i in range(count)
    ]


def batch_fractional_draws(model: StochasticSubspaceModel, master_seed: int,
                           indices) -> np.ndarray:
    """Stacked reduced draws, one per stream index, shape (len, r, k).

    Uses the same per-index streams, truncation, spectral-gap check, and
    sign convention as ``sample_fractional``, but runs the SVDs batched;
    the Monte-Carlo loops in training and prediction live on this path.
    """
    indices = list(indices)
    r, k, beta = model.rank, model.k, model.beta
    integer = float(beta).is_integer()
    cols = int(beta) if integer else int(np.ceil(beta))
    z = np.empty((len(indices), r, cols))
    for slot, i in enumerate(indices):
        z[slot] = RandomStream(master_seed, int(i)).normal_matrix(r, cols)
    if not integer:
        z[:, :, -1] *= beta - np.floor(beta)
    u, s, _ = np.linalg.svd(model.scales[None, :, None] * z, full_matrices=False)
    trailing = s[:, k] if k < s.shape[1] else np.zeros(s.shape[0])
    bad = s[:, k - 1] - trailing <= 1e-12 * s[:, 0]
    if np.any(bad):
        raise GapError(f"tied singular values in draw(s) "
                       f"{[indices[j] for j in np.flatnonzero(bad)]}")
    u = u[:, :, :k]
    lead = np.argmax(np.abs(u), axis=1)                       # (len, k)
    signs = np.sign(np.take_along_axis(u, lead[:, None, :], axis=1)[:, 0, :])
    signs[signs == 0] = 1.0
    return u * signs[:, None, :]
