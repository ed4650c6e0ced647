"""Deterministic subspace machinery.

Centering and compact SVD of snapshot matrices, energy-based rank
selection, the two orthonormalization maps (polar and principal-subspace),
the closed-form probabilistic-PCA covariance estimate, and the matrix
angular central Gaussian log-density on the Grassmann manifold.

Everything here is a pure function; the dataclasses are frozen and safe
to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GapError

#: Relative cutoff below which singular values are treated as zero.
DEFAULT_RANK_TOLERANCE = 1e-12

#: Relative spectral-gap tolerance for the principal subspace map.
DEFAULT_GAP_TOLERANCE = 1e-12


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-d array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SnapshotSet:
    """A snapshot matrix together with its column mean and centered form."""

    data: np.ndarray      # (n, m), columns are state samples
    mean: np.ndarray      # (n,)
    centered: np.ndarray  # (n, m) = data - mean 1^T


@dataclass(frozen=True)
class PodDecomposition:
    """Compact SVD of a centered snapshot matrix.

    ``modes`` has orthonormal columns, ``singular_values`` is strictly
    positive and non-increasing.  ``right_factors`` holds the matching
    right singular vectors so the decomposition reconstructs its input.
    """

    modes: np.ndarray            # (n, r)
    singular_values: np.ndarray  # (r,)
    rank: int
    right_factors: np.ndarray    # (m, r)

    def covariance_eigenvalues(self, sample_count: int) -> np.ndarray:
        """Eigenvalues of the sample covariance (divisor ``sample_count``)."""
        return self.singular_values**2 / sample_count


@dataclass(frozen=True)
class SubspaceBasis:
    """An orthonormal basis representing a subspace of R^n."""

    matrix: np.ndarray  # (n, k), orthonormal columns

    def __post_init__(self):
        m = _as_matrix(self.matrix, "basis")
        object.__setattr__(self, "matrix", m)
        gram = m.T @ m
        if not np.allclose(gram, np.eye(m.shape[1]), atol=1e-9):
            raise ValueError("basis columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.matrix.shape[0]

    def projector(self) -> np.ndarray:
        return self.matrix @ self.matrix.T


@dataclass(frozen=True)
class CovarianceModel:
    """Low-rank-plus-isotropic covariance: C = E diag(w - e) E^T + e I.

    ``eigvecs`` is n-by-r orthonormal, ``eigvals`` the retained spectrum
    (non-increasing, each >= ``noise_floor``), ``noise_floor`` the
    isotropic level filling the remaining n - r directions.
    """

    eigvecs: np.ndarray    # (n, r)
    eigvals: np.ndarray    # (r,)
    noise_floor: float

    def __post_init__(self):
        v = _as_matrix(self.eigvecs, "eigvecs")
        w = np.atleast_1d(np.asarray(self.eigvals, dtype=float))
        object.__setattr__(self, "eigvecs", v)
        object.__setattr__(self, "eigvals", w)
        object.__setattr__(self, "noise_floor", float(self.noise_floor))
        if w.shape[0] != v.shape[1]:
            raise ValueError("eigvals length must match eigvecs column count")
        if np.any(np.diff(w) > 0):
            raise ValueError("eigvals must be non-increasing")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be nonnegative")
        if w.size and w[-1] < self.noise_floor - 1e-12 * max(1.0, w[0]):
            raise ValueError("retained eigvals must dominate the noise floor")

    @property
    def dim(self) -> int:
        return self.eigvecs.shape[0]

    @property
    def rank(self) -> int:
        return self.eigvecs.shape[1]

    def full_spectrum(self) -> np.ndarray:
        """All n eigenvalues: the retained block then the noise floor."""
        n, r = self.dim, self.rank
        return np.concatenate([self.eigvals, np.full(n - r, self.noise_floor)])

    def dense(self) -> np.ndarray:
        """Materialize the n-by-n covariance (small problems only)."""
        v, w, e = self.eigvecs, self.eigvals, self.noise_floor
        return (v * (w - e)) @ v.T + e * np.eye(self.dim)

    def is_positive_definite(self) -> bool:
        spectrum = self.full_spectrum()
        return bool(np.all(spectrum > 0))


def center(data) -> SnapshotSet:
    """Subtract the column mean from a snapshot matrix."""
    data = _as_matrix(data, "snapshot matrix")
    mean = data.mean(axis=1)
    centered = data - mean[:, None]
    return SnapshotSet(data=data, mean=mean, centered=centered)


def compact_svd(centered, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> PodDecomposition:
    """Compact SVD, discarding singular values <= rank_tolerance * sigma_1.

    Raises ValueError on an all-zero matrix and applies a deterministic
    sign convention (largest-magnitude entry of each mode made positive)
    so outputs are reproducible across backends.
    """
    centered = _as_matrix(centered, "centered matrix")
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= 0.0:
        raise ValueError("matrix has rank zero")
    keep = s > rank_tolerance * s[0]
    r = int(np.count_nonzero(keep))
    u, s, vt = u[:, :r], s[:r], vt[:r, :]
    u, vt = _fix_signs(u, vt)
    return PodDecomposition(modes=u, singular_values=s, rank=r, right_factors=vt.T)


def _fix_signs(u, vt=None):
    """Make the largest-magnitude entry of each left vector positive."""
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[lead, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    if vt is None:
        return u
    return u, vt * signs[:, None]


def select_rank(singular_values, energy_threshold: float) -> int:
    """Smallest k whose leading squared singular values reach the threshold."""
    if not 0.0 < energy_threshold < 1.0:
        raise ValueError("energy_threshold must lie in (0, 1)")
    s = np.asarray(singular_values, dtype=float)
    energy = np.cumsum(s**2)
    total = energy[-1]
    return int(np.searchsorted(energy, energy_threshold * total) + 1)


def polar_orthonormalize(m) -> SubspaceBasis:
    """Orthonormalize by polar decomposition: M (M^T M)^{-1/2}.

    Preserves the range of M; requires full column rank.
    """
    m = _as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[-1] <= DEFAULT_RANK_TOLERANCE * s[0] or s[0] == 0.0:
        raise np.linalg.LinAlgError("matrix is rank deficient; polar factor undefined")
    # M (M^T M)^{-1/2} = U V^T for M = U diag(s) V^T
    return SubspaceBasis(u @ vt)


def principal_subspace_map(m, k: int, gap_tolerance: float = DEFAULT_GAP_TOLERANCE) -> SubspaceBasis:
    """Left singular vectors of the k largest singular values.

    Defined only where the k-th singular value exceeds the (k+1)-th by more
    than gap_tolerance * sigma_1; otherwise raises GapError.  The sign
    convention of ``compact_svd`` makes the returned basis deterministic.
    """
    m = _as_matrix(m)
    if not 1 <= k <= min(m.shape):
        raise ValueError(f"k={k} out of range for shape {m.shape}")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    _check_gap(s, k, gap_tolerance)
    return SubspaceBasis(_fix_signs(u[:, :k]))


def _check_gap(s, k, gap_tolerance):
    trailing = s[k] if k < s.shape[0] else 0.0
    if s[k - 1] - trailing <= gap_tolerance * s[0]:
        raise GapError(
            f"singular values {k} and {k + 1} are not separated "
            f"(sigma_k={s[k - 1]:.3e}, next={trailing:.3e})"
        )


def ppca_mle(eigvals, k: int, eigvecs=None) -> CovarianceModel:
    """Closed-form maximum-likelihood covariance for a rank-k latent model.

    ``eigvals`` are the sample-covariance eigenvalues (length n,
    non-increasing).  The retained block keeps the k leading eigenvalues
    unchanged; the noise floor is the mean of the remaining n - k.
    When ``eigvecs`` is omitted the canonical basis is used.
    """
    w = np.asarray(eigvals, dtype=float)
    n = w.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}, got {k}")
    if np.any(np.diff(w) > 1e-12 * max(1.0, abs(w[0]))):
        raise ValueError("eigvals must be non-increasing")
    noise = float(w[k:].mean())
    if eigvecs is None:
        eigvecs = np.eye(n, k)
    return CovarianceModel(eigvecs=np.asarray(eigvecs, dtype=float)[:, :k],
                           eigvals=w[:k].copy(), noise_floor=noise)


def gaussian_log_likelihood(sample_cov_eigvals, model: CovarianceModel, m: int) -> float:
    """Gaussian log-likelihood of m samples, -(m/2)[n ln 2pi + ln|C| + tr(C^-1 S)].

    Evaluated through the shared eigenbasis: ``sample_cov_eigvals`` must be
    the sample-covariance spectrum expressed in the model's eigenvector
    order, which holds by construction for models built by ``ppca_mle``
    from that same spectrum.  No dense n-by-n matrix is formed.
    """
    lam = np.asarray(sample_cov_eigvals, dtype=float)
    n = model.dim
    if lam.shape[0] != n:
        raise ValueError("sample spectrum length must match model dimension")
    c = model.full_spectrum()
    if np.any(c <= 0):
        raise np.linalg.LinAlgError("model covariance is singular")
    log_det = float(np.sum(np.log(c)))
    trace = float(np.sum(lam / c))
    return -0.5 * m * (n * np.log(2.0 * np.pi) + log_det + trace)


def macg_log_pdf(subspace, model: CovarianceModel) -> float:
    """Log-density of the matrix angular central Gaussian on Gr(n, k).

    log p = -(n/2) ln|X^T C^-1 X| - (k/2) ln|C| for any orthonormal basis X
    of the subspace; invariant under right-multiplication of X by an
    orthogonal matrix.  C must be positive definite (regularize
    rank-deficient sample covariances through ``ppca_mle`` first).
    """
    x = subspace.matrix if isinstance(subspace, SubspaceBasis) else _as_matrix(subspace, "basis")
    n, k = x.shape
    if model.dim != n:
        raise ValueError("subspace and covariance dimensions differ")
    if not model.is_positive_definite():
        raise np.linalg.LinAlgError("covariance model is singular; regularize first")
    e = model.noise_floor
    g = model.eigvecs.T @ x                      # (r, k)
    if e > 0.0:
        core = np.eye(k) / e + g.T @ ((1.0 / model.eigvals - 1.0 / e)[:, None] * g)
    else:
        # noise_floor == 0 is only PD when the model has full rank
        core = g.T @ ((1.0 / model.eigvals)[:, None] * g)
    sign, log_det_core = np.linalg.slogdet(core)
    if sign <= 0:
        raise np.linalg.LinAlgError("X^T C^-1 X is not positive definite")
    log_det_cov = float(np.sum(np.log(model.full_spectrum())))
    return -0.5 * n * log_det_core - 0.5 * k * log_det_cov


def projector_distance(a, b) -> float:
    """Frobenius distance between the orthogonal projectors of two bases."""
    pa = a.projector() if isinstance(a, SubspaceBasis) else a @ a.T
    pb = b.projector() if isinstance(b, SubspaceBasis) else b @ b.T
    return float(np.linalg.norm(pa - pb, "fro"))
