"""Full-order systems, Galerkin reduction, and solvers.

Three system classes are supported: linear static, cubic nonlinear
static, and linear second-order dynamics.  Reduction is plain Galerkin
projection; for linear systems a two-stage path projects the operators
once onto a rank-r basis and then cheaply re-projects per k-dimensional
inner basis, which is what makes large stochastic ensembles affordable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.linalg

from .errors import ConvergenceError
from .subspace import SubspaceBasis

Array = np.ndarray


class _ProjectionCounter:
    """Counts full-space operator projections (test instrumentation)."""

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1

    def reset(self):
        self.count = 0


projection_counter = _ProjectionCounter()


# ---------------------------------------------------------------------------
# systems

@dataclass(frozen=True)
class LinearStaticSystem:
    stiffness: Array                      # (n, n) symmetric
    force: Array                          # (n,)
    constraints: Array | None = None      # (n, n_cd), admissible set B^T x = 0


@dataclass(frozen=True)
class NonlinearCubicSystem:
    """K x + cubic_coeff * x^3 = force_map(mu), cubing elementwise."""

    stiffness: Array
    cubic_coeff: float
    force_map: Callable[[Array], Array]
    constraints: Array | None = None


@dataclass(frozen=True)
class LinearDynamicSystem:
    """M x'' + C x' + K x = load(t)."""

    mass: Array
    damping: Array
    stiffness: Array
    load: Union[Callable[[float], Array], Array]   # callable, or (steps+1, n) samples
    initial_state: tuple[Array, Array]             # (x0, v0)
    rayleigh_beta: float | None = None


@dataclass(frozen=True)
class FactoredBasis:
    """Ambient basis W = outer @ inner kept in factored form.

    Materializing W costs an n-dimensional product, so staged ensemble
    paths extract only the rows they need.
    """

    outer: Array   # (n, r)
    inner: Array   # (r, k)

    def matrix(self) -> Array:
        return self.outer @ self.inner

    def rows(self, indices) -> Array:
        return self.outer[indices] @ self.inner


def basis_matrix(basis) -> Array:
    if isinstance(basis, SubspaceBasis):
        return basis.matrix
    if isinstance(basis, FactoredBasis):
        return basis.matrix()
    return np.asarray(basis, dtype=float)


@dataclass(frozen=True)
class ReducedLinearStatic:
    stiffness: Array
    force: Array
    basis: object
    parent: LinearStaticSystem


@dataclass(frozen=True)
class ReducedCubic:
    """Reduced cubic system; the cubic term is evaluated in full space.

    Only the stiffness is pre-projected.  The residual is
    K_r q + a * W^T (W q)^3 - W^T f(mu) with W the (possibly factored)
    basis.
    """

    stiffness: Array
    cubic_coeff: float
    basis: object
    parent: NonlinearCubicSystem

    def force(self, mu) -> Array:
        return basis_matrix(self.basis).T @ self.parent.force_map(mu)


@dataclass(frozen=True)
class ReducedDynamic:
    mass: Array
    damping: Array
    stiffness: Array
    load: Union[Callable[[float], Array], Array]
    initial_state: tuple[Array, Array]
    basis: object
    parent: LinearDynamicSystem


ReducedSystem = Union[ReducedLinearStatic, ReducedCubic, ReducedDynamic]


@dataclass(frozen=True)
class StagedOperators:
    """Stage-one result: the system projected once onto the rank-r modes."""

    reduced: ReducedSystem
    modes: Array   # (n, r)


# ---------------------------------------------------------------------------
# reduction

def _project_operator(a: Array, v: Array) -> Array:
    projection_counter.bump()
    return v.T @ a @ v


def _project_load(load, v: Array):
    if callable(load):
        return lambda t, _load=load, _v=v: _v.T @ _load(t)
    return np.asarray(load, dtype=float) @ v


def galerkin_reduce(system, basis) -> ReducedSystem:
    """Project a system onto an orthonormal basis."""
    v = basis_matrix(basis)
    n = _system_dim(system)
    if v.shape[0] != n:
        raise ValueError(f"basis rows {v.shape[0]} do not match system dimension {n}")
    if isinstance(system, LinearStaticSystem):
        return ReducedLinearStatic(
            stiffness=_project_operator(system.stiffness, v),
            force=v.T @ system.force,
            basis=basis, parent=system)
    if isinstance(system, NonlinearCubicSystem):
        return ReducedCubic(
            stiffness=_project_operator(system.stiffness, v),
            cubic_coeff=system.cubic_coeff,
            basis=basis, parent=system)
    if isinstance(system, LinearDynamicSystem):
        x0, v0 = system.initial_state
        return ReducedDynamic(
            mass=_project_operator(system.mass, v),
            damping=_project_operator(system.damping, v),
            stiffness=_project_operator(system.stiffness, v),
            load=_project_load(system.load, v),
            initial_state=(v.T @ x0, v.T @ v0),
            basis=basis, parent=system)
    raise TypeError(f"cannot reduce {type(system).__name__}")


def two_stage_reduce(system, modes) -> StagedOperators:
    """Project a linear system once onto the rank-r modes.

    Subsequent ``inner_reduce`` calls work purely in r dimensions.
    """
    if isinstance(system, NonlinearCubicSystem):
        raise TypeError("two-stage reduction applies to linear systems only")
    v = modes.matrix if isinstance(modes, SubspaceBasis) else np.asarray(modes, dtype=float)
    return StagedOperators(reduced=galerkin_reduce(system, v), modes=v)


def inner_reduce(staged: StagedOperators, inner) -> ReducedSystem:
    """Re-project staged rank-r operators onto an r-by-k inner basis."""
    u = basis_matrix(inner)
    red = staged.reduced
    w = FactoredBasis(staged.modes, u)
    if isinstance(red, ReducedLinearStatic):
        return ReducedLinearStatic(
            stiffness=u.T @ red.stiffness @ u,
            force=u.T @ red.force,
            basis=w, parent=red.parent)
    if isinstance(red, ReducedDynamic):
        x0, v0 = red.initial_state
        return ReducedDynamic(
            mass=u.T @ red.mass @ u,
            damping=u.T @ red.damping @ u,
            stiffness=u.T @ red.stiffness @ u,
            load=_project_load(red.load, u),
            initial_state=(u.T @ x0, u.T @ v0),
            basis=w, parent=red.parent)
    raise TypeError(f"cannot inner-reduce {type(red).__name__}")


# ---------------------------------------------------------------------------
# constraint handling

def _canonical_constraint_indices(b: Array) -> np.ndarray | None:
    """Indices i where B's columns are (+/-) standard basis vectors, else None."""
    idx = []
    for j in range(b.shape[1]):
        col = b[:, j]
        nz = np.flatnonzero(col)
        if nz.size != 1 or abs(col[nz[0]]) != 1.0:
            return None
        idx.append(nz[0])
    return np.unique(np.asarray(idx, dtype=int))


def _sym_solve(a: Array, rhs: Array) -> Array:
    """Dense symmetric solve: Cholesky first, LU for indefinite matrices."""
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(a, lower=True), rhs)
    except np.linalg.LinAlgError:
        return np.linalg.solve(a, rhs)


def solve_linear_static(system) -> Array:
    """Solve K x = f (full, with constraints honored) or the reduced analogue."""
    if isinstance(system, ReducedLinearStatic):
        return _sym_solve(system.stiffness, system.force)
    if not isinstance(system, LinearStaticSystem):
        raise TypeError(f"expected a linear static system, got {type(system).__name__}")
    k, f, b = system.stiffness, system.force, system.constraints
    if b is None:
        return _sym_solve(k, f)
    fixed = _canonical_constraint_indices(np.asarray(b, dtype=float))
    if fixed is not None:
        keep = np.setdiff1d(np.arange(k.shape[0]), fixed)
        x = np.zeros(k.shape[0])
        x[keep] = _sym_solve(k[np.ix_(keep, keep)], f[keep])
        return x
    nullbasis = scipy.linalg.null_space(np.asarray(b, dtype=float).T)
    y = _sym_solve(nullbasis.T @ k @ nullbasis, nullbasis.T @ f)
    return nullbasis @ y


# ---------------------------------------------------------------------------
# Newton for the cubic system

def _newton(residual, jacobian, guess, tol, max_iter):
    x = np.array(guess, dtype=float)
    res = residual(x)
    norm = float(np.max(np.abs(res)))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        x = x - np.linalg.solve(jacobian(x), res)
        res = residual(x)
        norm = float(np.max(np.abs(res)))
    if norm <= tol:
        return x
    raise ConvergenceError(
        f"Newton did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {norm:.3e})", residual=norm, iterations=max_iter)


def solve_nonlinear_cubic(system: NonlinearCubicSystem, mu, guess=None,
                          tol: float = 1e-10, max_iter: int = 50) -> Array:
    """Newton solve of K x + a x^3 = f(mu) with Jacobian K + 3a diag(x^2)."""
    k = system.stiffness
    a = system.cubic_coeff
    f = system.force_map(mu)
    n = k.shape[0]
    if system.constraints is None:
        x0 = np.zeros(n) if guess is None else np.asarray(guess, dtype=float)
        return _newton(lambda x: k @ x + a * x**3 - f,
                       lambda x: k + 3.0 * a * np.diag(x**2),
                       x0, tol, max_iter)
    fixed = _canonical_constraint_indices(np.asarray(system.constraints, dtype=float))
    if fixed is None:
        raise NotImplementedError("non-canonical constraints on the cubic system")
    keep = np.setdiff1d(np.arange(n), fixed)
    kc = k[np.ix_(keep, keep)]
    fc = f[keep]
    y0 = np.zeros(keep.size) if guess is None else np.asarray(guess, dtype=float)[keep]
    y = _newton(lambda x: kc @ x + a * x**3 - fc,
                lambda x: kc + 3.0 * a * np.diag(x**2),
                y0, tol, max_iter)
    x = np.zeros(n)
    x[keep] = y
    return x


def solve_rom_nonlinear(basis, system: NonlinearCubicSystem, mu, guess=None,
                        tol: float = 1e-10, max_iter: int = 50,
                        reduced: ReducedCubic | None = None) -> Array:
    """Reduced Newton solve; the cubic term is lifted, cubed, projected back.

    Accepts an optional pre-projected ``reduced`` system so ensemble loops
    do not repeat the stiffness projection.
    """
    if reduced is None:
        reduced = galerkin_reduce(system, basis)
    w = basis_matrix(reduced.basis)
    kr = reduced.stiffness
    a = reduced.cubic_coeff
    fr = w.T @ system.force_map(mu)
    q0 = np.zeros(w.shape[1]) if guess is None else np.asarray(guess, dtype=float)

    def residual(q):
        lifted = w @ q
        return kr @ q + a * (w.T @ lifted**3) - fr

    def jacobian(q):
        lifted = w @ q
        return kr + 3.0 * a * (w.T * lifted**2) @ w

    return _newton(residual, jacobian, q0, tol, max_iter)


# ---------------------------------------------------------------------------
# Newmark time integration

@dataclass(frozen=True)
class Trajectory:
    times: Array          # (steps + 1,)
    states: Array         # (dim, steps + 1)
    velocities: Array
    accelerations: Array


def _load_at(load, step: int, t: float) -> Array:
    if callable(load):
        return np.asarray(load(t), dtype=float)
    return load[step]


def newmark_integrate(system, dt: float, t_end: float,
                      gamma: float = 0.5, beta_nm: float = 0.25) -> Trajectory:
    """Implicit Newmark integration of M x'' + C x' + K x = f(t).

    Defaults are the unconditionally stable average-acceleration
    parameters.  The initial acceleration comes from the equation of
    motion at t = 0.  Precomputed load arrays must supply
    floor(t_end/dt) + 1 rows.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(system, ReducedDynamic) or isinstance(system, LinearDynamicSystem):
        m, c, k = system.mass, system.damping, system.stiffness
        load = system.load
        x0, v0 = system.initial_state
    else:
        raise TypeError(f"expected a dynamic system, got {type(system).__name__}")
    steps = int(np.floor(t_end / dt + 1e-12))
    times = np.arange(steps + 1) * dt
    if not callable(load) and load.shape[0] < steps + 1:
        raise ValueError("precomputed load has fewer rows than time steps")

    dim = m.shape[0]
    x = np.empty((dim, steps + 1))
    v = np.empty((dim, steps + 1))
    a = np.empty((dim, steps + 1))
    x[:, 0] = x0
    v[:, 0] = v0
    f0 = _load_at(load, 0, 0.0)
    a[:, 0] = _sym_solve(m, f0 - c @ v0 - k @ x0)

    c0 = 1.0 / (beta_nm * dt**2)
    c1 = gamma / (beta_nm * dt)
    c2 = 1.0 / (beta_nm * dt)
    c3 = 1.0 / (2.0 * beta_nm) - 1.0
    c4 = gamma / beta_nm - 1.0
    c5 = dt * (gamma / (2.0 * beta_nm) - 1.0)
    c6 = dt * (1.0 - gamma)
    c7 = gamma * dt

    k_eff = k + c0 * m + c1 * c
    try:
        factor = scipy.linalg.cho_factor(k_eff, lower=True)
        solve_eff = lambda rhs: scipy.linalg.cho_solve(factor, rhs)
    except np.linalg.LinAlgError:
        lu = scipy.linalg.lu_factor(k_eff)
        solve_eff = lambda rhs: scipy.linalg.lu_solve(lu, rhs)

    for i in range(steps):
        f_next = _load_at(load, i + 1, times[i + 1])
        rhs = (f_next
               + m @ (c0 * x[:, i] + c2 * v[:, i] + c3 * a[:, i])
               + c @ (c1 * x[:, i] + c4 * v[:, i] + c5 * a[:, i]))
        x[:, i + 1] = solve_eff(rhs)
        a[:, i + 1] = c0 * (x[:, i + 1] - x[:, i]) - c2 * v[:, i] - c3 * a[:, i]
        v[:, i + 1] = v[:, i] + c6 * a[:, i] + c7 * a[:, i + 1]

    return Trajectory(times=times, states=x, velocities=v, accelerations=a)


def reconstruct(basis, reduced):
    """Lift reduced coordinates (vector or trajectory) to full space, x = W q."""
    w = basis_matrix(basis)
    if isinstance(reduced, Trajectory):
        return Trajectory(times=reduced.times,
                          states=w @ reduced.states,
                          velocities=w @ reduced.velocities,
                          accelerations=w @ reduced.accelerations)
    return w @ np.asarray(reduced, dtype=float)


def _system_dim(system) -> int:
    if isinstance(system, LinearStaticSystem):
        return system.stiffness.shape[0]
    if isinstance(system, NonlinearCubicSystem):
        return system.stiffness.shape[0]
    if isinstance(system, LinearDynamicSystem):
        return system.mass.shape[0]
    raise TypeError(type(system).__name__)
