"""End-to-end workflow: snapshots -> POD -> ROM -> train beta -> ensemble.

Four stages (train, sample, predict, report) with on-disk artifacts
between them; ``run_pipeline`` executes them in sequence, so a full run
and the stage-wise composition produce byte-identical data artifacts.
All randomness flows from the single config seed through fixed-purpose
derived seeds, making every artifact a deterministic function of the
config document.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, rom
from .config import RunConfig
from .ensemble import (PredictionSummary, QoiExtractor, SubspaceSampler,
                       coverage, run_srom, summarize_matrix)
from .errors import ConvergenceError
from .matrixio import (load_matrix, read_csv, read_json, save_matrix,
                       write_csv, write_json)
from .problems import (SpectralStiffness, SurrogateSpec, add_noise,
                       build_cubic_problem, lhs_sample, observe_sparse,
                       perturb_stiffness, surrogate_dynamics)
from .sampling import RandomStream, StochasticSubspaceModel, batch_fractional_draws
from .subspace import center, compact_svd, select_rank
from .training import (DistanceObservables, refine_beta_real,
                       reference_distance, train_integer_beta)

# fixed purposes for deriving independent sub-seeds from the config seed
_SEED_SNAPSHOTS = 11
_SEED_TRUTH = 12
_SEED_NOISE = 13
_SEED_TRAINING = 14
_SEED_ENSEMBLE = 15
_SEED_FORCES = 16

SNAPSHOTS_FILE = "snapshots.bin"
POD_MODES_FILE = "pod_modes.bin"
POD_SPECTRUM_FILE = "pod_spectrum.csv"
MODEL_FILE = "model.json"
TRACE_FILE = "training_trace.csv"
OBSERVATIONS_FILE = "observations.csv"
SENSORS_FILE = "sensors.csv"
ENSEMBLE_FILE = "ensemble.bin"
ENSEMBLE_INTEGER_FILE = "ensemble_integer.bin"
SUMMARY_FILE = "summary.csv"
SUMMARY_INTEGER_FILE = "summary_integer.csv"
REPORT_FILE = "report.json"
TIMINGS_FILE = "timings.json"
EXTRA_QOI_NAMES = ("acceleration", "displacement", "velocity_alt")


class MissingArtifactError(FileNotFoundError):
    """A stage was invoked before its upstream artifacts exist."""


def derive_seed(master: int, purpose: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(purpose,)).generate_state(1)[0])


@dataclass
class RunReport:
    beta_star: float
    coverage: float
    mean_pi_width: float
    wall_times: dict
    config_echo: dict
    library_version: str
    details: dict


# ---------------------------------------------------------------------------
# batched Monte-Carlo kernels shared by training and prediction


def _linear_qoi_predictions(draws, stiffness_r, force_r, qoi_rows):
    """Reduced static solves for stacked draws; returns (count, grid) values."""
    ut = draws.transpose(0, 2, 1)
    k_w = np.matmul(np.matmul(ut, stiffness_r), draws)
    f_w = np.matmul(ut, force_r)
    q = np.linalg.solve(k_w, f_w[:, :, None])
    rows_w = np.matmul(qoi_rows, draws)            # (count, s, k)
    return np.matmul(rows_w, q)[:, :, 0]


def _cubic_newton_batch(w, stiffness_r, alpha, forces_r, q0, tol, max_iter):
    """Newton over a batch of right-hand sides sharing one basis.

    Residual rows: K_r q + alpha W^T (W q)^3 - f_r.  Returns (P, k).
    """
    q = np.array(q0, dtype=float)
    for _ in range(max_iter):
        lifted = w @ q.T                                   # (n, P)
        res = q @ stiffness_r.T + alpha * (lifted**3).T @ w - forces_r
        norms = np.max(np.abs(res), axis=1)
        active = norms > tol
        if not np.any(active):
            return q
        jac = stiffness_r[None] + 3.0 * alpha * np.einsum(
            "np,nk,nl->pkl", (lifted**2)[:, active], w, w)
        q[active] -= np.linalg.solve(jac, res[active][:, :, None])[:, :, 0]
    lifted = w @ q.T
    res = q @ stiffness_r.T + alpha * (lifted**3).T @ w - forces_r
    worst = float(np.max(np.abs(res)))
    if worst > tol:
        raise ConvergenceError(
            f"batched Newton stalled at residual {worst:.3e}", residual=worst,
            iterations=max_iter)
    return q


def _dynamic_qoi_predictions(draws, staged, modes, dt, steps, series_spec,
                             gamma=0.5, beta_nm=0.25):
    """Batched reduced Newmark integration extracting named QoI series.

    ``staged`` is the rank-r reduced dynamic system with a precomputed
    load matrix (steps+1, r).  ``series_spec`` maps name -> (dof,
    derivative order).  Returns name -> (count, steps+1) arrays.
    """
    red = staged.reduced
    load_r = red.load
    ut = draws.transpose(0, 2, 1)
    m_w = np.matmul(np.matmul(ut, red.mass), draws)
    c_w = np.matmul(np.matmul(ut, red.damping), draws)
    k_w = np.matmul(np.matmul(ut, red.stiffness), draws)
    x = np.matmul(ut, red.initial_state[0])
    v = np.matmul(ut, red.initial_state[1])

    c0 = 1.0 / (beta_nm * dt**2)
    c1 = gamma / (beta_nm * dt)
    c2 = 1.0 / (beta_nm * dt)
    c3 = 1.0 / (2.0 * beta_nm) - 1.0
    c4 = gamma / beta_nm - 1.0
    c5 = dt * (gamma / (2.0 * beta_nm) - 1.0)
    c6 = dt * (1.0 - gamma)
    c7 = gamma * dt

    inv_eff = np.linalg.inv(k_w + c0 * m_w + c1 * c_w)
    f0 = np.matmul(load_r[0], draws)
    rhs0 = f0 - _mv(c_w, v) - _mv(k_w, x)
    a = np.linalg.solve(m_w, rhs0[:, :, None])[:, :, 0]

    rows = {name: np.matmul(modes[dof], draws) for name, (dof, _) in series_spec.items()}
    out = {name: np.empty((draws.shape[0], steps + 1)) for name in series_spec}
    state = {0: x, 1: v, 2: a}
    for name, (dof, order) in series_spec.items():
        out[name][:, 0] = np.einsum("ck,ck->c", rows[name], state[order])
    for i in range(steps):
        f_next = np.matmul(load_r[i + 1], draws)
        rhs = (f_next + _mv(m_w, c0 * x + c2 * v + c3 * a)
               + _mv(c_w, c1 * x + c4 * v + c5 * a))
        x_new = _mv(inv_eff, rhs)
        a_new = c0 * (x_new - x) - c2 * v - c3 * a
        v = v + c6 * a + c7 * a_new
        x, a = x_new, a_new
        state = {0: x, 1: v, 2: a}
        for name, (dof, order) in series_spec.items():
            out[name][:, i + 1] = np.einsum("ck,ck->c", rows[name], state[order])
    return out


def _mv(mats, vecs):
    return np.matmul(mats, vecs[..., None])[..., 0]


# ---------------------------------------------------------------------------
# problem drivers


class CubicDriver:
    """Parametric cubic static problem: ROM-error characterization."""

    kind = "cubic-parametric"

    def __init__(self, config: RunConfig):
        p = config.problem
        self.n = p["n"]
        self.alpha = float(p["alpha"])
        self.snapshot_count = int(p["snapshot_count"])
        self.mu_test = np.asarray(p["mu_test"], dtype=float)
        self.newton_tol = float(p.get("newton_tol", 1e-10))
        self.newton_max_iter = int(p.get("newton_max_iter", 50))
        # pooled: one stacked observation vector across training parameters
        self.aggregation = config.training.get("parametric_aggregation", "pooled")
        self.system = build_cubic_problem(self.n, self.alpha)
        self.seed = config.seed
        self.grid = np.arange(self.n) / (self.n - 1)
        self.params = lhs_sample(5, self.snapshot_count,
                                 RandomStream(derive_seed(self.seed, _SEED_SNAPSHOTS)))

    def qoi(self) -> QoiExtractor:
        return QoiExtractor(kind="full-state", grid=self.grid)

    def snapshots(self) -> np.ndarray:
        x = np.empty((self.n, self.snapshot_count))
        guess = None
        for j in range(self.snapshot_count):
            x[:, j] = rom.solve_nonlinear_cubic(
                self.system, self.params[j], guess=guess,
                tol=self.newton_tol, max_iter=self.newton_max_iter)
            guess = x[:, j]
        return x

    def references(self, modes, k, snapshots) -> dict:
        basis = modes[:, :k]
        reduced = rom.galerkin_reduce(self.system, basis)
        rom_train = np.empty_like(snapshots)
        for j in range(self.params.shape[0]):
            q = rom.solve_rom_nonlinear(basis, self.system, self.params[j],
                                        tol=self.newton_tol,
                                        max_iter=self.newton_max_iter,
                                        reduced=reduced)
            rom_train[:, j] = basis @ q
        q_test = rom.solve_rom_nonlinear(basis, self.system, self.mu_test,
                                         tol=self.newton_tol,
                                         max_iter=self.newton_max_iter,
                                         reduced=reduced)
        rom_test = basis @ q_test
        hdm_test = rom.solve_nonlinear_cubic(self.system, self.mu_test,
                                             guess=rom_test,
                                             tol=self.newton_tol,
                                             max_iter=self.newton_max_iter)
        return {
            "grid": self.grid,
            "rom": rom_test,
            "truth": hdm_test,
            "train_params": self.params,
            "train_truth": snapshots,      # HDM states at training parameters
            "train_rom": rom_train,
        }

    def integer_evaluator(self, scales, k, modes, refs, mc_samples, seed):
        params = refs["train_params"]
        rom_train = refs["train_rom"]
        truth = refs["train_truth"]
        forces = np.stack([self.system.force_map(mu) for mu in params])   # (P, n)
        d_truth = np.linalg.norm(truth - rom_train, axis=0)               # (P,)
        pooled = self.aggregation == "pooled"
        if pooled:
            d_truth_pool = float(np.linalg.norm(truth - rom_train))

        def evaluate(beta):
            model = StochasticSubspaceModel(scales, k, float(beta))
            draws = batch_fractional_draws(model, seed, range(mc_samples))
            acc = 0.0
            for i in range(mc_samples):
                w = modes @ draws[i]
                forces_r = forces @ w
                q0 = rom_train.T @ w                       # warm start per parameter
                q = _cubic_newton_batch(w, w.T @ (self.system.stiffness @ w),
                                        self.alpha, forces_r, q0,
                                        self.newton_tol, self.newton_max_iter)
                pred = w @ q.T                             # (n, P)
                if pooled:
                    gap = np.linalg.norm(pred - rom_train) - d_truth_pool
                    acc += gap**2
                else:
                    d_pred = np.linalg.norm(pred - rom_train, axis=0)
                    acc += float(np.mean((d_pred - d_truth)**2))
            return acc / mc_samples

        return evaluate

    def real_objective(self, scales, k, modes, refs, mc_samples, seed):
        evaluator = self.integer_evaluator(scales, k, modes, refs, mc_samples, seed)
        return lambda beta: evaluator(float(beta))

    def draw_ensembles(self, scales, k, modes, refs, betas, count, seed, threads):
        out = {}
        for name, beta in betas.items():
            sampler = SubspaceSampler.from_model(
                StochasticSubspaceModel(scales, k, beta), modes)
            prediction = run_srom(sampler, self.system, self.qoi(), count, seed,
                                  mu=self.mu_test,
                                  initial_guess_full=refs["rom"],
                                  newton_tol=self.newton_tol,
                                  newton_max_iter=self.newton_max_iter,
                                  threads=threads)
            out[name] = prediction.samples
        return out


class ExperimentDriver:
    """Linear static problem with synthetic experimental data."""

    kind = "linear-static-experiment"

    def __init__(self, config: RunConfig):
        p = config.problem
        self.n = p["n"]
        self.ratio = float(p.get("perturbation_ratio", 0.15))
        self.noise_level = float(p.get("noise_level", 0.05))
        self.sensor_count = int(p.get("sensor_count", 19))
        self.snapshot_count = int(p.get("snapshot_count", 100))
        self.force_weights = np.asarray(
            p.get("force_weights", [0.5, 0.5, 0.5, 0.5, 1.0]), dtype=float)
        self.snapshot_force = p.get("snapshot_force", "nominal")
        self.seed = config.seed
        self.stiff = SpectralStiffness.sine_basis(self.n)
        self.force = self.stiff.mode_combination_force(self.force_weights)
        self.system = rom.LinearStaticSystem(stiffness=self.stiff.matrix,
                                             force=self.force,
                                             constraints=self.stiff.constraints)
        self.grid = np.arange(self.n) / (self.n - 1)

        truth_stiff = perturb_stiffness(
            self.stiff, self.ratio, RandomStream(derive_seed(self.seed, _SEED_TRUTH)))
        self.truth_response = truth_stiff.solve(self.force)
        self.sensor_indices, clean = observe_sparse(self.truth_response,
                                                    self.sensor_count)
        noisy, self.noise_sigma = add_noise(
            clean, self.noise_level, RandomStream(derive_seed(self.seed, _SEED_NOISE)))
        self.observed_noisy = noisy

    def qoi(self) -> QoiExtractor:
        return QoiExtractor(kind="full-state", grid=self.grid)

    def snapshots(self) -> np.ndarray:
        snap_seed = derive_seed(self.seed, _SEED_SNAPSHOTS)
        force_seed = derive_seed(self.seed, _SEED_FORCES)
        x = np.empty((self.n, self.snapshot_count))
        for j in range(self.snapshot_count):
            perturbed = perturb_stiffness(self.stiff, self.ratio,
                                          RandomStream(snap_seed, j))
            if self.snapshot_force == "perturbed":
                weights = RandomStream(force_seed, j).generator().random(
                    self.force_weights.shape[0])
                force = self.stiff.mode_combination_force(weights)
            else:
                force = self.force
            x[:, j] = perturbed.solve(force)
        return x

    def references(self, modes, k, snapshots) -> dict:
        basis = modes[:, :k]
        reduced = rom.galerkin_reduce(self.system, basis)
        x_rom = basis @ rom.solve_linear_static(reduced)
        return {
            "grid": self.grid,
            "rom": x_rom,
            "truth": self.truth_response,
            "sensor_indices": self.sensor_indices,
            "observed_noisy": self.observed_noisy,
            "noise_sigma": self.noise_sigma,
        }

    def _observables(self, refs) -> DistanceObservables:
        idx = refs["sensor_indices"]
        return DistanceObservables(reference=refs["rom"][idx],
                                   truth=refs["observed_noisy"])

    def _objective(self, scales, k, modes, refs, mc_samples, seed, chunk=8192):
        obs = self._observables(refs)
        idx = refs["sensor_indices"]
        staged = rom.two_stage_reduce(self.system, modes)
        stiffness_r = staged.reduced.stiffness
        force_r = staged.reduced.force
        qoi_rows = modes[idx]
        d_truth = reference_distance(obs.truth, obs)

        def evaluate(beta):
            model = StochasticSubspaceModel(scales, k, float(beta))
            acc = 0.0
            for start in range(0, mc_samples, chunk):
                stop = min(start + chunk, mc_samples)
                draws = batch_fractional_draws(model, seed, range(start, stop))
                preds = _linear_qoi_predictions(draws, stiffness_r, force_r, qoi_rows)
                d_pred = np.linalg.norm(preds - obs.reference, axis=1)
                acc += float(np.sum((d_pred - d_truth)**2))
            return acc / mc_samples

        return evaluate

    integer_evaluator = _objective

    def real_objective(self, scales, k, modes, refs, mc_samples, seed):
        evaluate = self._objective(scales, k, modes, refs, mc_samples, seed)
        return lambda beta: evaluate(float(beta))

    def draw_ensembles(self, scales, k, modes, refs, betas, count, seed, threads):
        out = {}
        for name, beta in betas.items():
            sampler = SubspaceSampler.from_model(
                StochasticSubspaceModel(scales, k, beta), modes)
            prediction = run_srom(sampler, self.system, self.qoi(), count, seed,
                                  threads=threads)
            out[name] = prediction.samples
        return out


class SurrogateDriver:
    """Linear dynamics surrogate: impulse response of a heavy-mass chain."""

    kind = "surrogate-dynamics"

    def __init__(self, config: RunConfig):
        p = config.problem
        self.n = p["n"]
        self.dt = float(p["dt"])
        self.t_end = float(p["t_end"])
        self.qoi_dof = int(p["qoi_dof"])
        self.alt_dof = int(p.get("alt_dof", (self.qoi_dof + self.n // 3) % self.n))
        self.stride = int(p.get("snapshot_stride", 4))
        self.spec = SurrogateSpec(
            n=self.n,
            heavy_dof=p.get("heavy_dof"),
            mass_ratio=float(p.get("mass_ratio", 100.0)),
            stiffness_scale=float(p.get("stiffness_scale", 1.0e4)),
            rayleigh_beta=float(p.get("rayleigh_beta", 2.0e-4)),
            impulse_amplitude=float(p.get("impulse_amplitude", 1.0)),
            impulse_duration=float(p.get("impulse_duration", 0.05)),
            seed=int(p.get("structure_seed", 60301)),
        )
        self.seed = config.seed
        self.system = surrogate_dynamics(self.spec)
        self.steps = int(np.floor(self.t_end / self.dt + 1e-12))
        self.times = np.arange(self.steps + 1) * self.dt
        self._hdm = None

    def qoi(self) -> QoiExtractor:
        return QoiExtractor(kind="dof", grid=self.times, dof=self.qoi_dof,
                            derivative=1)

    def _hdm_trajectory(self) -> rom.Trajectory:
        if self._hdm is None:
            self._hdm = rom.newmark_integrate(self.system, self.dt, self.t_end)
        return self._hdm

    def _load_matrix(self) -> np.ndarray:
        return np.stack([self.system.load(t) for t in self.times])

    def _sampled_system(self) -> rom.LinearDynamicSystem:
        """The dynamic system with its load precomputed on the time grid."""
        return rom.LinearDynamicSystem(
            mass=self.system.mass, damping=self.system.damping,
            stiffness=self.system.stiffness, load=self._load_matrix(),
            initial_state=self.system.initial_state,
            rayleigh_beta=self.system.rayleigh_beta)

    def snapshots(self) -> np.ndarray:
        traj = self._hdm_trajectory()
        return traj.states[:, ::self.stride].copy()

    def series_spec(self) -> dict:
        return {
            "velocity": (self.qoi_dof, 1),
            "acceleration": (self.qoi_dof, 2),
            "displacement": (self.qoi_dof, 0),
            "velocity_alt": (self.alt_dof, 1),
        }

    def references(self, modes, k, snapshots) -> dict:
        traj = self._hdm_trajectory()
        basis = modes[:, :k]
        reduced = rom.galerkin_reduce(self._sampled_system(), basis)
        rom_traj = rom.newmark_integrate(reduced, self.dt, self.t_end)
        refs = {"grid": self.times}
        fields = {0: "states", 1: "velocities", 2: "accelerations"}
        for name, (dof, order) in self.series_spec().items():
            refs[f"truth_{name}"] = getattr(traj, fields[order])[dof]
            refs[f"rom_{name}"] = basis[dof] @ getattr(rom_traj, fields[order])
        refs["rom"] = refs["rom_velocity"]
        refs["truth"] = refs["truth_velocity"]
        return refs

    def integer_evaluator(self, scales, k, modes, refs, mc_samples, seed,
                          chunk=512):
        staged = rom.two_stage_reduce(self._sampled_system(), modes)
        obs = DistanceObservables(reference=refs["rom_velocity"],
                                  truth=refs["truth_velocity"])
        d_truth = reference_distance(obs.truth, obs)
        spec = {"velocity": (self.qoi_dof, 1)}

        def evaluate(beta):
            model = StochasticSubspaceModel(scales, k, float(beta))
            acc = 0.0
            for start in range(0, mc_samples, chunk):
                stop = min(start + chunk, mc_samples)
                draws = batch_fractional_draws(model, seed, range(start, stop))
                series = _dynamic_qoi_predictions(draws, staged, modes, self.dt,
                                                  self.steps, spec)
                d_pred = np.linalg.norm(series["velocity"] - obs.reference, axis=1)
                acc += float(np.sum((d_pred - d_truth)**2))
            return acc / mc_samples

        return evaluate

    def real_objective(self, scales, k, modes, refs, mc_samples, seed):
        evaluate = self.integer_evaluator(scales, k, modes, refs, mc_samples, seed)
        return lambda beta: evaluate(float(beta))

    def draw_ensembles(self, scales, k, modes, refs, betas, count, seed, threads,
                       chunk=512):
        staged = rom.two_stage_reduce(self._sampled_system(), modes)
        spec = self.series_spec()
        out = {}
        for name, beta in betas.items():
            model = StochasticSubspaceModel(scales, k, beta)
            parts = {q: [] for q in spec}
            for start in range(0, count, chunk):
                stop = min(start + chunk, count)
                draws = batch_fractional_draws(model, seed, range(start, stop))
                series = _dynamic_qoi_predictions(draws, staged, modes, self.dt,
                                                  self.steps, spec)
                for q in spec:
                    parts[q].append(series[q])
            stacked = {q: np.vstack(parts[q]) for q in spec}
            if name == "primary":
                out["primary"] = stacked["velocity"]
                for q in EXTRA_QOI_NAMES:
                    out[q] = stacked[q]
            else:
                out[name] = stacked["velocity"]
        return out


_DRIVERS = {
    "cubic-parametric": CubicDriver,
    "linear-static-experiment": ExperimentDriver,
    "surrogate-dynamics": SurrogateDriver,
}


def make_driver(config: RunConfig):
    return _DRIVERS[config.problem["kind"]](config)


# ---------------------------------------------------------------------------
# stages


def _outdir(config: RunConfig, outdir) -> Path:
    path = Path(outdir if outdir is not None else (config.output_dir or "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing artifact: {path}")
    return path


def stage_train(config: RunConfig, outdir=None) -> dict:
    """Steps 1-4: snapshots, POD, deterministic references, beta training."""
    out = _outdir(config, outdir)
    chash = config.config_hash()
    driver = make_driver(config)

    snapshots = driver.snapshots()
    save_matrix(out / SNAPSHOTS_FILE, snapshots, chash)

    # The parametric problem keeps the raw snapshot matrix as the
    # decomposition operand (its mean state is load-bearing and must stay
    # inside the reduced basis); the others reduce centered deviations.
    source = config.pod.source or (
        "raw" if driver.kind == "cubic-parametric" else "centered")
    operand = snapshots if source == "raw" else center(snapshots).centered
    pod = compact_svd(operand)
    if config.pod.k is not None:
        k = config.pod.k
        if k > pod.rank:
            raise ValueError(f"pod.k={k} exceeds snapshot rank {pod.rank}")
    else:
        k = select_rank(pod.singular_values, config.pod.energy_threshold)
    m = snapshots.shape[1]
    scales = pod.singular_values / np.sqrt(m)
    modes = pod.modes
    save_matrix(out / POD_MODES_FILE, modes, chash)
    write_csv(out / POD_SPECTRUM_FILE,
              {"index": np.arange(1, pod.rank + 1),
               "singular_value": pod.singular_values},
              chash)

    refs = driver.references(modes, k, snapshots)
    _write_observations(out, driver, refs, chash)

    tcfg = config.training_config(k, pod.rank)
    train_seed = derive_seed(config.seed, _SEED_TRAINING)
    evaluator = driver.integer_evaluator(scales, k, modes, refs,
                                         tcfg.mc_samples, train_seed)
    integer_result = train_integer_beta(tcfg, evaluator,
                                        mc_samples=tcfg.mc_samples,
                                        seed=train_seed)
    trace_rows = [(b, f, tcfg.mc_samples) for b, f in integer_result.trace]

    beta_star = float(integer_result.beta)
    objective_refined = None
    refined_converged = None
    if tcfg.refinement.enabled:
        objective = driver.real_objective(scales, k, modes, refs,
                                          tcfg.refinement.mc_samples, train_seed)
        refined = refine_beta_real(integer_result.beta, tcfg, objective)
        beta_star = float(refined.beta)
        objective_refined = float(refined.value)
        refined_converged = bool(refined.converged)
        trace_rows += [(b, f, tcfg.refinement.mc_samples) for b, f in refined.trace]

    write_csv(out / TRACE_FILE, {
        "iteration": np.arange(1, len(trace_rows) + 1),
        "beta": np.asarray([r[0] for r in trace_rows]),
        "f_estimate": np.asarray([r[1] for r in trace_rows]),
        "mc_samples": np.asarray([r[2] for r in trace_rows], dtype=int),
        "seed": np.full(len(trace_rows), train_seed, dtype=np.int64),
    }, chash)

    model_doc = {
        "config_hash": chash,
        "library_version": __version__,
        "problem_kind": driver.kind,
        "pod_source": source,
        "snapshot_count": int(m),
        "rank": int(pod.rank),
        "k": int(k),
        "scales": [float(s) for s in scales],
        "beta_integer": int(integer_result.beta),
        "beta_star": beta_star,
        "objective_integer": float(integer_result.value),
        "objective_refined": objective_refined,
        "integer_converged": bool(integer_result.converged),
        "refined_converged": refined_converged,
        "training_seed": int(train_seed),
        "integer_evaluations": len(integer_result.cache.entries),
    }
    write_json(out / MODEL_FILE, model_doc)
    return model_doc


def _write_observations(out: Path, driver, refs: dict, chash: str) -> None:
    columns = {"grid": refs["grid"], "rom": refs["rom"], "truth": refs["truth"]}
    if driver.kind == "surrogate-dynamics":
        for name in EXTRA_QOI_NAMES:
            columns[f"rom_{name}"] = refs[f"rom_{name}"]
            columns[f"truth_{name}"] = refs[f"truth_{name}"]
    write_csv(out / OBSERVATIONS_FILE, columns, chash)
    if driver.kind == "linear-static-experiment":
        idx = refs["sensor_indices"]
        write_csv(out / SENSORS_FILE, {
            "index": idx,
            "position": refs["grid"][idx],
            "observed_noisy": refs["observed_noisy"],
            "truth": refs["truth"][idx],
            "rom": refs["rom"][idx],
        }, chash)


def stage_sample(config: RunConfig, outdir=None, threads: int = 1,
                 count: int | None = None) -> dict:
    """Step 5: draw the SROM prediction ensemble(s) at the trained beta."""
    out = _outdir(config, outdir)
    chash = config.config_hash()
    model_doc = read_json(_need(out / MODEL_FILE))
    modes = load_matrix(_need(out / POD_MODES_FILE))
    snapshots = load_matrix(_need(out / SNAPSHOTS_FILE))
    driver = make_driver(config)
    refs = driver.references(modes, model_doc["k"], snapshots)

    n_draws = config.ensemble.count if count is None else count
    if n_draws < 2:
        raise ValueError("ensemble count must be >= 2")
    betas = {"primary": float(model_doc["beta_star"])}
    two_step = model_doc["objective_refined"] is not None
    if two_step:
        betas["integer"] = float(model_doc["beta_integer"])
    scales = np.asarray(model_doc["scales"])
    ensembles = driver.draw_ensembles(scales, model_doc["k"], modes, refs, betas,
                                      n_draws, derive_seed(config.seed, _SEED_ENSEMBLE),
                                      threads)
    save_matrix(out / ENSEMBLE_FILE, ensembles["primary"], chash)
    if two_step:
        save_matrix(out / ENSEMBLE_INTEGER_FILE, ensembles["integer"], chash)
    if driver.kind == "surrogate-dynamics":
        for name in EXTRA_QOI_NAMES:
            save_matrix(out / f"ensemble_{name}.bin", ensembles[name], chash)
    return {name: arr.shape for name, arr in ensembles.items()}


def _write_summary(path, summary: PredictionSummary, rom_ref, truth, chash) -> None:
    write_csv(path, {
        "grid": summary.grid, "mean": summary.mean, "std": summary.std,
        "lower": summary.lower, "upper": summary.upper,
        "rom": rom_ref, "truth": truth,
    }, chash)


def stage_predict(config: RunConfig, outdir=None) -> dict:
    """Summarize ensembles into pointwise prediction intervals."""
    out = _outdir(config, outdir)
    chash = config.config_hash()
    obs = read_csv(_need(out / OBSERVATIONS_FILE))
    level = config.ensemble.level
    driver_kind = config.problem["kind"]

    samples = load_matrix(_need(out / ENSEMBLE_FILE))
    summary = summarize_matrix(samples, obs["grid"], level)
    _write_summary(out / SUMMARY_FILE, summary, obs["rom"], obs["truth"], chash)
    produced = {"summary": SUMMARY_FILE}

    if (out / ENSEMBLE_INTEGER_FILE).exists():
        samples_int = load_matrix(out / ENSEMBLE_INTEGER_FILE)
        summary_int = summarize_matrix(samples_int, obs["grid"], level)
        _write_summary(out / SUMMARY_INTEGER_FILE, summary_int, obs["rom"],
                       obs["truth"], chash)
        produced["summary_integer"] = SUMMARY_INTEGER_FILE
    if driver_kind == "surrogate-dynamics":
        for name in EXTRA_QOI_NAMES:
            extra = load_matrix(_need(out / f"ensemble_{name}.bin"))
            s = summarize_matrix(extra, obs["grid"], level)
            _write_summary(out / f"summary_{name}.csv", s,
                           obs[f"rom_{name}"], obs[f"truth_{name}"], chash)
            produced[f"summary_{name}"] = f"summary_{name}.csv"
    return produced


def _summary_from_csv(table: dict, level: float,
                      subset=None) -> tuple[PredictionSummary, np.ndarray, np.ndarray]:
    sel = slice(None) if subset is None else subset
    summary = PredictionSummary(grid=table["grid"][sel], mean=table["mean"][sel],
                                std=table["std"][sel], lower=table["lower"][sel],
                                upper=table["upper"][sel], level=level)
    return summary, table["rom"][sel], table["truth"][sel]


def stage_report(config: RunConfig, outdir=None) -> dict:
    """Coverage and sharpness of the prediction intervals; write report.json."""
    out = _outdir(config, outdir)
    model_doc = read_json(_need(out / MODEL_FILE))
    level = config.ensemble.level
    table = read_csv(_need(out / SUMMARY_FILE))
    summary, _, truth = _summary_from_csv(table, level)
    report_cov = coverage(summary, truth)

    report = {
        "schema_version": 1,
        "config_hash": config.config_hash(),
        "config": config.canonical_dict(),
        "library_version": __version__,
        "problem_kind": model_doc["problem_kind"],
        "beta_integer": model_doc["beta_integer"],
        "beta_star": model_doc["beta_star"],
        "objective_integer": model_doc["objective_integer"],
        "objective_refined": model_doc["objective_refined"],
        "level": level,
        "coverage": report_cov.coverage,
        "mean_pi_width": report_cov.mean_pi_width,
        "points_total": report_cov.points_total,
        "points_inside": report_cov.points_inside,
    }

    if model_doc["problem_kind"] == "linear-static-experiment":
        sensors = read_csv(_need(out / SENSORS_FILE))
        idx = sensors["index"].astype(int)
        noisy_summary, _, _ = _summary_from_csv(table, level, subset=idx)
        noisy_cov = coverage(noisy_summary, sensors["observed_noisy"])
        report["coverage_noisy"] = noisy_cov.coverage
        report["mean_pi_width_sensors"] = noisy_cov.mean_pi_width
        if (out / SUMMARY_INTEGER_FILE).exists():
            table_int = read_csv(out / SUMMARY_INTEGER_FILE)
            s_int, _, truth_int = _summary_from_csv(table_int, level)
            cov_int = coverage(s_int, truth_int)
            report["coverage_integer"] = cov_int.coverage
            report["mean_pi_width_integer"] = cov_int.mean_pi_width
            noisy_int, _, _ = _summary_from_csv(table_int, level, subset=idx)
            report["coverage_noisy_integer"] = coverage(
                noisy_int, sensors["observed_noisy"]).coverage

    if model_doc["problem_kind"] == "surrogate-dynamics":
        extras = {}
        for name in EXTRA_QOI_NAMES:
            t = read_csv(_need(out / f"summary_{name}.csv"))
            s, _, tr = _summary_from_csv(t, level)
            cov = coverage(s, tr)
            widths = s.upper - s.lower
            extras[name] = {
                "coverage": cov.coverage,
                "mean_pi_width": cov.mean_pi_width,
                "finite": bool(np.all(np.isfinite(s.lower)) and np.all(np.isfinite(s.upper))),
                "max_width": float(np.max(widths)),
            }
        report["extra_qois"] = extras

    write_json(out / REPORT_FILE, report)
    return report


def run_pipeline(config: RunConfig, outdir=None, threads: int = 1) -> RunReport:
    """Execute all stages in order; identical artifacts to stage-wise runs."""
    times = {}
    t0 = time.perf_counter()
    stage_train(config, outdir)
    times["train_s"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    stage_sample(config, outdir, threads=threads)
    times["sample_s"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    stage_predict(config, outdir)
    times["predict_s"] = time.perf_counter() - t2
    t3 = time.perf_counter()
    report = stage_report(config, outdir)
    times["report_s"] = time.perf_counter() - t3
    times["total_s"] = time.perf_counter() - t0
    out = _outdir(config, outdir)
    write_json(out / TIMINGS_FILE,
               {"config_hash": config.config_hash(),
                **{k: float(v) for k, v in times.items()}})
    return RunReport(beta_star=report["beta_star"], coverage=report["coverage"],
                     mean_pi_width=report["mean_pi_width"], wall_times=times,
                     config_echo=config.canonical_dict(),
                     library_version=__version__, details=report)
