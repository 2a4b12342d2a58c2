"""Backward-Euler miscible displacement: Darcy flow coupled to DG transport.

Each time step evaluates the viscosity from the current concentration,
solves the RT0 Darcy system, rebuilds the dispersion tensor from the cell
averaged velocity, assembles ``(M / dt + K) c = M c_n / dt + f`` with the
DG1 transport operator (solved in the equivalent form scaled by ``dt``), and enforces the concentration bounds with the
chosen bound-constrained solver started from the clipped unconstrained
solution.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import darcy
from .fem import (
    CellwiseConstant,
    DirichletBC,
    Dispersion,
    FunctionSpace,
    apply_dirichlet,
    assemble_dg,
    assemble_mass,
    collect_dirichlet,
    field_stats,
)
from .fem.assembly import penalty_constant
from .linalg import KrylovOptions
from .mesh import Mesh, build_structured_quad_mesh, extrude_to_hex, write_vtk
from .vi import SOLVERS, ViOptions, solve_bounded

__all__ = [
    "MiscibleConfig",
    "TransientState",
    "StepRecord",
    "StepError",
    "RunResult",
    "viscosity",
    "lognormal_permeability",
    "build_mesh",
    "Simulation",
    "step",
    "run",
    "load_config",
    "write_history_csv",
    "backward_euler_transport",
    "HISTORY_COLUMNS",
]

DAY = 86400.0

# tags of the structured box: x = 0, x = L, y = 0, y = W, z = 0, z = H
LEFT, RIGHT, FRONT, BACK, BOTTOM, TOP = 1, 2, 3, 4, 5, 6


@dataclasses.dataclass
class MiscibleConfig:
    """Parameters of a miscible-displacement run (SI units).

    ``nz = 0`` selects a 2D rectangle of ``lx`` by ``ly``; otherwise the
    rectangle is extruded to height ``lz`` with ``nz`` layers.  Pressure is
    prescribed on the left and right faces, the other faces carry no flow.
    The injected concentration ``c_inflow`` is prescribed on the left face.
    """

    mu0: float = 3.95e-5
    rc: float = 3.0
    rho: float = 479.0
    alpha_l: float = 1e-1
    alpha_t: float = 1e-5
    alpha_d: float = 1e-9
    dt: float = DAY
    t_end: float = 30 * DAY
    viscosity_model: int = 1
    permeability: str = "lognormal"
    k_mean: float = 1e-11
    k_sigma: float = 1.0
    k_correlation: float = 5.0
    k_seed: int = 0
    lx: float = 50.0
    ly: float = 25.0
    lz: float = 0.0
    nx: int = 50
    ny: int = 25
    nz: int = 0
    c_min: float = 0.0
    c_max: float = 1.0
    c_initial: float = 1.0
    c_inflow: float = 0.0
    p_left: float = 2.0e4
    p_right: float = 0.0
    body_force: tuple = (0.0, 0.0, 0.0)
    solver: str = "rs"
    darcy_rtol: float = 1e-10
    transport_rtol: float = 1e-10
    vi_tol: float = 1e-8

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least one time step")
        if self.rc < 0:
            raise ValueError("rc must be non-negative")
        if self.viscosity_model not in (1, 2):
            raise ValueError("viscosity_model must be 1 or 2")
        if self.permeability not in ("constant", "lognormal"):
            raise ValueError("permeability must be 'constant' or 'lognormal'")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.c_min > self.c_max:
            raise ValueError("c_min exceeds c_max")
        if min(self.nx, self.ny) < 1 or self.nz < 0:
            raise ValueError("mesh resolution must be positive")
        self.body_force = tuple(float(b) for b in self.body_force)

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def dim(self) -> int:
        return 3 if self.nz > 0 else 2

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _parse_value(field, text):
    kind = type(field.default)
    if kind is tuple:
        return tuple(float(v) for v in text.replace(",", " ").split())
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def load_config(path_or_text, **overrides) -> MiscibleConfig:
    """Read ``key = value`` lines (``#`` starts a comment) into a config.

    Accepts a path or the text itself; keyword overrides win over the file.
    """
    text = str(path_or_text)
    if "=" not in text and Path(text).exists():
        text = Path(text).read_text()
    elif isinstance(path_or_text, Path):
        text = path_or_text.read_text()
    fields = {f.name: f for f in dataclasses.fields(MiscibleConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(fields[key], value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    values.update(overrides)
    return MiscibleConfig(**values)


def viscosity(c, cfg: MiscibleConfig):
    """Concentration-dependent viscosity of either exponential model."""
    c = np.asarray(c, dtype=float)
    if cfg.viscosity_model == 1:
        return cfg.mu0 * np.exp(cfg.rc * c)
    return cfg.mu0 * np.exp(cfg.rc * (1.0 - c))


def build_mesh(cfg: MiscibleConfig) -> Mesh:
    base = build_structured_quad_mesh(cfg.nx, cfg.ny, extent=((0.0, cfg.lx), (0.0, cfg.ly)))
    if cfg.nz == 0:
        return base
    return extrude_to_hex(base, cfg.nz, height=cfg.lz)


def lognormal_permeability(mesh: Mesh, cfg: MiscibleConfig) -> np.ndarray:
    """Per-cell permeability ``k_mean * exp(sigma * g)``.

    ``g`` is seeded white noise smoothed by a Gaussian kernel whose width is
    the correlation length in cells, then rescaled to unit variance.  The
    structured cell ordering (x fastest, then y, then z) is used to lay the
    field out on a grid.
    """
    if cfg.permeability == "constant":
        return np.full(mesh.num_cells, cfg.k_mean)
    shape = (cfg.nz, cfg.ny, cfg.nx) if cfg.nz else (cfg.ny, cfg.nx)
    if int(np.prod(shape)) != mesh.num_cells:
        raise ValueError("log-normal permeability needs the structured mesh of the config")
    rng = np.random.default_rng(cfg.k_seed)
    white = rng.standard_normal(shape)
    cell = np.array([cfg.lz / max(cfg.nz, 1), cfg.ly / cfg.ny, cfg.lx / cfg.nx][-len(shape):])
    g = ndimage.gaussian_filter(white, sigma=cfg.k_correlation / cell, mode="wrap")
    std = g.std()
    g = (g - g.mean()) / (std if std > 0 else 1.0)
    return cfg.k_mean * np.exp(cfg.k_sigma * g.ravel())


@dataclasses.dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    min_value: float
    max_value: float
    violating: int
    unconstrained_min: float
    unconstrained_max: float
    unconstrained_violating: int
    darcy_iterations: int
    transport_iterations: int
    vi_iterations: int
    wall_time: float


HISTORY_COLUMNS = (
    "step",
    "t",
    "min",
    "max",
    "violating",
    "unconstrained_min",
    "unconstrained_max",
    "unconstrained_violating",
    "darcy_iterations",
    "transport_iterations",
    "vi_iterations",
    "wall_time",
)


@dataclasses.dataclass
class TransientState:
    step: int
    t: float
    c: np.ndarray
    v: np.ndarray | None = None
    cell_velocity: np.ndarray | None = None
    history: list = dataclasses.field(default_factory=list)


class StepError(RuntimeError):
    """A sub-solver failed; ``report`` holds its report and ``step`` the index."""

    def __init__(self, step, stage, report):
        super().__init__(f"step {step}: {stage} did not converge ({report})")
        self.step = step
        self.stage = stage
        self.report = report


class Simulation:
    """Mesh, spaces and fixed data of a run; :meth:`step` advances a state."""

    def __init__(self, cfg: MiscibleConfig):
        self.cfg = cfg
        self.mesh = build_mesh(cfg)
        self.space = FunctionSpace(self.mesh, "DG1")
        self.permeability = lognormal_permeability(self.mesh, cfg)
        self.mass = assemble_mass(self.space)
        self.bcs = [DirichletBC((LEFT,), cfg.c_inflow)]
        self.bc_dofs, self.bc_values = collect_dirichlet(self.space, self.bcs)
        no_flow = (FRONT, BACK) if cfg.dim == 2 else (FRONT, BACK, BOTTOM, TOP)
        self.velocity_bc = {tag: 0.0 for tag in no_flow}
        self.pressure_bc = {LEFT: cfg.p_left, RIGHT: cfg.p_right}
        self.darcy_opts = KrylovOptions(rel_tol=cfg.darcy_rtol, max_iters=5000, restart=50, preconditioner="none")
        self.transport_opts = KrylovOptions(rel_tol=cfg.transport_rtol, max_iters=5000, restart=50)
        self.vi_opts = ViOptions(abs_tol=cfg.vi_tol)

    def initial_state(self) -> TransientState:
        c0 = np.full(self.space.dof_count, float(self.cfg.c_initial))
        c0[self.bc_dofs] = self.bc_values
        return TransientState(step=0, t=0.0, c=c0)

    def darcy_solve(self, c):
        cell_c = self.space.cell_values(c).mean(axis=1)
        fields = darcy.DarcyFields(
            permeability=self.permeability,
            viscosity=viscosity(cell_c, self.cfg),
            density=self.cfg.rho,
            body_force=np.asarray(self.cfg.body_force[: self.cfg.dim]),
            pressure_bc=self.pressure_bc,
            velocity_bc=self.velocity_bc,
        )
        system = darcy.assemble_rt0_darcy(self.mesh, fields)
        v, p, report = darcy.solve_darcy_schur(system, self.darcy_opts)
        return system, v, p, report

    def penalty(self, vcell) -> float:
        """Interior-penalty constant scaled by the largest dispersion eigenvalue.

        The penalty term carries no diffusivity, so it is scaled here to stay
        commensurate with a dispersion tensor many orders below one.
        """
        speed = float(np.max(np.linalg.norm(vcell, axis=1))) if len(vcell) else 0.0
        scale = max(self.cfg.alpha_l, self.cfg.alpha_t) * speed + self.cfg.alpha_d
        return penalty_constant(self.mesh.dim) * scale

    def step(self, state: TransientState) -> TransientState:
        cfg = self.cfg
        t0 = time.perf_counter()
        n = state.step + 1
        system, v, _, darcy_report = self.darcy_solve(state.c)
        if not darcy_report.converged:
            raise StepError(n, "Darcy solve", darcy_report)
        vcell = darcy.cell_velocity(v, system)
        velocity = CellwiseConstant(vcell)
        D = Dispersion(velocity, cfg.alpha_l, cfg.alpha_t, cfg.alpha_d)
        transport = assemble_dg(self.space, D, velocity, 0.0, (), gamma=self.penalty(vcell))
        # multiplied through by dt so mass and constrained rows share a scale
        K = self.mass + transport.K_free * cfg.dt
        rhs = self.mass @ state.c + cfg.dt * transport.f_free
        A, b = apply_dirichlet(K, rhs, self.bc_dofs, self.bc_values)
        result = solve_bounded(
            A, b, cfg.c_min, cfg.c_max, cfg.solver,
            opts=self.vi_opts, linear_opts=self.transport_opts, x0=state.c,
        )
        if not result.linear_report.converged:
            raise StepError(n, "transport solve", result.linear_report)
        if result.report is not None and not result.report.converged:
            raise StepError(n, "bound-constrained solve", result.report)
        stats = field_stats(result.c, cfg.c_min, cfg.c_max)
        raw = field_stats(result.c_unconstrained, cfg.c_min, cfg.c_max)
        record = StepRecord(
            step=n,
            t=n * cfg.dt,
            min_value=stats.min_value,
            max_value=stats.max_value,
            violating=stats.violating_dofs,
            unconstrained_min=raw.min_value,
            unconstrained_max=raw.max_value,
            unconstrained_violating=raw.violating_dofs,
            darcy_iterations=darcy_report.iterations,
            transport_iterations=result.linear_report.iterations,
            vi_iterations=0 if result.report is None else result.report.outer_iterations,
            wall_time=time.perf_counter() - t0,
        )
        return TransientState(step=n, t=n * cfg.dt, c=result.c, v=v, cell_velocity=vcell, history=state.history + [record])

    def write_vtk(self, path, state: TransientState):
        cell_data = {"concentration_avg": self.space.cell_values(state.c).mean(axis=1)}
        cell_data["permeability"] = self.permeability
        if state.cell_velocity is not None:
            cell_data["velocity"] = state.cell_velocity
        point_data = {"concentration": self.space.nodal_average(state.c)}
        write_vtk(path, self.mesh, point_data=point_data, cell_data=cell_data)


@dataclasses.dataclass
class RunResult:
    config: MiscibleConfig
    state: TransientState
    simulation: Simulation
    fields: list

    @property
    def history(self):
        return self.state.history


def step(state: TransientState, cfg: MiscibleConfig, simulation: Simulation | None = None) -> TransientState:
    """Advance ``state`` by one time step."""
    return (simulation or Simulation(cfg)).step(state)


def run(cfg: MiscibleConfig, out_dir=None, vtk_every=0, keep_fields=False) -> RunResult:
    """Execute ``t_end / dt`` steps.

    With ``out_dir`` the per-step history is written to ``history.csv`` and,
    when ``vtk_every > 0``, a VTK snapshot every ``vtk_every`` steps.
    ``keep_fields`` retains the concentration after every step.
    """
    sim = Simulation(cfg)
    state = sim.initial_state()
    fields = [state.c.copy()] if keep_fields else []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
    for _ in range(cfg.num_steps):
        state = sim.step(state)
        if keep_fields:
            fields.append(state.c.copy())
        if out is not None and vtk_every > 0 and state.step % vtk_every == 0:
            sim.write_vtk(out / f"step_{state.step:05d}.vtk", state)
        if out is not None:
            write_history_csv(out / "history.csv", state.history)
    return RunResult(cfg, state, sim, fields)


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for r in history:
            writer.writerow([
                r.step, repr(r.t), repr(r.min_value), repr(r.max_value), r.violating,
                repr(r.unconstrained_min), repr(r.unconstrained_max), r.unconstrained_violating,
                r.darcy_iterations, r.transport_iterations, r.vi_iterations, f"{r.wall_time:.6f}",
            ])


def backward_euler_transport(space, D, velocity, c0, dt, num_steps, bcs=(), f=0.0):
    """Backward-Euler DG transport with fixed coefficients.

    Returns the concentration after ``num_steps`` steps of size ``dt``; the
    linear systems are solved directly.  Used to check time consistency.
    """
    system = assemble_dg(space, D, velocity, f, ())
    M = assemble_mass(space)
    dofs, values = collect_dirichlet(space, bcs)
    K = M + system.K_free * dt
    c = np.asarray(c0, dtype=float).copy()
    A, _ = apply_dirichlet(K, np.zeros(len(c)), dofs, values)
    lu = spla.splu(A.scipy.tocsc())
    for _ in range(num_steps):
        _, b = apply_dirichlet(K, M @ c + dt * system.f_free, dofs, values)
        c = lu.solve(b)
    return c
