"""Local Cahn-Hilliard comparison solver with the same obstacle treatment.

The chemical potential here is the classical one,

    w = -eps^2 Laplace(u) - c_F u + lambda,

with the nonsmooth double well (c_F/2)(1 - u^2) plus the indicator of
[-1, 1], discretized with the identical lumped P1 elements and stepped by
the identical active-set method as the nonlocal model.  It exists for
side-by-side studies: here interface widths scale with eps, whereas the
nonlocal solver can drive fronts to genuinely sharp, node-to-node jumps.

Two diagnostics differ by necessity and are documented here once:

* ``projection_residual`` reports the max-norm stationarity residual of the
  discrete potential rows (the local model admits no nodewise projection
  formula because the Laplacian couples each node to its neighbors with an
  h-dependent weight);
* ``sign_violations``/``sign_near_zero`` are reported as zero (the
  deep-quench sign condition is a statement about the nonlocal operator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import ConfigurationError, _assemble_stiffness
from .diagnostics import (
    DiagnosticsRecord,
    complementarity_residual,
    dual_norm_increment,
    interface_fraction,
    mean_chemical_potential,
)
from .mesh import Mesh
from .stepper import (
    SCHEME_IMPLICIT,
    SchemeConfig,
    StepState,
    _mass_of,
    _run_loop,
    _warm_partition,
)
from .vi_solver import StepProblem, pdas_solve

__all__ = [
    "LocalOperators",
    "assemble_local",
    "local_energy",
    "local_step",
    "local_run",
    "local_record",
]

_FEASIBILITY_SLACK = 1e-9


@dataclass
class LocalOperators:
    """Discrete operators of the local model on a collar-free mesh.

    stiffness is the exact P1 matrix over all nodes; mass holds the lumped
    hat-function weights.  The mass_omega/n_omega aliases let the shared
    stepping and diagnostics helpers treat every node as an evolution node.
    """

    mesh: Mesh
    epsilon2: float
    c_f: float
    stiffness: sp.csr_matrix
    mass: np.ndarray
    _extras: dict = field(default_factory=dict, repr=False)

    @property
    def mass_omega(self) -> np.ndarray:
        return self.mass

    @property
    def n_omega(self) -> int:
        return self.mesh.n_nodes


def assemble_local(mesh: Mesh, epsilon2: float, c_f: float) -> LocalOperators:
    """Build local-model operators; the mesh must carry no interaction layer."""
    if mesh.layer_cells != 0:
        raise ConfigurationError(
            "the local model has no interaction layer; build the mesh with "
            "layer_width = 0"
        )
    if not epsilon2 > 0.0:
        raise ConfigurationError(f"epsilon2 must be positive, got {epsilon2}")
    stiffness = _assemble_stiffness(mesh)
    return LocalOperators(
        mesh=mesh,
        epsilon2=float(epsilon2),
        c_f=float(c_f),
        stiffness=stiffness,
        mass=mesh.lumped_weight_omega,
    )


def local_energy(lops: LocalOperators, u: np.ndarray) -> float:
    """Ginzburg-Landau energy ``eps^2/2 |grad u|^2 + sum m_j (c_F/2)(1-u_j^2)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (lops.mesh.n_nodes,):
        raise ValueError(f"expected nodal vector of length {lops.mesh.n_nodes}")
    overshoot = float(np.max(np.abs(u))) - 1.0
    if overshoot > _FEASIBILITY_SLACK:
        raise ValueError(
            f"state violates the obstacle bounds by {overshoot:.3e}; "
            "energy is undefined outside [-1, 1]"
        )
    gradient = 0.5 * lops.epsilon2 * float(u @ (lops.stiffness @ u))
    well = float(np.dot(lops.mass, 0.5 * lops.c_f * (1.0 - u**2)))
    return gradient + well


def _local_problem(lops: LocalOperators, cfg: SchemeConfig) -> StepProblem:
    problem = lops._extras.get("step_problem")
    if problem is not None and problem.tau == cfg.tau:
        return problem
    n = lops.mesh.n_nodes
    # Potential rows: w_j + (c_F u_j - eps^2 (A u)_j / m_j) - lambda_j = 0.
    phi = (
        lops.c_f * sp.eye(n, format="csr")
        - lops.epsilon2 * sp.diags(1.0 / lops.mass) @ lops.stiffness
    ).tocsr()
    problem = StepProblem(
        stiffness=lops.stiffness,
        mass=lops.mass,
        tau=cfg.tau,
        phi=phi,
        pot_rhs=np.zeros(n),
        collar=None,
        collar_rhs=None,
        omega=np.arange(n, dtype=np.int64),
        exterior=np.empty(0, dtype=np.int64),
        n_nodes=n,
    )
    lops._extras["step_problem"] = problem
    return problem


def local_step(lops: LocalOperators, prev: StepState, cfg: SchemeConfig) -> StepState:
    """Advance the local model by one implicit step (the only scheme here)."""
    if cfg.scheme != SCHEME_IMPLICIT:
        raise ConfigurationError(
            "the local comparison solver is implicit-only; the imex splitting "
            "applies to the convolution term, which the local model lacks"
        )
    problem = _local_problem(lops, cfg)
    result = pdas_solve(
        problem,
        prev.u,
        _warm_partition(lops, prev),
        c_active=cfg.c_pdas,
        lin_tol=cfg.lin_tol,
        max_iters=cfg.max_pdas_iters,
    )
    return StepState(
        k=prev.k + 1,
        t=(prev.k + 1) * cfg.tau,
        u=result.u,
        w=result.w,
        lam=result.lam,
        active_plus=result.partition.plus.copy(),
        active_minus=result.partition.minus.copy(),
        mass=_mass_of(lops, result.u),
        pdas_iters=result.iterations,
    )


def local_run(
    lops: LocalOperators,
    u0: np.ndarray,
    cfg: SchemeConfig,
    T: float,
    hooks=None,
) -> StepState:
    """Step the local model from t=0 to t=T; same contract as the nonlocal run."""
    return _run_loop(lops, u0, cfg, T, hooks, local_step)


def _stationarity_residual(lops: LocalOperators, state: StepState) -> float:
    """Max-norm residual of w + c_F u - eps^2 (A u)/m - lambda = 0."""
    au = lops.stiffness @ state.u
    resid = state.w + lops.c_f * state.u - lops.epsilon2 * au / lops.mass - state.lam
    return float(np.max(np.abs(resid)))


def local_record(
    lops: LocalOperators,
    state: StepState,
    prev: StepState,
    cfg: SchemeConfig,
    prev_energy: float | None = None,
    interface_tol: float = 1e-8,
) -> DiagnosticsRecord:
    """Diagnostics for one local step; see the module docstring for the
    columns whose meaning necessarily differs from the nonlocal solver."""
    e_now = local_energy(lops, state.u)
    e_prev = local_energy(lops, prev.u) if prev_energy is None else prev_energy
    dist = dual_norm_increment(lops, state.u - prev.u)
    jk = e_now + dist**2 / (2.0 * cfg.tau)
    return DiagnosticsRecord(
        step=state.k,
        t=state.t,
        mass=state.mass,
        energy=e_now,
        jk_value=jk,
        jk_increment=jk - e_prev,
        mean_w=mean_chemical_potential(lops, state.w),
        pdas_iters=state.pdas_iters,
        projection_residual=_stationarity_residual(lops, state),
        complementarity_residual=complementarity_residual(lops, state),
        interface_fraction=interface_fraction(state.u, interface_tol),
        sign_violations=0,
        sign_near_zero=0,
        imex_flag=0,
    )
