"""Time stepping for the nonlocal model: implicit and semi-implicit schemes.

Each step solves the complementarity system assembled from the discrete
operators.  The chemical-potential rows on Omega nodes read

    w_j = xi_h_j u_j - (W u*)_j + lambda_j,

where u* = u^k for the implicit scheme and u* = u^{k-1} for the
semi-implicit (imex) scheme; only the convolution term is ever treated
explicitly, so the stabilizing c_gamma_h part stays implicit.  Collar rows
enforce c_gamma_h_i u_i - (W u*)_i = 0; under imex they reduce to the
explicit update u_i = (W u^{k-1})_i / c_gamma_h_i.

The imex scheme requires xi_h bounded away from zero (its potential rows
lose the u^k coupling otherwise) and is rejected for deep-quench runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import CASE_NEUMANN, DiscreteOperators
from .vi_solver import ActiveSetPartition, StepProblem, pdas_solve

__all__ = [
    "SchemeConfig",
    "StepState",
    "DegenerateSchemeError",
    "initial_state",
    "step",
    "run",
]

SCHEME_IMPLICIT = "implicit"
SCHEME_IMEX = "imex"

_XI_IMEX_FLOOR = 1e-12


class DegenerateSchemeError(ValueError):
    """imex requested although xi_h is (numerically) zero somewhere."""


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping parameters.

    Attributes:
        tau: step size > 0.
        scheme: "implicit" or "imex".
        c_pdas: complementarity scaling of the active-set update.
        lin_tol: max-norm residual bound for the inner linear solves.
        max_pdas_iters: cap on linear solves per step.
    """

    tau: float
    scheme: str = SCHEME_IMPLICIT
    c_pdas: float = 1.0
    lin_tol: float = 1e-12
    max_pdas_iters: int = 50

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.scheme not in (SCHEME_IMPLICIT, SCHEME_IMEX):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.lin_tol > 0.0:
            raise ValueError(f"lin_tol must be positive, got {self.lin_tol}")
        if self.max_pdas_iters < 1:
            raise ValueError("max_pdas_iters must be at least 1")


@dataclass
class StepState:
    """Solution snapshot after step k.

    u is the full nodal vector (|u| <= 1 on Omega nodes); w and lam live on
    Omega nodes in mesh.omega_nodes order.  active_plus/active_minus hold
    global node indices of the pinned sets.  pdas_iters records the number
    of linear solves the step took (0 for the initial state).
    """

    k: int
    t: float
    u: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    active_plus: np.ndarray
    active_minus: np.ndarray
    mass: float
    pdas_iters: int = 0


def _mass_of(ops, u: np.ndarray) -> float:
    return float(np.dot(ops.mass_omega, u))


def initial_state(ops: DiscreteOperators, u0: np.ndarray) -> StepState:
    """Wrap initial data as a step-0 state (w and lambda are placeholders).

    u0 must be feasible on Omega nodes; overshoots up to 1e-12 are clamped,
    larger ones raise ValueError.
    """
    u0 = np.array(u0, dtype=float)
    if u0.shape != (ops.mesh.n_nodes,):
        raise ValueError(
            f"initial data must have one value per node ({ops.mesh.n_nodes}), "
            f"got shape {u0.shape}"
        )
    om = ops.mesh.omega_nodes
    over = np.abs(u0[om]).max(initial=0.0) - 1.0
    if over > 1e-12:
        raise ValueError(f"initial data violates |u| <= 1 on Omega nodes by {over:.3e}")
    u0[om] = np.clip(u0[om], -1.0, 1.0)
    z = np.empty(0, dtype=np.int64)
    return StepState(
        k=0,
        t=0.0,
        u=u0,
        w=np.zeros(om.size),
        lam=np.zeros(om.size),
        active_plus=z,
        active_minus=z,
        mass=_mass_of(ops, u0),
    )


def _build_problem(ops: DiscreteOperators, cfg: SchemeConfig, u_prev: np.ndarray) -> StepProblem:
    mesh = ops.mesh
    om = mesh.omega_nodes
    ext = mesh.interaction_nodes
    n = mesh.n_nodes
    n_om = om.size

    xi_diag = sp.coo_matrix((ops.xi_h, (np.arange(n_om), om)), shape=(n_om, n)).tocsr()

    if cfg.scheme == SCHEME_IMPLICIT:
        # w + (W - diag(xi)) u - lambda = 0 on Omega
        phi = (ops.conv[om] - xi_diag).tocsr()
        pot_rhs = np.zeros(n_om)
        if ops.case == CASE_NEUMANN and ext.size:
            collar = (
                sp.coo_matrix((ops.c_gamma_h[ext], (np.arange(ext.size), ext)), shape=(ext.size, n))
                - ops.conv[ext]
            ).tocsr()
            collar_rhs = np.zeros(ext.size)
        else:
            collar, collar_rhs = None, None
    else:
        if ops.xi_h.min(initial=np.inf) < _XI_IMEX_FLOOR:
            raise DegenerateSchemeError(
                "imex needs xi_h >= 1e-12 everywhere (its potential rows lose "
                "their u coupling at xi_h = 0); use the implicit scheme"
            )
        conv_prev = ops.conv @ u_prev
        # w - diag(xi) u - lambda = -(W u_prev) on Omega
        phi = (-xi_diag).tocsr()
        pot_rhs = -conv_prev[om]
        if ops.case == CASE_NEUMANN and ext.size:
            # collar update is explicit: u_i = (W u_prev)_i / c_gamma_h_i
            collar = sp.coo_matrix(
                (np.ones(ext.size), (np.arange(ext.size), ext)), shape=(ext.size, n)
            ).tocsr()
            collar_rhs = conv_prev[ext] / ops.c_gamma_h[ext]
        else:
            collar, collar_rhs = None, None

    return StepProblem(
        stiffness=ops.stiffness,
        mass=ops.mass_omega[om],
        tau=cfg.tau,
        phi=phi,
        pot_rhs=pot_rhs,
        collar=collar,
        collar_rhs=collar_rhs,
        omega=om,
        exterior=ext,
        n_nodes=n,
    )


def _warm_partition(ops: DiscreteOperators, prev: StepState) -> ActiveSetPartition:
    om = ops.mesh.omega_nodes
    g2o = np.full(ops.mesh.n_nodes, -1, dtype=np.int64)
    g2o[om] = np.arange(om.size)
    return ActiveSetPartition(
        om.size,
        np.sort(g2o[prev.active_plus]),
        np.sort(g2o[prev.active_minus]),
    )


def step(ops: DiscreteOperators, prev: StepState, cfg: SchemeConfig) -> StepState:
    """Advance one step from prev, warm-starting the active sets."""
    problem = _build_problem(ops, cfg, prev.u)
    result = pdas_solve(
        problem,
        prev.u,
        _warm_partition(ops, prev),
        c_active=cfg.c_pdas,
        lin_tol=cfg.lin_tol,
        max_iters=cfg.max_pdas_iters,
    )
    om = ops.mesh.omega_nodes
    return StepState(
        k=prev.k + 1,
        t=(prev.k + 1) * cfg.tau,
        u=result.u,
        w=result.w,
        lam=result.lam,
        active_plus=om[result.partition.plus],
        active_minus=om[result.partition.minus],
        mass=_mass_of(ops, result.u),
        pdas_iters=result.iterations,
    )


def run(
    ops: DiscreteOperators,
    u0: np.ndarray,
    cfg: SchemeConfig,
    T: float,
    hooks=None,
) -> StepState:
    """Step from t=0 to t=T = K tau; K must be a whole number of steps.

    hooks, when given, is a sequence of callables invoked as
    hook(prev_state, new_state) after every accepted step (diagnostics sinks
    plug in here).  Returns the final state; T = 0 returns the wrapped
    initial state unchanged.
    """
    return _run_loop(ops, u0, cfg, T, hooks, step)


def _run_loop(ops, u0, cfg, T, hooks, step_fn):
    # Shared driver; the local comparison solver reuses it with its own step.
    steps = T / cfg.tau
    K = int(round(steps))
    if abs(steps - K) > 1e-9 * max(1.0, abs(K)):
        raise ValueError(f"T = {T} is not a whole number of steps of tau = {cfg.tau}")
    state = initial_state(ops, u0)
    for _ in range(K):
        try:
            new = step_fn(ops, state, cfg)
        except Exception as err:
            raise type(err)(f"step {state.k + 1} (t = {(state.k + 1) * cfg.tau:g}): {err}") from err
        for hook in hooks or ():
            hook(state, new)
        state = new
    return state
