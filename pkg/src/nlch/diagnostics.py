"""Per-step diagnostics: conserved quantities, energies, and solver residuals.

Each time step produces one :class:`DiagnosticsRecord`.  The fields mirror the
columns of the diagnostics CSV emitted by the run driver, plus a few extras
(the time-step functional and its increment) that are useful for monitoring
descent but are not part of the delimited output.

All integrals are lumped: ``sum(m_j f(u_j))`` with ``m`` the hat-function
weights over the evolution domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperators, apply_convolution
from .stepper import SCHEME_IMEX, SchemeConfig, StepState

__all__ = [
    "DiagnosticsRecord",
    "energy",
    "jk_value",
    "dual_norm_increment",
    "projection_residual",
    "sign_condition_check",
    "complementarity_residual",
    "interface_fraction",
    "mean_chemical_potential",
    "compute_record",
]

# Nodes with xi below this are treated as deep-quench in the projection test.
_XI_CUTOFF = 1e-12

_FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Snapshot of scalar diagnostics after one accepted time step.

    ``jk_value``/``jk_increment`` track the implicit time-step functional
    (free energy plus the weighted dual-norm distance to the previous state).
    The increment compares against the functional evaluated at the previous
    iterate, so descent means ``jk_increment <= 0`` up to round-off.
    """

    step: int
    t: float
    mass: float
    energy: float
    jk_value: float
    jk_increment: float
    mean_w: float
    pdas_iters: int
    projection_residual: float
    complementarity_residual: float
    interface_fraction: float
    sign_violations: int
    sign_near_zero: int
    imex_flag: int


def energy(ops: DiscreteOperators, u: np.ndarray) -> float:
    """Lumped free energy ``1/2 b(u,u) + sum_j m_j (c_F,j/2)(1 - u_j^2)``.

    ``u`` is a full nodal vector.  Raises ``ValueError`` if the evolution-node
    values leave ``[-1, 1]`` by more than a round-off slack; the obstacle
    potential is infinite there and the energy would be meaningless.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (ops.mesh.n_nodes,):
        raise ValueError(f"expected full nodal vector of length {ops.mesh.n_nodes}")
    u_om = u[ops.mesh.omega_nodes]
    overshoot = float(np.max(np.abs(u_om))) - 1.0
    if overshoot > _FEASIBILITY_SLACK:
        raise ValueError(
            f"state violates the obstacle bounds by {overshoot:.3e}; "
            "energy is undefined outside [-1, 1]"
        )
    from .assembly import bilinear_b

    quadratic = 0.5 * bilinear_b(ops, u, u)
    m_om = ops.mass_omega[ops.mesh.omega_nodes]
    well = float(np.dot(m_om, 0.5 * ops.c_f * (1.0 - u_om**2)))
    return quadratic + well


def _dual_solver(ops: DiscreteOperators):
    """Cached factorization of the bordered Neumann problem on the evolution nodes.

    Solves ``A z = r`` subject to ``sum_j m_j z_j = 0`` via the saddle system
    ``[[A, m], [m^T, 0]]``; the multiplier absorbs the constant null space.
    """
    lu = ops._extras.get("dual_lu")
    if lu is None:
        n = ops.n_omega
        m = ops.mass_omega[ops.mesh.omega_nodes].reshape(n, 1)
        bordered = sp.bmat(
            [[ops.stiffness, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]],
            format="csc",
        )
        lu = spla.splu(bordered)
        ops._extras["dual_lu"] = lu
    return lu


def dual_norm_increment(ops: DiscreteOperators, du: np.ndarray) -> float:
    """Discrete H^{-1}-type norm of a mean-free increment on the evolution nodes.

    Computes ``sqrt(du^T M z)`` where ``z`` solves ``A z = M du`` with zero
    lumped mean.  ``du`` must itself be mean-free to 1e-10; the norm is the
    natural distance contracted by the conserved-order-parameter flow.
    """
    du = np.asarray(du, dtype=float)
    if du.shape != (ops.n_omega,):
        raise ValueError(f"expected increment on the {ops.n_omega} evolution nodes")
    mdu = ops.mass_omega[ops.mesh.omega_nodes] * du
    total = float(np.sum(mdu))
    if abs(total) > 1e-10:
        raise ValueError(f"increment is not mean-free: integral {total:.3e}")
    lu = _dual_solver(ops)
    rhs = np.concatenate([mdu, [0.0]])
    z = lu.solve(rhs)[:-1]
    val = float(np.dot(mdu, z))
    # Symmetric PSD quadratic form; tiny negatives are round-off.
    return float(np.sqrt(max(val, 0.0)))


def jk_value(
    ops: DiscreteOperators, u: np.ndarray, u_prev: np.ndarray, tau: float
) -> float:
    """Implicit time-step functional: free energy plus dual-norm proximity term."""
    du = u[ops.mesh.omega_nodes] - u_prev[ops.mesh.omega_nodes]
    dist = dual_norm_increment(ops, du)
    return energy(ops, u) + dist**2 / (2.0 * tau)


def projection_residual(
    ops: DiscreteOperators, state: StepState, conv: np.ndarray | None = None
) -> float:
    """Max deviation of the state from its closed-form projection.

    On evolution nodes with ``xi_j > 0`` the variational inequality is
    equivalent to ``u_j = clip((w_j + (Wu)_j)/xi_j, -1, 1)``; the residual is
    the worst nodal mismatch.  ``conv`` may pass a precomputed ``W u`` using
    the convolution state of the scheme (previous iterate for the splitting
    scheme); by default the current state is used.  Nodes with ``xi_j``
    at or below round-off are excluded (the projection formula degenerates).
    """
    if conv is None:
        conv = apply_convolution(ops, state.u)
    om = ops.mesh.omega_nodes
    mask = ops.xi_h > _XI_CUTOFF
    if not np.any(mask):
        return 0.0
    target = (state.w[mask] + conv[om][mask]) / ops.xi_h[mask]
    projected = np.clip(target, -1.0, 1.0)
    return float(np.max(np.abs(state.u[om][mask] - projected)))


def sign_condition_check(
    ops: DiscreteOperators,
    state: StepState,
    conv: np.ndarray | None = None,
    g_tol: float = 1e-7,
) -> tuple[int, int]:
    """Check the deep-quench sign condition ``u_j = sign(w_j + (Wu)_j)``.

    Only nodes with ``xi_j`` at round-off level are examined: there the
    multiplier equals ``g_j = w_j + (Wu)_j`` and any node where ``g_j`` is
    decisively nonzero must sit at the matching bound.  Returns
    ``(violations, near_zero)``: nodes failing that implication, and nodes
    where ``|g_j| <= g_tol`` leaves the sign undecided (genuine interface
    nodes and transient values are counted here, not as failures).  With no
    deep-quench nodes both counts are zero.
    """
    if conv is None:
        conv = apply_convolution(ops, state.u)
    om = ops.mesh.omega_nodes
    quench = ops.xi_h <= _XI_CUTOFF
    if not np.any(quench):
        return 0, 0
    g = (state.w + conv[om])[quench]
    decisive = np.abs(g) > g_tol
    mismatch = np.abs(state.u[om][quench] - np.sign(g)) > 1e-9
    violations = int(np.count_nonzero(decisive & mismatch))
    near_zero = int(np.count_nonzero(~decisive))
    return violations, near_zero


def complementarity_residual(ops: DiscreteOperators, state: StepState) -> float:
    """Worst violation of ``lambda^+ (1-u) = 0`` and ``lambda^- (1+u) = 0``."""
    u = state.u[ops.mesh.omega_nodes]
    lam = state.lam
    upper = np.maximum(lam, 0.0) * np.abs(1.0 - u)
    lower = np.maximum(-lam, 0.0) * np.abs(1.0 + u)
    return float(np.max(upper + lower))


def interface_fraction(u: np.ndarray, tol: float) -> float:
    """Fraction of nodes sitting at the obstacle bounds to within ``tol``."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("empty nodal vector")
    return float(np.count_nonzero(np.abs(u) >= 1.0 - tol)) / float(u.size)


def mean_chemical_potential(ops: DiscreteOperators, w: np.ndarray) -> float:
    """Lumped mean of the chemical potential over the evolution domain."""
    w = np.asarray(w, dtype=float)
    if w.shape != (ops.n_omega,):
        raise ValueError(f"expected potential on the {ops.n_omega} evolution nodes")
    m_om = ops.mass_omega[ops.mesh.omega_nodes]
    return float(np.dot(m_om, w) / np.sum(m_om))


def compute_record(
    ops: DiscreteOperators,
    state: StepState,
    prev: StepState,
    cfg: SchemeConfig,
    prev_energy: float | None = None,
    interface_tol: float = 1e-8,
) -> DiagnosticsRecord:
    """Assemble the full diagnostics record for one accepted step."""
    om = ops.mesh.omega_nodes
    imex = cfg.scheme == SCHEME_IMEX
    conv_state = prev.u if imex else state.u
    conv = apply_convolution(ops, conv_state)

    e_now = energy(ops, state.u)
    e_prev = energy(ops, prev.u) if prev_energy is None else prev_energy
    du = state.u[om] - prev.u[om]
    dist = dual_norm_increment(ops, du)
    jk = e_now + dist**2 / (2.0 * cfg.tau)

    violations, near_zero = sign_condition_check(ops, state, conv=conv)
    return DiagnosticsRecord(
        step=state.k,
        t=state.t,
        mass=state.mass,
        energy=e_now,
        jk_value=jk,
        jk_increment=jk - e_prev,
        mean_w=mean_chemical_potential(ops, state.w),
        pdas_iters=state.pdas_iters,
        projection_residual=projection_residual(ops, state, conv=conv),
        complementarity_residual=complementarity_residual(ops, state),
        interface_fraction=interface_fraction(state.u[om], interface_tol),
        sign_violations=violations,
        sign_near_zero=near_zero,
        imex_flag=int(imex),
    )
