"""Primal-dual active-set solver for the box-constrained time-step systems.

One implicit (or semi-implicit) time step of the phase-field model is a
complementarity system: find nodal fields (u, w, lambda) with

    mass-balance rows   (m_j / tau) (u_j - u_j^prev) + (A w)_j = 0        on Omega,
    potential rows      w_j + (Phi u)_j - lambda_j = q_j                  on Omega,
    collar rows         (C u)_i = r_i                                     on the collar,
    complementarity     lambda = lambda_+ - lambda_-, lambda_+/- >= 0,
                        |u_j| <= 1, lambda_+ (u - 1) = lambda_- (u + 1) = 0.

The potential-row matrix Phi and the collar rows C are supplied by the
caller (nonlocal implicit, nonlocal semi-implicit, and local models differ
only there).  The active-set iteration guesses which constraints are tight,
solves the resulting square sparse linear system with active values
substituted out (direct factorization plus one step of iterative
refinement), recovers the multipliers from the potential-row residuals, and
updates the guess via

    plus  <- { j : lambda_j + c (u_j - 1) > 0 },
    minus <- { j : lambda_j + c (u_j + 1) < 0 },

until the partition repeats.  Ties leave a node inactive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "ActiveSetPartition",
    "StepProblem",
    "LinearSubproblem",
    "PdasResult",
    "PdasConvergenceError",
    "SingularSystemError",
    "build_subproblem",
    "solve_linear",
    "pdas_solve",
]


class PdasConvergenceError(RuntimeError):
    """Active-set iteration hit the iteration cap without a repeated partition."""


class SingularSystemError(RuntimeError):
    """The assembled linear system factorized as (numerically) singular."""


@dataclass(frozen=True)
class ActiveSetPartition:
    """Disjoint split of the Omega nodes by constraint status.

    plus/minus hold the local (Omega-ordinal) indices where u is pinned at
    +1 / -1; every other Omega node is inactive.  Stored as sorted index
    arrays.
    """

    n_omega: int
    plus: np.ndarray
    minus: np.ndarray

    @staticmethod
    def empty(n_omega: int) -> "ActiveSetPartition":
        z = np.empty(0, dtype=np.int64)
        return ActiveSetPartition(n_omega, z, z)

    @staticmethod
    def from_masks(plus_mask: np.ndarray, minus_mask: np.ndarray) -> "ActiveSetPartition":
        if np.any(plus_mask & minus_mask):
            raise ValueError("a node cannot be active at both bounds")
        return ActiveSetPartition(
            plus_mask.size,
            np.flatnonzero(plus_mask).astype(np.int64),
            np.flatnonzero(minus_mask).astype(np.int64),
        )

    @property
    def inactive(self) -> np.ndarray:
        mask = np.ones(self.n_omega, dtype=bool)
        mask[self.plus] = False
        mask[self.minus] = False
        return np.flatnonzero(mask).astype(np.int64)

    def same_as(self, other: "ActiveSetPartition") -> bool:
        return (
            self.n_omega == other.n_omega
            and np.array_equal(self.plus, other.plus)
            and np.array_equal(self.minus, other.minus)
        )


@dataclass
class StepProblem:
    """One time-step complementarity system, up to the active-set split.

    Attributes:
        stiffness: A, CSR (n_omega, n_omega), on Omega-ordinal indices.
        mass: lumped Omega weights m, shape (n_omega,).
        tau: time-step size.
        phi: potential-row u-coefficients, CSR (n_omega, n_nodes).
        pot_rhs: potential-row right-hand side q, shape (n_omega,).
        collar: extra u-only rows (n_collar, n_nodes) or None.
        collar_rhs: right-hand side r of the collar rows.
        omega: global node indices of the Omega block (length n_omega).
        exterior: global node indices owned by the collar rows (length
            n_collar); their u values are unknowns of those rows.
        n_nodes: total nodal vector length.
    """

    stiffness: sp.csr_matrix
    mass: np.ndarray
    tau: float
    phi: sp.csr_matrix
    pot_rhs: np.ndarray
    collar: sp.csr_matrix | None
    collar_rhs: np.ndarray | None
    omega: np.ndarray
    exterior: np.ndarray
    n_nodes: int


@dataclass
class LinearSubproblem:
    """Assembled sparse system for one active-set guess.

    Unknown ordering: w on all Omega nodes first, then u on the free nodes
    (inactive Omega nodes followed by collar nodes); active u values are
    substituted into the right-hand side.
    """

    matrix: sp.csc_matrix
    rhs: np.ndarray
    n_w: int
    free_globals: np.ndarray  # global node indices of the u unknowns, in order


@dataclass
class PdasResult:
    u: np.ndarray  # full nodal vector
    w: np.ndarray  # on Omega nodes
    lam: np.ndarray  # on Omega nodes
    partition: ActiveSetPartition
    iterations: int


def _active_values(partition: ActiveSetPartition) -> tuple[np.ndarray, np.ndarray]:
    """Global u values pinned by the partition: (+1 on plus, -1 on minus)."""
    act = np.concatenate([partition.plus, partition.minus])
    vals = np.concatenate([
        np.ones(partition.plus.size),
        -np.ones(partition.minus.size),
    ])
    order = np.argsort(act, kind="stable")
    return act[order], vals[order]


def build_subproblem(
    problem: StepProblem,
    partition: ActiveSetPartition,
    u_prev: np.ndarray,
) -> LinearSubproblem:
    """Assemble the square sparse system for one active-set guess."""
    n_om = problem.omega.size
    inact = partition.inactive
    act_local, act_vals = _active_values(partition)
    act_globals = problem.omega[act_local]

    free_globals = np.concatenate([problem.omega[inact], problem.exterior])
    n_free = free_globals.size

    # mass-balance rows: A w + (1/tau) m u|_Omega = (1/tau) m u_prev|_Omega
    coeff = problem.mass / problem.tau
    rows_m = sp.coo_matrix(
        (coeff[inact], (inact, np.arange(inact.size))),
        shape=(n_om, n_free),
    )
    rhs_m = coeff * u_prev[problem.omega]
    rhs_m[act_local] -= coeff[act_local] * act_vals

    # potential rows on inactive nodes: w_j + (Phi u)_j = q_j (lambda_j = 0)
    phi_in = problem.phi[inact]
    eye_w = sp.coo_matrix(
        (np.ones(inact.size), (np.arange(inact.size), inact)),
        shape=(inact.size, n_om),
    )
    rhs_p = problem.pot_rhs[inact] - phi_in[:, act_globals] @ act_vals

    blocks = [
        [problem.stiffness, rows_m],
        [eye_w, phi_in[:, free_globals]],
    ]
    rhs_parts = [rhs_m, rhs_p]

    if problem.collar is not None and problem.exterior.size > 0:
        rhs_c = problem.collar_rhs - problem.collar[:, act_globals] @ act_vals
        blocks.append([None, problem.collar[:, free_globals]])
        rhs_parts.append(rhs_c)

    matrix = sp.bmat(blocks, format="csc")
    rhs = np.concatenate(rhs_parts)
    return LinearSubproblem(matrix, rhs, n_om, free_globals)


def solve_linear(sub: LinearSubproblem, tol: float) -> np.ndarray:
    """Direct sparse solve with one iterative-refinement pass.

    Raises SingularSystemError (with a pivot-ratio heuristic) if the
    factorization breaks down or the refined max-norm residual still exceeds
    tol relative to the right-hand side scale.
    """
    try:
        lu = spla.splu(sub.matrix)
    except RuntimeError as err:
        raise SingularSystemError(
            f"sparse factorization failed for a {sub.matrix.shape} system: {err}"
        ) from err
    diag = np.abs(lu.U.diagonal())
    if diag.min() == 0.0 or not np.all(np.isfinite(diag)):
        raise SingularSystemError(
            f"singular subproblem: pivot ratio {diag.min():.3e}/{diag.max():.3e}"
        )
    x = lu.solve(sub.rhs)
    resid = sub.rhs - sub.matrix @ x
    x = x + lu.solve(resid)
    resid = sub.rhs - sub.matrix @ x
    scale = max(1.0, float(np.abs(sub.rhs).max(initial=0.0)))
    worst = float(np.abs(resid).max(initial=0.0))
    if not np.isfinite(worst) or worst > tol * scale * 100.0:
        raise SingularSystemError(
            f"linear residual {worst:.3e} exceeds tolerance after refinement; "
            f"pivot ratio {diag.min():.3e}/{diag.max():.3e}"
        )
    return x


def _unpack(
    problem: StepProblem,
    partition: ActiveSetPartition,
    sub: LinearSubproblem,
    x: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the solution vector into (u full, w, lambda)."""
    n_om = problem.omega.size
    w = x[:n_om]
    u = np.zeros(problem.n_nodes)
    u[sub.free_globals] = x[n_om:]
    act_local, act_vals = _active_values(partition)
    u[problem.omega[act_local]] = act_vals
    # lambda from the potential-row residual; zero on inactive nodes
    lam = np.zeros(n_om)
    if act_local.size:
        resid = w + problem.phi @ u - problem.pot_rhs
        lam[act_local] = resid[act_local]
    return u, w, lam


def _kkt_residuals(
    problem: StepProblem,
    u: np.ndarray,
    w: np.ndarray,
    lam: np.ndarray,
    u_prev: np.ndarray,
) -> dict:
    """Max-norm residuals of the full complementarity system."""
    om = problem.omega
    res_mass = problem.mass / problem.tau * (u[om] - u_prev[om]) + problem.stiffness @ w
    res_pot = w + problem.phi @ u - lam - problem.pot_rhs
    out = {
        "mass_balance": float(np.abs(res_mass).max(initial=0.0)),
        "potential": float(np.abs(res_pot).max(initial=0.0)),
        "bounds": float(np.maximum(np.abs(u[om]) - 1.0, 0.0).max(initial=0.0)),
        "complementarity": float(
            np.abs(lam * np.minimum(np.abs(u[om] - 1.0), np.abs(u[om] + 1.0))).max(initial=0.0)
        ),
    }
    if problem.collar is not None and problem.exterior.size > 0:
        res_c = problem.collar @ u - problem.collar_rhs
        out["collar"] = float(np.abs(res_c).max(initial=0.0))
    return out


def pdas_solve(
    problem: StepProblem,
    u_prev: np.ndarray,
    warm: ActiveSetPartition | None,
    c_active: float = 1.0,
    lin_tol: float = 1e-12,
    max_iters: int = 50,
) -> PdasResult:
    """Run the active-set iteration to a repeated partition.

    Args:
        problem: the step system (see StepProblem).
        u_prev: full nodal vector from the previous step.
        warm: starting partition; None means all nodes inactive.
        c_active: complementarity scaling c in the set-update rule.
        lin_tol: max-norm residual bound for each sparse solve.
        max_iters: bound on linear solves before giving up.

    Returns a PdasResult whose partition reproduces itself under the update
    rule.  Raises PdasConvergenceError with the last residuals on failure.
    """
    if c_active <= 0.0:
        raise ValueError(f"c_active must be positive, got {c_active}")
    partition = warm if warm is not None else ActiveSetPartition.empty(problem.omega.size)
    last = None
    for it in range(1, max_iters + 1):
        sub = build_subproblem(problem, partition, u_prev)
        x = solve_linear(sub, lin_tol)
        u, w, lam = _unpack(problem, partition, sub, x)
        u_om = u[problem.omega]
        plus_mask = lam + c_active * (u_om - 1.0) > 0.0
        minus_mask = lam + c_active * (u_om + 1.0) < 0.0
        new_partition = ActiveSetPartition.from_masks(plus_mask, minus_mask)
        if new_partition.same_as(partition):
            return PdasResult(u, w, lam, partition, it)
        partition = new_partition
        last = (u, w, lam)
    resid = _kkt_residuals(problem, *last, u_prev) if last else {}
    raise PdasConvergenceError(
        f"active-set iteration did not settle within {max_iters} solves; "
        f"last residuals: {resid}. Persistent chatter usually means tau is "
        "above the convexity threshold of the step functional; reduce tau "
        "(see the recommended bound) or raise max_iters"
    )
