"""Discrete operators: lumped masses, P1 stiffness, and the convolution matrix.

The nonlocal operator is discretized with mass lumping: the discrete
convolution of a nodal field u is

    (W u)_i = sum_j m~_j gamma(|p_i - p_j|) u_j,   |p_i - p_j| <= delta,

where m~_j is the hat-function integral over the padded box.  Row sums of W
give the discrete kernel mass c_gamma_h(p_i) exactly, so the constant field
is annihilated by the nonlocal operator c_gamma_h * u - W u to machine
precision.  The well-posedness field xi_h = c_gamma_h - c_F must be
nonnegative on all Omega nodes; assembly fails loudly otherwise.

On the structured lattice W is assembled offset-by-offset (one kernel value
per lattice offset within the horizon), which is exact, fast, and
deterministic.  The P1 stiffness matrix is assembled from per-orientation
element matrices built out of exact lattice edge vectors, which makes its
row sums vanish identically in floating point (the discrete mass-conservation
mechanism).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernel import KernelSpec, evaluate
from .mesh import Mesh

__all__ = [
    "ConfigurationError",
    "WellPosednessError",
    "DiscreteOperators",
    "assemble",
    "apply_convolution",
    "neumann_residual",
    "bilinear_b",
    "dump_convolution",
    "load_convolution",
]

CASE_NEUMANN = 1  # collar-constrained: solution extended onto an interaction collar
CASE_REGIONAL = 2  # kernel restricted to the unit box itself, no collar


class ConfigurationError(ValueError):
    """Mesh/case/kernel combination that cannot be assembled."""


class WellPosednessError(ValueError):
    """xi_h < 0 somewhere: the obstacle-potential split is ill-posed."""


@dataclass
class DiscreteOperators:
    """Assembled discrete operators for one mesh/kernel/case combination.

    Attributes:
        mesh, kernel, case: the assembly inputs.
        mass_omega: lumped weights over Omega, shape (n_nodes,), zero on collar.
        mass_full: lumped weights over the padded box, shape (n_nodes,).
        stiffness: P1 stiffness matrix on Omega nodes, CSR, shape (n_om, n_om),
            indexed by position within mesh.omega_nodes.
        conv: convolution matrix W, CSR, shape (n_nodes, n_nodes).
        c_gamma_h: row sums of W (discrete kernel mass), shape (n_nodes,).
        c_f: nodal potential coefficient on Omega nodes, shape (n_om,).
        xi_h: c_gamma_h - c_f on Omega nodes, shape (n_om,), >= 0.
    """

    mesh: Mesh
    kernel: KernelSpec
    case: int
    mass_omega: np.ndarray
    mass_full: np.ndarray
    stiffness: sp.csr_matrix
    conv: sp.csr_matrix
    c_gamma_h: np.ndarray
    c_f: np.ndarray
    xi_h: np.ndarray
    _extras: dict = field(default_factory=dict, repr=False)  # lazy solver caches

    @property
    def n_omega(self) -> int:
        return self.mesh.omega_nodes.size


def assemble(mesh: Mesh, spec: KernelSpec, c_f, case: int) -> DiscreteOperators:
    """Assemble all discrete operators.

    Args:
        mesh: structured mesh; for case 1 its collar must be at least delta
            wide, for case 2 it must have no collar.
        spec: kernel description with spec.dim == mesh.dim.
        c_f: potential coefficient; a scalar, a per-Omega-node array, or the
            string rule "0.9*cgamma" (resolved against the assembled
            c_gamma_h).
        case: CASE_NEUMANN (1) or CASE_REGIONAL (2).

    Raises:
        ConfigurationError: on dim mismatch or case/collar mismatch.
        WellPosednessError: if min xi_h < 0 on Omega nodes.
    """
    if case not in (CASE_NEUMANN, CASE_REGIONAL):
        raise ConfigurationError(f"case must be 1 or 2, got {case}")
    if spec.dim != mesh.dim:
        raise ConfigurationError(
            f"kernel dimension {spec.dim} does not match mesh dimension {mesh.dim}"
        )
    collar_width = mesh.layer_cells * mesh.h
    if case == CASE_NEUMANN and collar_width + 1e-12 < spec.delta:
        raise ConfigurationError(
            f"case 1 needs an interaction collar at least delta={spec.delta} wide; "
            f"mesh collar is {collar_width}"
        )
    if case == CASE_REGIONAL and mesh.layer_cells != 0:
        raise ConfigurationError("case 2 runs on a collar-free mesh")
    if int(np.floor(spec.delta / mesh.h * (1.0 + 1e-12))) < 1:
        raise ConfigurationError(
            f"interaction horizon delta={spec.delta} is smaller than the mesh "
            f"spacing h={mesh.h}: the lattice resolves no interaction at all "
            "(the convolution matrix would be diagonal); refine the mesh or "
            "enlarge delta"
        )

    conv = _assemble_convolution(mesh, spec)
    # row sums via the same matvec used by apply_convolution, so the constant
    # field is annihilated bitwise: c_gamma_h * 1 - W @ 1 == 0.0
    c_gamma_h = conv @ np.ones(mesh.n_nodes)
    stiffness = _assemble_stiffness(mesh)

    n_om = mesh.omega_nodes.size
    if isinstance(c_f, str):
        rule = c_f.replace(" ", "")
        if rule != "0.9*cgamma":
            raise ConfigurationError(f"unknown c_F rule {c_f!r}")
        c_f_nodal = 0.9 * c_gamma_h[mesh.omega_nodes]
    elif np.isscalar(c_f):
        c_f_nodal = np.full(n_om, float(c_f))
    else:
        c_f_nodal = np.asarray(c_f, dtype=float)
        if c_f_nodal.shape == (mesh.n_nodes,):
            c_f_nodal = c_f_nodal[mesh.omega_nodes]
        if c_f_nodal.shape != (n_om,):
            raise ConfigurationError(
                f"nodal c_F must have one value per Omega node ({n_om}), "
                f"got shape {c_f_nodal.shape}"
            )

    xi_h = c_gamma_h[mesh.omega_nodes] - c_f_nodal
    worst = int(np.argmin(xi_h))
    if xi_h[worst] < -1e-13:
        raise WellPosednessError(
            f"xi_h = c_gamma_h - c_F is negative at node "
            f"{int(mesh.omega_nodes[worst])} (xi_h = {xi_h[worst]:.6e}); "
            "reduce c_F or enlarge the kernel mass"
        )
    np.maximum(xi_h, 0.0, out=xi_h)  # clear -1e-16-level dust from the subtraction

    return DiscreteOperators(
        mesh=mesh,
        kernel=spec,
        case=case,
        mass_omega=mesh.lumped_weight_omega,
        mass_full=mesh.lumped_weight_full,
        stiffness=stiffness,
        conv=conv,
        c_gamma_h=c_gamma_h,
        c_f=c_f_nodal,
        xi_h=xi_h,
    )


def _lattice_shape(mesh: Mesh) -> tuple[int, ...]:
    per_axis = mesh.n_cells + 2 * mesh.layer_cells + 1
    return (per_axis,) * mesh.dim


def _assemble_convolution(mesh: Mesh, spec: KernelSpec) -> sp.csr_matrix:
    """Offset-wise assembly of W = gamma(|p_i - p_j|) * m~_j on the lattice."""
    h = mesh.h
    m_full = mesh.lumped_weight_full
    radius = int(np.floor(spec.delta / h * (1.0 + 1e-12)))
    rows, cols, vals = [], [], []

    if mesh.dim == 1:
        n = mesh.n_nodes
        for off in range(-radius, radius + 1):
            r = abs(off) * h
            if r > spec.delta * (1.0 + 1e-12):
                continue
            g = evaluate(spec, min(r, spec.delta))
            lo, hi = max(0, -off), n - max(0, off)
            rr = np.arange(lo, hi)
            cc = rr + off
            rows.append(rr)
            cols.append(cc)
            vals.append(g * m_full[cc])
    else:
        nx = _lattice_shape(mesh)[0]
        n = nx * nx
        delta2 = (spec.delta / h) ** 2 * (1.0 + 1e-12)
        for oy in range(-radius, radius + 1):
            for ox in range(-radius, radius + 1):
                d2 = ox * ox + oy * oy
                if d2 > delta2:
                    continue
                r = min(np.hypot(ox * h, oy * h), spec.delta)
                g = evaluate(spec, r)
                x_lo, x_hi = max(0, -ox), nx - max(0, ox)
                y_lo, y_hi = max(0, -oy), nx - max(0, oy)
                base = (np.arange(y_lo, y_hi) * nx)[:, None] + np.arange(x_lo, x_hi)[None, :]
                rr = base.ravel()
                cc = rr + (oy * nx + ox)
                rows.append(rr)
                cols.append(cc)
                vals.append(g * m_full[cc])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    W = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return W.tocsr()


def _p1_element_matrix(pts: np.ndarray) -> np.ndarray:
    """Exact P1 stiffness matrix of one simplex from its vertex coordinates.

    The diagonal is rebuilt as minus the off-diagonal row sum so each element
    matrix annihilates constants exactly in floating point.
    """
    if pts.shape[0] == 2:
        length = abs(pts[1, 0] - pts[0, 0])
        k = 1.0 / length
        return np.array([[k, -k], [-k, k]])
    # 2D triangle: grad of barycentric i is the rotated opposite edge / (2 area)
    e0 = pts[2] - pts[1]
    e1 = pts[0] - pts[2]
    e2 = pts[1] - pts[0]
    twice_area = e2[0] * (-e1[1]) - e2[1] * (-e1[0])
    area = 0.5 * abs(twice_area)
    grads = np.array([[-e0[1], e0[0]], [-e1[1], e1[0]], [-e2[1], e2[0]]]) / twice_area
    K = area * grads @ grads.T
    for i in range(3):
        K[i, i] = 0.0
        K[i, i] = -np.sum(K[i])
    return K


def _assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """P1 stiffness on Omega nodes from Omega elements only.

    On the structured lattice every element is a translate of one reference
    shape (two orientations in 2D), so one element matrix per orientation is
    computed from exact lattice edges and reused.
    """
    g2o = np.full(mesh.n_nodes, -1, dtype=np.int64)
    g2o[mesh.omega_nodes] = np.arange(mesh.omega_nodes.size)
    elems = mesh.elements[mesh.omega_elements]
    h = mesh.h

    if mesh.dim == 1:
        local = [_p1_element_matrix(np.array([[0.0], [h]]))]
        orientation = np.zeros(elems.shape[0], dtype=np.int64)
    else:
        local = [
            _p1_element_matrix(np.array([[0.0, 0.0], [h, 0.0], [h, h]])),
            _p1_element_matrix(np.array([[0.0, 0.0], [h, h], [0.0, h]])),
        ]
        # elements alternate orientation by construction (see mesh builder)
        orientation = mesh.omega_elements % 2

    nv = mesh.dim + 1
    n_el = elems.shape[0]
    rows = np.repeat(elems, nv, axis=1).ravel()
    cols = np.tile(elems, (1, nv)).ravel()
    vals = np.empty(n_el * nv * nv)
    for o, K in enumerate(local):
        mask = orientation == o
        vals_o = np.broadcast_to(K.ravel(), (int(mask.sum()), nv * nv))
        vals.reshape(n_el, nv * nv)[mask] = vals_o
    A = sp.coo_matrix(
        (vals, (g2o[rows], g2o[cols])),
        shape=(mesh.omega_nodes.size, mesh.omega_nodes.size),
    )
    return A.tocsr()


def apply_convolution(ops: DiscreteOperators, u: np.ndarray) -> np.ndarray:
    """Discrete convolution W u for a full-length nodal vector."""
    u = np.asarray(u, dtype=float)
    if u.shape != (ops.mesh.n_nodes,):
        raise ValueError(
            f"expected a nodal vector of length {ops.mesh.n_nodes}, got shape {u.shape}"
        )
    return ops.conv @ u


def neumann_residual(ops: DiscreteOperators, u: np.ndarray) -> np.ndarray:
    """Collar rows of the nonlocal operator: c_gamma_h u - W u on collar nodes.

    Only meaningful for case 1; case 2 has no collar and raises.
    """
    if ops.case != CASE_NEUMANN:
        raise ConfigurationError("the collar flux residual is defined for case 1 only")
    wu = apply_convolution(ops, u)
    ii = ops.mesh.interaction_nodes
    return ops.c_gamma_h[ii] * u[ii] - wu[ii]


def bilinear_b(ops: DiscreteOperators, u: np.ndarray, v: np.ndarray) -> float:
    """Lumped nonlocal Dirichlet form b(u, v).

    Equals the symmetric double sum
    0.5 * sum_ij m~_i m~_j gamma_ij (u_i - u_j)(v_i - v_j)
    and is evaluated as sum_i m~_i v_i (c_gamma_h_i u_i - (W u)_i).
    Positive semidefinite; annihilates constants exactly.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = ops.mesh.n_nodes
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"expected nodal vectors of length {n}")
    resid = ops.c_gamma_h * u - ops.conv @ u
    return float(np.dot(ops.mass_full * v, resid))


# Binary dump of W: little-endian int64 header [n_rows, n_cols, nnz], then the
# CSR arrays indptr (int64), indices (int64), data (float64), back to back.
_DUMP_HEADER = np.dtype("<i8")


def dump_convolution(ops: DiscreteOperators, path) -> None:
    """Write the convolution matrix in the documented little-endian CSR format."""
    W = ops.conv.tocsr()
    W.sort_indices()
    with open(path, "wb") as fh:
        np.array([W.shape[0], W.shape[1], W.nnz], dtype="<i8").tofile(fh)
        W.indptr.astype("<i8").tofile(fh)
        W.indices.astype("<i8").tofile(fh)
        W.data.astype("<f8").tofile(fh)


def load_convolution(path) -> sp.csr_matrix:
    """Read a matrix written by :func:`dump_convolution`."""
    with open(path, "rb") as fh:
        n_rows, n_cols, nnz = np.fromfile(fh, dtype="<i8", count=3)
        indptr = np.fromfile(fh, dtype="<i8", count=n_rows + 1)
        indices = np.fromfile(fh, dtype="<i8", count=nnz)
        data = np.fromfile(fh, dtype="<f8", count=nnz)
    return sp.csr_matrix((data, indices, indptr), shape=(int(n_rows), int(n_cols)))
