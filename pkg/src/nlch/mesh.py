"""Uniform simplicial meshes of the unit interval/square with an optional collar.

The computational domain is Omega = (0,1)^d, d in {1, 2}, discretized with a
uniform lattice of spacing h = 1/n_cells.  For runs that constrain the
solution on a nonlocal interaction collar, the lattice is extended beyond
each face by a whole number of cells (the requested collar width rounded up),
and nodes are classified as either Omega nodes (inside the closed unit box)
or collar nodes.

Cells are intervals in 1D; in 2D every lattice square is split into two
right triangles along the same diagonal.  Lumped quadrature weights are the
exact integrals of the P1 hat functions (|element| / (d+1) accumulated per
vertex), computed twice: over Omega elements only, and over the whole padded
box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Mesh", "build_mesh", "classify_node"]


@dataclass(frozen=True)
class Mesh:
    """Immutable uniform mesh of the padded unit box.

    Attributes:
        dim: spatial dimension (1 or 2).
        n_cells: cells per axis inside Omega.
        h: lattice spacing 1/n_cells.
        layer_cells: collar cells beyond each face (0 when no collar).
        coords: node coordinates, shape (n_nodes, dim), lattice-ordered
            (ascending x, then row-major by y in 2D).
        elements: vertex indices per element, shape (n_elements, dim+1).
        omega_nodes: sorted global indices of nodes in the closed unit box.
        interaction_nodes: sorted global indices of collar nodes.
        omega_mask: boolean membership mask over all nodes.
        omega_elements: indices of elements contained in the closed unit box.
        lumped_weight_omega: per-node hat integral over Omega (zero on the
            collar), shape (n_nodes,).
        lumped_weight_full: per-node hat integral over the padded box.
    """

    dim: int
    n_cells: int
    h: float
    layer_cells: int
    coords: np.ndarray
    elements: np.ndarray
    omega_nodes: np.ndarray
    interaction_nodes: np.ndarray
    omega_mask: np.ndarray
    omega_elements: np.ndarray
    lumped_weight_omega: np.ndarray
    lumped_weight_full: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]


def build_mesh(dim: int, n_cells: int, layer_width: float = 0.0) -> Mesh:
    """Build the uniform mesh with ceil(layer_width / h) collar cells per face.

    Args:
        dim: 1 or 2.
        n_cells: number of cells per axis in Omega, at least 2.
        layer_width: requested collar width; 0 means no collar.

    The collar width is rounded up to whole cells so node coordinates stay on
    the lattice.  Weight invariants: the Omega weights sum to exactly 1 (the
    unit measure), the full weights to the padded box measure.
    """
    if dim not in (1, 2):
        raise ValueError(f"mesh dimension must be 1 or 2, got {dim}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"n_cells must be an integer >= 2, got {n_cells}")
    if layer_width < 0.0:
        raise ValueError(f"layer_width must be nonnegative, got {layer_width}")
    n_cells = int(n_cells)
    h = 1.0 / n_cells
    layer_cells = int(np.ceil(layer_width / h - 1e-12)) if layer_width > 0.0 else 0

    if dim == 1:
        return _build_1d(n_cells, h, layer_cells)
    return _build_2d(n_cells, h, layer_cells)


def _build_1d(n_cells: int, h: float, L: int) -> Mesh:
    idx = np.arange(-L, n_cells + L + 1)
    coords = (idx * h).reshape(-1, 1)
    n = idx.size
    elements = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    omega_mask = (idx >= 0) & (idx <= n_cells)
    # element is inside Omega iff its left-end lattice index is in [0, n_cells)
    cell_idx = idx[:-1]
    omega_elements = np.flatnonzero((cell_idx >= 0) & (cell_idx < n_cells))
    return _finalize(1, n_cells, h, L, coords, elements, omega_mask, omega_elements)


def _build_2d(n_cells: int, h: float, L: int) -> Mesh:
    idx = np.arange(-L, n_cells + L + 1)
    nx = idx.size
    ix, iy = np.meshgrid(idx, idx, indexing="xy")  # row-major over y then x
    coords = np.column_stack([(ix * h).ravel(), (iy * h).ravel()])
    omega_mask = ((ix >= 0) & (ix <= n_cells) & (iy >= 0) & (iy <= n_cells)).ravel()

    # two triangles per lattice square, both split along the (+1,+1) diagonal:
    # (a, a+ex, a+ex+ey) and (a, a+ex+ey, a+ey)
    cx, cy = np.meshgrid(np.arange(nx - 1), np.arange(nx - 1), indexing="xy")
    a = (cy * nx + cx).ravel()
    b = a + 1
    c = a + nx + 1
    d = a + nx
    tri1 = np.column_stack([a, b, c])
    tri2 = np.column_stack([a, c, d])
    elements = np.empty((tri1.shape[0] * 2, 3), dtype=np.int64)
    elements[0::2] = tri1
    elements[1::2] = tri2

    cell_in = (
        (cx.ravel() >= L) & (cx.ravel() < L + n_cells)
        & (cy.ravel() >= L) & (cy.ravel() < L + n_cells)
    )
    omega_elements = np.flatnonzero(np.repeat(cell_in, 2))
    return _finalize(2, n_cells, h, L, coords, elements, omega_mask, omega_elements)


def _finalize(dim, n_cells, h, L, coords, elements, omega_mask, omega_elements) -> Mesh:
    n = coords.shape[0]
    vol = h / 2.0 if dim == 1 else (h * h) / 2.0 / 3.0  # hat integral per vertex
    w_full = np.zeros(n)
    np.add.at(w_full, elements.ravel(), vol)
    w_omega = np.zeros(n)
    np.add.at(w_omega, elements[omega_elements].ravel(), vol)

    mesh = Mesh(
        dim=dim,
        n_cells=n_cells,
        h=h,
        layer_cells=L,
        coords=coords,
        elements=elements.astype(np.int64),
        omega_nodes=np.flatnonzero(omega_mask).astype(np.int64),
        interaction_nodes=np.flatnonzero(~omega_mask).astype(np.int64),
        omega_mask=omega_mask,
        omega_elements=omega_elements.astype(np.int64),
        lumped_weight_omega=w_omega,
        lumped_weight_full=w_full,
    )
    for arr in (mesh.coords, mesh.lumped_weight_omega, mesh.lumped_weight_full):
        arr.flags.writeable = False
    return mesh


def classify_node(mesh: Mesh, j: int) -> str:
    """Return 'omega' for nodes in the closed unit box, 'interaction' otherwise."""
    if j < 0 or j >= mesh.n_nodes:
        raise IndexError(f"node index {j} out of range [0, {mesh.n_nodes})")
    return "omega" if mesh.omega_mask[j] else "interaction"
