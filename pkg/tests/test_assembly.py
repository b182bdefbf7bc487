"""Discrete operators: convolution matrix, stiffness, and the bilinear form.

The bilinear-form oracle evaluates the symmetric double sum

    0.5 sum_ij m~_i m~_j gamma(|p_i - p_j|) (u_i - u_j)(v_i - v_j)

directly from node coordinates and the kernel profile, sharing nothing with
the matvec-based production path.  The oracle meshes use horizons with
delta/h away from integers so both sides agree on which lattice offsets sit
inside the closed interaction ball (at delta/h integer the r = delta ring is
kept by the operator; float distance noise would make the dense sum drop
it).
"""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from nlch.assembly import (
    CASE_NEUMANN,
    CASE_REGIONAL,
    ConfigurationError,
    WellPosednessError,
    assemble,
    apply_convolution,
    bilinear_b,
    dump_convolution,
    load_convolution,
    neumann_residual,
)
from nlch.kernel import KernelSpec, evaluate
from nlch.mesh import build_mesh

from conftest import build_ops


def dense_bilinear(ops, u, v):
    coords = ops.mesh.coords
    m = ops.mesh.lumped_weight_full
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    G = evaluate(ops.kernel, dist)
    du = u[:, None] - u[None, :]
    dv = v[:, None] - v[None, :]
    return 0.5 * float(np.sum(m[:, None] * m[None, :] * G * du * dv))


def oracle_meshes():
    yield build_ops(1, 20, 0.23, 0.00175, 0.0, CASE_REGIONAL)
    yield build_ops(1, 16, 0.23, 0.00175, 0.0, CASE_NEUMANN)
    yield build_ops(2, 6, 0.37, 3e-4, 0.0, CASE_REGIONAL)
    yield build_ops(2, 5, 0.27, 3e-4, 0.0, CASE_NEUMANN)


def test_bilinear_matches_dense_double_sum():
    rng = np.random.default_rng(11)
    for ops in oracle_meshes():
        n = ops.mesh.n_nodes
        assert n <= 100
        for _ in range(25):
            u = rng.uniform(-1.0, 1.0, n)
            v = rng.uniform(-1.0, 1.0, n)
            assert bilinear_b(ops, u, v) == pytest.approx(
                dense_bilinear(ops, u, v), abs=1e-13
            )


def test_bilinear_annihilates_constants_bitwise():
    rng = np.random.default_rng(5)
    for ops in oracle_meshes():
        ones = np.ones(ops.mesh.n_nodes)
        v = rng.uniform(-1.0, 1.0, ops.mesh.n_nodes)
        assert bilinear_b(ops, ones, v) == 0.0
        assert bilinear_b(ops, v, ones) == pytest.approx(0.0, abs=1e-15)


def test_bilinear_positive_semidefinite():
    rng = np.random.default_rng(13)
    for ops in oracle_meshes():
        for _ in range(10):
            u = rng.uniform(-1.0, 1.0, ops.mesh.n_nodes)
            assert bilinear_b(ops, u, u) >= -1e-12


def test_row_sums_equal_c_gamma_h_bitwise():
    for ops in oracle_meshes():
        resid = ops.c_gamma_h * 1.0 - ops.conv @ np.ones(ops.mesh.n_nodes)
        assert np.all(resid == 0.0)


def test_c_gamma_h_constant_on_omega_with_collar():
    ops = build_ops(1, 64, 0.25, 0.00175, 1.0, CASE_NEUMANN)
    vals = ops.c_gamma_h[ops.mesh.omega_nodes]
    assert vals.max() - vals.min() == 0.0
    # and close to the analytic kernel mass
    assert vals[0] == pytest.approx(1.008, rel=5e-3)


def test_c_gamma_h_drops_near_boundary_without_collar():
    ops = build_ops(1, 64, 0.25, 0.00175, 0.2, CASE_REGIONAL)
    vals = ops.c_gamma_h[ops.mesh.omega_nodes]
    mid = vals[vals.size // 2]
    assert vals[0] < 0.6 * mid  # half the stencil is missing at x = 0
    assert vals[0] == vals[-1]  # mirrored offsets give bitwise symmetry


def test_well_posedness_error_names_node():
    with pytest.raises(WellPosednessError) as err:
        build_ops(1, 32, 0.25, 0.00175, 2.0, CASE_NEUMANN)
    assert "xi_h" in str(err.value)
    assert "node" in str(err.value)


def test_c_f_rule_resolves_against_kernel_mass():
    ops = build_ops(2, 8, 0.3, 0.004, "0.9*cgamma", CASE_REGIONAL)
    om = ops.mesh.omega_nodes
    np.testing.assert_allclose(ops.c_f, 0.9 * ops.c_gamma_h[om], rtol=1e-15)
    np.testing.assert_allclose(ops.xi_h, 0.1 * ops.c_gamma_h[om], rtol=1e-12)
    with pytest.raises(ConfigurationError):
        build_ops(2, 8, 0.3, 0.004, "0.5*cgamma", CASE_REGIONAL)


def test_nodal_c_f_shapes():
    mesh = build_mesh(1, 16)
    spec = KernelSpec(1, 0.00175, 0.23)
    n_om = mesh.omega_nodes.size
    ops = assemble(mesh, spec, np.zeros(n_om), CASE_REGIONAL)
    assert ops.c_f.shape == (n_om,)
    # full-length arrays are restricted to Omega nodes
    ops2 = assemble(mesh, spec, np.zeros(mesh.n_nodes), CASE_REGIONAL)
    assert ops2.c_f.shape == (n_om,)
    with pytest.raises(ConfigurationError):
        assemble(mesh, spec, np.zeros(3), CASE_REGIONAL)


def test_case_collar_validation():
    mesh_plain = build_mesh(1, 16)
    mesh_collar = build_mesh(1, 16, layer_width=0.25)
    spec = KernelSpec(1, 0.00175, 0.25)
    with pytest.raises(ConfigurationError):
        assemble(mesh_plain, spec, 1.0, CASE_NEUMANN)  # collar too small (absent)
    with pytest.raises(ConfigurationError):
        assemble(mesh_collar, spec, 1.0, CASE_REGIONAL)  # collar must be absent
    with pytest.raises(ConfigurationError):
        assemble(mesh_plain, spec, 1.0, 3)
    with pytest.raises(ConfigurationError):
        assemble(mesh_plain, KernelSpec(2, 0.00175, 0.25), 1.0, CASE_REGIONAL)


def test_stiffness_1d_hand_matrix():
    ops = build_ops(1, 4, 0.3, 0.001, 0.0, CASE_REGIONAL)
    K = ops.stiffness.toarray()
    want = 4.0 * np.array(
        [
            [1, -1, 0, 0, 0],
            [-1, 2, -1, 0, 0],
            [0, -1, 2, -1, 0],
            [0, 0, -1, 2, -1],
            [0, 0, 0, -1, 1],
        ],
        dtype=float,
    )
    np.testing.assert_array_equal(K, want)


def test_stiffness_2d_five_point_stencil():
    ops = build_ops(2, 4, 0.3, 0.001, 0.0, CASE_REGIONAL)
    K = ops.stiffness.toarray()
    center = 2 * 5 + 2  # node (2,2) of the 5x5 lattice
    row = K[center]
    assert row[center] == pytest.approx(4.0, abs=1e-14)
    for nb in (center - 1, center + 1, center - 5, center + 5):
        assert row[nb] == pytest.approx(-1.0, abs=1e-14)
    # the split diagonal carries no coupling on this lattice
    assert row[center + 6] == 0.0
    assert row[center - 6] == 0.0


def test_stiffness_row_sums_vanish_bitwise():
    for dim, n in [(1, 4), (1, 3), (2, 3), (2, 8)]:
        ops = build_ops(dim, n, 0.4, 0.001, 0.0, CASE_REGIONAL)
        ones = np.ones(ops.n_omega)
        assert np.all(ops.stiffness @ ones == 0.0)


def test_stiffness_positive_semidefinite():
    ops = build_ops(1, 32, 0.23, 0.00175, 0.0, CASE_REGIONAL)
    vals = spla.eigsh(
        ops.stiffness.asfptype(), k=2, which="SA", return_eigenvectors=False
    )
    assert vals.min() > -1e-10


def test_apply_convolution_shape_check():
    ops = build_ops(1, 16, 0.23, 0.00175, 0.0, CASE_REGIONAL)
    with pytest.raises(ValueError):
        apply_convolution(ops, np.ones(3))


def test_neumann_residual_constant_is_zero():
    ops = build_ops(1, 16, 0.23, 0.00175, 1.0, CASE_NEUMANN)
    resid = neumann_residual(ops, np.ones(ops.mesh.n_nodes))
    assert np.all(resid == 0.0)
    ops2 = build_ops(1, 16, 0.23, 0.00175, 0.0, CASE_REGIONAL)
    with pytest.raises(ConfigurationError):
        neumann_residual(ops2, np.ones(ops2.mesh.n_nodes))


def test_convolution_dump_roundtrip(tmp_path):
    ops = build_ops(2, 6, 0.37, 3e-4, 0.0, CASE_REGIONAL)
    path = tmp_path / "conv.bin"
    dump_convolution(ops, path)
    W = load_convolution(path)
    assert W.shape == ops.conv.shape
    ref = ops.conv.tocsr()
    ref.sort_indices()
    np.testing.assert_array_equal(W.indptr, ref.indptr)
    np.testing.assert_array_equal(W.indices, ref.indices)
    np.testing.assert_array_equal(W.data, ref.data)
    # header is three little-endian int64 values
    raw = np.fromfile(path, dtype="<i8", count=3)
    assert tuple(raw) == (ops.conv.shape[0], ops.conv.shape[1], ops.conv.nnz)


def test_convolution_symmetric_kernel_values():
    # gamma depends on |p_i - p_j| only: W_ij / m~_j must be symmetric
    ops = build_ops(2, 6, 0.37, 3e-4, 0.0, CASE_REGIONAL)
    W = ops.conv.toarray()
    m = ops.mesh.lumped_weight_full
    G = W / m[None, :]
    np.testing.assert_array_equal(G, G.T)
