"""Figure rendering from run outputs.

Everything here reads the delimited files a run wrote (diagnostics.csv and
snapshot_*.csv) and renders PNG figures next to them, so the report path
works on any previously produced run directory without re-running anything.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["plot_diagnostics_csv", "plot_field_csv", "render_run_dir"]


def _load_csv(path: str) -> np.ndarray:
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as err:
        raise OSError(f"cannot read {path}: {err}") from err
    return np.atleast_1d(data)


def plot_diagnostics_csv(csv_path: str, out_png: str) -> bool:
    """Render the per-step traces; returns False for a header-only file."""
    data = _load_csv(csv_path)
    if data.size == 0:
        return False
    t = data["t"]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), constrained_layout=True)
    axes[0, 0].plot(t, data["mass"])
    axes[0, 0].set_title("mass")
    axes[0, 1].plot(t, data["energy"])
    axes[0, 1].set_title("free energy")
    axes[1, 0].plot(t, data["interface_fraction"])
    axes[1, 0].set_title("pure-phase fraction")
    axes[1, 0].set_ylim(-0.05, 1.05)
    axes[1, 1].plot(t, data["pdas_iters"], drawstyle="steps-mid")
    axes[1, 1].set_title("active-set iterations")
    for ax in axes.flat:
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return True


def plot_field_csv(csv_path: str, out_png: str) -> None:
    """Render a snapshot: line plot in 1D, filled color map in 2D."""
    data = _load_csv(csv_path)
    names = data.dtype.names
    if names is None or "u" not in names:
        raise ValueError(f"{csv_path} is not a snapshot file (no u column)")
    if "y" in names:
        x, y, u = data["x"], data["y"], data["u"]
        nx = np.unique(x).size
        ny = np.unique(y).size
        # Rows are written x-fastest, y-slowest on the structured lattice.
        grid_u = u.reshape(ny, nx)
        fig, ax = plt.subplots(figsize=(6, 5), constrained_layout=True)
        im = ax.pcolormesh(
            x.reshape(ny, nx), y.reshape(ny, nx), grid_u,
            vmin=-1.0, vmax=1.0, cmap="RdBu_r", shading="gouraud",
        )
        fig.colorbar(im, ax=ax, label="u")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    else:
        x, u, w = data["x"], data["u"], data["w"]
        fig, ax = plt.subplots(figsize=(7, 4), constrained_layout=True)
        ax.plot(x, u, label="u")
        finite = np.isfinite(w)
        if finite.any():
            ax.plot(x[finite], w[finite], label="w", alpha=0.7)
        ax.axhline(1.0, color="gray", lw=0.5)
        ax.axhline(-1.0, color="gray", lw=0.5)
        ax.set_xlabel("x")
        ax.legend()
        ax.grid(True, alpha=0.3)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def _leg_dirs(run_dir: str) -> list[str]:
    if os.path.isfile(os.path.join(run_dir, "diagnostics.csv")):
        return [run_dir]
    legs = [
        os.path.join(run_dir, name)
        for name in ("nonlocal", "local")
        if os.path.isfile(os.path.join(run_dir, name, "diagnostics.csv"))
    ]
    if not legs:
        raise FileNotFoundError(
            f"no diagnostics.csv under {run_dir} (or its nonlocal/local subdirectories)"
        )
    return legs


def render_run_dir(run_dir: str, out_dir: str | None = None) -> list[str]:
    """Render figures for a run directory (or its model legs); returns paths.

    Figures land next to the CSVs unless out_dir overrides the destination.
    Field figures need at least one snapshot_*.csv (runs with formats=vtk
    only cannot be rendered; re-run with csv output or request it).
    """
    written: list[str] = []
    for leg in _leg_dirs(run_dir):
        dest = out_dir if out_dir is not None else leg
        os.makedirs(dest, exist_ok=True)
        suffix = "" if leg == run_dir else "_" + os.path.basename(leg)
        diag_png = os.path.join(dest, f"diagnostics{suffix}.png")
        if plot_diagnostics_csv(os.path.join(leg, "diagnostics.csv"), diag_png):
            written.append(diag_png)
        snaps = sorted(
            name
            for name in os.listdir(leg)
            if name.startswith("snapshot_") and name.endswith(".csv")
        )
        if snaps:
            field_png = os.path.join(dest, f"field_final{suffix}.png")
            plot_field_csv(os.path.join(leg, snaps[-1]), field_png)
            written.append(field_png)
    return written
