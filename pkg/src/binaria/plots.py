"""Figure rendering for scenario reports.

Every run writes its plots next to the CSV/JSON artifacts; all functions
take an output path and return it.  The Agg backend is forced so the CLI
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "density_slice_figure", "radial_profile_figure", "energy_trace_figure",
    "cloud_figure", "rearrange_figure", "suite_figure",
]

_FIGSIZE = (6.0, 4.2)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def density_slice_figure(field, path, title="density, z midplane"):
    """Heatmap of the z-midplane slice of a scalar field."""
    grid = field.grid
    k = grid.dims[2] // 2
    x, y, _ = grid.axes()
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    im = ax.pcolormesh(x, y, field.values[:, :, k].T, shading="nearest",
                       cmap="inferno")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    return _save(fig, path)


def radial_profile_figure(r_num, rho_num, reference, path,
                          title="radial profile vs reference"):
    """Shell-averaged numerical profile overlaid on the reference curve."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(reference.r, reference.rho, "-", color="0.35", lw=1.5,
            label="Lane-Emden reference")
    ax.plot(r_num, rho_num, "o", ms=3.5, color="crimson", label="solver")
    ax.set_xlabel("r")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def energy_trace_figure(trace, path, title="energy per SCF iteration"):
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(np.arange(1, len(trace) + 1), trace, "-", color="steelblue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("E_J")
    ax.set_title(title)
    return _save(fig, path)


def cloud_figure(a, b, matching, path, title="bottleneck matching (xy)"):
    """The two atom clouds with their optimal pairing, projected on xy."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for i, j in enumerate(matching):
        ax.plot([a.atoms[i, 0], b.atoms[j, 0]],
                [a.atoms[i, 1], b.atoms[j, 1]], "-", color="0.8", lw=0.7)
    ax.plot(a.atoms[:, 0], a.atoms[:, 1], "o", ms=4, color="steelblue",
            label="cloud a")
    ax.plot(b.atoms[:, 0], b.atoms[:, 1], "s", ms=4, color="crimson",
            label="cloud b")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def rearrange_figure(before, after, path, title="bounded rearrangement"):
    """Before/after midplane slices with a shared color scale."""
    k = before.grid.dims[2] // 2
    x, y, _ = before.grid.axes()
    vmax = max(before.values[:, :, k].max(), after.values[:, :, k].max())
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0), sharey=True)
    for ax, f, name in ((axes[0], before, "input"), (axes[1], after, "capped")):
        im = ax.pcolormesh(x, y, f.values[:, :, k].T, shading="nearest",
                           cmap="inferno", vmin=0.0, vmax=vmax)
        ax.set_title(name)
        ax.set_xlabel("x")
        ax.set_aspect("equal")
    axes[0].set_ylabel("y")
    fig.suptitle(title)
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def suite_figure(results, path, title="invariant suites"):
    """Pass/fail bar chart over the audit suites."""
    names = [r["suite"] for r in results]
    passed = [sum(1 for c in r["checks"] if c["passed"]) for r in results]
    total = [len(r["checks"]) for r in results]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    idx = np.arange(len(names))
    ax.bar(idx, total, color="0.85", label="checks")
    ax.bar(idx, passed, color="seagreen", label="passed")
    ax.set_xticks(idx)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("checks")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)
