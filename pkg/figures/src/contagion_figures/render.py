"""Figure rendering.

Renders are pure functions of the input files and style options: the Agg
backend, a fixed hash salt, and stripped date metadata keep repeated runs
pixel-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .inputs import (
    read_defaults,
    read_jumps,
    read_mf_density,
    read_scaling_study,
    read_trajectories,
)

plt.rcParams["svg.hashsalt"] = "contagion-figures"

KINDS = ("trajectories", "heatmaps", "scaling")


@dataclass(frozen=True)
class FigureJob:
    input_dir: Path
    kind: str
    out_dir: Path
    fmt: str = "png"
    dpi: int = 150
    colormap: str = "viridis"
    x_label: str | None = None
    y_label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {', '.join(KINDS)}")
        if self.fmt not in ("png", "svg"):
            raise ValueError("format must be png or svg")
        object.__setattr__(self, "input_dir", Path(self.input_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))


def _save(fig, job: FigureJob, name: str) -> Path:
    job.out_dir.mkdir(parents=True, exist_ok=True)
    path = job.out_dir / f"{name}.{job.fmt}"
    metadata = {"Date": None} if job.fmt == "svg" else None
    fig.savefig(path, dpi=job.dpi, metadata=metadata)
    plt.close(fig)
    return path


def render_trajectories(job: FigureJob) -> list[Path]:
    times, banks, _, K = read_trajectories(job.input_dir / "trajectories.csv")
    _, taus, _ = read_defaults(job.input_dir / "defaults.csv")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, b in enumerate(banks):
        ax.plot(times, K[:, i], lw=1.2, label=f"bank {b}")
    for tau in taus[np.isfinite(taus)]:
        ax.axvline(tau, color="crimson", ls="--", lw=0.9, alpha=0.8)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel(job.x_label or "time")
    ax.set_ylabel(job.y_label or "capital")
    ax.set_title("bank capital with default markers")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return [_save(fig, job, "trajectories")]


def render_heatmaps(job: FigureJob) -> list[Path]:
    times, types, xs, cube = read_mf_density(job.input_dir / "mf_density.csv")
    jumps = read_jumps(job.input_dir / "mf_jumps.json")
    n = types.size
    ncols = 2 if n > 1 else 1
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(5.0 * ncols, 3.2 * nrows),
                             squeeze=False, sharex=True, sharey=True)
    vmax = float(cube.max()) or 1.0
    mesh = None
    for i, l in enumerate(types):
        ax = axes[i // ncols][i % ncols]
        mesh = ax.pcolormesh(times, xs, cube[:, i, :].T, cmap=job.colormap,
                             vmin=0.0, vmax=vmax, shading="nearest")
        for t_jump, delta in jumps:
            if delta[i] > max(1e-4, 1e-2 * float(delta.max(initial=0.0))):
                ax.axvline(t_jump, color="white", ls="--", lw=1.2)
        ax.set_title(f"type {l}", fontsize=10)
    for i in range(n, nrows * ncols):
        axes[i // ncols][i % ncols].set_axis_off()
    for row in axes:
        row[0].set_ylabel(job.y_label or "distance to default")
    for ax in axes[-1]:
        ax.set_xlabel(job.x_label or "time")
    fig.colorbar(mesh, ax=[a for row in axes for a in row], label="density",
                 fraction=0.025)
    return [_save(fig, job, "heatmaps")]


def render_scaling(job: FigureJob) -> list[Path]:
    m_vals, dists = read_scaling_study(job.input_dir / "scaling_study.csv")
    combined = dists.mean(axis=1)
    ms = np.unique(m_vals)
    means = np.array([combined[m_vals == m].mean() for m in ms])
    errs = np.array([
        combined[m_vals == m].std(ddof=1) / np.sqrt((m_vals == m).sum())
        if (m_vals == m).sum() > 1 else 0.0
        for m in ms
    ])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(ms, means, yerr=errs, marker="o", lw=1.2, capsize=3,
                label="mean distance")
    guide = means[0] * np.sqrt(ms[0] / ms)
    ax.plot(ms, guide, ls=":", color="gray", label=r"$m^{-1/2}$ guide")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(job.x_label or "size multiplier m")
    ax.set_ylabel(job.y_label or "loss-path distance")
    ax.set_title("convergence to the mean field")
    ax.legend()
    fig.tight_layout()
    return [_save(fig, job, "scaling")]


_RENDERERS = {
    "trajectories": render_trajectories,
    "heatmaps": render_heatmaps,
    "scaling": render_scaling,
}


def render(job: FigureJob) -> list[Path]:
    """Render one figure kind from the files in job.input_dir."""
    return _RENDERERS[job.kind](job)
