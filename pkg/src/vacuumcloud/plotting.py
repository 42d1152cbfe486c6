"""Static figures for a finished run, written next to its CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_run_figures"]


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def render_run_figures(outdir, outcome) -> None:
    outdir = Path(outdir)
    figdir = outdir / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    if not outcome.rows:
        return
    t = outcome.column("t")

    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("strip_W", "interior_theta", "interior_omega", "grad_alpha", "grad_w"):
        v = outcome.column(name)
        if np.any(v > 0):
            ax.semilogy(t, np.where(v > 0, v, np.nan), label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("sup norm")
    ax.set_title(f"criterion terms ({outcome.verdict})")
    ax.legend(fontsize=8)
    _save(fig, figdir / "criteria.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, outcome.column("weak_integral"), label="weak")
    ax.plot(t, outcome.column("strong_integral"), label="strong")
    ax.set_xlabel("t")
    ax.set_ylabel("running integral")
    ax.legend()
    _save(fig, figdir / "integrals.png")

    mass = outcome.column("mass")
    fig, ax = plt.subplots(figsize=(6, 4))
    if mass[0] > 0:
        ax.plot(t, mass / mass[0] - 1.0, label="mass")
        ax.plot(t, outcome.column("clipped_mass") / mass[0], label="clipped")
    ax.set_xlabel("t")
    ax.set_ylabel("relative change")
    ax.legend()
    _save(fig, figdir / "conservation.png")

    st = outcome.final
    g = st.grid
    sl = g.interior
    k = g.dims[2] // 2
    alpha = st.alpha[sl][:, :, k]
    fig, ax = plt.subplots(figsize=(5, 4.5))
    lo, hi = g.lower, g.upper
    im = ax.imshow(alpha.T, origin="lower", extent=(lo[0], hi[0], lo[1], hi[1]), cmap="viridis")
    fig.colorbar(im, ax=ax, label="alpha")
    for markers, color in ((outcome.boundary, "w"), (outcome.interior, "r")):
        if len(markers):
            p = markers.positions[markers.alive]
            z0 = g.origin[2] + k * g.spacing[2]
            near = np.abs(p[:, 2] - z0) <= 1.5 * g.spacing[2]
            ax.plot(p[near, 0], p[near, 1], ".", color=color, ms=3)
    ax.set_title(f"midplane alpha, t = {st.time:.4g}")
    _save(fig, figdir / "midplane.png")
