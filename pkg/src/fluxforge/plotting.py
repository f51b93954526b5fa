"""Optional figures for the CLI; matplotlib is imported only when asked for."""

from __future__ import annotations

import math

import numpy as np


class PlottingUnavailable(RuntimeError):
    pass


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise PlottingUnavailable("--plot needs matplotlib; install the 'plot' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_convergence(rows: list[dict], path) -> None:
    """log-log lp_error against epsilon, bad-cube counts on a twin axis."""
    plt = _pyplot()
    ok = [r for r in rows if not math.isnan(r["lp_error"])]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if ok:
        eps = [r["epsilon"] for r in ok]
        ax.loglog(eps, [r["lp_error"] for r in ok], "o-", color="k", label="L^p error")
        twin = ax.twinx()
        twin.plot(eps, [r["bad_count"] for r in ok], "s--", color="tab:red", alpha=0.7)
        twin.set_ylabel("bad cubes", color="tab:red")
        ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.set_ylabel("error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_approximant(approx, path, resolution: int = 32) -> None:
    """Quiver of a 2-D approximant over the unit cube with mesh lines and charges."""
    if approx.dim != 2:
        raise ValueError("approximant plots are only drawn for n = 2")
    plt = _pyplot()
    g = -0.5 + (np.arange(resolution) + 0.5) / resolution
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    vals = approx.evaluate(pts)
    norm = np.linalg.norm(vals, axis=1)
    scale = np.where(norm > 0, 1 / np.maximum(norm, 1e-300), 0.0) * np.log1p(norm)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.quiver(X.ravel(), Y.ravel(), vals[:, 0] * scale, vals[:, 1] * scale, norm,
              cmap="viridis", angles="xy", pivot="mid")
    for e in approx.mesh.edges(0) / approx.alpha:
        if abs(e) <= 0.5:
            ax.axvline(e, color="0.8", lw=0.5)
    for e in approx.mesh.edges(1) / approx.alpha:
        if abs(e) <= 0.5:
            ax.axhline(e, color="0.8", lw=0.5)
    for c in approx.charges:
        ax.plot(*c.pos, "o", color="tab:red" if c.deg > 0 else "tab:blue", ms=6)
        ax.annotate(f"{c.deg:+d}", c.pos, textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlim(-0.5, 0.5)
    ax.set_ylim(-0.5, 0.5)
    ax.set_aspect("equal")
    ax.set_title(f"eps = {approx.mesh.epsilon:g}, alpha = {approx.alpha:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
