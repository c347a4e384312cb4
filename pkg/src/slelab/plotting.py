"""Static figures for reports and traces (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps SVG output byte-stable across runs
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> Path:
    path = Path(path)
    plt.rcParams["svg.hashsalt"] = "slelab"
    kw = {"metadata": _SVG_META} if path.suffix == ".svg" else {}
    fig.savefig(path, **kw)
    plt.close(fig)
    return path


def plot_trace(trace, path, title=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.plot(trace.points.real, trace.points.imag, lw=0.6, color="k")
    ax.set_aspect("equal")
    ax.set_title(title or f"kappa = {trace.kappa:g}")
    return _save(fig, path)


def plot_driving(drive, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    if drive.geometry == "chordal":
        ax.plot(drive.times, drive.W, lw=0.6, label="W")
        for j in range(drive.V.shape[0]):
            ax.plot(drive.times, drive.V[j], lw=0.6, label=f"V_{j + 1}")
    else:
        ax.plot(drive.times, drive.alpha, lw=0.6, label="arg W")
        ax.plot(drive.times, drive.theta, lw=0.6, label="theta")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_raster(raster, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ny, nx = raster.shape
    x0, y0, e = raster.origin.real, raster.origin.imag, raster.eps
    ax.imshow(raster.bitmap, origin="lower", cmap="Greys", extent=(x0, x0 + nx * e, y0, y0 + ny * e),
              interpolation="nearest")
    return _save(fig, path)


def plot_report(report, path):
    """One summary figure per experiment; returns None when there is nothing to draw."""
    name, cells = report.name, report.to_dict()["cells"]
    if not cells:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    if name == "radial_convergence":
        ax.loglog([c["dt"] for c in cells], [c["sup_discrepancy"] for c in cells], "o-")
        ax.set_xlabel("dt")
        ax.set_ylabel("sup |W_angle - W_euler|")
    elif name == "bessel_continuity":
        ax.plot([c["gap"] for c in cells], [c["mean_sup"] for c in cells], "o-")
        ax.set_xlabel("|d - d*|")
        ax.set_ylabel("mean sup distance")
    elif name == "qv_limit":
        ax.errorbar([c["kappa"] for c in cells], [c["qv_slope"] for c in cells],
                    yerr=[c["stderr"] for c in cells], fmt="o")
        ax.plot([min(c["kappa"] for c in cells), 8], [min(c["kappa"] for c in cells), 8], "k--", lw=0.8)
        ax.set_xlabel("kappa")
        ax.set_ylabel("realized QV slope")
    elif name == "bubble_disconnection":
        for k in sorted({c["kappa"] for c in cells}):
            sub = [c for c in cells if c["kappa"] == k]
            ax.errorbar([c["delta"] for c in sub], [c["p_hat"] for c in sub], yerr=[c["stderr"] for c in sub],
                        fmt="o-", label=f"kappa' = {k:g}")
        ax.set_xscale("log")
        ax.set_xlabel("delta")
        ax.set_ylabel("P[inscribed radius >= delta]")
        ax.legend()
    elif name == "ball_filling":
        ax.errorbar([1 / c["epsilon"] for c in cells], [c["p_fail"] for c in cells],
                    yerr=[c["stderr"] for c in cells], fmt="o-")
        ax.set_yscale("log")
        ax.set_xlabel("1/epsilon")
        ax.set_ylabel("P[no ball filled]")
    elif name == "modulus":
        ax.semilogx([c["delta"] for c in cells], [c["fraction_in_K"] for c in cells], "o-")
        ax.set_xlabel("delta")
        ax.set_ylabel("fraction in K_delta")
    elif name == "regularity_deterioration":
        for c in cells:
            w = np.array([float(k) for k in c["omega"]])
            ax.loglog(w, list(c["omega"].values()), "o-", label=f"kappa = {c['kappa']:g}")
        ax.set_xlabel("window")
        ax.set_ylabel("omega")
        ax.legend()
    elif name == "capacity_normalization":
        ax.errorbar(range(len(cells)), [c["hcap"] for c in cells], yerr=[3 * c["stderr"] for c in cells], fmt="o")
        ax.axhline(cells[0]["target"], color="k", lw=0.8)
        ax.set_xlabel("sample")
        ax.set_ylabel("hcap")
    elif name == "driving_law":
        ax.bar(range(len(cells)), [c["p_value"] for c in cells])
        ax.set_xticks(range(len(cells)), [f"({c['kappa']:g},{c['rho']:g})" for c in cells])
        ax.set_ylabel("KS p-value")
    elif name == "bessel_hitting":
        x = np.arange(len(cells))
        ax.errorbar(x, [c["estimate"] for c in cells], yerr=[3 * c["stderr"] for c in cells], fmt="o", label="MC")
        ax.plot(x, [c["oracle"] for c in cells], "kx", label="closed form")
        ax.set_xticks(x, [f"d = {c['d']:g}" for c in cells])
        ax.set_ylabel("P[hit b before a]")
        ax.legend()
    elif name == "distortion":
        keys = ("max_upper_ratio", "max_ball_ratio", "min_lower_ratio")
        ax.bar(range(3), [cells[0][k] for k in keys])
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_xticks(range(3), ["upper", "ball", "lower"])
        ax.set_ylabel("bound ratio (violation across 1)")
    else:
        plt.close(fig)
        return None
    ax.set_title(name)
    fig.tight_layout()
    return _save(fig, path)
