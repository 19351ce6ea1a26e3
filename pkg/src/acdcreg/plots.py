"""Figure rendering for CLI report paths.

All figures go straight to PNG files through the Agg backend; nothing
here opens a window.  Every helper takes the already-computed result
object plus an output path and returns the path it wrote.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.4, 4.2)
plt.rcParams["figure.dpi"] = 140
plt.rcParams["savefig.bbox"] = "tight"
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["font.size"] = 10

__all__ = [
    "components_figure",
    "cv_figure",
    "path_figure",
    "projection_figure",
    "recovery_figure",
    "screen_figure",
]


def _finish(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def components_figure(model, names, path, threshold=0.0):
    """Fitted component curves, sorted-x order, one line per coordinate."""
    fig, ax = plt.subplots()
    drew = False
    for comp in model.components:
        if comp.sup_norm <= threshold:
            continue
        label = names[comp.coordinate]
        ax.plot(comp.x_sorted, comp.values_sorted, label=label)
        drew = True
    if not drew:
        ax.text(0.5, 0.5, "all components zero", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("covariate value")
    ax.set_ylabel("component fit")
    ax.set_title(f"additive fit, penalty {model.lam:g}")
    if drew:
        ax.legend(loc="best", fontsize=8)
    return _finish(fig, path)


def screen_figure(report, names, path):
    """Per-coordinate norms from both stages with the selection cut."""
    p = report.ac_norms.shape[0]
    idx = np.arange(p)
    fig, ax = plt.subplots()
    ax.bar(idx - 0.2, report.ac_norms, width=0.4, label="convex stage")
    dc = np.zeros(p)
    for k, v in report.dc_norms.items():
        dc[k] = v
    ax.bar(idx + 0.2, dc, width=0.4, label="concave stage")
    ax.axhline(report.threshold, color="k", lw=0.8, ls="--",
               label="threshold")
    ax.set_xticks(idx)
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("component sup-norm")
    ax.set_title(f"screen at penalty {report.lam:g}: "
                 f"{len(report.selected)} of {p} kept")
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, path)


def recovery_figure(table, path):
    """Exact-recovery rate against sample size."""
    ns = [row.n for row in table.rows]
    fig, ax = plt.subplots()
    ax.plot(ns, table.rates, marker="o")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("sample size")
    ax.set_ylabel("exact recovery rate")
    row = table.rows[0]
    ax.set_title(f"support recovery, p={row.p}, {row.trials} trials")
    return _finish(fig, path)


def path_figure(result, names, path):
    """Component norms along the penalty grid."""
    fig, ax = plt.subplots()
    for k in range(result.ac_norms.shape[1]):
        col = result.ac_norms[:, k]
        label = names[k] if col.max() > 0 else None
        ax.plot(result.lambdas, col, label=label)
    ax.set_xlabel("penalty")
    ax.set_ylabel("component sup-norm")
    sizes = [len(s) for s in result.selected]
    ax.set_title(f"penalty path, selected sizes {sizes}")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=7)
    return _finish(fig, path)


def cv_figure(result, path):
    """Held-out error with one standard deviation whiskers."""
    fig, ax = plt.subplots()
    ax.errorbar(result.lambdas, result.mse_mean, yerr=result.mse_sd,
                marker="o", capsize=3)
    ax.set_xlabel("penalty")
    ax.set_ylabel("held-out MSE")
    ax.set_title(f"cross-validation, {result.evaluations} evaluations, "
                 f"best penalty {result.best_lambda:g}")
    return _finish(fig, path)


def projection_figure(results, path):
    """Additive projection components for one or more named examples.

    ``results`` maps an example label to its ProjectionResult.
    """
    n = len(results)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.6), squeeze=False)
    for ax, (label, res) in zip(axes[0], results.items()):
        for k, comp in enumerate(res.components):
            ax.plot(comp.axes[0], comp.values, label=f"coordinate {k + 1}")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("grid point")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel("component value")
    return _finish(fig, path)
