"""Report figures rendered to files next to the delimited outputs.

Everything here draws on the Agg backend so the command line works on
headless machines.  Each function writes one PNG and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def effects_figure(rows, path, title="Estimated effects"):
    """Coefficient plot: point estimates with 95 percent Wald intervals.

    Parameters
    ----------
    rows : sequence of dict
        Entries with keys ``parameter``, ``estimate``, ``ci_lo``, ``ci_hi``
        (the effects-table rows).  Rows with missing interval bounds are
        drawn without error bars.
    path : str or Path
        Output PNG path.
    """
    rows = list(rows)
    labels = [r["parameter"] for r in rows]
    est = np.array([r["estimate"] for r in rows], dtype=float)
    lo = np.array([r.get("ci_lo", np.nan) for r in rows], dtype=float)
    hi = np.array([r.get("ci_hi", np.nan) for r in rows], dtype=float)
    ypos = np.arange(len(rows))[::-1]

    fig, ax = plt.subplots(figsize=(6.4, max(2.4, 0.32 * len(rows) + 1.2)))
    have_ci = np.isfinite(lo) & np.isfinite(hi)
    ax.errorbar(
        est[have_ci],
        ypos[have_ci],
        xerr=np.vstack([est[have_ci] - lo[have_ci], hi[have_ci] - est[have_ci]]),
        fmt="o",
        color="#2c5f8a",
        ecolor="#2c5f8a",
        capsize=3,
        lw=1.2,
    )
    if np.any(~have_ci):
        ax.plot(est[~have_ci], ypos[~have_ci], "o", color="#999999")
    ax.axvline(0.0, color="0.4", ls="--", lw=0.9)
    ax.set_yticks(ypos)
    ax.set_yticklabels(labels)
    ax.set_xlabel("estimate")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def mc_summary_figure(rows, path):
    """Replication-study summary: mean estimate vs truth per parameter.

    Error bars show the empirical standard deviation across converged
    replicates; crosses mark the true values.
    """
    rows = list(rows)
    labels = [r["parameter"] for r in rows]
    eqml = np.array([r["eqml_mean"] for r in rows], dtype=float)
    sd = np.array([r["empirical_sd"] for r in rows], dtype=float)
    truth = np.array([r["true_value"] for r in rows], dtype=float)
    ypos = np.arange(len(rows))[::-1]

    fig, ax = plt.subplots(figsize=(6.4, max(2.4, 0.32 * len(rows) + 1.2)))
    ax.errorbar(
        eqml,
        ypos,
        xerr=np.where(np.isfinite(sd), sd, 0.0),
        fmt="o",
        color="#2c5f8a",
        capsize=3,
        lw=1.2,
        label="mean estimate (+/- emp. SD)",
    )
    ax.plot(truth, ypos, "x", color="#b0413e", ms=7, label="true value")
    ax.set_yticks(ypos)
    ax.set_yticklabels(labels)
    ax.set_xlabel("parameter value")
    first = rows[0]
    ax.set_title(
        f"{first['scenario']}, K={first['K']}, T={first['T']}, "
        f"B={first['n_replicates']} ({first['n_converged']} converged)"
    )
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def qaic_figure(entries, path):
    """Model-ranking bar chart of QAIC differences from the best model.

    ``entries`` holds (name, qaic, converged) triples in ranked order.
    Non-converged fits are hatched and annotated.
    """
    entries = list(entries)
    names = [e[0] for e in entries]
    qaic = np.array([e[1] for e in entries], dtype=float)
    conv = [bool(e[2]) for e in entries]
    finite = qaic[np.isfinite(qaic)]
    base = finite.min() if finite.size else 0.0
    delta = qaic - base
    ypos = np.arange(len(entries))[::-1]

    fig, ax = plt.subplots(figsize=(6.4, max(2.0, 0.5 * len(entries) + 1.0)))
    for y, d, ok in zip(ypos, delta, conv):
        ax.barh(
            y,
            d if np.isfinite(d) else 0.0,
            color="#2c5f8a" if ok else "#cccccc",
            hatch=None if ok else "//",
            edgecolor="0.3",
        )
        if not ok:
            ax.text(0.1, y, "not converged", va="center", fontsize=8)
    ax.set_yticks(ypos)
    ax.set_yticklabels(names)
    ax.set_xlabel("QAIC difference from best model")
    ax.set_title("Model comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
