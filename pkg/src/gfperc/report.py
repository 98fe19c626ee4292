"""Report rendering: delimited summaries plus matplotlib figures.

Takes a crossing-sweep table and writes, next to each other, the derived
logit table (CSV), per-level decay fits (CSV), and PNG figures of the
crossing curves, the logit curves, and the failure decay. Output is
deterministic: fixed dpi, empty PNG metadata, stable ordering.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import DecayFit, decay_fit, logit_curve

__all__ = ["render_sweep_report"]

_SAVE_KW = {"dpi": 130, "metadata": {}}


def _group_by_R(rows):
    groups: dict[float, list] = {}
    for row in rows:
        groups.setdefault(float(row["R"]), []).append(row)
    for R in groups:
        groups[R].sort(key=lambda r: r["p"])
    return dict(sorted(groups.items()))


def _crossing_figure(groups, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for R, rows in groups.items():
        ps = [r["p"] for r in rows]
        ms = [r["mean"] for r in rows]
        es = [2 * r["stderr"] for r in rows]
        ax.errorbar(ps, ms, yerr=es, marker="o", ms=3, lw=1, capsize=2, label=f"R={R:g}")
    ax.axhline(0.5, color="gray", lw=0.6, ls=":")
    ax.axvline(0.0, color="gray", lw=0.6, ls=":")
    ax.set_xlabel("level p")
    ax.set_ylabel("crossing probability")
    ax.set_title("rectangle crossing vs level")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _logit_figure(points, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    by_R: dict[float, list] = {}
    for pt in points:
        by_R.setdefault(pt["R"], []).append(pt)
    for R, pts in sorted(by_R.items()):
        pts.sort(key=lambda q: q["p"])
        ax.errorbar(
            [q["p"] for q in pts],
            [q["g"] for q in pts],
            yerr=[2 * q["g_stderr"] for q in pts],
            marker="o",
            ms=3,
            lw=1,
            capsize=2,
            label=f"R={R:g}",
        )
    ax.axhline(0.0, color="gray", lw=0.6, ls=":")
    ax.set_xlabel("level p")
    ax.set_ylabel("g(p) = logit of crossing probability")
    ax.set_title("sharp-threshold diagnostic")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _decay_figure(decays, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for p, Rs, fails, fit in decays:
        pts = [(R, q) for R, q in zip(Rs, fails) if q > 0]
        if not pts:
            continue
        ax.semilogy([a for a, _ in pts], [b for _, b in pts], "o", ms=4, label=f"p={p:g}")
        if fit.slope is not None and not fit.rejected:
            xs = [min(Rs), max(Rs)]
            ax.semilogy(
                xs,
                [math.exp(fit.intercept + fit.slope * x) for x in xs],
                lw=1,
                ls="--",
                color=ax.lines[-1].get_color(),
            )
    ax.set_xlabel("R")
    ax.set_ylabel("1 - crossing probability")
    ax.set_title("crossing-failure decay")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_sweep_report(rows, outdir) -> list[str]:
    """Render figures and derived tables for a sweep; returns written names."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    groups = _group_by_R(rows)
    curve = logit_curve(rows)

    logit_path = out / "logit_curve.csv"
    with open(logit_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["R", "eps", "p", "g", "g_stderr"])
        for pt in sorted(curve["points"], key=lambda q: (q["R"], q["p"])):
            writer.writerow([pt["R"], pt["eps"], pt["p"], repr(pt["g"]), repr(pt["g_stderr"])])
    written.append(logit_path.name)

    # one decay fit per positive level with at least two R values
    levels = sorted({row["p"] for row in rows if row["p"] > 0})
    decays = []
    decay_path = out / "decay_fit.csv"
    with open(decay_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "slope", "intercept", "n_points", "censored", "rejected", "reason"])
        for p in levels:
            sel = sorted((r for r in rows if r["p"] == p), key=lambda r: r["R"])
            Rs = [r["R"] for r in sel]
            fails = [1.0 - r["mean"] for r in sel]
            if len(Rs) < 2:
                continue
            fit = decay_fit(Rs, fails)
            decays.append((p, Rs, fails, fit))
            writer.writerow(
                [
                    p,
                    "" if fit.slope is None else repr(fit.slope),
                    "" if fit.intercept is None else repr(fit.intercept),
                    fit.n_points,
                    fit.censored,
                    int(fit.rejected),
                    fit.reason,
                ]
            )
    written.append(decay_path.name)

    _crossing_figure(groups, out / "crossing_curves.png")
    written.append("crossing_curves.png")
    _logit_figure(curve["points"], out / "logit_curves.png")
    written.append("logit_curves.png")
    if decays:
        _decay_figure(decays, out / "decay_fit.png")
        written.append("decay_fit.png")
    return written
