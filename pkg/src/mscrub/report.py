"""Figure rendering for the CLI report paths.

Every report command emits its delimited output first; these helpers render
a companion PNG next to it.  Figures are written atomically with metadata
stripped so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .mdl import MdlCurve, MdlDeltaReport  # noqa: E402
from .moments import MomentGapReport  # noqa: E402
from .probes import GuardednessReport  # noqa: E402

__all__ = [
    "save_figure",
    "learning_curve_figure",
    "gap_figure",
    "guardedness_figure",
    "delta_figure",
]


def save_figure(fig, path: str | Path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", dpi=120, metadata={"Software": None})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def learning_curve_figure(curves: list[MdlCurve], title: str = "prequential learning curve"):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for curve in curves:
        ax.plot(curve.sizes, curve.val_losses, marker="o", ms=3, label=f"seed {curve.seed}")
    if curves:
        trivial = curves[0].trivial_nats / curves[0].n_coded
        ax.axhline(trivial, color="gray", ls="--", lw=1, label="trivial")
    ax.set_xscale("log")
    ax.set_xlabel("training prefix size")
    ax.set_ylabel("validation loss (nats)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def gap_figure(report: MomentGapReport, title: str = "class moment gaps"):
    k = len(report.mean_gaps)
    xs = range(k)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.6, 3.6))
    ax1.bar(xs, report.mean_gaps, color="#4878cf")
    ax1.set_xlabel("class")
    ax1.set_ylabel("mean gap (L2)")
    ax2.bar([x - 0.2 for x in xs], report.cov_gaps_spectral, width=0.4, label="spectral")
    ax2.bar([x + 0.2 for x in xs], report.cov_gaps_frobenius, width=0.4, label="frobenius")
    ax2.set_xlabel("class")
    ax2.set_ylabel("covariance gap")
    ax2.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    return fig


def guardedness_figure(report: GuardednessReport, title: str = "probe margins by degree"):
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    degrees = report.degrees
    margins = [report.margins[d] for d in degrees]
    colors = ["#5cb85c" if report.guarded[d] else "#d9534f" for d in degrees]
    ax.bar([str(d) for d in degrees], margins, color=colors)
    ax.axhline(report.tol, color="gray", ls="--", lw=1, label=f"tol = {report.tol}")
    ax.set_xlabel("probe degree")
    ax.set_ylabel("trivial - held-out loss (nats)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def delta_figure(report: MdlDeltaReport, title: str = "codelength increase vs control"):
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    names = [row["name"] for row in report.rows]
    means = [row["delta_mean"] for row in report.rows]
    stds = [row["delta_std"] for row in report.rows]
    ax.bar(names, means, yerr=stds, capsize=4, color="#4878cf")
    ax.axhline(0.0, color="gray", lw=1)
    ax.set_ylabel("delta codelength (nats)")
    ax.set_title(title)
    fig.tight_layout()
    return fig
