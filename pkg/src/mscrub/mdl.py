"""Prequential (online-code) MDL measurement with polynomial probe coders.

The label stream is coded block by block: the first block under the
stream's empirical label frequencies, every later block under a probe
trained on all preceding stream data.  Total codelength equals the area
under the learning curve discretized at the schedule sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ShapeMismatch
from .moments import LabeledDataset
from .probes import PolynomialPredictor, ProbeConfig, eval_probe, train_probe

__all__ = [
    "PrefixSchedule",
    "MdlCurve",
    "MdlDeltaReport",
    "make_schedule",
    "prequential_mdl",
    "mdl_delta_report",
    "curve_to_csv",
]


@dataclass(frozen=True)
class PrefixSchedule:
    """Strictly increasing training-set sizes at which probes are fit."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes:
            raise InvalidInput("empty schedule")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise InvalidInput("schedule sizes must be strictly increasing")
        if self.sizes[0] < 1:
            raise InvalidInput("schedule sizes must be positive")


def make_schedule(n_train: int, first: int = 64, ratio: float = 2.0) -> PrefixSchedule:
    """Geometric prefix sizes: first, ceil(first*ratio), ..., capped at n_train."""
    if first < 1:
        raise InvalidInput("first must be at least 1")
    if ratio <= 1.0:
        raise InvalidInput("ratio must exceed 1")
    if n_train < 1:
        raise InvalidInput("n_train must be positive")
    sizes = [min(first, n_train)]
    while sizes[-1] < n_train:
        sizes.append(min(math.ceil(sizes[-1] * ratio), n_train))
    return PrefixSchedule(tuple(dict.fromkeys(sizes)))


@dataclass
class MdlCurve:
    """Learning curve plus online codelength for one seed."""

    sizes: tuple[int, ...]
    val_losses: list[float]
    converged: list[bool]
    codelength_nats: float
    codelength_bits: float
    trivial_nats: float
    n_coded: int
    degree: int
    seed: int

    def summary_dict(self) -> dict:
        return {
            "codelength_nats": self.codelength_nats,
            "codelength_bits": self.codelength_bits,
            "trivial_nats": self.trivial_nats,
            "n_coded": self.n_coded,
            "degree": self.degree,
            "seed": self.seed,
        }


def curve_to_csv(curve: MdlCurve) -> str:
    lines = ["size,val_loss_nats,converged"]
    for size, loss, conv in zip(curve.sizes, curve.val_losses, curve.converged):
        lines.append(f"{size},{loss!r},{int(conv)}")
    return "\n".join(lines) + "\n"


def prequential_mdl(
    ds: LabeledDataset,
    degree: int,
    schedule: PrefixSchedule,
    seed: int,
    l2: float = 1e-4,
    cfg: ProbeConfig | None = None,
    holdout: float = 0.2,
) -> MdlCurve:
    """Grow probes over stream prefixes and code each block online.

    The dataset is split by seed into a fixed validation fold and an ordered
    training stream.  For each schedule size a fresh probe is trained on the
    prefix and its validation loss recorded; codelength charges each block
    at the mean loss of the probe trained on all preceding data, with the
    first block coded under the stream's empirical label frequencies.
    """
    if schedule.sizes[0] < 10 * ds.k:
        raise InvalidInput(
            f"first schedule size {schedule.sizes[0]} is below 10*k = {10 * ds.k}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_hold = max(1, int(round(ds.n * holdout)))
    fold = ds.subset(perm[:n_hold])
    stream = ds.subset(perm[n_hold:])
    n_coded = schedule.sizes[-1]
    if n_coded > stream.n:
        raise InvalidInput(
            f"schedule needs {n_coded} stream samples but only {stream.n} are available"
        )

    coded_labels = stream.z[:n_coded]
    priors = np.bincount(coded_labels, minlength=ds.k) / n_coded
    trivial_nats = float(-np.log(priors[coded_labels]).sum())

    probes: list[PolynomialPredictor] = []
    val_losses: list[float] = []
    converged: list[bool] = []
    for size in schedule.sizes:
        probe = train_probe(stream.subset(np.arange(size)), degree, l2=l2, cfg=cfg)
        probes.append(probe)
        val_losses.append(eval_probe(probe, fold))
        converged.append(probe.converged)

    codelength = float(-np.log(priors[coded_labels[: schedule.sizes[0]]]).sum())
    for i in range(1, len(schedule.sizes)):
        lo, hi = schedule.sizes[i - 1], schedule.sizes[i]
        block = stream.subset(np.arange(lo, hi))
        codelength += (hi - lo) * eval_probe(probes[i - 1], block)

    return MdlCurve(
        sizes=schedule.sizes,
        val_losses=val_losses,
        converged=converged,
        codelength_nats=codelength,
        codelength_bits=codelength / math.log(2.0),
        trivial_nats=trivial_nats,
        n_coded=n_coded,
        degree=degree,
        seed=seed,
    )


@dataclass
class MdlDeltaReport:
    """Codelength increases of each variant over the control, across seeds."""

    control_mean: float
    control_std: float
    seeds: tuple[int, ...]
    rows: list[dict]

    def format_text(self) -> str:
        lines = [
            f"control codelength: {self.control_mean:.3f} +- {self.control_std:.3f} nats "
            f"(seeds {list(self.seeds)})",
            f"{'variant':<16} {'delta_nats':>14} {'+-':>10} {'ratio':>10} {'+-':>10}",
        ]
        for row in self.rows:
            lines.append(
                f"{row['name']:<16} {row['delta_mean']:>14.3f} {row['delta_std']:>10.3f} "
                f"{row['ratio_mean']:>10.4f} {row['ratio_std']:>10.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "control_mean_nats": self.control_mean,
            "control_std_nats": self.control_std,
            "seeds": list(self.seeds),
            "variants": self.rows,
        }


def _std(values: np.ndarray) -> float:
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def mdl_delta_report(
    control: list[MdlCurve], variants: dict[str, list[MdlCurve]]
) -> MdlDeltaReport:
    """Compare per-seed codelengths of each variant against the control.

    All curves must share the same schedule and the same seed set; deltas
    are paired by seed and reported both as differences and as ratios.
    """
    if not control:
        raise InvalidInput("need at least one control curve")
    sizes = control[0].sizes
    seeds = tuple(sorted(c.seed for c in control))
    if len(set(seeds)) != len(seeds):
        raise InvalidInput("duplicate seeds in control curves")
    by_seed = {c.seed: c for c in control}
    for c in control:
        if c.sizes != sizes:
            raise ShapeMismatch("control curves have mismatched schedules")
    control_lens = np.array([by_seed[s].codelength_nats for s in seeds])

    rows = []
    for name, curves in variants.items():
        vmap = {c.seed: c for c in curves}
        if tuple(sorted(vmap)) != seeds:
            raise ShapeMismatch(f"variant {name!r} seeds do not match control seeds")
        for c in curves:
            if c.sizes != sizes:
                raise ShapeMismatch(f"variant {name!r} has a mismatched schedule")
        vlens = np.array([vmap[s].codelength_nats for s in seeds])
        deltas = vlens - control_lens
        ratios = vlens / control_lens
        rows.append(
            {
                "name": name,
                "delta_mean": float(deltas.mean()),
                "delta_std": _std(deltas),
                "ratio_mean": float(ratios.mean()),
                "ratio_std": _std(ratios),
                "codelength_mean": float(vlens.mean()),
                "codelength_std": _std(vlens),
            }
        )
    return MdlDeltaReport(
        control_mean=float(control_lens.mean()),
        control_std=_std(control_lens),
        seeds=seeds,
        rows=rows,
    )
