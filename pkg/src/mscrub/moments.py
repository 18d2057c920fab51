"""Labeled datasets, class-conditional moment accumulation, and gap reports.

Covariances use population (1/n) normalization, matching the distributional
quantities the erasers target.  A relative shrinkage ridge keeps per-class
covariances positive definite on near-singular data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClass, InvalidInput, ShapeMismatch
from .linalg import spectral_norm, symmetrize

__all__ = [
    "LabeledDataset",
    "ClassMoments",
    "MomentAccumulator",
    "MomentGapReport",
    "NormalizationRecord",
    "fit_moments",
    "accumulate_moments",
    "merge_moments",
    "finalize_moments",
    "zscore_normalize",
    "moment_gap_report",
]

CHUNK_ROWS = 4096


@dataclass
class LabeledDataset:
    """n samples of dimension d with integer class labels in 0..k-1.

    ``bounds``, when present, is a (lo, hi) pair of per-feature admissible
    ranges.  Use :meth:`from_arrays` to construct with validation.
    """

    X: np.ndarray
    z: np.ndarray
    k: int
    bounds: tuple[np.ndarray, np.ndarray] | None = None
    feature_names: list[str] | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        z: np.ndarray,
        k: int | None = None,
        bounds: tuple[np.ndarray, np.ndarray] | None = None,
        feature_names: list[str] | None = None,
    ) -> "LabeledDataset":
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        z = np.ascontiguousarray(np.asarray(z, dtype=np.int64))
        if k is None:
            if z.size == 0:
                raise InvalidInput("empty dataset")
            k = int(z.max()) + 1
        if bounds is not None:
            lo = np.asarray(bounds[0], dtype=np.float64)
            hi = np.asarray(bounds[1], dtype=np.float64)
            bounds = (lo, hi)
        ds = cls(X=X, z=z, k=int(k), bounds=bounds, feature_names=feature_names)
        ds.validate()
        return ds

    def validate(self) -> None:
        if self.X.ndim != 2:
            raise InvalidInput(f"X must be 2-d, got shape {self.X.shape}")
        if self.z.ndim != 1 or self.z.shape[0] != self.X.shape[0]:
            raise ShapeMismatch("labels must be a vector with one entry per row of X")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInput("features contain non-finite values")
        if self.k < 1:
            raise InvalidInput("class count must be positive")
        if self.z.size and (self.z.min() < 0 or self.z.max() >= self.k):
            raise InvalidInput(f"labels must lie in 0..{self.k - 1}")
        counts = np.bincount(self.z, minlength=self.k)
        if np.any(counts == 0):
            missing = int(np.argmin(counts))
            raise DegenerateClass(f"class {missing} has no samples")
        if self.bounds is not None:
            lo, hi = self.bounds
            if lo.shape != (self.d,) or hi.shape != (self.d,):
                raise ShapeMismatch("bounds must be per-feature (lo, hi) vectors")
            if np.any(lo > hi):
                raise InvalidInput("bounds lo > hi")
            slack = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
            if np.any(self.X < lo - slack) or np.any(self.X > hi + slack):
                raise InvalidInput("features fall outside the declared bounds")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.k)

    def priors(self) -> np.ndarray:
        return self.class_counts() / self.n

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        """Row subset, without re-validating class coverage."""
        return LabeledDataset(
            X=self.X[idx],
            z=self.z[idx],
            k=self.k,
            bounds=self.bounds,
            feature_names=self.feature_names,
        )


@dataclass
class MomentAccumulator:
    """Mergeable raw-moment sums (counts, per-class sums, x x^T sums)."""

    d: int
    k: int
    counts: np.ndarray
    sums: np.ndarray
    sq: np.ndarray

    @classmethod
    def empty(cls, d: int, k: int) -> "MomentAccumulator":
        return cls(
            d=d,
            k=k,
            counts=np.zeros(k, dtype=np.int64),
            sums=np.zeros((k, d)),
            sq=np.zeros((k, d, d)),
        )

    @classmethod
    def from_rows(cls, X: np.ndarray, z: np.ndarray, d: int, k: int) -> "MomentAccumulator":
        acc = cls.empty(d, k)
        for c in np.unique(z):
            rows = X[z == c]
            acc.counts[c] = rows.shape[0]
            acc.sums[c] = rows.sum(axis=0)
            acc.sq[c] = rows.T @ rows
        return acc


def accumulate_moments(ds: LabeledDataset, chunk_rows: int = CHUNK_ROWS) -> MomentAccumulator:
    """Accumulate raw moments over fixed-size chunks merged in index order."""
    acc = MomentAccumulator.empty(ds.d, ds.k)
    for start in range(0, ds.n, chunk_rows):
        stop = start + chunk_rows
        block = MomentAccumulator.from_rows(ds.X[start:stop], ds.z[start:stop], ds.d, ds.k)
        acc = merge_moments(acc, block)
    return acc


def merge_moments(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Combine two accumulators; equivalent to a single pass over both inputs."""
    if a.d != b.d or a.k != b.k:
        raise ShapeMismatch(f"accumulator shapes differ: ({a.d},{a.k}) vs ({b.d},{b.k})")
    return MomentAccumulator(
        d=a.d,
        k=a.k,
        counts=a.counts + b.counts,
        sums=a.sums + b.sums,
        sq=a.sq + b.sq,
    )


@dataclass
class ClassMoments:
    """Per-class priors/means/covariances plus global moments.

    ``covs`` carries the shrinkage ridge already applied; ``ridge`` records
    the per-class ridge magnitude so the raw estimates stay recoverable.
    """

    k: int
    d: int
    counts: np.ndarray
    priors: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    global_mean: np.ndarray
    global_cov: np.ndarray
    cross_cov: np.ndarray
    shrinkage: float
    ridge: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.ridge is None:
            self.ridge = np.zeros(self.k)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def raw_cov(self, c: int) -> np.ndarray:
        """Class covariance with the shrinkage ridge removed."""
        return self.covs[c] - self.ridge[c] * np.eye(self.d)

    def avg_cov(self, weighted: bool = True) -> np.ndarray:
        """Average of class covariances (prior-weighted by default)."""
        if weighted:
            return symmetrize(np.einsum("c,cij->ij", self.priors, self.covs))
        return symmetrize(self.covs.mean(axis=0))

    def validate(self, tol: float = 1e-10) -> None:
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise InvalidInput("priors do not sum to 1")
        recomposed = self.priors @ self.means
        if np.linalg.norm(recomposed - self.global_mean) > tol * max(1.0, np.linalg.norm(self.global_mean)):
            raise InvalidInput("global mean does not match prior-weighted class means")
        expected_cross = (self.means - self.global_mean).T * self.priors
        if np.max(np.abs(expected_cross - self.cross_cov)) > tol * max(1.0, np.abs(self.cross_cov).max()):
            raise InvalidInput("cross-covariance columns disagree with class mean gaps")


def finalize_moments(acc: MomentAccumulator, shrinkage: float) -> ClassMoments:
    """Turn raw sums into ClassMoments, applying the shrinkage ridge.

    The ridge for class c is ``shrinkage * trace(cov_c)/d``; a class with
    zero empirical variance falls back to the global trace scale so the
    full-rank precondition of the transport maps still holds.
    """
    if shrinkage < 0:
        raise InvalidInput("shrinkage must be nonnegative")
    if np.any(acc.counts < 2):
        c = int(np.argmin(acc.counts))
        raise DegenerateClass(f"class {c} has {int(acc.counts[c])} samples; need at least 2")
    n = int(acc.counts.sum())
    d, k = acc.d, acc.k
    priors = acc.counts / n
    means = acc.sums / acc.counts[:, None]
    global_mean = acc.sums.sum(axis=0) / n
    global_cov = symmetrize(acc.sq.sum(axis=0) / n - np.outer(global_mean, global_mean))
    global_scale = max(float(np.trace(global_cov)) / d, 0.0)

    covs = np.empty((k, d, d))
    ridge = np.zeros(k)
    for c in range(k):
        raw = symmetrize(acc.sq[c] / acc.counts[c] - np.outer(means[c], means[c]))
        scale = float(np.trace(raw)) / d
        if scale <= 0.0:
            scale = global_scale if global_scale > 0.0 else 1.0
        ridge[c] = shrinkage * scale
        covs[c] = raw + ridge[c] * np.eye(d)

    cross_cov = (means - global_mean).T * priors
    return ClassMoments(
        k=k,
        d=d,
        counts=acc.counts.copy(),
        priors=priors,
        means=means,
        covs=covs,
        global_mean=global_mean,
        global_cov=global_cov,
        cross_cov=cross_cov,
        shrinkage=float(shrinkage),
        ridge=ridge,
    )


def fit_moments(ds: LabeledDataset, shrinkage: float = 1e-4) -> ClassMoments:
    """Fit class-conditional and global first/second moments.

    Accumulation runs over fixed 4096-row chunks merged in index order, so
    results are bit-stable for a given row order.
    """
    ds.validate()
    return finalize_moments(accumulate_moments(ds), shrinkage)


@dataclass
class NormalizationRecord:
    """Per-feature shift/scale sufficient to invert a z-score transform."""

    mean: np.ndarray
    scale: np.ndarray  # population std; exactly 0 flags a constant column

    def safe_scale(self) -> np.ndarray:
        return np.where(self.scale == 0.0, 1.0, self.scale)

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        s = self.safe_scale()
        Xn = (ds.X - self.mean) / s
        Xn[:, self.scale == 0.0] = 0.0
        bounds = ds.bounds
        if bounds is not None:
            bounds = ((bounds[0] - self.mean) / s, (bounds[1] - self.mean) / s)
        return LabeledDataset(Xn, ds.z.copy(), ds.k, bounds, ds.feature_names)

    def invert(self, ds: LabeledDataset) -> LabeledDataset:
        s = self.safe_scale()
        X = ds.X * s + self.mean
        bounds = ds.bounds
        if bounds is not None:
            bounds = (bounds[0] * s + self.mean, bounds[1] * s + self.mean)
        return LabeledDataset(X, ds.z.copy(), ds.k, bounds, ds.feature_names)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "NormalizationRecord":
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["scale"], dtype=np.float64))


def zscore_normalize(ds: LabeledDataset) -> tuple[LabeledDataset, NormalizationRecord]:
    """Shift/scale every feature to zero mean and unit variance.

    Constant columns map to 0 and are flagged in the record (scale 0), so
    the transform stays invertible.
    """
    mean = ds.X.mean(axis=0)
    std = np.sqrt(((ds.X - mean) ** 2).mean(axis=0))
    record = NormalizationRecord(mean=mean, scale=std)
    return record.apply(ds), record


@dataclass
class MomentGapReport:
    """Distances between class moments and their pooled counterparts."""

    mean_gaps: np.ndarray
    cov_gaps_spectral: np.ndarray
    cov_gaps_frobenius: np.ndarray

    @property
    def max_mean_gap(self) -> float:
        return float(self.mean_gaps.max())

    @property
    def max_cov_gap_spectral(self) -> float:
        return float(self.cov_gaps_spectral.max())

    @property
    def max_cov_gap_frobenius(self) -> float:
        return float(self.cov_gaps_frobenius.max())

    def to_dict(self) -> dict:
        return {
            "mean_gaps": self.mean_gaps.tolist(),
            "cov_gaps_spectral": self.cov_gaps_spectral.tolist(),
            "cov_gaps_frobenius": self.cov_gaps_frobenius.tolist(),
            "max_mean_gap": self.max_mean_gap,
            "max_cov_gap_spectral": self.max_cov_gap_spectral,
            "max_cov_gap_frobenius": self.max_cov_gap_frobenius,
        }

    def format_text(self) -> str:
        lines = ["class  mean_gap       cov_gap_spec   cov_gap_fro"]
        for c in range(len(self.mean_gaps)):
            lines.append(
                f"{c:<6d} {self.mean_gaps[c]:<14.6e} "
                f"{self.cov_gaps_spectral[c]:<14.6e} {self.cov_gaps_frobenius[c]:<.6e}"
            )
        lines.append(
            f"max    {self.max_mean_gap:<14.6e} "
            f"{self.max_cov_gap_spectral:<14.6e} {self.max_cov_gap_frobenius:<.6e}"
        )
        return "\n".join(lines) + "\n"


def moment_gap_report(m: ClassMoments, weighted: bool = True) -> MomentGapReport:
    """Per-class gaps between class moments and the pooled mean / averaged
    class covariance."""
    avg = m.avg_cov(weighted=weighted)
    mean_gaps = np.linalg.norm(m.means - m.global_mean, axis=1)
    spec = np.array([spectral_norm(m.covs[c] - avg) for c in range(m.k)])
    fro = np.array([np.linalg.norm(m.covs[c] - avg) for c in range(m.k)])
    return MomentGapReport(mean_gaps, spec, fro)
