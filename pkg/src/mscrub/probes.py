"""Polynomial probes and held-out guardedness checks.

A degree-N probe scores each class with a polynomial of total degree up to
N in the features, trained by full-batch cross-entropy minimization over
deduplicated monomial features.  Data is guarded at degree N when the best
such probe cannot beat the best constant predictor.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidInput, MalformedFile, ShapeMismatch, Unsupported
from .moments import LabeledDataset, MomentGapReport, fit_moments, moment_gap_report

__all__ = [
    "PolynomialPredictor",
    "ProbeConfig",
    "GuardednessReport",
    "monomial_indices",
    "monomials",
    "train_probe",
    "eval_probe",
    "trivial_loss",
    "guardedness_report",
    "serialize_predictor",
    "deserialize_predictor",
]

MAX_DEGREE = 4


@lru_cache(maxsize=None)
def monomial_indices(d: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Index tuples of all distinct monomials of total degree 1..degree.

    Deterministic order: by degree, then lexicographic within each degree.
    """
    if degree < 1:
        raise InvalidInput("degree must be at least 1")
    if degree > MAX_DEGREE:
        raise Unsupported(f"degree {degree} exceeds the supported maximum {MAX_DEGREE}")
    out: list[tuple[int, ...]] = []
    for n in range(1, degree + 1):
        out.extend(itertools.combinations_with_replacement(range(d), n))
    return tuple(out)


def monomials(x: np.ndarray, degree: int) -> np.ndarray:
    """Monomial feature expansion of a vector or a stack of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    idx = monomial_indices(X.shape[1], degree)
    feats = np.empty((X.shape[0], len(idx)))
    for j, tup in enumerate(idx):
        feats[:, j] = X[:, tup].prod(axis=1)
    return feats[0] if single else feats


@dataclass
class ProbeConfig:
    max_iter: int = 1000
    grad_tol: float = 1e-8


@dataclass
class PolynomialPredictor:
    """Trained probe: logits = bias + coef @ standardized monomials."""

    degree: int
    d: int
    k: int
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    bias: np.ndarray
    coef: np.ndarray  # (p, k)
    converged: bool = True
    meta: dict = field(default_factory=dict)

    def logits(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.d:
            raise ShapeMismatch(f"predictor expects dimension {self.d}, got {X.shape[1]}")
        feats = (monomials(X, self.degree) - self.feat_mean) / self.feat_scale
        return feats @ self.coef + self.bias


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def train_probe(
    train: LabeledDataset,
    degree: int,
    l2: float = 1e-4,
    cfg: ProbeConfig | None = None,
) -> PolynomialPredictor:
    """Fit a degree-N probe by penalized cross-entropy minimization.

    Features are standardized internally (recorded in the predictor) to
    condition the convex problem; the bias is unpenalized.
    """
    cfg = cfg or ProbeConfig()
    if l2 < 0:
        raise InvalidInput("l2 must be nonnegative")
    feats = monomials(train.X, degree)
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    phi = (feats - mean) / scale
    n, p = phi.shape
    k = train.k
    onehot = np.zeros((n, k))
    onehot[np.arange(n), train.z] = 1.0

    def objective(theta: np.ndarray):
        W = theta[: p * k].reshape(p, k)
        b = theta[p * k :]
        logits = phi @ W + b
        logp = _log_softmax(logits)
        ce = -float(logp[np.arange(n), train.z].mean())
        loss = ce + l2 * float(np.sum(W**2))
        resid = (np.exp(logp) - onehot) / n
        grad_w = phi.T @ resid + 2.0 * l2 * W
        grad_b = resid.sum(axis=0)
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    res = minimize(
        objective,
        np.zeros(p * k + k),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_iter, "maxcor": 20, "ftol": 1e-15, "gtol": cfg.grad_tol},
    )
    W = res.x[: p * k].reshape(p, k)
    b = res.x[p * k :]
    return PolynomialPredictor(
        degree=degree,
        d=train.d,
        k=k,
        feat_mean=mean,
        feat_scale=scale,
        bias=b,
        coef=W,
        converged=bool(res.success),
        meta={"l2": float(l2), "iterations": int(res.nit), "objective": float(res.fun)},
    )


def eval_probe(predictor: PolynomialPredictor, ds: LabeledDataset) -> float:
    """Mean cross-entropy of the probe on a dataset, in nats."""
    if ds.k > predictor.k:
        raise ShapeMismatch(f"dataset has {ds.k} classes, predictor only {predictor.k}")
    logp = _log_softmax(predictor.logits(ds.X))
    return -float(logp[np.arange(ds.n), ds.z].mean())


def trivial_loss(priors: np.ndarray) -> float:
    """Cross-entropy of the best constant predictor: the prior entropy."""
    priors = np.asarray(priors, dtype=np.float64)
    if priors.ndim != 1 or priors.min() < 0 or abs(priors.sum() - 1.0) > 1e-9:
        raise InvalidInput("priors must be a probability vector")
    pos = priors[priors > 0]
    return -float((pos * np.log(pos)).sum())


@dataclass
class GuardednessReport:
    """Held-out probe margins against the trivially attainable loss."""

    trivial: float
    degrees: list[int]
    losses: dict[int, float]
    margins: dict[int, float]
    guarded: dict[int, bool]
    converged: dict[int, bool]
    moment_gaps: MomentGapReport
    tol: float
    split_seed: int

    def format_text(self) -> str:
        lines = [f"trivial loss: {self.trivial:.6f} nats (tol {self.tol})"]
        for deg in self.degrees:
            lines.append(
                f"guarded@{deg}: {'yes' if self.guarded[deg] else 'no'} "
                f"(held-out {self.losses[deg]:.6f}, margin {self.margins[deg]:.6f})"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "trivial_loss": self.trivial,
            "tol": self.tol,
            "split_seed": self.split_seed,
            "degrees": self.degrees,
            "losses": {str(k): v for k, v in self.losses.items()},
            "margins": {str(k): v for k, v in self.margins.items()},
            "guarded": {str(k): v for k, v in self.guarded.items()},
            "converged": {str(k): v for k, v in self.converged.items()},
            "moment_gaps": self.moment_gaps.to_dict(),
        }


def train_eval_split(
    ds: LabeledDataset, seed: int, holdout: float = 0.2
) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic 80/20 row split by seed."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_hold = max(1, int(round(ds.n * holdout)))
    return ds.subset(perm[n_hold:]), ds.subset(perm[:n_hold])


def guardedness_report(
    ds: LabeledDataset,
    degrees: list[int],
    split_seed: int = 0,
    tol: float = 0.02,
    l2: float = 1e-4,
    cfg: ProbeConfig | None = None,
) -> GuardednessReport:
    """Train probes per degree on an 80% split and compare held-out loss to
    the trivial loss; guarded at degree N iff the margin is at most tol."""
    degrees = sorted(set(int(d) for d in degrees))
    if any(deg < 1 or deg > MAX_DEGREE for deg in degrees):
        raise Unsupported(f"degrees must lie in 1..{MAX_DEGREE}")
    train, hold = train_eval_split(ds, split_seed)
    trivial = trivial_loss(ds.priors())
    losses: dict[int, float] = {}
    margins: dict[int, float] = {}
    guarded: dict[int, bool] = {}
    converged: dict[int, bool] = {}
    for deg in degrees:
        probe = train_probe(train, deg, l2=l2, cfg=cfg)
        loss = eval_probe(probe, hold)
        losses[deg] = loss
        margins[deg] = trivial - loss
        guarded[deg] = margins[deg] <= tol
        converged[deg] = probe.converged
    gaps = moment_gap_report(fit_moments(ds, shrinkage=0.0))
    return GuardednessReport(
        trivial=trivial,
        degrees=degrees,
        losses=losses,
        margins=margins,
        guarded=guarded,
        converged=converged,
        moment_gaps=gaps,
        tol=tol,
        split_seed=split_seed,
    )


def serialize_predictor(predictor: PolynomialPredictor) -> bytes:
    obj = {
        "degree": predictor.degree,
        "d": predictor.d,
        "k": predictor.k,
        "monomial_order": "lex",
        "standardization": {
            "mean": predictor.feat_mean.tolist(),
            "scale": predictor.feat_scale.tolist(),
        },
        "bias": predictor.bias.tolist(),
        "coefficients": predictor.coef.tolist(),
        "converged": predictor.converged,
    }
    return (json.dumps(obj, indent=2) + "\n").encode("utf-8")


def deserialize_predictor(data: bytes) -> PolynomialPredictor:
    try:
        obj = json.loads(data.decode("utf-8"))
        return PolynomialPredictor(
            degree=int(obj["degree"]),
            d=int(obj["d"]),
            k=int(obj["k"]),
            feat_mean=np.asarray(obj["standardization"]["mean"], dtype=np.float64),
            feat_scale=np.asarray(obj["standardization"]["scale"], dtype=np.float64),
            bias=np.asarray(obj["bias"], dtype=np.float64),
            coef=np.asarray(obj["coefficients"], dtype=np.float64),
            converged=bool(obj.get("converged", True)),
        )
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"not a valid predictor file: {exc}") from None
