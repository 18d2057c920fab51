"""Seeded synthetic dataset generators used as analytic oracles.

Randomness comes from a counter-based Philox generator keyed by the spec
seed, so generation is reproducible byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NotPSD
from .linalg import spd_power, sym_eig
from .moments import LabeledDataset

__all__ = [
    "GaussianSpec",
    "BoxClassSpec",
    "gen_gaussian",
    "gen_boxes",
    "parse_synth_spec",
    "gen_synthetic",
]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class GaussianSpec:
    """Mixture of k Gaussian classes with given means/covariances/priors."""

    k: int
    d: int
    means: np.ndarray  # (k, d)
    covs: np.ndarray  # (k, d, d)
    priors: np.ndarray  # (k,)
    seed: int
    n: int

    def validate(self) -> None:
        if self.means.shape != (self.k, self.d) or self.covs.shape != (self.k, self.d, self.d):
            raise InvalidInput("mean/covariance shapes inconsistent with (k, d)")
        if self.priors.shape != (self.k,) or abs(self.priors.sum() - 1.0) > 1e-9 or self.priors.min() < 0:
            raise InvalidInput("priors must be a probability vector over k classes")
        for c in range(self.k):
            vals = sym_eig(self.covs[c]).eigenvalues
            if vals[-1] <= 0:
                raise NotPSD(f"class {c} covariance is not positive definite")

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian",
            "k": self.k,
            "d": self.d,
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "priors": self.priors.tolist(),
            "seed": self.seed,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianSpec":
        return cls(
            k=int(obj["k"]),
            d=int(obj["d"]),
            means=np.asarray(obj["means"], dtype=np.float64),
            covs=np.asarray(obj["covs"], dtype=np.float64),
            priors=np.asarray(obj["priors"], dtype=np.float64),
            seed=int(obj["seed"]),
            n=int(obj["n"]),
        )


def gen_gaussian(spec: GaussianSpec) -> LabeledDataset:
    """Sample labels from the priors and features from N(m_z, Sigma_z)."""
    spec.validate()
    rng = _rng(spec.seed)
    z = rng.choice(spec.k, size=spec.n, p=spec.priors)
    normals = rng.standard_normal((spec.n, spec.d))
    X = np.empty((spec.n, spec.d))
    for c in range(spec.k):
        mask = z == c
        root = spd_power(spec.covs[c], 0.5)
        X[mask] = spec.means[c] + normals[mask] @ root
    return LabeledDataset.from_arrays(X, z, k=spec.k)


@dataclass
class BoxClassSpec:
    """k classes, each an affine image of the uniform unit hypercube."""

    k: int
    d: int
    linears: np.ndarray  # (k, d, d)
    offsets: np.ndarray  # (k, d)
    seed: int
    n: int

    def validate(self) -> None:
        if self.linears.shape != (self.k, self.d, self.d) or self.offsets.shape != (self.k, self.d):
            raise InvalidInput("affine map shapes inconsistent with (k, d)")
        for c in range(self.k):
            scale = float(np.abs(self.linears[c]).max())
            if scale == 0 or abs(np.linalg.det(self.linears[c])) < 1e-12 * scale**self.d:
                raise InvalidInput(f"class {c} affine map is singular")

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Elementwise bounding box of the union of the class images."""
        lows = self.offsets + np.minimum(self.linears, 0.0).sum(axis=2)
        highs = self.offsets + np.maximum(self.linears, 0.0).sum(axis=2)
        return lows.min(axis=0), highs.max(axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": "boxes",
            "k": self.k,
            "d": self.d,
            "linears": self.linears.tolist(),
            "offsets": self.offsets.tolist(),
            "seed": self.seed,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BoxClassSpec":
        return cls(
            k=int(obj["k"]),
            d=int(obj["d"]),
            linears=np.asarray(obj["linears"], dtype=np.float64),
            offsets=np.asarray(obj["offsets"], dtype=np.float64),
            seed=int(obj["seed"]),
            n=int(obj["n"]),
        )


def gen_boxes(spec: BoxClassSpec) -> LabeledDataset:
    """Uniform class draw, then the class's affine image of uniform [0,1]^d.

    Bounds metadata is the bounding box of the union of class images.
    """
    spec.validate()
    rng = _rng(spec.seed)
    z = rng.integers(0, spec.k, size=spec.n)
    u = rng.random((spec.n, spec.d))
    X = np.empty((spec.n, spec.d))
    for c in range(spec.k):
        mask = z == c
        X[mask] = u[mask] @ spec.linears[c].T + spec.offsets[c]
    return LabeledDataset.from_arrays(X, z, k=spec.k, bounds=spec.bounding_box())


def parse_synth_spec(obj: dict) -> GaussianSpec | BoxClassSpec:
    kind = obj.get("kind")
    if kind == "gaussian":
        return GaussianSpec.from_dict(obj)
    if kind == "boxes":
        return BoxClassSpec.from_dict(obj)
    raise InvalidInput(f"unknown synthetic spec kind: {kind!r}")


def gen_synthetic(spec: GaussianSpec | BoxClassSpec) -> LabeledDataset:
    if isinstance(spec, GaussianSpec):
        return gen_gaussian(spec)
    return gen_boxes(spec)
