"""Dense symmetric/SPD matrix primitives underlying every eraser.

All routines work on plain float64 ndarrays, symmetrize their inputs to
absorb accumulation round-off, and use a deterministic eigenvector sign
convention so downstream artifacts are byte-stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NotPSD

__all__ = [
    "SpectralDecomposition",
    "symmetrize",
    "default_floor",
    "sym_eig",
    "spd_power",
    "top_singular_pair",
    "spectral_norm",
]


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Return ``(M + M^T) / 2`` as a float64 array.

    Raises InvalidInput for non-square or non-finite input.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidInput("matrix contains non-finite entries")
    return (mat + mat.T) / 2.0


def default_floor(mat: np.ndarray) -> float:
    """Default eigenvalue floor: 1e-10 * trace(M)/d, clipped at zero."""
    d = mat.shape[0]
    return max(float(np.trace(mat)) / d, 0.0) * 1e-10


@dataclass
class SpectralDecomposition:
    """Eigendecomposition with eigenvalues sorted descending.

    ``eigenvectors`` holds orthonormal columns aligned with ``eigenvalues``;
    each column's largest-magnitude entry is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def sym_eig(mat: np.ndarray) -> SpectralDecomposition:
    """Eigendecompose a symmetric matrix with a deterministic convention.

    Eigenvalues come back in descending order; each eigenvector's sign is
    fixed so its largest-magnitude coordinate is positive, making repeated
    calls on identical bytes produce identical results.
    """
    m = symmetrize(mat)
    vals, vecs = np.linalg.eigh(m)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return SpectralDecomposition(vals, vecs * signs)


def spd_power(
    mat: np.ndarray,
    power: float,
    floor: float | None = None,
    pseudo: bool = False,
) -> np.ndarray:
    """Matrix power of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below ``floor`` are clamped to the floor before negative
    powers and zeroed before positive powers.  With ``pseudo=True``,
    negative powers drop the floored directions instead (Moore-Penrose
    style), which keeps the result supported on the input's row space.

    Raises NotPSD if any eigenvalue falls below ``-10 * floor`` (beyond a
    machine-epsilon allowance for round-off).
    """
    dec = sym_eig(mat)
    if floor is None:
        floor = default_floor(mat)
    if floor < 0:
        raise InvalidInput("floor must be nonnegative")
    vals = dec.eigenvalues
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    if vals.size and vals[-1] < -(10.0 * floor + 16.0 * np.finfo(np.float64).eps * scale):
        raise NotPSD(
            f"eigenvalue {vals[-1]:.3e} below PSD tolerance -10*floor = {-10 * floor:.3e}"
        )
    if power >= 0:
        powered = np.where(vals < floor, 0.0, np.maximum(vals, 0.0)) ** power
    else:
        if pseudo:
            keep = (vals >= floor) & (vals > 0)
            base = vals
        else:
            # A zero floor with a zero eigenvalue has no finite inverse;
            # such directions are dropped rather than blown up.
            base = np.maximum(vals, floor)
            keep = base > 0
        powered = np.where(keep, np.where(keep, base, 1.0) ** power, 0.0)
    v = dec.eigenvectors
    return symmetrize((v * powered) @ v.T)


def top_singular_pair(mat: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest singular value and vector of a symmetric matrix.

    For symmetric input the singular values are the absolute eigenvalues.
    Ties are broken toward the earlier index after the descending-|value|
    sort, and the vector's sign follows the sym_eig convention.
    """
    dec = sym_eig(mat)
    absvals = np.abs(dec.eigenvalues)
    order = np.argsort(-absvals, kind="stable")
    best = order[0]
    return float(absvals[best]), dec.eigenvectors[:, best].copy()


def spectral_norm(mat: np.ndarray) -> float:
    """Operator 2-norm of a symmetric matrix (largest |eigenvalue|)."""
    return top_singular_pair(mat)[0]
