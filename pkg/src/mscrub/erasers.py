"""The four erasure methods plus the random-projection baseline.

Covers the label-free affine eraser (LEACE), per-class transport maps to
the Gaussian barycenter (QLEACE), the greedy label-free rank-1 deflation
variant (ALF-QLEACE), direct gradient-based dataset editing, and a seeded
random projection for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import InvalidInput, MalformedFile, NotPSD, ShapeMismatch, UnknownVersion
from .linalg import default_floor, spd_power, spectral_norm, sym_eig, symmetrize, top_singular_pair
from .moments import ClassMoments, LabeledDataset

__all__ = [
    "AffineEraser",
    "ClassEraser",
    "BarycenterSolution",
    "GradientEraseResult",
    "GradOptConfig",
    "fit_leace",
    "barycenter_covariance",
    "gaussian_barycenter",
    "ot_gaussian_map",
    "w2_gaussian_sq",
    "fit_qleace",
    "fit_alf_qleace",
    "fit_random_projection",
    "gradient_erase",
    "make_erase_objective",
    "apply_eraser",
    "transform_moments",
    "compose_affine",
    "serialize_eraser",
    "deserialize_eraser",
]

SERIALIZATION_VERSION = 1


@dataclass
class AffineEraser:
    """Label-free eraser ``x -> P x + b``.

    For projection-type methods (alf-qleace, randproj) the matrix is a
    symmetric idempotent projector; the LEACE matrix is oblique in general.
    """

    matrix: np.ndarray
    bias: np.ndarray
    method: str
    rank: int
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return X @ self.matrix.T + self.bias


@dataclass
class BarycenterSolution:
    """Barycenter mean/covariance with fixed-point residual diagnostics."""

    mean: np.ndarray
    cov: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass
class ClassEraser:
    """Per-class transport maps ``x -> A_i (x - m_i) + m_bar``."""

    maps: np.ndarray  # (k, d, d)
    class_means: np.ndarray  # (k, d)
    target_mean: np.ndarray  # (d,)
    barycenter: BarycenterSolution
    method: str = "qleace"
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.maps.shape[0]

    @property
    def d(self) -> int:
        return self.maps.shape[1]

    def transform(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        if z.shape[0] != X.shape[0]:
            raise ShapeMismatch("labels must align with rows")
        if z.size and (z.min() < 0 or z.max() >= self.k):
            raise InvalidInput(f"labels must lie in 0..{self.k - 1}")
        out = np.empty_like(X, dtype=np.float64)
        for c in range(self.k):
            mask = z == c
            if not mask.any():
                continue
            out[mask] = (X[mask] - self.class_means[c]) @ self.maps[c].T + self.target_mean
        return out


def fit_leace(m: ClassMoments, floor: float | None = None) -> AffineEraser:
    """Least-squares-optimal affine eraser of linearly available class info.

    Whitens with the (pseudo) inverse square root of the global covariance,
    projects out the whitened cross-covariance column space, and unwhitens:
    ``P = I - W^+ (M M^+) W`` with ``M = W Sigma_XZ``, ``b = (I - P) m``.
    The output's class-conditional means coincide and its cross-covariance
    with the labels vanishes.
    """
    d = m.d
    dec = sym_eig(m.global_cov)
    if floor is None:
        floor = default_floor(m.global_cov)
    vals, vecs = dec.eigenvalues, dec.eigenvectors
    keep = vals > floor
    inv_root = np.where(keep, np.where(keep, vals, 1.0) ** -0.5, 0.0)
    root = np.where(keep, np.maximum(vals, 0.0), 0.0) ** 0.5
    W = (vecs * inv_root) @ vecs.T
    W_plus = (vecs * root) @ vecs.T
    M = W @ m.cross_cov
    # Column-space cutoff with an absolute floor tied to the data scale, so
    # round-off noise in a zero cross-covariance never becomes an erased
    # direction (already-equal means must yield P = I).
    mean_scale = max(1.0, float(np.abs(m.means).max()))
    atol = 1e-9 * float(inv_root.max(initial=0.0)) * mean_scale
    u, svals, _ = np.linalg.svd(M, full_matrices=False)
    cutoff = max(atol, 1e-12 * (svals[0] if svals.size else 0.0))
    keep_cols = svals > cutoff
    basis = u[:, keep_cols]
    col_proj = basis @ basis.T
    P = np.eye(d) - W_plus @ col_proj @ W
    b = (np.eye(d) - P) @ m.global_mean
    erased = int(keep_cols.sum())
    return AffineEraser(
        matrix=P,
        bias=b,
        method="leace",
        rank=d - erased,
        meta={"floor": float(floor), "erased_directions": erased, "shrinkage": m.shrinkage},
    )


def barycenter_covariance(
    covs: np.ndarray,
    weights: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500,
) -> tuple[np.ndarray, float, int, bool]:
    """Fixed-point solve of ``S = sum_i w_i (S^{1/2} C_i S^{1/2})^{1/2}``.

    Starts from the arithmetic mean and iterates
    ``S <- S^{-1/2} (sum_i w_i (S^{1/2} C_i S^{1/2})^{1/2})^2 S^{-1/2}``.
    Returns (S, relative residual, iterations, converged).
    """
    covs = np.asarray(covs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if covs.ndim != 3 or covs.shape[1] != covs.shape[2]:
        raise InvalidInput("expected a (k, d, d) covariance stack")
    if weights.shape != (covs.shape[0],):
        raise ShapeMismatch("one weight per covariance required")

    def roots_and_residual(S: np.ndarray):
        dec = sym_eig(S)
        if dec.eigenvalues[-1] <= 0:
            raise NotPSD("barycenter iterate lost positive definiteness")
        vecs = dec.eigenvectors
        root = (vecs * np.sqrt(dec.eigenvalues)) @ vecs.T
        inv_root = (vecs * dec.eigenvalues**-0.5) @ vecs.T
        inner = np.zeros_like(S)
        for c in range(covs.shape[0]):
            inner += weights[c] * spd_power(symmetrize(root @ covs[c] @ root), 0.5)
        res = float(np.linalg.norm(S - inner) / np.linalg.norm(S))
        return inner, inv_root, res

    S = symmetrize(np.einsum("c,cij->ij", weights, covs))
    iterations = 0
    converged = False
    residual = np.inf
    for t in range(1, max_iter + 1):
        inner, inv_root, residual = roots_and_residual(S)
        iterations = t
        if residual <= tol:
            converged = True
            break
        S = symmetrize(inv_root @ inner @ inner @ inv_root)
    if not converged:
        _, _, residual = roots_and_residual(S)
        converged = residual <= tol
    return S, residual, iterations, converged


def gaussian_barycenter(
    m: ClassMoments, tol: float = 1e-9, max_iter: int = 500
) -> BarycenterSolution:
    """Prior-weighted Gaussian barycenter of the fitted class moments."""
    mean = m.priors @ m.means
    cov, residual, iterations, converged = barycenter_covariance(
        m.covs, m.priors, tol=tol, max_iter=max_iter
    )
    return BarycenterSolution(mean, cov, residual, iterations, converged)


def ot_gaussian_map(
    mean_src: np.ndarray,
    cov_src: np.ndarray,
    mean_dst: np.ndarray,
    cov_dst: np.ndarray,
    floor: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal linear transport between Gaussians.

    Returns (A, shift) with ``A = C_s^{-1/2} (C_s^{1/2} C_t C_s^{1/2})^{1/2}
    C_s^{-1/2}`` and ``shift = m_t - A m_s``, so the full map is
    ``x -> A x + shift`` and ``A C_s A^T = C_t``.
    """
    root = spd_power(cov_src, 0.5, floor)
    inv_root = spd_power(cov_src, -0.5, floor)
    mid = spd_power(symmetrize(root @ cov_dst @ root), 0.5)
    A = symmetrize(inv_root @ mid @ inv_root)
    shift = np.asarray(mean_dst, dtype=np.float64) - A @ np.asarray(mean_src, dtype=np.float64)
    return A, shift


def w2_gaussian_sq(
    mean1: np.ndarray, cov1: np.ndarray, mean2: np.ndarray, cov2: np.ndarray
) -> float:
    """Squared 2-Wasserstein distance between two Gaussians (Bures form)."""
    mean1 = np.asarray(mean1, dtype=np.float64)
    mean2 = np.asarray(mean2, dtype=np.float64)
    root = spd_power(cov1, 0.5)
    cross = spd_power(symmetrize(root @ cov2 @ root), 0.5)
    val = float(
        np.sum((mean1 - mean2) ** 2)
        + np.trace(cov1)
        + np.trace(cov2)
        - 2.0 * np.trace(cross)
    )
    return max(val, 0.0)


def fit_qleace(m: ClassMoments, tol: float = 1e-9, max_iter: int = 500) -> ClassEraser:
    """Per-class transport maps onto the shared barycenter moments.

    Every class's pushforward mean becomes the barycenter mean and its
    covariance the barycenter covariance, which suffices to defeat all
    degree-2 polynomial predictors.  Nonconvergence of the barycenter
    solve is reported via the flag, not an exception.
    """
    bary = gaussian_barycenter(m, tol=tol, max_iter=max_iter)
    maps = np.empty((m.k, m.d, m.d))
    for c in range(m.k):
        maps[c], _ = ot_gaussian_map(m.means[c], m.covs[c], bary.mean, bary.cov)
    return ClassEraser(
        maps=maps,
        class_means=m.means.copy(),
        target_mean=bary.mean,
        barycenter=bary,
        meta={
            "tol": float(tol),
            "iterations": bary.iterations,
            "residual": bary.residual,
            "converged": bary.converged,
            "shrinkage": m.shrinkage,
        },
    )


def fit_alf_qleace(
    m: ClassMoments,
    rank_budget: int | None = None,
    tol: float = 1e-8,
    weighted: bool = True,
) -> AffineEraser:
    """Greedy rank-1 deflation of the worst class-vs-average covariance gap.

    Expects moments of data whose linear class information has already been
    removed.  Each step projects the current covariances, finds the class
    whose projected covariance is farthest (in operator norm) from the
    projected average, and removes that difference's top singular direction.
    Stops once the largest gap is at most ``tol`` or ``rank_budget``
    directions have been removed.
    """
    d = m.d
    if rank_budget is None:
        rank_budget = d
    if not 0 <= rank_budget <= d:
        raise InvalidInput(f"rank_budget must lie in 0..{d}, got {rank_budget}")
    P = np.eye(d)
    gap_sequence: list[float] = []
    deflated: list[np.ndarray] = []
    while True:
        projected = np.stack([symmetrize(P @ m.covs[c] @ P) for c in range(m.k)])
        if weighted:
            avg = symmetrize(np.einsum("c,cij->ij", m.priors, projected))
        else:
            avg = symmetrize(projected.mean(axis=0))
        diffs = projected - avg
        gaps = np.array([spectral_norm(diffs[c]) for c in range(m.k)])
        gap_sequence.append(float(gaps.max()))
        if gaps.max() <= tol or len(deflated) >= rank_budget:
            break
        worst = int(np.argmax(gaps))
        _, v = top_singular_pair(diffs[worst])
        u = P @ v
        norm = np.linalg.norm(u)
        if norm < 1e-12:
            break
        u /= norm
        P = symmetrize(P - np.outer(u, u))
        deflated.append(u)
    return AffineEraser(
        matrix=P,
        bias=np.zeros(d),
        method="alf-qleace",
        rank=d - len(deflated),
        meta={
            "tol": float(tol),
            "deflations": len(deflated),
            "final_gap": gap_sequence[-1],
            "reached_tol": gap_sequence[-1] <= tol,
            "gap_sequence": gap_sequence,
            "deflated_vectors": np.array(deflated) if deflated else np.zeros((0, d)),
            "weighted_avg": weighted,
            "shrinkage": m.shrinkage,
        },
    )


def fit_random_projection(d: int, rank: int, seed: int) -> AffineEraser:
    """Projection onto a uniformly random rank-dimensional subspace."""
    if not 0 <= rank <= d:
        raise InvalidInput(f"rank must lie in 0..{d}, got {rank}")
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((d, rank))
    q, _ = np.linalg.qr(basis)
    P = symmetrize(q @ q.T)
    return AffineEraser(
        matrix=P,
        bias=np.zeros(d),
        method="randproj",
        rank=rank,
        meta={"seed": int(seed)},
    )


@dataclass
class GradOptConfig:
    """Budget and tolerances for the gradient-based dataset editor."""

    max_iter: int = 500
    history: int = 10
    grad_tol: float = 1e-8
    logit_eps: float = 1e-6


@dataclass
class GradientEraseResult:
    dataset: LabeledDataset
    trajectory: np.ndarray
    term_values: dict
    weights: tuple[float, float, float]
    converged: bool
    iterations: int


def make_erase_objective(ds: LabeledDataset, alpha: float, beta: float, gamma: float):
    """Loss/gradient closure over sigmoid logits for gradient-based erasure.

    The loss is ``alpha * sum_c l_c ||m_c - m||^2 + beta * sum_c l_c
    ||S_c - S||_F^2 + gamma * ||X' - X||_F^2 / n`` with the edited points
    parameterized as ``x' = lo + (hi - lo) * sigmoid(u)``.

    Returns ``(objective, to_points, u0)`` where ``objective(u_flat)`` gives
    ``(loss, grad_flat, (t1, t2, t3))``, ``to_points`` maps logits to data
    space, and ``u0`` are the logits reproducing the original data.
    """
    if ds.bounds is None:
        raise InvalidInput("gradient erasure requires per-feature bounds")
    lo, hi = ds.bounds
    width = hi - lo
    X0, z, k, n, d = ds.X, ds.z, ds.k, ds.n, ds.d
    counts = ds.class_counts().astype(np.float64)
    lam = counts / n
    masks = [z == c for c in range(k)]

    def to_points(u_flat: np.ndarray) -> np.ndarray:
        s = expit(u_flat.reshape(n, d))
        return lo + width * s

    def objective(u_flat: np.ndarray):
        s = expit(u_flat.reshape(n, d))
        X = lo + width * s
        sums = np.zeros((k, d))
        np.add.at(sums, z, X)
        means = sums / counts[:, None]
        gmean = X.mean(axis=0)
        dev = X - means[z]
        gdev = X - gmean
        gcov = gdev.T @ gdev / n
        covs = np.empty((k, d, d))
        for c in range(k):
            rows = dev[masks[c]]
            covs[c] = rows.T @ rows / counts[c]
        diffs = covs - gcov
        dbar = np.einsum("c,cij->ij", lam, diffs)

        t1 = float(lam @ np.sum((means - gmean) ** 2, axis=1))
        t2 = float(lam @ np.sum(diffs**2, axis=(1, 2)))
        t3 = float(np.sum((X - X0) ** 2) / n)
        loss = alpha * t1 + beta * t2 + gamma * t3

        grad = alpha * (2.0 / n) * (means[z] - gmean)
        cov_part = np.empty((n, d))
        for c in range(k):
            cov_part[masks[c]] = dev[masks[c]] @ diffs[c]
        grad += beta * (4.0 / n) * (cov_part - gdev @ dbar)
        grad += gamma * (2.0 / n) * (X - X0)
        grad_u = grad * (width * s * (1.0 - s))
        return loss, grad_u.ravel(), (t1, t2, t3)

    eps = GradOptConfig().logit_eps
    frac = np.where(width > 0, (X0 - lo) / np.where(width > 0, width, 1.0), 0.5)
    u0 = np.log(np.clip(frac, eps, 1 - eps) / (1 - np.clip(frac, eps, 1 - eps)))
    return objective, to_points, u0.ravel()


def gradient_erase(
    ds: LabeledDataset,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float | None = None,
    cfg: GradOptConfig | None = None,
) -> GradientEraseResult:
    """Directly edit the dataset to equalize class means and covariances.

    Minimizes the three-term objective with a limited-memory quasi-Newton
    method under the sigmoid reparameterization, so every edited value stays
    within the declared bounds.  When ``gamma`` is None it is set so that an
    edit of typical data scale would contribute about 1% of the initial
    moment loss.
    """
    if alpha < 0 or beta < 0 or (gamma is not None and gamma < 0):
        raise InvalidInput("loss weights must be nonnegative")
    cfg = cfg or GradOptConfig()
    if gamma is None:
        probe_obj, _, probe_u0 = make_erase_objective(ds, alpha, beta, 0.0)
        loss0, _, _ = probe_obj(probe_u0)
        gdev = ds.X - ds.X.mean(axis=0)
        data_scale = float(np.sum(gdev**2) / ds.n)
        gamma = 0.01 * loss0 / max(data_scale, 1e-12)
    objective, to_points, u0 = make_erase_objective(ds, alpha, beta, gamma)

    trajectory = [objective(u0)[0]]

    def fun(u):
        loss, grad, _ = objective(u)
        return loss, grad

    def record(u):
        trajectory.append(objective(u)[0])

    res = minimize(
        fun,
        u0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxiter": cfg.max_iter,
            "maxcor": cfg.history,
            "ftol": 1e-15,
            "gtol": cfg.grad_tol,
        },
    )
    X_final = to_points(res.x)
    loss, _, terms = objective(res.x)
    edited = LabeledDataset(
        X=X_final,
        z=ds.z.copy(),
        k=ds.k,
        bounds=ds.bounds,
        feature_names=ds.feature_names,
    )
    return GradientEraseResult(
        dataset=edited,
        trajectory=np.asarray(trajectory),
        term_values={
            "mean_term": terms[0],
            "cov_term": terms[1],
            "anchor_term": terms[2],
            "total": loss,
        },
        weights=(float(alpha), float(beta), float(gamma)),
        converged=bool(res.success),
        iterations=int(res.nit),
    )


def apply_eraser(
    eraser: AffineEraser | ClassEraser,
    ds: LabeledDataset,
    clip_to_bounds: bool = False,
) -> LabeledDataset:
    """Apply a fitted eraser to every row; labels pass through unchanged.

    AffineErasers never read labels.  Bounds metadata is dropped because
    erased values may leave the admissible box, unless ``clip_to_bounds``
    re-clips them (which voids the moment guarantees).
    """
    if eraser.d != ds.d:
        raise ShapeMismatch(f"eraser dimension {eraser.d} != dataset dimension {ds.d}")
    if isinstance(eraser, ClassEraser):
        if ds.k > eraser.k:
            raise ShapeMismatch(f"dataset has {ds.k} classes, eraser only {eraser.k}")
        X2 = eraser.transform(ds.X, ds.z)
    else:
        X2 = eraser.transform(ds.X)
    bounds = None
    if clip_to_bounds and ds.bounds is not None:
        X2 = np.clip(X2, ds.bounds[0], ds.bounds[1])
        bounds = ds.bounds
    return LabeledDataset(
        X=X2, z=ds.z.copy(), k=ds.k, bounds=bounds, feature_names=ds.feature_names
    )


def transform_moments(m: ClassMoments, eraser: AffineEraser) -> ClassMoments:
    """Exact pushforward of fitted moments under an affine eraser.

    The shrinkage ridge is not tracked through the transform; the returned
    covariances are treated as raw.
    """
    P, b = eraser.matrix, eraser.bias
    if P.shape[0] != m.d:
        raise ShapeMismatch("eraser dimension does not match moments")
    covs = np.stack([symmetrize(P @ m.covs[c] @ P.T) for c in range(m.k)])
    return ClassMoments(
        k=m.k,
        d=m.d,
        counts=m.counts.copy(),
        priors=m.priors.copy(),
        means=m.means @ P.T + b,
        covs=covs,
        global_mean=P @ m.global_mean + b,
        global_cov=symmetrize(P @ m.global_cov @ P.T),
        cross_cov=P @ m.cross_cov,
        shrinkage=m.shrinkage,
        ridge=np.zeros(m.k),
    )


def compose_affine(
    outer: AffineEraser, inner: AffineEraser, method: str | None = None
) -> AffineEraser:
    """Compose two affine erasers into one applying ``inner`` first."""
    if outer.d != inner.d:
        raise ShapeMismatch("cannot compose erasers of different dimension")
    matrix = outer.matrix @ inner.matrix
    bias = outer.matrix @ inner.bias + outer.bias
    return AffineEraser(
        matrix=matrix,
        bias=bias,
        method=method or f"{outer.method}*{inner.method}",
        rank=int(np.linalg.matrix_rank(matrix)),
        meta={"outer": dict(_scalar_meta(outer.meta)), "inner": dict(_scalar_meta(inner.meta)),
              "outer_method": outer.method, "inner_method": inner.method},
    )


def _scalar_meta(meta: dict) -> dict:
    return {
        key: value
        for key, value in meta.items()
        if isinstance(value, (bool, int, float, str, type(None), dict))
        and not isinstance(value, np.ndarray)
    }


def serialize_eraser(eraser: AffineEraser | ClassEraser) -> bytes:
    """Serialize to versioned JSON with shortest round-trip decimal floats."""
    if isinstance(eraser, ClassEraser):
        obj = {
            "version": SERIALIZATION_VERSION,
            "method": eraser.method,
            "d": eraser.d,
            "k": eraser.k,
            "matrices": {
                "maps": eraser.maps.tolist(),
                "class_means": eraser.class_means.tolist(),
                "target_mean": eraser.target_mean.tolist(),
                "barycenter_cov": eraser.barycenter.cov.tolist(),
            },
            "bias": eraser.target_mean.tolist(),
            "rank": eraser.d,
            "fit_metadata": _scalar_meta(eraser.meta),
        }
    else:
        obj = {
            "version": SERIALIZATION_VERSION,
            "method": eraser.method,
            "d": eraser.d,
            "matrices": {"map": eraser.matrix.tolist()},
            "bias": eraser.bias.tolist(),
            "rank": eraser.rank,
            "fit_metadata": _scalar_meta(eraser.meta),
        }
    return (json.dumps(obj, indent=2) + "\n").encode("utf-8")


def deserialize_eraser(data: bytes) -> AffineEraser | ClassEraser:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"not a valid eraser file: {exc}") from None
    if not isinstance(obj, dict) or "version" not in obj:
        raise MalformedFile("eraser file missing version field")
    if obj["version"] != SERIALIZATION_VERSION:
        raise UnknownVersion(f"unsupported eraser version {obj['version']!r}")
    try:
        method = obj["method"]
        matrices = obj["matrices"]
        meta = dict(obj.get("fit_metadata", {}))
        if method == "qleace":
            bary = BarycenterSolution(
                mean=np.asarray(matrices["target_mean"], dtype=np.float64),
                cov=np.asarray(matrices["barycenter_cov"], dtype=np.float64),
                residual=float(meta.get("residual", float("nan"))),
                iterations=int(meta.get("iterations", 0)),
                converged=bool(meta.get("converged", True)),
            )
            return ClassEraser(
                maps=np.asarray(matrices["maps"], dtype=np.float64),
                class_means=np.asarray(matrices["class_means"], dtype=np.float64),
                target_mean=np.asarray(matrices["target_mean"], dtype=np.float64),
                barycenter=bary,
                method=method,
                meta=meta,
            )
        return AffineEraser(
            matrix=np.asarray(matrices["map"], dtype=np.float64),
            bias=np.asarray(obj["bias"], dtype=np.float64),
            method=method,
            rank=int(obj["rank"]),
            meta=meta,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"eraser file missing or malformed field: {exc}") from None
