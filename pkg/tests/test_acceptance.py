"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (run with ``pytest
tests/test_acceptance.py -v -s`` to see them inline).  Tolerances are fixed
here, not tuned at runtime.
"""

import hashlib
import itertools
import json
from contextlib import contextmanager

import numpy as np
import pytest

from mscrub.cli import main as cli_main
from mscrub.datagen import BoxClassSpec, GaussianSpec, gen_boxes, gen_gaussian
from mscrub.erasers import (
    apply_eraser,
    barycenter_covariance,
    deserialize_eraser,
    fit_alf_qleace,
    fit_leace,
    fit_qleace,
    gradient_erase,
    make_erase_objective,
    serialize_eraser,
    w2_gaussian_sq,
)
from mscrub.linalg import sym_eig
from mscrub.mdl import make_schedule, prequential_mdl
from mscrub.moments import ClassMoments, LabeledDataset, fit_moments, moment_gap_report
from mscrub.probes import guardedness_report


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"FAIL criterion {number}: {description}")
        raise
    print(f"PASS criterion {number}: {description}")


@pytest.fixture(scope="module")
def gaussian_3class():
    """3 classes, d=8, separated means and covariance scales 1/2/3."""
    d, k = 8, 3
    means = np.zeros((k, d))
    means[1, 0] = 1.5
    means[2, 1] = 1.5
    covs = np.array([s * np.eye(d) for s in (1.0, 2.0, 3.0)])
    spec = GaussianSpec(k=k, d=d, means=means, covs=covs,
                        priors=np.full(k, 1 / 3), seed=42, n=50_000)
    return gen_gaussian(spec)


@pytest.fixture(scope="module")
def qleace_applied(gaussian_3class):
    m = fit_moments(gaussian_3class)
    eraser = fit_qleace(m)
    return m, eraser, apply_eraser(eraser, gaussian_3class)


@pytest.fixture(scope="module")
def rotated_box():
    """2-D classes: unit square vs the square rotated 30 deg, scaled diag(2,1)."""
    theta = np.deg2rad(30.0)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    spec = BoxClassSpec(
        k=2, d=2,
        linears=np.stack([np.eye(2), np.diag([2.0, 1.0]) @ rot]),
        offsets=np.zeros((2, 2)), seed=5, n=1_000_000,
    )
    return gen_boxes(spec)


def test_criterion_1_barycenter_correctness():
    with criterion(1, "barycenter fixed point: residual <= 1e-9 on 50 ensembles, "
                      "scalar case returns 4.0"):
        covs = np.array([[[1.0]], [[9.0]]])
        S, res, _, conv = barycenter_covariance(covs, np.array([0.5, 0.5]), tol=1e-9)
        assert conv
        assert abs(S[0, 0] - 4.0) <= 1e-9

        rng = np.random.default_rng(123)
        for trial in range(50):
            d = int(rng.integers(2, 33))
            k = int(rng.integers(2, 9))
            stack = np.empty((k, d, d))
            for c in range(k):
                a = rng.standard_normal((d, d + 2))
                stack[c] = a @ a.T / (d + 2) + 0.1 * np.eye(d)
            w = rng.random(k)
            w /= w.sum()
            _, res, _, conv = barycenter_covariance(stack, w, tol=1e-9, max_iter=500)
            assert conv, f"ensemble {trial} residual {res:.3e}"
            assert res <= 1e-9


def test_criterion_2_qleace_moment_surgery(gaussian_3class, qleace_applied):
    with criterion(2, "QLEACE equalizes first/second moments and pays exactly the "
                      "summed Gaussian transport cost"):
        m, eraser, erased = qleace_applied
        report = moment_gap_report(fit_moments(erased, shrinkage=0.0))
        assert report.max_mean_gap <= 1e-3
        assert report.max_cov_gap_spectral <= 1e-3

        ds = gaussian_3class
        cost = 0.0
        for c in range(ds.k):
            mask = ds.z == c
            cost += mask.mean() * np.mean(np.sum((erased.X[mask] - ds.X[mask]) ** 2, axis=1))
        expected = sum(
            m.priors[c]
            * w2_gaussian_sq(m.means[c], m.covs[c], eraser.target_mean, eraser.barycenter.cov)
            for c in range(ds.k)
        )
        assert abs(cost - expected) / expected <= 0.02


def test_criterion_3_guardedness(gaussian_3class, qleace_applied):
    with criterion(3, "probes: guarded at degrees 1-2 after QLEACE, degree-2 "
                      "advantage >= 0.3 before and >= 0.1 after LEACE only"):
        _, _, erased = qleace_applied
        trivial = np.log(3.0)

        rep_raw = guardedness_report(gaussian_3class, [2], split_seed=0)
        assert rep_raw.margins[2] >= 0.3

        rep_q = guardedness_report(erased, [1, 2], split_seed=0)
        for deg in (1, 2):
            assert abs(trivial - rep_q.losses[deg]) <= 0.02
            assert rep_q.guarded[deg]

        leace = fit_leace(fit_moments(gaussian_3class))
        rep_l = guardedness_report(apply_eraser(leace, gaussian_3class), [1, 2], split_seed=0)
        assert rep_l.margins[1] <= 0.02
        assert rep_l.margins[2] >= 0.1
        assert rep_l.guarded[1] and not rep_l.guarded[2]


def test_criterion_4_alf_qleace():
    with criterion(4, "ALF-QLEACE: exact analytic deflation, monotone gap, "
                      "no variance increase in any direction"):
        analytic = ClassMoments(
            k=2, d=2, counts=np.array([2, 2]), priors=np.array([0.5, 0.5]),
            means=np.zeros((2, 2)),
            covs=np.array([np.diag([2.0, 1.0]), np.diag([1.0, 1.0])]),
            global_mean=np.zeros(2), global_cov=np.diag([1.5, 1.0]),
            cross_cov=np.zeros((2, 2)), shrinkage=0.0,
        )
        e = fit_alf_qleace(analytic, tol=1e-12)
        assert e.meta["deflations"] == 1
        assert np.array_equal(e.matrix, np.diag([0.0, 1.0]))
        assert e.meta["final_gap"] == 0.0

        rng = np.random.default_rng(77)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            d = int(rng.integers(3, 12))
            covs = np.empty((k, d, d))
            for c in range(k):
                a = rng.standard_normal((d, d + 1))
                covs[c] = a @ a.T / (d + 1) + 0.05 * np.eye(d)
            priors = np.full(k, 1.0 / k)
            m = ClassMoments(
                k=k, d=d, counts=np.full(k, 10), priors=priors,
                means=np.zeros((k, d)), covs=covs, global_mean=np.zeros(d),
                global_cov=np.einsum("c,cij->ij", priors, covs),
                cross_cov=np.zeros((d, k)), shrinkage=0.0,
            )
            e = fit_alf_qleace(m, rank_budget=d, tol=1e-10)
            gaps = e.meta["gap_sequence"]
            assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
            assert gaps[-1] <= 1e-10
            assert e.meta["deflations"] <= d
            P = np.eye(d)
            for u in e.meta["deflated_vectors"]:
                P_next = P - np.outer(u, u)
                for c in range(k):
                    before = sym_eig(P @ covs[c] @ P).eigenvalues[0]
                    after = sym_eig(P_next @ covs[c] @ P_next).eigenvalues[0]
                    assert after <= before + 1e-10
                P = P_next


def test_criterion_5_gradient_erasure():
    with criterion(5, "gradient erasure: analytic gradient matches finite "
                      "differences, moment terms drop >= 100x, output in bounds"):
        rng = np.random.default_rng(7)
        n, d = 32, 4
        X = rng.random((n, d))
        z = rng.integers(0, 2, n)
        z[:2] = [0, 1]
        small = LabeledDataset.from_arrays(X, z, bounds=(np.zeros(d), np.ones(d)))
        objective, _, _ = make_erase_objective(small, 1.0, 1.0, 0.01)
        u = rng.standard_normal(n * d)
        _, grad, _ = objective(u)
        eps = 1e-6
        numeric = np.empty_like(grad)
        for i in range(u.size):
            up, dn = u.copy(), u.copy()
            up[i] += eps
            dn[i] -= eps
            numeric[i] = (objective(up)[0] - objective(dn)[0]) / (2 * eps)
        rel = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-12)
        assert rel.max() <= 1e-5

        from scipy.special import expit

        raw = np.vstack([
            rng.multivariate_normal(np.zeros(d), np.eye(d), 256),
            rng.multivariate_normal(0.8 * np.ones(d), np.diag([2.0, 1.0, 0.5, 1.0]), 256),
        ])
        ds = LabeledDataset.from_arrays(
            expit(raw), np.array([0] * 256 + [1] * 256),
            bounds=(np.zeros(d), np.ones(d)),
        )
        obj0, _, u0 = make_erase_objective(ds, 1.0, 1.0, 0.0)
        _, _, terms0 = obj0(u0)
        result = gradient_erase(ds, alpha=1.0, beta=1.0, gamma=0.01)
        initial = terms0[0] + terms0[1]
        final = result.term_values["mean_term"] + result.term_values["cov_term"]
        assert initial / final >= 100.0
        lo, hi = result.dataset.bounds
        assert np.all(result.dataset.X >= lo) and np.all(result.dataset.X <= hi)


def test_criterion_6_backfiring(rotated_box):
    with criterion(6, "backfiring: QLEACE'd boxes guarded at degrees 1-2 but "
                      "fourth moments differ and a degree-4 probe wins >= 0.05"):
        ds = rotated_box
        eraser = fit_qleace(fit_moments(ds))
        erased = apply_eraser(eraser, ds)

        rep_low = guardedness_report(erased.subset(np.arange(200_000)), [1, 2], split_seed=0)
        assert rep_low.guarded[1] and rep_low.guarded[2]
        assert rep_low.margins[1] <= 0.02 and rep_low.margins[2] <= 0.02

        def fourth_moments(rows):
            centered = rows - rows.mean(axis=0)
            out = {}
            for idx in itertools.combinations_with_replacement(range(2), 4):
                prod = np.prod(centered[:, idx], axis=1)
                out[idx] = (prod.mean(), prod.std(ddof=1) / np.sqrt(prod.shape[0]))
            return out

        mom_a = fourth_moments(erased.X[erased.z == 0])
        mom_b = fourth_moments(erased.X[erased.z == 1])
        z_scores = []
        for idx in mom_a:
            se = np.hypot(mom_a[idx][1], mom_b[idx][1])
            z_scores.append(abs(mom_a[idx][0] - mom_b[idx][0]) / se)
        assert max(z_scores) > 5.0

        rep_hi = guardedness_report(
            erased.subset(np.arange(400_000)), [4], split_seed=0, l2=1e-5
        )
        assert rep_hi.margins[4] >= 0.05


def test_criterion_7_mdl_leace_slows_learning():
    with criterion(7, "prequential MDL: linear erasure raises codelength with "
                      "non-overlapping one-std intervals over 5 seeds"):
        d, k = 4, 3
        means = np.zeros((k, d))
        means[1, 0] = 2.0
        means[2, 1] = 2.0
        spec = GaussianSpec(k=k, d=d, means=means, covs=np.stack([np.eye(d)] * k),
                            priors=np.full(k, 1 / 3), seed=21, n=6000)
        ds = gen_gaussian(spec)
        erased = apply_eraser(fit_leace(fit_moments(ds)), ds)
        n_stream = ds.n - round(0.2 * ds.n)
        schedule = make_schedule(n_stream, first=64, ratio=2.0)
        seeds = [0, 1, 2, 3, 4]
        control = np.array(
            [prequential_mdl(ds, 2, schedule, seed=s).codelength_nats for s in seeds]
        )
        leace = np.array(
            [prequential_mdl(erased, 2, schedule, seed=s).codelength_nats for s in seeds]
        )
        assert leace.mean() > control.mean()
        assert leace.mean() - leace.std(ddof=1) > control.mean() + control.std(ddof=1)


def test_criterion_8_determinism(tmp_path):
    with criterion(8, "every CLI command is byte-deterministic and eraser "
                      "serialization round-trips exactly"):
        spec = {
            "kind": "gaussian", "k": 2, "d": 3,
            "means": [[0.0, 0.0, 0.0], [1.5, 0.5, 0.0]],
            "covs": [np.eye(3).tolist(), (2.0 * np.eye(3)).tolist()],
            "priors": [0.5, 0.5], "seed": 3, "n": 1500,
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        box_spec = {
            "kind": "boxes", "k": 2, "d": 2,
            "linears": [np.eye(2).tolist(), [[2.0, 0.0], [0.0, 1.0]]],
            "offsets": [[0.0, 0.0], [0.0, 0.0]], "seed": 4, "n": 400,
        }
        box_path = tmp_path / "boxes.json"
        box_path.write_text(json.dumps(box_spec))

        def run_all():
            assert cli_main(["synth", str(spec_path), "-o", str(tmp_path / "g.f32")]) == 0
            assert cli_main(["synth", str(box_path), "-o", str(tmp_path / "b.f32")]) == 0
            assert cli_main(["stats", str(tmp_path / "g.f32"), "-o", str(tmp_path / "s")]) == 0
            for method, extra in [
                ("leace", []),
                ("qleace", []),
                ("alf-qleace", ["--rank-budget", "2"]),
                ("randproj", ["--rank", "2", "--seed", "5"]),
            ]:
                assert cli_main(
                    ["fit", str(tmp_path / "g.f32"), "--method", method,
                     "-o", str(tmp_path / f"{method}.json")] + extra
                ) == 0
            assert cli_main(
                ["fit", str(tmp_path / "b.f32"), "--method", "grad", "--gamma", "0.01",
                 "-o", str(tmp_path / "grad.f32")]
            ) == 0
            assert cli_main(
                ["apply", str(tmp_path / "qleace.json"), str(tmp_path / "g.f32"),
                 "-o", str(tmp_path / "erased.f32")]
            ) == 0
            assert cli_main(
                ["verify", str(tmp_path / "erased.f32"), "--degrees", "1,2",
                 "-o", str(tmp_path / "v")]
            ) == 0
            assert cli_main(
                ["mdl", str(tmp_path / "g.f32"), "--degree", "1", "--seeds", "0,1",
                 "--first", "128", "-o", str(tmp_path / "m")]
            ) == 0
            assert cli_main(
                ["normalize", str(tmp_path / "g.f32"), "-o", str(tmp_path / "n.f32")]
            ) == 0
            tracked = sorted(
                p for p in tmp_path.iterdir()
                if p.suffix in {".json", ".f32", ".csv", ".png", ".txt", ".labels"}
            )
            return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in tracked}

        first = run_all()
        second = run_all()
        assert first == second
        assert len(first) > 25

        for name in ("leace.json", "qleace.json", "alf-qleace.json", "randproj.json"):
            raw = (tmp_path / name).read_bytes()
            assert serialize_eraser(deserialize_eraser(raw)) == raw
