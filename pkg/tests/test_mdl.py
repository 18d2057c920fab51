import numpy as np
import pytest

from mscrub.datagen import GaussianSpec, gen_gaussian
from mscrub.errors import InvalidInput, ShapeMismatch
from mscrub.mdl import (
    PrefixSchedule,
    curve_to_csv,
    make_schedule,
    mdl_delta_report,
    prequential_mdl,
)
from mscrub.moments import LabeledDataset
from mscrub.probes import trivial_loss


def labels_independent_dataset(seed=0, n=4000, d=3, k=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    z = rng.integers(0, k, n)
    z[:k] = np.arange(k)
    return LabeledDataset.from_arrays(X, z)


def separable_dataset(seed=1, n=4000):
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.concatenate([rng.normal(-2, 0.2, half), rng.normal(2, 0.2, n - half)])[:, None]
    z = np.array([0] * half + [1] * (n - half))
    perm = rng.permutation(n)
    return LabeledDataset.from_arrays(X[perm], z[perm])


class TestSchedule:
    def test_geometric_example(self):
        assert make_schedule(1000, first=100, ratio=2.0).sizes == (100, 200, 400, 800, 1000)

    def test_first_equals_n_single_block(self):
        assert make_schedule(500, first=500, ratio=2.0).sizes == (500,)

    def test_huge_ratio_two_blocks(self):
        assert make_schedule(1000, first=100, ratio=1000.0).sizes == (100, 1000)

    def test_invalid_args(self):
        with pytest.raises(InvalidInput):
            make_schedule(100, first=0)
        with pytest.raises(InvalidInput):
            make_schedule(100, ratio=1.0)
        with pytest.raises(InvalidInput):
            PrefixSchedule(())
        with pytest.raises(InvalidInput):
            PrefixSchedule((10, 10))


class TestPrequential:
    def test_trivial_only_coder_identity(self):
        # a single-block schedule codes the whole stream under the empirical
        # prior, so the codelength must equal n_coded * prior entropy exactly
        ds = labels_independent_dataset(seed=3)
        n_stream = ds.n - round(0.2 * ds.n)
        schedule = PrefixSchedule((n_stream,))
        curve = prequential_mdl(ds, degree=1, schedule=schedule, seed=0)
        assert curve.codelength_nats == pytest.approx(curve.trivial_nats, abs=1e-9)

    def test_independent_labels_stay_near_trivial(self):
        ds = labels_independent_dataset(seed=4)
        n_stream = ds.n - round(0.2 * ds.n)
        schedule = make_schedule(n_stream, first=200, ratio=2.0)
        curve = prequential_mdl(ds, degree=1, schedule=schedule, seed=0)
        per_sample = curve.codelength_nats / curve.n_coded
        prior_rate = curve.trivial_nats / curve.n_coded
        assert abs(per_sample - prior_rate) <= 0.05
        for loss in curve.val_losses:
            assert abs(loss - trivial_loss(ds.priors())) <= 0.05

    def test_separable_data_codes_cheaply(self):
        ds = separable_dataset()
        n_stream = ds.n - round(0.2 * ds.n)
        schedule = make_schedule(n_stream, first=64, ratio=2.0)
        curve = prequential_mdl(ds, degree=1, schedule=schedule, seed=0)
        assert curve.codelength_nats < 0.5 * curve.trivial_nats
        assert curve.val_losses[-1] < 0.05

    def test_validation_fold_order_invariance(self):
        from mscrub.probes import eval_probe, train_probe

        ds = separable_dataset(seed=5, n=1000)
        rng = np.random.default_rng(0)
        probe = train_probe(ds, degree=1)
        fold = ds.subset(np.arange(200))
        shuffled = fold.subset(rng.permutation(200))
        assert eval_probe(probe, fold) == pytest.approx(eval_probe(probe, shuffled), abs=1e-12)

    def test_first_size_must_cover_classes(self):
        ds = labels_independent_dataset(seed=6, k=3)
        with pytest.raises(InvalidInput):
            prequential_mdl(ds, 1, PrefixSchedule((20, 100)), seed=0)

    def test_schedule_cannot_exceed_stream(self):
        ds = labels_independent_dataset(seed=7, n=500)
        with pytest.raises(InvalidInput):
            prequential_mdl(ds, 1, PrefixSchedule((50, 499)), seed=0)

    def test_seed_determinism(self):
        ds = separable_dataset(seed=8, n=1200)
        schedule = make_schedule(960, first=64)
        a = prequential_mdl(ds, 1, schedule, seed=3)
        b = prequential_mdl(ds, 1, schedule, seed=3)
        assert a.codelength_nats == b.codelength_nats
        assert a.val_losses == b.val_losses

    def test_bits_conversion(self):
        ds = separable_dataset(seed=9, n=800)
        curve = prequential_mdl(ds, 1, make_schedule(640, first=64), seed=0)
        assert curve.codelength_bits == pytest.approx(curve.codelength_nats / np.log(2.0))

    def test_csv_shape(self):
        ds = separable_dataset(seed=10, n=800)
        curve = prequential_mdl(ds, 1, make_schedule(640, first=64), seed=0)
        lines = curve_to_csv(curve).strip().split("\n")
        assert lines[0] == "size,val_loss_nats,converged"
        assert len(lines) == len(curve.sizes) + 1

    def test_iid_copies_do_not_raise_per_sample_codelength(self):
        base = separable_dataset(seed=12, n=1200)
        doubled = LabeledDataset.from_arrays(
            np.vstack([base.X, separable_dataset(seed=13, n=1200).X]),
            np.concatenate([base.z, separable_dataset(seed=13, n=1200).z]),
        )
        seeds = range(5)
        def per_sample(ds):
            n_stream = ds.n - round(0.2 * ds.n)
            sched = make_schedule(n_stream, first=64)
            rates = [
                prequential_mdl(ds, 1, sched, seed=s).codelength_nats / sched.sizes[-1]
                for s in seeds
            ]
            return float(np.mean(rates))
        assert per_sample(doubled) <= per_sample(base) + 0.02


class TestDeltaReport:
    def curve(self, ds, seed):
        n_stream = ds.n - round(0.2 * ds.n)
        return prequential_mdl(ds, 1, make_schedule(n_stream, first=64), seed=seed)

    def test_self_delta_zero(self):
        ds = separable_dataset(seed=14, n=900)
        c = self.curve(ds, 0)
        rep = mdl_delta_report([c], {"same": [c]})
        assert rep.rows[0]["delta_mean"] == 0.0
        assert rep.rows[0]["ratio_mean"] == 1.0

    def test_harder_data_positive_delta(self):
        easy = separable_dataset(seed=15, n=900)
        hard = labels_independent_dataset(seed=16, n=900, d=1, k=2)
        ctrl = [self.curve(easy, s) for s in (0, 1)]
        variant = [self.curve(hard, s) for s in (0, 1)]
        rep = mdl_delta_report(ctrl, {"shuffled": variant})
        assert rep.rows[0]["delta_mean"] > 0
        assert rep.rows[0]["ratio_mean"] > 1

    def test_schedule_mismatch_rejected(self):
        ds = separable_dataset(seed=17, n=900)
        a = self.curve(ds, 0)
        n_stream = ds.n - round(0.2 * ds.n)
        b = prequential_mdl(ds, 1, make_schedule(n_stream, first=128), seed=0)
        with pytest.raises(ShapeMismatch):
            mdl_delta_report([a], {"other": [b]})

    def test_seed_mismatch_rejected(self):
        ds = separable_dataset(seed=18, n=900)
        with pytest.raises(ShapeMismatch):
            mdl_delta_report([self.curve(ds, 0)], {"other": [self.curve(ds, 1)]})

    def test_text_table(self):
        ds = separable_dataset(seed=19, n=900)
        c = self.curve(ds, 0)
        text = mdl_delta_report([c], {"same": [c]}).format_text()
        assert "variant" in text and "same" in text
