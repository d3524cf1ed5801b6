import json
import math

import numpy as np
import pytest

from nfmimo import bench
from nfmimo.autograd import load_checkpoint
from nfmimo.bench import (
    DegenerateEstimateError,
    Estimators,
    MetricRecord,
    TrainConfig,
    evaluate,
    lr_schedule,
    nmse,
    nmse_per_sample,
    spectral_efficiency,
    warmup_jump_bound,
)
from nfmimo.channel import ArrayGeometry, DatasetConfig, steering_vector
from nfmimo.dataset import generate_dataset
from nfmimo.mssan import init_params


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def tiny_data_cfg(**kw):
    base = dict(Nr=8, Nt=2, sample_count=20, distance_range=(0.3, 1.0), seed=1, snr_set=[0.0, 10.0])
    base.update(kw)
    return DatasetConfig(**base)


def tiny_train_cfg(data, out, **kw):
    base = dict(
        epochs=2,
        batch_size=8,
        dataset=str(data),
        out_dir=str(out),
        network=dict(embed_features=4, blocks=[1, 1, 1, 1], heads=[1, 1, 1, 1], cnn_depth=2, san_blocks=1),
    )
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_warmup_values(self):
        assert lr_schedule(1, 0.1, 120) == 0.1 / 5
        assert lr_schedule(5, 0.1, 120) == 0.1
        for t in range(1, 6):
            assert lr_schedule(t, 0.1, 120) == pytest.approx(0.1 / (6 - t), rel=1e-15)

    def test_final_epoch(self):
        ref = 0.05 * (1 + math.cos(115 * math.pi / 116))
        assert lr_schedule(120, 0.1, 120) == pytest.approx(ref, rel=1e-12)
        assert lr_schedule(120, 0.1, 120) == pytest.approx(1.83e-5, rel=0.01)

    def test_cosine_monotone(self):
        vals = [lr_schedule(t, 0.1, 30) for t in range(6, 31)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert min(vals) > 0

    def test_jump_bound(self):
        for T in (6, 30, 120):
            jump = abs(lr_schedule(6, 0.1, T) - lr_schedule(5, 0.1, T))
            assert jump == pytest.approx(warmup_jump_bound(0.1, T), rel=1e-12)

    @pytest.mark.parametrize("t", [0, 31])
    def test_out_of_range(self, t):
        with pytest.raises(ValueError):
            lr_schedule(t, 0.1, 30)


class TestNMSE:
    def test_examples(self):
        H = crandn(np.random.default_rng(0), 4, 2)
        assert nmse(H, H) == 0
        assert nmse(H, np.zeros_like(H)) == pytest.approx(1.0)
        assert nmse(H, 2 * H) == pytest.approx(1.0)

    def test_mean_of_ratios(self):
        H = np.stack([np.ones((2, 2)), 10 * np.ones((2, 2))])
        E = H + np.ones((2, 2))
        assert np.allclose(nmse_per_sample(H, E), [1.0, 0.01])
        assert nmse(H, E) == pytest.approx(0.505)

    def test_errors(self):
        with pytest.raises(ValueError):
            nmse(np.zeros((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            nmse(np.ones((2, 2)), np.ones((2, 3)))

    def test_record(self):
        r = MetricRecord("ls", 5.0, 0.1, 2.5, 10)
        assert r.nmse_db == pytest.approx(-10.0)
        assert r.row()[:2] == ["ls", "5"]
        assert MetricRecord("ls", 0.0, 0.0, 0.0, 1).nmse_db == -math.inf


class TestSpectralEfficiency:
    def test_rank_one_perfect(self):
        rx, tx = ArrayGeometry(16, 60e9), ArrayGeometry(4, 60e9)
        a, b = steering_vector(rx, 0.3, 2.0), steering_vector(tx, -0.1, 2.0)
        H = 3.0 * np.outer(a, b.conj())
        g = np.linalg.norm(H) ** 2
        assert spectral_efficiency(H, H, 0.5) == pytest.approx(math.log2(1 + g / 0.5), rel=1e-12)

    def test_orthogonal_estimate(self):
        # transmit directions orthogonal on a 4-element array: theta differing by 2/N
        tx = ArrayGeometry(4, 60e9)
        a = crandn(np.random.default_rng(1), 8)
        b1, b2 = steering_vector(tx, 0.0, np.inf), steering_vector(tx, 0.5, np.inf)
        assert abs(np.vdot(b1, b2)) < 1e-12
        H, Hh = np.outer(a, b1.conj()), np.outer(a, b2.conj())
        assert spectral_efficiency(H, Hh, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_large_noise(self):
        H = crandn(np.random.default_rng(2), 4, 2)
        assert spectral_efficiency(H, H, 1e12) < 1e-9

    def test_errors(self):
        H = np.ones((2, 2))
        with pytest.raises(DegenerateEstimateError):
            spectral_efficiency(H, np.zeros((2, 2)), 1.0)
        with pytest.raises(ValueError):
            spectral_efficiency(H, H, 0.0)


class TestRmsScale:
    def test_values(self):
        X = np.zeros((2, 2, 1, 2), dtype=np.float32)
        X[0] = 3.0
        s = bench.rms_scale(X)
        assert s.shape == (2, 1, 1, 1) and s.dtype == np.float32
        assert s[0, 0, 0, 0] == 3.0 and s[1, 0, 0, 0] == 1.0


class TestEvaluate:
    def test_ls_fixed_norm_at_10db(self):
        cfg = tiny_data_cfg(Nr=32, Nt=4)
        rng = np.random.default_rng(3)
        H = crandn(rng, 1000, 32, 4)
        H *= math.sqrt(128) / np.linalg.norm(H, axis=(1, 2), keepdims=True)
        (rec,) = evaluate(H, ["ls"], [10.0], Estimators(cfg))
        assert rec.nmse_db == pytest.approx(-10.0, abs=0.5)
        assert rec.samples == 1000

    def test_rows_and_order_invariance(self):
        cfg = tiny_data_cfg()
        rng = np.random.default_rng(4)
        H = crandn(rng, 12, 8, 2)
        train_H = crandn(rng, 50, 8, 2)
        est = Estimators(cfg, train_H=train_H)
        a = evaluate(H, ["ls", "lmmse", "omp"], [-5.0, 5.0], est, seed=7)
        b = evaluate(H, ["ls", "lmmse", "omp"], [-5.0, 5.0], est, seed=7, order=rng.permutation(12))
        assert len(a) == 6
        assert [r.row() for r in a] == [r.row() for r in b]
        assert [(r.method, r.snr_db) for r in a][:3] == [("ls", -5.0), ("lmmse", -5.0), ("omp", -5.0)]

    def test_lmmse_not_worse_than_ls(self):
        cfg = tiny_data_cfg()
        rng = np.random.default_rng(5)
        L = np.linalg.cholesky(np.eye(16) + 0.5 * np.ones((16, 16)))
        draw = lambda n: (L @ crandn(rng, 16, n)).T.reshape(n, 2, 8).transpose(0, 2, 1)  # noqa: E731
        est = Estimators(cfg, train_H=draw(20_000))
        recs = evaluate(draw(300), ["ls", "lmmse"], [-10.0, 0.0, 10.0], est)
        for ls, mm in zip(recs[::2], recs[1::2]):
            assert mm.nmse_linear <= ls.nmse_linear + 1e-9

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            evaluate(np.ones((1, 8, 2)), ["music"], [0.0], Estimators(tiny_data_cfg()))

    def test_missing_checkpoint(self, tmp_path):
        est = Estimators(tiny_data_cfg(), run_dir=tmp_path)
        with pytest.raises(FileNotFoundError):
            evaluate(np.ones((1, 8, 2)), ["mssan"], [0.0], est)
        with pytest.raises(FileNotFoundError):
            evaluate(np.ones((1, 8, 2)), ["cnn"], [0.0], Estimators(tiny_data_cfg()))

    def test_bad_order(self):
        with pytest.raises(ValueError):
            evaluate(np.ones((2, 8, 2)), ["ls"], [0.0], Estimators(tiny_data_cfg()), order=[0, 0])

    def test_metrics_csv(self, tmp_path):
        recs = [MetricRecord("ls", 0.0, 0.5, 1.0, 3), MetricRecord("omp", 10.0, 0.01, 2.0, 3)]
        bench.write_metrics(tmp_path / "m.csv", recs)
        text = (tmp_path / "m.csv").read_text()
        assert text.splitlines()[0] == "method,snr_db,nmse_linear,nmse_db,se_bits,samples,seconds"
        rows = bench.read_metrics(tmp_path / "m.csv")
        assert [r["method"] for r in rows] == ["ls", "omp"]
        assert float(rows[1]["nmse_db"]) == pytest.approx(-20.0)

    def test_sweep(self):
        cfg = tiny_data_cfg()
        out = bench.sweep(cfg, "paths", [1, 4], ["ls"], 10.0, samples=5)
        assert [v for v, _ in out] == [1.0, 4.0]
        with pytest.raises(ValueError):
            bench.sweep(cfg, "angle", [1], ["ls"], 10.0, samples=5)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [dict(epochs=-1), dict(batch_size=0), dict(base_lr=0.0), dict(variant="rnn")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_profiles(self):
        desk = bench.profile_train_config("desk")
        full = bench.profile_train_config("full")
        assert (desk.epochs, full.epochs) == (30, 120)
        assert full.network_config(256, 8).embed_features == 32
        assert desk.network_config(32, 4).embed_features == 16
        with pytest.raises(ValueError):
            bench.profile_train_config("cluster")

    def test_overrides(self):
        cfg = TrainConfig(network={"embed_features": 8})
        net = cfg.network_config(32, 4)
        assert net.embed_features == 8 and net.input_scaling

    def test_desk_dataset(self):
        cfg = bench.desk_dataset_config()
        assert (cfg.Nr, cfg.Nt, cfg.sample_count) == (32, 4, 2000)
        assert cfg.distance_range[1] == pytest.approx(3.24, abs=0.01)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    generate_dataset(tiny_data_cfg(), d)
    return d


class TestTrain:
    def test_zero_epochs_keeps_init(self, tiny_data, tmp_path):
        cfg = tiny_train_cfg(tiny_data, tmp_path, epochs=0, seed=5)
        res = bench.train(cfg)
        ref = init_params(res.network, 5)
        saved = load_checkpoint(tmp_path / "mssan" / "best.nfpt")
        for k in ref:
            assert np.array_equal(saved[k].data, ref[k].data.astype(np.float32))
        assert res.curve == []
        assert (tmp_path / "mssan" / "loss.csv").read_text() == "epoch,lr,train_loss,test_loss\n"

    @pytest.mark.parametrize("variant", ["mssan", "san", "cnn"])
    def test_repeatable(self, tiny_data, tmp_path, variant):
        a = bench.train(tiny_train_cfg(tiny_data, tmp_path / "a", variant=variant))
        b = bench.train(tiny_train_cfg(tiny_data, tmp_path / "b", variant=variant))
        assert abs(a.curve[0][2] - b.curve[0][2]) <= 1e-12
        for f in ("best.nfpt", "loss.csv"):
            assert (tmp_path / "a" / variant / f).read_bytes() == (tmp_path / "b" / variant / f).read_bytes()
        ma, mb = (json.loads((tmp_path / d / variant / "model.json").read_text()) for d in "ab")
        assert ma["train"].pop("out_dir") != mb["train"].pop("out_dir")
        assert ma == mb
        rows = bench.read_loss_curve(tmp_path / "a" / variant / "loss.csv")
        assert [r["epoch"] for r in rows] == [1, 2]
        assert rows[0]["lr"] == pytest.approx(0.02)

    def test_model_metadata_and_eval(self, tiny_data, tmp_path):
        res = bench.train(tiny_train_cfg(tiny_data, tmp_path, resample_noise=True))
        meta = json.loads((tmp_path / "mssan" / "model.json").read_text())
        assert meta["best_epoch"] == res.best_epoch
        assert meta["network"]["embed_features"] == 4
        recs = bench.evaluate_dataset(tiny_data, ["ls", "mssan"], [0.0], run_dir=tmp_path)
        assert [r.method for r in recs] == ["ls", "mssan"]
        assert all(np.isfinite(r.nmse_linear) and r.se_bits >= 0 for r in recs)

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            bench.train(tiny_train_cfg(tmp_path / "none", tmp_path))

    def test_decreasing_fraction(self):
        assert bench.decreasing_fraction([3, 2, 1]) == 1.0
        assert bench.decreasing_fraction([3, 2, 2, 1, 4]) == 0.5
        assert bench.decreasing_fraction([1]) == 1.0
