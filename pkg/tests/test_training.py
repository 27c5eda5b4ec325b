"""Training losses, config parsing, and desk-scale loop behavior."""

import numpy as np
import pytest

from deepsic.networks import RateConfig
from deepsic.nn import Tensor
from deepsic.training import (
    ConfigError,
    LossBreakdown,
    TrainConfig,
    TrainingDiverged,
    distortion,
    load_checkpoint,
    parse_config_file,
    semantic_loss,
    total_loss,
    train,
)

TINY = RateConfig(strides=(4, 2, 2, 1), channels=(8, 8, 8, 8), bits=6)
TINY_LO = RateConfig(strides=(4, 2, 2, 2), channels=(8, 8, 8, 8), bits=6)


def tiny_config(corpus_dir, **kw):
    defaults = dict(
        corpus=corpus_dir,
        rate_cfg=TINY,
        variant="post",
        steps=40,
        batch=8,
        patch_size=32,
        seed=3,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestDistortion:
    def test_identical_images_zero(self):
        x = np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)
        assert distortion(x, x.copy()) == 0.0

    def test_constant_offset(self):
        x = np.zeros((3, 4, 4), dtype=np.float32)
        assert distortion(x, np.full_like(x, 0.5)) == pytest.approx(0.25)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 5, 5)), rng.random((3, 5, 5))
        assert distortion(a, b) == pytest.approx(distortion(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            distortion(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_tensor_path_matches_array_path(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((2, 3, 4, 4)).astype(np.float32), rng.random((2, 3, 4, 4)).astype(np.float32)
        t = distortion(Tensor(a), Tensor(b))
        assert float(t.data) == pytest.approx(distortion(a, b), rel=1e-6)


class TestSemanticLoss:
    def test_certain_prediction_is_free(self):
        logits = np.array([0.0, -40.0, -40.0], dtype=np.float64)
        assert float(semantic_loss(logits, 0).data) == pytest.approx(0.0, abs=1e-10)

    def test_uniform_over_ten(self):
        loss = semantic_loss(np.zeros(10, dtype=np.float64), 7)
        assert float(loss.data) == pytest.approx(np.log(10.0), rel=1e-7)

    def test_quarter_three_quarter(self):
        logits = np.log(np.array([0.25, 0.75], dtype=np.float64))
        loss = semantic_loss(logits, 1)
        assert float(loss.data) == pytest.approx(0.2876821, abs=1e-6)


class TestTotalLoss:
    def test_weighted_sum(self):
        entry = total_loss(100.0, 0.01, 2.3, 1000.0, 10.0)
        assert entry.total == pytest.approx(133.0)
        assert entry.total == entry.rate_bits + entry.lambda1 * entry.distortion + entry.lambda2 * entry.semantic

    def test_zero_lambdas_reduce_to_rate(self):
        assert total_loss(42.0, 9.0, 9.0, 0.0, 0.0).total == 42.0

    def test_rate_distortion_only(self):
        entry = total_loss(10.0, 0.5, 123.0, 2.0, 0.0)
        assert entry.total == pytest.approx(11.0)

    def test_csv_row(self):
        entry = total_loss(1.0, 2.0, 3.0, 4.0, 5.0)
        assert LossBreakdown.CSV_HEADER == "step,R,D,Lsem,L"
        assert entry.csv_row(7).startswith("7,1,2,3,")


class TestConfigFile:
    def test_full_file(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text(
            "# comment\n"
            "preset = lo\n"
            "variant = pre\n"
            "lambda1 = 500\n"
            "lambda2 = 2.5\n"
            "lr = 0.001\n"
            "batch = 16\n"
            "steps = 123\n"
            "seed = 9\n"
            "corpus = /data/toy\n"
            "K = 10\n"
        )
        cfg = parse_config_file(p)
        assert cfg.rate_cfg.strides == (4, 2, 2, 2)
        assert cfg.variant == "pre"
        assert cfg.lambda1 == 500.0 and cfg.lambda2 == 2.5
        assert cfg.lr == 0.001 and cfg.batch == 16 and cfg.steps == 123 and cfg.seed == 9
        assert cfg.corpus == "/data/toy" and cfg.num_classes == 10

    def test_defaults_applied(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("corpus = /data/toy\n")
        cfg = parse_config_file(p)
        assert cfg.rate_cfg.strides == (4, 2, 2, 1)
        assert cfg.lambda1 == 100000.0 and cfg.lambda2 == 10.0
        assert cfg.lr == 0.003 and cfg.batch == 32 and cfg.steps == 20000

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("corpus=/x\nwhatever=1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_file(p)

    def test_missing_corpus_rejected(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("preset=mid\n")
        with pytest.raises(ConfigError, match="corpus"):
            parse_config_file(p)

    def test_bad_value_rejected(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("corpus=/x\nsteps=soon\n")
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_file(p)

    def test_bad_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            TrainConfig(corpus="/x", variant="mid")


class TestTrainingLoop:
    def test_loss_decreases(self, small_corpus):
        result = train(tiny_config(small_corpus, steps=60))
        assert result.history[-1].total < result.history[0].total
        assert all(np.isfinite(e.total) for e in result.history)

    def test_fixed_seed_bit_identical_history(self, small_corpus):
        a = train(tiny_config(small_corpus, steps=12))
        b = train(tiny_config(small_corpus, steps=12))
        assert [e.total for e in a.history] == [e.total for e in b.history]
        assert [e.rate_bits for e in a.history] == [e.rate_bits for e in b.history]

    def test_variants_identical_when_quantizer_bypassed(self, small_corpus):
        pre = train(tiny_config(small_corpus, steps=12, variant="pre", bypass_quantizer=True))
        post = train(tiny_config(small_corpus, steps=12, variant="post", bypass_quantizer=True))
        assert [e.total for e in pre.history] == [e.total for e in post.history]

    def test_variants_differ_with_quantizer(self, small_corpus):
        pre = train(tiny_config(small_corpus, steps=12, variant="pre"))
        post = train(tiny_config(small_corpus, steps=12, variant="post"))
        assert [e.total for e in pre.history] != [e.total for e in post.history]

    def test_lambda_sweep_monotone_distortion(self, small_corpus):
        # larger lambda1 must not end with more distortion (5% slack, 3 seeds)
        finals = {}
        for lam in (3.0, 3000.0):
            vals = []
            for seed in (1, 2, 3):
                res = train(tiny_config(small_corpus, steps=70, lambda1=lam, lambda2=0.0, seed=seed))
                vals.append(np.mean([e.distortion for e in res.history[-10:]]))
            finals[lam] = float(np.mean(vals))
        assert finals[3000.0] <= finals[3.0] * 1.05

    def test_divergence_aborts_with_snapshot(self, small_corpus):
        config = tiny_config(small_corpus, steps=400, lr=2e18, snapshot_every=5)
        with pytest.raises(TrainingDiverged) as excinfo:
            train(config)
        exc = excinfo.value
        assert exc.history
        model, density = load_checkpoint(exc.last_good_checkpoint, TINY, num_classes=10)
        assert all(np.isfinite(p.data).all() for p in model.params())

    def test_history_csv_format(self, small_corpus):
        result = train(tiny_config(small_corpus, steps=3))
        lines = result.history_csv().strip().splitlines()
        assert lines[0] == "step,R,D,Lsem,L"
        assert len(lines) == 4
        assert lines[1].startswith("0,")

    def test_checkpoint_round_trip_through_training(self, small_corpus):
        from deepsic.training import model_layers
        from deepsic.nn.checkpoint import serialize_layers

        result = train(tiny_config(small_corpus, steps=3))
        blob = serialize_layers(model_layers(result.model, result.density))
        model, density = load_checkpoint(blob, TINY, num_classes=10)
        assert serialize_layers(model_layers(model, density)) == blob
