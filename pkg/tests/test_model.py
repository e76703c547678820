import math

import numpy as np
import pytest

from armformer.errors import (CheckpointError, ConfigError, DataError,
                              TrainingError)
from armformer.model import (AdamW, ArmFormer, ModelConfig, TrainSchedule,
                             checkpoint_load, checkpoint_save, config_from_flat,
                             config_to_text, cross_entropy, fit, make_batch,
                             parse_flat_text, train_step)
from armformer.tensor import Tensor


def toy_config(**kw):
    return ModelConfig.reduced(input_size=64, **kw)


def toy_batch(b=2, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return make_batch([(rng.uniform(0, 1, size=(3, size, size)),
                        rng.integers(0, 6, size=(size, size)))
                       for _ in range(b)])


class TestModelInit:
    def test_same_seed_bit_identical(self):
        a = ArmFormer(toy_config(seed=5))
        b = ArmFormer(toy_config(seed=5))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a = ArmFormer(toy_config(seed=1))
        b = ArmFormer(toy_config(seed=2))
        assert any(not np.array_equal(pa.data, pb.data)
                   for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()))

    def test_registry_order_is_stable(self):
        names = [n for n, _ in ArmFormer(toy_config()).named_parameters()]
        assert names == [n for n, _ in ArmFormer(toy_config()).named_parameters()]
        assert names[0].startswith("encoder.stages.0")
        assert names[-1].startswith("decoder.classifier")

    def test_toy_param_count_matches_analytic_sum(self):
        # independent closed-form accounting for the reduced configuration:
        # channels 8/16/24/32, depths 1, heads 1/2/3/4, sr 8/4/2/1, ffn x4,
        # cbam r=16 k=7 everywhere, decoder context 64
        def stage(cin, c, k, sr):
            patch = k * k * cin * c + c + 2 * c
            attn = 4 * (c * c + c) + 2 * c                      # qkvo + norm1
            if sr > 1:
                attn += sr * sr * c * c + c + 2 * c             # sr conv + its norm
            ffn = (c * 4 * c + 4 * c) + (9 * 4 * c + 4 * c) + (4 * c * c + c) + 2 * c
            final_norm = 2 * c
            hidden = max(1, c // 16)
            cbam = 2 * c * hidden + 7 * 7 * 2
            return patch + attn + ffn + final_norm + cbam

        expect = (stage(3, 8, 7, 8) + stage(8, 16, 3, 4)
                  + stage(16, 24, 3, 2) + stage(24, 32, 3, 1))
        fused, ctx = 80, 64
        expect += 2 * fused * (fused // 16) + 98          # decoder pre cbam
        expect += fused * ctx + ctx                       # squeeze
        expect += 2 * ctx * (ctx // 16) + 98              # decoder post cbam
        expect += ctx * 6 + 6                             # classifier
        assert ArmFormer(toy_config()).num_parameters() == expect

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_size=100)
        with pytest.raises(ConfigError):
            ModelConfig(num_classes=1)
        with pytest.raises(ConfigError):
            ModelConfig(cbam_reductions=(16,) * 5)


class TestForward:
    def test_logit_shape(self):
        model = ArmFormer(toy_config())
        logits = model(toy_batch(b=2).images)
        assert logits.shape == (2, 6, 64, 64)

    def test_forward_deterministic(self):
        model = ArmFormer(toy_config())
        x = toy_batch(b=1).images
        a = model(x).data
        b = model(x).data
        assert np.array_equal(a, b)

    def test_indivisible_input_rejected(self):
        from armformer.errors import ShapeError
        model = ArmFormer(toy_config())
        with pytest.raises(ShapeError):
            model(Tensor.zeros((1, 3, 60, 60)))


class TestCrossEntropy:
    def test_uniform_logits_ln6(self):
        logits = Tensor.zeros((2, 6, 4, 4))
        labels = np.random.default_rng(0).integers(0, 6, size=(2, 4, 4))
        assert cross_entropy(logits, labels).item() == pytest.approx(math.log(6), abs=1e-9)

    def test_two_class_hand_case(self):
        logits = Tensor(np.array([0.0, math.log(3)]).reshape(1, 2, 1, 1))
        loss = cross_entropy(logits, np.array([[[1]]]))
        assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-9)

    def test_saturated_correct_logits(self):
        labels = np.random.default_rng(1).integers(0, 6, size=(1, 3, 3))
        raw = np.zeros((1, 6, 3, 3))
        for i in range(3):
            for j in range(3):
                raw[0, labels[0, i, j], i, j] = 40.0
        assert cross_entropy(Tensor(raw), labels).item() < 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(DataError):
            cross_entropy(Tensor.zeros((1, 6, 2, 2)), np.full((1, 2, 2), 6))


class TestAdamW:
    def test_three_step_scalar_trace(self):
        # hand-stepped reference for loss (w - 3)^2 with lr=0.1, no decay
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w_ref, m_ref, v_ref = 1.0, 0.0, 0.0
        trace = []
        for t in range(1, 4):
            g = 2.0 * (w_ref - 3.0)
            m_ref = b1 * m_ref + (1 - b1) * g
            v_ref = b2 * v_ref + (1 - b2) * g * g
            w_ref -= lr * (m_ref / (1 - b1 ** t)) / (math.sqrt(v_ref / (1 - b2 ** t)) + eps)
            trace.append(w_ref)

        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW([("w", w)], lr=lr, weight_decay=0.0)
        got = []
        for _ in range(3):
            w.zero_grad()
            ((w - 3.0) * (w - 3.0)).sum().backward()
            opt.step()
            got.append(float(w.data[0]))
        assert np.allclose(got, trace, atol=1e-14)

    def test_lr_zero_is_identity(self):
        w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        opt = AdamW([("w", w)], lr=0.0, weight_decay=0.5)
        w.grad = np.array([1.0, 1.0])
        opt.step()
        assert np.array_equal(w.data, [2.0, -1.0])

    def test_zero_grad_zero_decay_is_identity(self):
        w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        opt = AdamW([("w", w)], lr=0.1, weight_decay=0.0)
        w.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(w.data, [2.0, -1.0])

    def test_decay_without_grad_skips(self):
        # parameters that never received a gradient are left alone entirely
        w = Tensor(np.array([2.0]), requires_grad=True)
        opt = AdamW([("w", w)], lr=0.1, weight_decay=0.5)
        opt.step()
        assert np.array_equal(w.data, [2.0])


class TestTraining:
    def test_train_step_reduces_loss_over_window(self):
        model = ArmFormer(toy_config(seed=0))
        data = [(np.random.default_rng(i).uniform(0, 1, size=(3, 64, 64)),
                 np.random.default_rng(100 + i).integers(0, 6, size=(64, 64)))
                for i in range(2)]
        sched = TrainSchedule(steps=50, batch_size=2, lr=1e-3, weight_decay=0.0, seed=0)
        history = fit(model, data, sched)
        losses = [h.loss for h in history]
        assert all(np.isfinite(losses))
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_fit_rejects_zero_steps(self):
        with pytest.raises(ConfigError):
            fit(ArmFormer(toy_config()), [toy_batch()], TrainSchedule(steps=0))

    def test_fit_rejects_empty_dataset(self):
        with pytest.raises(DataError):
            fit(ArmFormer(toy_config()),
                [], TrainSchedule(steps=1))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_training_error_on_nonfinite_loss(self):
        model = ArmFormer(toy_config())
        for _, p in model.named_parameters():
            p.data[...] = np.inf
        batch = toy_batch(b=1)
        opt = AdamW([(n, p) for n, p in model.named_parameters()])
        with pytest.raises(TrainingError):
            train_step(model, batch, opt)

    def test_same_seed_identical_history(self):
        data = [(np.random.default_rng(7).uniform(0, 1, size=(3, 64, 64)),
                 np.random.default_rng(8).integers(0, 6, size=(64, 64)))]

        def run():
            model = ArmFormer(toy_config(seed=3))
            sched = TrainSchedule(steps=8, batch_size=1, lr=1e-3, seed=9)
            return [h.loss for h in fit(model, data, sched)], checkpoint_save(model)

        (hist_a, ckpt_a), (hist_b, ckpt_b) = run(), run()
        assert hist_a == hist_b
        assert ckpt_a == ckpt_b

    def test_eval_hook_runs_periodically(self):
        model = ArmFormer(toy_config())
        data = [(np.zeros((3, 64, 64)), np.zeros((64, 64), dtype=np.int64))]
        sched = TrainSchedule(steps=6, batch_size=1, eval_every=3)
        calls = []
        history = fit(model, data, sched,
                      eval_fn=lambda m: calls.append(1) or {"miou": 1.0})
        assert len(calls) == 2
        assert history[2].metrics == {"miou": 1.0}
        assert history[0].metrics is None


class TestCheckpoint:
    def test_roundtrip_idempotent(self):
        model = ArmFormer(toy_config(seed=4))
        blob = checkpoint_save(model)
        again = checkpoint_save(checkpoint_load(blob))
        assert blob == again

    def test_forward_identical_after_load(self):
        model = ArmFormer(toy_config(seed=5))
        x = toy_batch(b=1, seed=2).images
        expect = model(x).data
        loaded = checkpoint_load(checkpoint_save(model))
        assert np.array_equal(loaded(x).data, expect)

    def test_single_corrupt_byte_detected(self):
        blob = bytearray(checkpoint_save(ArmFormer(toy_config())))
        blob[len(blob) // 2] ^= 0x40
        with pytest.raises(CheckpointError):
            checkpoint_load(bytes(blob))

    def test_version_mismatch_detected(self):
        import hashlib
        blob = bytearray(checkpoint_save(ArmFormer(toy_config())))
        blob[4] = 99  # version field follows the 4-byte magic
        body = bytes(blob[:-8])
        blob = body + hashlib.sha256(body).digest()[:8]
        with pytest.raises(CheckpointError, match="version"):
            checkpoint_load(blob)

    def test_expected_config_enforced(self):
        blob = checkpoint_save(ArmFormer(toy_config(seed=1)))
        with pytest.raises(CheckpointError, match="config"):
            checkpoint_load(blob, expected_config=ModelConfig.reduced(input_size=96))


class TestConfigText:
    def test_roundtrip_through_flat_text(self):
        for cfg in (ModelConfig.default(), ModelConfig.lightweight_cbam(),
                    ModelConfig.reduced(input_size=96, seed=3)):
            entries = parse_flat_text(config_to_text(cfg))
            assert config_from_flat(entries) == cfg

    def test_preset_and_override(self):
        cfg = config_from_flat({"model.preset": "reduced",
                                "model.seed": "11", "ham.rank": "4"})
        assert cfg.stages[0].channels == 8
        assert cfg.seed == 11 and cfg.ham.rank == 4

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_flat({"model.bogus": "1"})

    def test_comments_and_blank_lines(self):
        entries = parse_flat_text("# comment\n\nmodel.seed = 7  # inline\n")
        assert entries == {"model.seed": "7"}

    def test_lightweight_preset_values(self):
        cfg = ModelConfig.lightweight_cbam()
        assert cfg.cbam_reductions == (32,) * 6
        assert cfg.cbam_kernels == (3,) * 6
