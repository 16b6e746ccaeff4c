import dataclasses

import numpy as np
import pytest

from clearwav.checkpoint import load_checkpoint, save_checkpoint
from clearwav.corpus import ToyCorpusConfig, synth_toy_corpus
from clearwav.encoder import EncoderConfig
from clearwav.losses import LossWeights
from clearwav.masking import MaskConfig
from clearwav.model import (AsrModel, ModelConfig, PretrainModel,
                            model_config_from_dict, model_config_to_dict,
                            strip_and_head)
from clearwav.optim import Adam, AdamConfig, NonFiniteGradient, clip_global_norm, lr_at
from clearwav.quantizer import QuantizerConfig
from clearwav.rng import RngStream
from clearwav.tensor import Parameter, Tensor
from clearwav.training import TrainConfig, finetune, pretrain
from clearwav.transformer import ContextConfig
from clearwav.vocab import CharVocab


def tiny_model_cfg(dim=16):
    return ModelConfig(
        encoder=EncoderConfig(channels=dim),
        context=ContextConfig(layers=1, dim=dim, heads=2, ffn_inner=24,
                              pos_kernel=5, pos_groups=2),
        quantizer=QuantizerConfig(groups=2, entries=4, entry_dim=4,
                                  in_dim=dim, out_dim=dim),
        mask=MaskConfig(start_prob=0.2, span=3))


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_corpus")
    cfg = ToyCorpusConfig(n_utterances=6, utterance_chars=(3, 5),
                          alphabet_size=3, char_duration_ms=60.0,
                          noise_duration_s=1.0, seed=9)
    manifest, bank = synth_toy_corpus(cfg, root)
    return manifest, bank


class TestLrSchedule:
    def test_peak_at_warmup_boundary(self):
        assert lr_at(80, 1000, 5e-4, 0.08) == pytest.approx(5e-4)

    def test_half_warmup(self):
        assert lr_at(40, 1000, 5e-4, 0.08) == pytest.approx(2.5e-4)

    def test_mid_decay(self):
        assert lr_at(540, 1000, 5e-4, 0.08) == pytest.approx(
            5e-4 * (1000 - 540) / (1000 - 80))

    def test_endpoints_zero(self):
        assert lr_at(0, 1000, 5e-4, 0.08) == 0.0
        assert lr_at(1000, 1000, 5e-4, 0.08) == 0.0

    def test_single_peak_and_continuity(self):
        vals = [lr_at(s, 1000, 5e-4, 0.08) for s in range(1001)]
        peak_steps = [s for s, v in enumerate(vals) if v == max(vals)]
        assert peak_steps == [80]
        diffs = np.abs(np.diff(vals))
        assert diffs.max() <= 5e-4 / 80 + 1e-12  # no jumps beyond the warmup slope

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_at(1001, 1000, 5e-4, 0.08)


class TestAdam:
    def test_three_step_reference_trajectory(self):
        # frozen from an independent plain-float evaluation of the update rule
        p = Parameter(np.array([1.0], dtype=np.float64), "p", dtype=np.float64)
        opt = Adam([p], AdamConfig(beta1=0.9, beta2=0.98, eps=1e-6))
        expected = [0.9000001999996, 0.8808070262925762, 0.8458787915890925]
        for g, want in zip([0.5, -0.3, 0.2], expected):
            p.grad = np.array([g], dtype=np.float64)
            opt.step(lr=0.1)
            assert p.data[0] == pytest.approx(want, rel=1e-12)

    def test_non_finite_gradient_names_parameter(self):
        p = Parameter(np.ones(2), "layer.weight", dtype=np.float64)
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(NonFiniteGradient, match="layer.weight"):
            Adam([p]).step(lr=0.1)

    def test_clip_global_norm(self):
        a = Parameter(np.zeros(1), "a", dtype=np.float64)
        b = Parameter(np.zeros(1), "b", dtype=np.float64)
        a.grad = np.array([3.0])
        b.grad = np.array([4.0])
        norm = clip_global_norm([a, b], max_norm=1.0)
        assert norm == pytest.approx(5.0)
        assert np.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
        # below the threshold: untouched
        a.grad, b.grad = np.array([0.3]), np.array([0.4])
        clip_global_norm([a, b], max_norm=1.0)
        assert (a.grad[0], b.grad[0]) == (0.3, 0.4)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        model = PretrainModel(tiny_model_cfg(), seed=3)
        wav = RngStream(0).normal(900).astype(np.float32)
        before = model.encoder.encode(wav).data.copy()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, "pretrain", model_config_to_dict(model.cfg), 17,
                        {"mask": {"seed": 1, "counter": 5}}, model.parameters())
        ck = load_checkpoint(path)
        assert ck.step == 17 and ck.kind == "pretrain"
        restored = PretrainModel(model_config_from_dict(ck.config), seed=999)
        ck.restore_into(restored.parameters())
        after = restored.encoder.encode(wav).data
        np.testing.assert_array_equal(before, after)

    def test_missing_parameter_named(self, tmp_path):
        model = PretrainModel(tiny_model_cfg(), seed=3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, "pretrain", {}, 0, {}, model.parameters()[:-1])
        ck = load_checkpoint(path)
        with pytest.raises(KeyError, match="out_proj"):
            ck.restore_into(model.parameters())

    def test_truncated_payload_detected(self, tmp_path):
        model = PretrainModel(tiny_model_cfg(), seed=3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, "pretrain", {}, 0, {}, model.parameters())
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)


class TestStripAndHead:
    def test_uniform_posterior_at_init(self):
        pre = PretrainModel(tiny_model_cfg(), seed=1)
        model = strip_and_head(pre)
        logits = model.logits(RngStream(2).normal(900).astype(np.float32))
        np.testing.assert_array_equal(logits.data, 0.0)
        post = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(post, 1.0 / 30.0)

    def test_parameter_bookkeeping(self):
        pre = PretrainModel(tiny_model_cfg(), seed=1)
        model = strip_and_head(pre)
        n_pre = sum(p.size for p in pre.parameters())
        n_vq = sum(p.size for p in pre.quantizer.parameters())
        n_head = model.head_w.size + model.head_b.size
        assert sum(p.size for p in model.parameters()) == n_pre - n_vq + n_head

    def test_encoder_context_path_unchanged(self):
        pre = PretrainModel(tiny_model_cfg(), seed=1)
        model = strip_and_head(pre)
        wav = RngStream(3).normal(900).astype(np.float32)
        z_pre = pre.encoder.encode(wav)
        c_pre = pre.context.forward(z_pre)
        c_post = model.context.forward(model.encoder.encode(wav))
        np.testing.assert_array_equal(c_pre.data, c_post.data)


class TestPretrainLoop:
    def test_identical_streams_give_zero_consistency(self, tiny_corpus):
        manifest, bank = tiny_corpus
        model = PretrainModel(tiny_model_cfg(), seed=4)
        cfg = TrainConfig(total_steps=2, batch_size=2, seed=5,
                          snr_set=(200.0,),  # essentially noiseless mixtures
                          weights=LossWeights(distractors=3))
        result = pretrain(model, manifest, bank, cfg, mode="enhanced")
        assert result.trace[0].l_c < 1e-4

    def test_deterministic_loss_trace(self, tiny_corpus):
        manifest, bank = tiny_corpus
        traces = []
        for _ in range(2):
            model = PretrainModel(tiny_model_cfg(), seed=6)
            cfg = TrainConfig(total_steps=8, batch_size=3, seed=7,
                              weights=LossWeights(distractors=3))
            result = pretrain(model, manifest, bank, cfg, mode="enhanced")
            traces.append([bd.total for bd in result.trace])
        assert traces[0] == traces[1]

    @pytest.mark.parametrize("mode", ["enhanced", "baseline"])
    def test_modes_run_and_log(self, tiny_corpus, tmp_path, mode):
        manifest, bank = tiny_corpus
        model = PretrainModel(tiny_model_cfg(), seed=8)
        cfg = TrainConfig(total_steps=3, batch_size=2, seed=9,
                          weights=LossWeights(distractors=3))
        log = tmp_path / "log.csv"
        result = pretrain(model, manifest, bank, cfg, mode=mode, log_path=log)
        assert len(result.trace) == 3
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "step,l_m,l_d,l_f,l_c,total,tau,lr,n_masked"
        assert len(lines) == 4
        if mode == "baseline":
            assert all(bd.l_c == 0.0 for bd in result.trace)

    def test_incident_free_run_reports_counts(self, tiny_corpus):
        manifest, bank = tiny_corpus
        model = PretrainModel(tiny_model_cfg(), seed=10)
        cfg = TrainConfig(total_steps=2, batch_size=2, seed=11,
                          weights=LossWeights(distractors=3))
        result = pretrain(model, manifest, bank, cfg, mode="enhanced")
        assert result.incidents == []
        assert result.forced_masks >= 0
        assert {"mask", "gumbel", "distractor", "order"} <= result.rng_states.keys()


class TestFinetuneLoop:
    def test_ctc_decreases_and_freeze_phase(self, tiny_corpus):
        manifest, bank = tiny_corpus
        model = AsrModel(tiny_model_cfg(), seed=12, vocab=CharVocab())
        cfg = TrainConfig(total_steps=30, batch_size=3, lr_peak=2e-3, seed=13)
        enc_before = [p.data.copy() for p in model.encoder.parameters()]
        result = finetune(model, manifest, bank, cfg, stream="noisy")
        assert len(result.trace) == 30
        assert result.trace[-1] < result.trace[0]

    def test_encoder_untouched_while_frozen(self, tiny_corpus):
        manifest, bank = tiny_corpus
        model = AsrModel(tiny_model_cfg(), seed=14)
        # freeze for the whole run: encoder must remain bit-identical
        cfg = TrainConfig(total_steps=4, batch_size=2, seed=15,
                          freeze_encoder_fraction=1.0)
        before = [p.data.copy() for p in model.encoder.parameters()]
        finetune(model, manifest, bank, cfg)
        for p, b in zip(model.encoder.parameters(), before):
            np.testing.assert_array_equal(p.data, b)
            np.testing.assert_array_equal(p.grad, 0.0)

    def test_same_seed_reproduces(self, tiny_corpus):
        manifest, bank = tiny_corpus
        runs = []
        for _ in range(2):
            model = AsrModel(tiny_model_cfg(), seed=16)
            cfg = TrainConfig(total_steps=5, batch_size=2, seed=17)
            runs.append(finetune(model, manifest, bank, cfg).trace)
        assert runs[0] == runs[1]

    def test_clean_stream_runs(self, tiny_corpus):
        manifest, bank = tiny_corpus
        model = AsrModel(tiny_model_cfg(), seed=18)
        cfg = TrainConfig(total_steps=2, batch_size=2, seed=19)
        result = finetune(model, manifest, bank, cfg, stream="clean")
        assert len(result.trace) == 2
