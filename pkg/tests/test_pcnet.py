import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import crandn, gradient_check
from lowres_hbf.baselines import ObjectiveInstance, exhaustive_designer, objective
from lowres_hbf.beamforming import UserDesign
from lowres_hbf.channel import ChannelConfig, generate_dataset
from lowres_hbf.pcnet import (
    ModelFormatError,
    NetArchitecture,
    PcnetDesigner,
    PcnetModel,
    ShapeMismatchError,
    StageSpec,
    TrainConfig,
    TrainingDivergedError,
    adam_init,
    adam_step,
    align_phase,
    backward,
    encode_input,
    evaluate_loss,
    forward,
    infer,
    infer_batch,
    init_model,
    load_model,
    loss_stage,
    model_input,
    save_model,
    stage_losses,
    total_loss,
    train,
    write_history_csv,
)
from lowres_hbf.pcnet.training import symmetry_transform


def tiny_arch(bits=2, dropout=0.0, **kw):
    return NetArchitecture.build(4, 4, bits=bits, widths=(16,), n_layers=2, dropout=dropout, **kw)


@pytest.fixture
def channels(rng):
    return crandn(rng, 6, 4, 4) * 2


class TestEncodeInput:
    def test_real_channel(self, rng):
        x = encode_input(rng.standard_normal((4, 4)))
        assert x.shape == (32,) and np.all(x[16:] == 0)

    def test_conjugate_flips_second_half(self, rng):
        h = crandn(rng, 4, 4)
        a, b = encode_input(h), encode_input(np.conj(h))
        np.testing.assert_array_equal(a[:16], b[:16])
        np.testing.assert_array_equal(a[16:], -b[16:])

    def test_round_trip(self, rng):
        h = crandn(rng, 3, 4, 9)
        x = encode_input(h)
        back = (x[..., :36] + 1j * x[..., 36:]).reshape(3, 4, 9)
        np.testing.assert_array_equal(back, h)

    def test_row_major(self):
        h = np.arange(6).reshape(2, 3) * (1 + 2j)
        np.testing.assert_array_equal(encode_input(h)[:6], np.arange(6))


class TestAlignPhase:
    @given(st.floats(-20, 20), st.integers(0, 2**31 - 1))
    def test_canonical_under_rotation(self, gamma, seed):
        h = crandn(np.random.default_rng(seed), 4, 4)
        a = align_phase(h)
        assert a[0, 0].imag == pytest.approx(0.0, abs=1e-15) and a[0, 0].real >= 0
        np.testing.assert_allclose(align_phase(np.exp(1j * gamma) * h), a, atol=1e-13)

    def test_zero_reference_entry(self):
        h = np.zeros((2, 2), dtype=complex)
        h[1, 1] = 1j
        np.testing.assert_array_equal(align_phase(h), h)

    def test_model_input_flag(self, channels):
        plain, ref = tiny_arch(), tiny_arch(phase_reference=True)
        np.testing.assert_array_equal(model_input(plain, channels), encode_input(channels))
        np.testing.assert_array_equal(model_input(ref, channels), encode_input(align_phase(channels)))


class TestArchitecture:
    def test_output_dims(self):
        arch = NetArchitecture.build(16, 4, bits=3, widths=(8, 12), n_layers=6)
        assert arch.input_dim == 128
        assert arch.output_dim(0) == 20 * 4 and arch.output_dim(1) == 20 * 8
        assert arch.stage_input_dim(1) == 128 + 80
        assert arch.bits == (2, 3)
        assert arch.stages[1].width == 12

    def test_default_skips(self):
        assert StageSpec(6, 8, 0.0, 2).skips == ((1, 3), (3, 6))
        assert StageSpec(2, 8, 0.0, 2).skips == ((1, 2),)
        assert StageSpec(1, 8, 0.0, 2).skips == ()

    def test_validation(self):
        with pytest.raises(ValueError):
            StageSpec(0, 8, 0.0, 2)
        with pytest.raises(ValueError):
            StageSpec(2, 8, 1.0, 2)
        with pytest.raises(ValueError):
            StageSpec(2, 8, 0.0, 2, skips=((2, 1),))
        with pytest.raises(ValueError):
            NetArchitecture(4, 4, (StageSpec(2, 8, 0, 3), StageSpec(2, 8, 0, 2)))
        with pytest.raises(ValueError):
            tiny_arch(loss_input="raw")

    def test_model_shape_check(self):
        arch = tiny_arch()
        with pytest.raises(ValueError):
            PcnetModel(arch, [np.zeros((1, 1))])
        params = init_model(arch).params
        params[0] = params[0] * np.nan
        with pytest.raises(ValueError):
            PcnetModel(arch, params)

    def test_glorot_init(self):
        m = init_model(NetArchitecture.build(4, 4, widths=(64,), n_layers=2), seed=3)
        w = m.params[0]
        limit = math.sqrt(6 / (32 + 64))
        assert np.all(np.abs(w) <= limit) and np.std(w) == pytest.approx(limit / math.sqrt(3), rel=0.1)
        assert np.all(m.params[1] == 0)


class TestForward:
    def test_eval_is_deterministic(self, channels):
        m = init_model(tiny_arch(dropout=0.3))
        a = forward(m, encode_input(channels), "eval")
        b = forward(m, encode_input(channels), "eval")
        np.testing.assert_array_equal(a.stages[0].logits_f, b.stages[0].logits_f)

    def test_softmax_rows(self, channels):
        tr = forward(init_model(tiny_arch(bits=3)), encode_input(channels))
        for s in tr.stages:
            np.testing.assert_allclose(s.probs_f.sum(axis=-1), 1.0, atol=1e-12)
            np.testing.assert_allclose(s.probs_w.sum(axis=-1), 1.0, atol=1e-12)
            assert np.all(s.probs_f > 0) and np.all(s.probs_f < 1)

    def test_no_dropout_train_equals_eval(self, channels):
        m = init_model(tiny_arch(dropout=0.0))
        a = forward(m, encode_input(channels), "train", np.random.default_rng(0))
        b = forward(m, encode_input(channels), "eval")
        np.testing.assert_array_equal(a.stages[0].logits_w, b.stages[0].logits_w)

    def test_dropout_train_differs(self, channels):
        m = init_model(tiny_arch(dropout=0.5))
        a = forward(m, encode_input(channels), "train", np.random.default_rng(0))
        b = forward(m, encode_input(channels), "eval")
        assert not np.array_equal(a.stages[0].logits_w, b.stages[0].logits_w)
        mask = a.stages[0].masks[0]
        assert set(np.unique(mask)) <= {0.0, 2.0}

    def test_stage_two_sees_stage_one(self, channels):
        m = init_model(tiny_arch(bits=3))
        tr = forward(m, encode_input(channels))
        s1, s2 = tr.stages
        np.testing.assert_array_equal(s2.stage_input[:, :32], tr.x)
        np.testing.assert_array_equal(s2.stage_input[:, 32:48], s1.probs_f.reshape(6, -1))
        np.testing.assert_array_equal(s2.stage_input[:, 48:], s1.probs_w.reshape(6, -1))

    def test_single_input(self, channels):
        m = init_model(tiny_arch())
        a = forward(m, encode_input(channels[0]))
        b = forward(m, encode_input(channels))
        np.testing.assert_allclose(a.stages[0].logits_f[0], b.stages[0].logits_f[0], atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_model(tiny_arch()), np.zeros(10))
        with pytest.raises(ValueError):
            forward(init_model(tiny_arch()), np.zeros(32), mode="test")


class TestLoss:
    def test_zero_channel(self):
        m = init_model(tiny_arch())
        h = np.zeros((2, 4, 4), dtype=complex)
        tr = forward(m, encode_input(h))
        assert loss_stage(tr, h, 2) == 0.0
        assert all(np.all(g == 0) for g in backward(m, forward(m, encode_input(h), "train"), h))

    def test_nonpositive(self, channels):
        tr = forward(init_model(tiny_arch(bits=3)), encode_input(channels))
        assert np.all(stage_losses(tr, channels, 2) <= 0)

    def test_saturation_matches_objective(self, rng):
        # huge logits on a chosen class give one-hot rows: loss = -objective
        arch = NetArchitecture(4, 4, (StageSpec(1, 4, 0.0, 2),))
        m = init_model(arch, 0)
        tx, rx = rng.integers(0, 4, 4), rng.integers(0, 4, 4)
        onehot = np.zeros((8, 4))
        onehot[np.arange(4), tx] = 1
        onehot[4 + np.arange(4), rx] = 1
        m.params[-2][:] = 0
        m.params[-1][:] = 200.0 * onehot.reshape(-1)
        h = crandn(rng, 4, 4)
        tr = forward(m, encode_input(h))
        inst = ObjectiveInstance.from_channel(h, 2)
        assert -loss_stage(tr, h, 2) == pytest.approx(objective(inst, UserDesign(tx, rx, 2)), abs=1e-12)
        d = infer(m, h, 2)
        np.testing.assert_array_equal(d.tx, tx)
        np.testing.assert_array_equal(d.rx, rx)

    def test_total_is_sum_and_mean(self, channels):
        tr = forward(init_model(tiny_arch(bits=3)), encode_input(channels))
        per = stage_losses(tr, channels, 2) + stage_losses(tr, channels, 3)
        assert total_loss(tr, channels) == pytest.approx(np.mean(per), abs=1e-14)
        tr1 = forward(init_model(tiny_arch()), encode_input(channels))
        assert total_loss(tr1, channels) == loss_stage(tr1, channels, 2)

    def test_logits_reading_is_unbounded(self, channels):
        m = init_model(tiny_arch(loss_input="logits"))
        tr = forward(m, encode_input(channels))
        base = stage_losses(tr, channels, 2, "logits")
        m.params[-1][:] *= 0
        m.params[-2][:] *= 10
        tr10 = forward(m, encode_input(channels))
        # bilinear in the two logit matrices
        np.testing.assert_allclose(stage_losses(tr10, channels, 2, "logits"), 100 * base, rtol=1e-9)


class TestBackward:
    def test_single_stage_with_dropout(self, channels):
        m = init_model(tiny_arch(dropout=0.3), seed=2)
        assert gradient_check(m, channels[:3]) <= 1e-4

    def test_concatenated(self, channels):
        m = init_model(tiny_arch(bits=3, dropout=0.2), seed=4)
        assert gradient_check(m, channels[:2]) <= 1e-4

    def test_logits_mode(self, channels):
        m = init_model(tiny_arch(bits=3, loss_input="logits"), seed=5)
        assert gradient_check(m, channels[:2]) <= 1e-4

    def test_stage_weights(self, channels):
        m = init_model(tiny_arch(bits=3), seed=6)
        assert gradient_check(m, channels[:2], stage_weights=[1.0, 0.0]) <= 1e-4

    def test_stage_one_gets_both_terms(self, channels):
        m = init_model(tiny_arch(bits=3), seed=7)
        tr = forward(m, encode_input(channels), "train")
        full = backward(m, tr, channels)
        first_only = backward(m, tr, channels, [1.0, 0.0])
        n1 = m.arch.stage_param_slices()[0].stop
        diff = max(np.max(np.abs(a - b)) for a, b in zip(full[:n1], first_only[:n1]))
        assert diff > 1e-8
        # with the second term off, stage 2 receives no gradient
        assert all(np.all(g == 0) for g in first_only[n1:])


class TestAdam:
    def test_zero_gradient(self):
        m = init_model(tiny_arch())
        cfg = TrainConfig(learning_rate=1e-2)
        new, _ = adam_step(m, [np.zeros_like(p) for p in m.params], adam_init(m), cfg)
        for a, b in zip(m.params, new.params):
            np.testing.assert_array_equal(a, b)

    def test_first_step_is_signed_lr(self, rng):
        m = init_model(tiny_arch())
        cfg = TrainConfig(learning_rate=1e-3)
        grads = [rng.choice([-1, 1], p.shape) * (0.1 + rng.random(p.shape)) for p in m.params]
        new, state = adam_step(m, grads, adam_init(m), cfg)
        for p, q, g in zip(m.params, new.params, grads):
            np.testing.assert_allclose(q - p, -1e-3 * np.sign(g), rtol=1e-6)
        assert state.t == 1

    def test_bias_correction_second_step(self):
        m = PcnetModel(tiny_arch(), init_model(tiny_arch()).params)
        cfg = TrainConfig(learning_rate=1.0)
        g1 = [np.full(p.shape, 1.0) for p in m.params]
        g2 = [np.full(p.shape, 3.0) for p in m.params]
        m1, s1 = adam_step(m, g1, adam_init(m), cfg)
        m2, _ = adam_step(m1, g2, s1, cfg)
        m_hat = (0.9 * 0.1 * 1 + 0.1 * 3) / (1 - 0.81)
        v_hat = (0.999 * 0.001 * 1 + 0.001 * 9) / (1 - 0.999**2)
        expect = m_hat / (math.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(m1.params[0] - m2.params[0], expect, rtol=1e-9)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(lr_decay=0)


class TestSymmetryTransform:
    def test_codes(self, rng):
        h = crandn(rng, 1, 4, 9)
        g = h.reshape(1, 2, 2, 3, 3)
        np.testing.assert_array_equal(symmetry_transform(h, [0]), h)
        np.testing.assert_array_equal(symmetry_transform(h, [1]), np.flip(g, 1).reshape(1, 4, 9))
        np.testing.assert_array_equal(symmetry_transform(h, [8]), np.flip(g, 4).reshape(1, 4, 9))
        np.testing.assert_array_equal(symmetry_transform(h, [16]), np.conj(h))

    def test_preserves_optimum(self, rng):
        h = crandn(rng, 4, 4)
        opt = objective(ObjectiveInstance.from_channel(h, 1), exhaustive_designer(ObjectiveInstance.from_channel(h, 1)))
        for code in range(32):
            t = symmetry_transform(h[None], [code])[0]
            inst = ObjectiveInstance.from_channel(t, 1)
            assert objective(inst, exhaustive_designer(inst)) == pytest.approx(opt, rel=1e-12)

    def test_preserves_channel_statistics(self):
        rows = generate_dataset(ChannelConfig(16, 4, 1, seed=2), 3000).user_rows()
        t = symmetry_transform(rows, np.full(len(rows), 0b01101))
        # second moments of the flipped ensemble match the original
        a = np.mean(np.abs(rows[:, 0, :]) ** 2)
        b = np.mean(np.abs(t[:, 0, :]) ** 2)
        assert b == pytest.approx(a, rel=0.05)

    def test_needs_square_arrays(self, rng):
        with pytest.raises(ValueError):
            symmetry_transform(crandn(rng, 1, 2, 4), [1])


def tiny_dataset(n=20, seed=0):
    return generate_dataset(ChannelConfig(4, 4, 2, seed=seed), n)


class TestTrain:
    def test_history_and_best(self):
        m = init_model(tiny_arch())
        val = tiny_dataset(6, seed=1)
        best, hist = train(m, tiny_dataset(), TrainConfig(learning_rate=1e-3, batch_size=8, n_epochs=3), val)
        assert [r.epoch for r in hist] == [1, 2, 3]
        assert all(np.isfinite(r.val_loss) for r in hist)
        assert evaluate_loss(best, val.user_rows()) <= evaluate_loss(m, val.user_rows())

    def test_bit_identical_runs(self):
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, n_epochs=2, augment_symmetry=True, augment_phase=True)
        runs = [train(init_model(tiny_arch(dropout=0.2, phase_reference=True), 3), tiny_dataset(), cfg, tiny_dataset(4, 1))
                for _ in range(2)]
        assert [(r.train_loss, r.val_loss) for r in runs[0][1]] == [(r.train_loss, r.val_loss) for r in runs[1][1]]
        for a, b in zip(runs[0][0].params, runs[1][0].params):
            np.testing.assert_array_equal(a, b)

    def test_learns(self):
        m = init_model(tiny_arch(), 0)
        data, val = tiny_dataset(100), tiny_dataset(20, seed=1)
        best, hist = train(m, data, TrainConfig(learning_rate=3e-3, batch_size=16, n_epochs=15), val)
        assert hist[-1].train_loss < hist[0].train_loss

    def test_warm_start_only_moves_stage_one(self):
        m = init_model(tiny_arch(bits=3), 0)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=8, n_epochs=1, warm_start_epochs=1)
        best, _ = train(m, tiny_dataset(), cfg, tiny_dataset(4, 1))
        n1 = m.arch.stage_param_slices()[0].stop
        assert any(not np.array_equal(a, b) for a, b in zip(m.params[:n1], best.params[:n1]))
        for a, b in zip(m.params[n1:], best.params[n1:]):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        m = init_model(tiny_arch())
        bad = tiny_dataset()
        bad.channels[0, 0, 0, 0] = np.inf
        with pytest.raises(TrainingDivergedError):
            train(m, bad, TrainConfig(batch_size=64, n_epochs=1), tiny_dataset(4, 1))

    def test_dimension_mismatch(self):
        m = init_model(NetArchitecture.build(16, 4, widths=(8,), n_layers=2))
        with pytest.raises(ValueError):
            train(m, tiny_dataset(), TrainConfig(n_epochs=1), tiny_dataset(4, 1))

    def test_history_csv(self, tmp_path):
        _, hist = train(init_model(tiny_arch()), tiny_dataset(), TrainConfig(batch_size=8, n_epochs=2), tiny_dataset(4, 1))
        write_history_csv(hist, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3


class TestCheckpoint:
    def test_round_trip(self, tmp_path, channels):
        m = init_model(tiny_arch(bits=3, dropout=0.3, phase_reference=True, pin_first_phase=True,
                                 input_scale=0.5), 9)
        save_model(m, tmp_path / "m.pcnw")
        back = load_model(tmp_path / "m.pcnw")
        assert back.arch == m.arch and back.rng_seed == 9
        for a, b in zip(m.params, back.params):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(infer_batch(m, channels)[0], infer_batch(back, channels)[0])

    def test_header_layout(self, tmp_path):
        save_model(init_model(tiny_arch()), tmp_path / "m.pcnw")
        raw = (tmp_path / "m.pcnw").read_bytes()
        assert raw[:4] == b"PCNW" and int.from_bytes(raw[4:8], "little") == 1

    def test_corrupt_magic(self, tmp_path):
        p = tmp_path / "m.pcnw"
        save_model(init_model(tiny_arch()), p)
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(ModelFormatError):
            load_model(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "m.pcnw"
        save_model(init_model(tiny_arch()), p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = (7).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError):
            load_model(p)

    def test_truncated_and_trailing(self, tmp_path):
        p = tmp_path / "m.pcnw"
        save_model(init_model(tiny_arch()), p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(ModelFormatError):
            load_model(p)
        p.write_bytes(raw + b"\0" * 8)
        with pytest.raises(ModelFormatError):
            load_model(p)
        p.write_bytes(raw[:30])
        with pytest.raises(ModelFormatError):
            load_model(p)

    def test_expected_arch(self, tmp_path):
        p = tmp_path / "m.pcnw"
        save_model(init_model(tiny_arch()), p)
        load_model(p, expected_arch=tiny_arch())
        with pytest.raises(ShapeMismatchError):
            load_model(p, expected_arch=tiny_arch(bits=3))


class TestInference:
    def test_indices_in_range(self, channels):
        m = init_model(tiny_arch(bits=3))
        for bits in (2, 3):
            tx, rx = infer_batch(m, channels, bits)
            assert tx.shape == (6, 4) and rx.shape == (6, 4)
            assert tx.min() >= 0 and tx.max() < 2**bits

    def test_logit_shift_invariance(self, channels):
        m = init_model(tiny_arch())
        shifted = m.copy()
        bias = shifted.params[-1].reshape(8, 4)
        bias += np.arange(8)[:, None] * 3.7
        a, b = infer_batch(m, channels), infer_batch(shifted, channels)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_ties_go_low(self):
        m = init_model(tiny_arch())
        for p in m.params:
            p[...] = 0
        tx, rx = infer_batch(m, np.ones((1, 4, 4)))
        assert np.all(tx == 0) and np.all(rx == 0)

    def test_bounded_by_exhaustive(self, channels):
        m = init_model(NetArchitecture(4, 4, (StageSpec(2, 16, 0.0, 1),)), 0)
        for h in channels:
            inst = ObjectiveInstance.from_channel(h, 1)
            d = infer(m, h, 1)
            assert 0 <= objective(inst, d) <= objective(inst, exhaustive_designer(inst)) + 1e-12

    def test_designer_interface(self, channels):
        m = init_model(tiny_arch(bits=3))
        d = PcnetDesigner(m, 2)
        assert d.bits == 2
        single = d(channels[0])
        tx, rx = d.design_batch(channels)
        np.testing.assert_array_equal(single.tx, tx[0])
        with pytest.raises(ValueError):
            PcnetDesigner(m, 4)

    def test_phase_reference_makes_inference_rotation_invariant(self, channels):
        m = init_model(tiny_arch(phase_reference=True), 1)
        a = infer_batch(m, channels)
        b = infer_batch(m, channels * np.exp(1.3j))
        np.testing.assert_array_equal(a[0], b[0])


class TestPinFirstPhase:
    @given(st.integers(0, 2**31 - 1), st.integers(0, 3), st.integers(0, 3))
    def test_gain_ignores_common_alphabet_rotation(self, seed, kt, kr):
        rng = np.random.default_rng(seed)
        h = crandn(rng, 4, 9)
        tx, rx = rng.integers(0, 4, 9), rng.integers(0, 4, 4)
        inst = ObjectiveInstance.from_channel(h, 2)
        base = objective(inst, UserDesign(tx, rx, 2))
        moved = objective(inst, UserDesign((tx + kt) % 4, (rx + kr) % 4, 2))
        assert moved == pytest.approx(base, rel=1e-12)

    def test_forward_rows_are_one_hot(self, channels):
        tr = forward(init_model(tiny_arch(bits=3, pin_first_phase=True), 2), encode_input(channels))
        for stage in tr.stages:
            for probs in (stage.probs_f, stage.probs_w):
                np.testing.assert_array_equal(probs[:, 0, 0], 1.0)
                np.testing.assert_array_equal(probs[:, 0, 1:], 0.0)

    def test_gradients(self, channels):
        m = init_model(tiny_arch(bits=3, dropout=0.2, pin_first_phase=True), seed=8)
        assert gradient_check(m, channels[:3]) <= 1e-6

    def test_pinned_logits_get_no_gradient(self, channels):
        m = init_model(tiny_arch(pin_first_phase=True), 1)
        grads = backward(m, forward(m, encode_input(channels), "train"), channels)
        # output columns of the first tx shifter and the first rx shifter
        for start in (0, 16):
            np.testing.assert_array_equal(grads[-2][:, start:start + 4], 0.0)
            np.testing.assert_array_equal(grads[-1][start:start + 4], 0.0)

    def test_inference_decodes_index_zero(self, channels):
        tx, rx = infer_batch(init_model(tiny_arch(pin_first_phase=True), 4), channels)
        assert np.all(tx[:, 0] == 0) and np.all(rx[:, 0] == 0)

    def test_needs_softmax_loss(self):
        with pytest.raises(ValueError):
            tiny_arch(pin_first_phase=True, loss_input="logits")
