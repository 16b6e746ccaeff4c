import wave

import numpy as np
import pytest

from clearwav.audio import (SAMPLE_RATE, MixSpec, OffsetPolicy, Waveform,
                            load_wav, mean_power, mix_at_snr, save_wav)


def sine(freq=100.0, seconds=1.0, amp=1.0):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


def achieved_snr_db(clean, gain, segment):
    p_c = np.mean(clean.samples ** 2)
    p_n = np.mean((gain * segment) ** 2)
    return 10.0 * np.log10(p_c / p_n)


class TestWavIO:
    def test_ramp_roundtrip_is_exact(self, tmp_path):
        codes = np.arange(160, dtype=np.int64) - 80
        w = Waveform(codes / 32768.0)
        save_wav(tmp_path / "ramp.wav", w)
        back = load_wav(tmp_path / "ramp.wav")
        np.testing.assert_array_equal(np.round(back.samples * 32768.0).astype(int), codes)
        np.testing.assert_array_equal(back.samples, w.samples)

    def test_all_zero_second(self, tmp_path):
        save_wav(tmp_path / "z.wav", Waveform(np.zeros(SAMPLE_RATE)))
        back = load_wav(tmp_path / "z.wav")
        assert len(back) == 16000 and np.all(back.samples == 0.0)

    def test_stereo_rejected_with_channel_count(self, tmp_path):
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(SAMPLE_RATE)
            wf.writeframes(np.zeros(400, dtype="<i2").tobytes())
        with pytest.raises(ValueError, match="channels=2"):
            load_wav(path)

    def test_wrong_rate_and_width_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(np.zeros(100, dtype="<i2").tobytes())
        with pytest.raises(ValueError, match="rate=8000"):
            load_wav(path)

    def test_save_reports_clip_count(self, tmp_path):
        w = Waveform(np.array([0.0, 1.5, -2.0, 0.25]))
        assert save_wav(tmp_path / "c.wav", w) == 2


class TestMeanPower:
    def test_unit_sine_is_half(self):
        assert mean_power(sine(100.0, seconds=1.0)) == pytest.approx(0.5, abs=1e-9)

    def test_constant_half(self):
        assert mean_power(Waveform(np.full(100, 0.5))) == pytest.approx(0.25)

    def test_concatenation_averages(self):
        a = Waveform(np.full(50, 0.5))
        b = Waveform(np.full(50, 0.1))
        both = Waveform(np.concatenate([a.samples, b.samples]))
        assert mean_power(both) == pytest.approx((mean_power(a) + mean_power(b)) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_power(Waveform(np.zeros(0)))


class TestMixAtSnr:
    def test_equal_power_zero_db_gain_one(self):
        clean = sine(100.0)
        noise = sine(431.0)  # same amplitude -> same power
        res = mix_at_snr(clean, noise, MixSpec(0.0, "n", seed=1,
                                               offset_policy=OffsetPolicy.FIXED_START))
        assert res.gain == pytest.approx(1.0, abs=1e-4)

    def test_twenty_db_gain_one_tenth(self):
        clean = Waveform(np.full(1000, 1.0))
        noise = Waveform(np.tile([1.0, -1.0], 500))
        res = mix_at_snr(clean, noise, MixSpec(20.0, "n", seed=1))
        assert res.gain == pytest.approx(0.1, abs=1e-12)
        assert achieved_snr_db(clean, res.gain, res.noise_segment) == pytest.approx(20.0, abs=0.01)

    def test_sine_vs_small_noise_gain_sqrt5(self):
        clean = sine(100.0)  # P = 0.5
        noise = Waveform(np.tile([0.1, -0.1], len(clean) // 2))  # P = 0.01
        res = mix_at_snr(clean, noise, MixSpec(10.0, "n", seed=2))
        assert res.gain == pytest.approx(np.sqrt(5.0), abs=1e-6)
        assert achieved_snr_db(clean, res.gain, res.noise_segment) == pytest.approx(10.0, abs=0.01)

    def test_silent_inputs_rejected(self):
        clean = sine()
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(Waveform(np.zeros(100)), clean, MixSpec(0.0, "n", seed=0))
        with pytest.raises(ValueError, match="silent"):
            mix_at_snr(clean, Waveform(np.zeros(100)), MixSpec(0.0, "n", seed=0))

    def test_short_noise_loops(self):
        clean = sine(100.0, seconds=1.0)
        noise = Waveform(np.tile([0.3, -0.3], 400))  # 800 samples << 16000
        res = mix_at_snr(clean, noise, MixSpec(0.0, "n", seed=3))
        assert len(res.noisy) == len(clean)
        # looped segment keeps the periodic structure of the source
        np.testing.assert_allclose(res.noise_segment[:800],
                                   res.noise_segment[800:1600])

    def test_fixed_start_offset_zero(self):
        clean = sine(100.0, seconds=0.1)
        noise = sine(700.0, seconds=1.0)
        res = mix_at_snr(clean, noise, MixSpec(5.0, "n", seed=9,
                                               offset_policy=OffsetPolicy.FIXED_START))
        assert res.offset == 0

    def test_mixture_not_renormalized_and_pair_reconstructs(self):
        clean = sine(100.0, amp=0.9)
        noise = sine(433.0, amp=0.9)
        res = mix_at_snr(clean, noise, MixSpec(-3.0, "n", seed=4))
        assert np.max(np.abs(res.noisy.samples)) > 1.0  # may exceed [-1, 1] in memory
        recon = res.noisy.samples - res.gain * res.noise_segment
        assert np.max(np.abs(recon - clean.samples)) <= 1e-6

    def test_same_seed_same_mixture(self):
        clean = sine(100.0)
        noise = sine(1000.0, seconds=2.0)
        spec = MixSpec(5.0, "n", seed=77)
        a = mix_at_snr(clean, noise, spec)
        b = mix_at_snr(clean, noise, MixSpec(5.0, "n", seed=77))
        np.testing.assert_array_equal(a.noisy.samples, b.noisy.samples)
