"""
Unit tests for the signal processing front-end.

Tests cover:
- WAV reading and writing (16-bit PCM, mono only)
- Framing, power spectrogram and log spectrum
- Mel filterbank construction
- Splicing and per-utterance CMVN
"""

import numpy as np
import pytest
import soundfile as sf

from models.audio import AudioBuffer, FeatureKind, FeatureMatrix, FrameConfig
from utils.dsp import (
    cmvn,
    hz_to_mel,
    log_fbank,
    log_spectrum,
    mel_filterbank,
    mel_to_hz,
    power_spectrogram,
    read_wav,
    splice,
    write_wav,
)
from utils.errors import ConfigError, DataError


def tone(seconds=0.5, freq=440.0, rate=8000):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(0.5 * np.sin(2 * np.pi * freq * t), rate)


class TestWav:
    """Test cases for WAV input and output"""

    def test_round_trip_is_exact_for_pcm_values(self, tmp_path):
        """Test samples that are multiples of 1/32768 survive a write and read"""
        pcm = np.array([0, 1, -1, 32767, -32768, 1234], dtype=np.int64)
        audio = AudioBuffer(pcm / 32768.0, 8000)
        write_wav(audio, tmp_path / "a.wav")
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == 8000
        np.testing.assert_array_equal(back.samples, audio.samples)

    def test_missing_file(self, tmp_path):
        """Test a missing WAV file raises FileNotFoundError"""
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "absent.wav")

    def test_stereo_rejected(self, tmp_path):
        """Test multi-channel files are rejected"""
        sf.write(str(tmp_path / "s.wav"), np.zeros((100, 2), dtype=np.int16), 8000, subtype="PCM_16")
        with pytest.raises(DataError, match="mono"):
            read_wav(tmp_path / "s.wav")

    def test_float_wav_rejected(self, tmp_path):
        """Test non-16-bit encodings are rejected"""
        sf.write(str(tmp_path / "f.wav"), np.zeros(100, dtype=np.float32), 8000, subtype="FLOAT")
        with pytest.raises(DataError, match="16-bit"):
            read_wav(tmp_path / "f.wav")


class TestSpectrogram:
    """Test cases for framing and spectra"""

    def test_frame_count(self):
        """Test T = 1 + floor((N - frame_len) / step) without end padding"""
        cfg = FrameConfig()
        audio = tone(seconds=0.5)  # 4000 samples, 200-sample frames, 80-sample hop
        power = power_spectrogram(audio, cfg)
        assert power.num_frames == 1 + (4000 - 200) // 80
        assert power.dim == 129
        assert power.kind == FeatureKind.POWER_SPECTRUM

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_dft(self, seed):
        """Test the power spectrogram equals a frame-by-frame direct DFT"""
        rng = np.random.default_rng(seed)
        cfg = FrameConfig()
        samples = rng.uniform(-1.0, 1.0, int(rng.integers(200, 4097)))
        power = power_spectrogram(AudioBuffer(samples, 8000), cfg).data

        window = np.hamming(200)
        n = np.arange(200)
        expected = np.zeros_like(power)
        for t in range(power.shape[0]):
            frame = samples[t * 80:t * 80 + 200] * window
            for k in range(cfg.n_bins):
                angle = 2.0 * np.pi * k * n / cfg.fft_size
                expected[t, k] = np.sum(frame * np.cos(angle)) ** 2 + np.sum(frame * np.sin(angle)) ** 2

        assert power.shape == (1 + (len(samples) - 200) // 80, 129)
        np.testing.assert_allclose(power, expected, rtol=1e-6, atol=1e-6 * expected.max())

    def test_short_audio_raises(self):
        """Test audio shorter than one frame raises DataError"""
        with pytest.raises(DataError):
            power_spectrogram(AudioBuffer(np.zeros(50), 8000), FrameConfig())

    def test_frame_longer_than_fft_raises(self):
        """Test a frame that does not fit the FFT raises DataError"""
        with pytest.raises(DataError, match="fft_size"):
            power_spectrogram(tone(rate=16000), FrameConfig(fft_size=256))

    def test_tone_peak_bin(self):
        """Test a 1 kHz tone peaks in the 1 kHz bin"""
        spectrum = log_spectrum(tone(freq=1000.0), FrameConfig())
        peak = int(np.argmax(spectrum.data.mean(axis=0)))
        assert peak == 1000 * 256 // 8000
        assert spectrum.kind == FeatureKind.LOG_SPECTRUM

    def test_silence_hits_floor(self):
        """Test silence gives the floored log values"""
        cfg = FrameConfig()
        silence = AudioBuffer(np.zeros(800), 8000)
        np.testing.assert_allclose(log_fbank(silence, cfg).data, np.log(cfg.log_floor))
        np.testing.assert_allclose(log_spectrum(silence, cfg).data, np.log(cfg.log_floor))


class TestFilterbank:
    """Test cases for the mel filterbank"""

    def test_mel_scale_inverse(self):
        """Test mel_to_hz inverts hz_to_mel"""
        freqs = np.array([0.0, 300.0, 1000.0, 4000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs)

    def test_shape_and_coverage(self):
        """Test every filter receives weight at the default settings"""
        weights = mel_filterbank(FrameConfig(), 8000)
        assert weights.shape == (40, 129)
        assert np.all(weights.sum(axis=1) > 0)
        assert weights.max() <= 1.0

    def test_empty_filter_raises(self):
        """Test too many filters for the FFT resolution raises ConfigError"""
        with pytest.raises(ConfigError, match="cover no FFT bin"):
            mel_filterbank(FrameConfig(fft_size=32, n_mels=16), 8000)

    def test_log_fbank_shape(self):
        """Test log filterbank output is T x n_mels"""
        fbank = log_fbank(tone(), FrameConfig())
        assert fbank.dim == 40
        assert fbank.kind == FeatureKind.LOG_FBANK


class TestSpliceAndCmvn:
    """Test cases for context splicing and normalisation"""

    def test_splice_replicates_edges(self):
        """Test boundary frames are replicated"""
        feat = FeatureMatrix(np.arange(4, dtype=float).reshape(4, 1))
        spliced = splice(feat, 1, 1)
        assert spliced.data.shape == (4, 3)
        np.testing.assert_array_equal(spliced.data[0], [0, 0, 1])
        np.testing.assert_array_equal(spliced.data[3], [2, 3, 3])
        assert spliced.kind == FeatureKind.SPLICED

    def test_negative_context_raises(self):
        """Test negative context is rejected"""
        with pytest.raises(ValueError):
            splice(FeatureMatrix(np.zeros((3, 2))), -1, 0)

    def test_cmvn_statistics(self):
        """Test columns have zero mean and unit variance after CMVN"""
        rng = np.random.default_rng(0)
        feat = FeatureMatrix(rng.normal(3.0, 2.0, size=(50, 4)))
        data = cmvn(feat).data
        np.testing.assert_allclose(data.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(data.std(axis=0), 1.0)

    def test_cmvn_constant_column(self):
        """Test a constant column is only centred"""
        feat = FeatureMatrix(np.full((5, 2), 4.0))
        np.testing.assert_array_equal(cmvn(feat).data, 0.0)

    def test_cmvn_keeps_means(self):
        """Test norm_means=False scales columns but keeps their means"""
        feat = FeatureMatrix(np.random.default_rng(1).normal(3.0, 2.0, size=(50, 4)))
        data = cmvn(feat, norm_means=False).data
        np.testing.assert_allclose(data.mean(axis=0), feat.data.mean(axis=0))
        np.testing.assert_allclose(data.std(axis=0), 1.0)

    def test_cmvn_switched_off(self):
        """Test both switches off return the features unchanged"""
        feat = FeatureMatrix(np.random.default_rng(2).normal(size=(6, 3)))
        np.testing.assert_allclose(cmvn(feat, norm_means=False, norm_vars=False).data, feat.data)
