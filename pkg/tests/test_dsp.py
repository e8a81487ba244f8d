import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genfront import dsp
from genfront.dsp import Waveform

SR = 16000


def sine(freq, seconds=1.0, amp=1.0):
    t = np.arange(int(SR * seconds)) / SR
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


# FFT -------------------------------------------------------------------------------


@pytest.mark.parametrize("n", [2**k for k in range(1, 10)])
def test_fft_matches_naive_dft(n):
    x = np.random.default_rng(n).normal(size=n)
    err = np.abs(dsp.fft_real(x, n) - dsp.naive_dft(x, n)).max()
    assert err <= 1e-9


def test_fft_matches_numpy_reference():
    x = np.random.default_rng(0).normal(size=(3, 256))
    np.testing.assert_allclose(dsp.fft_real(x, 256), np.fft.rfft(x), atol=1e-10)
    spec = np.fft.fft(x[0])
    np.testing.assert_allclose(dsp.ifft(spec).real, x[0], atol=1e-12)


def test_fft_trivial_inputs():
    assert not dsp.fft_real(np.zeros(16), 16).any()
    impulse = np.zeros(8)
    impulse[0] = 1.0
    np.testing.assert_allclose(dsp.fft_real(impulse, 8), np.ones(5))


def test_fft_exact_bin_cosine():
    n, k0 = 64, 5
    x = np.cos(2 * np.pi * k0 * np.arange(n) / n)
    mag = np.abs(dsp.fft_real(x, n))
    assert mag[k0] == pytest.approx(n / 2)
    assert np.delete(mag, k0).max() < 1e-9


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        dsp.fft_real(np.zeros(10), 12)


def test_ifft_real_inverts_fft_real():
    x = np.random.default_rng(1).normal(size=128)
    np.testing.assert_allclose(dsp.ifft_real(dsp.fft_real(x, 128), 128), x, atol=1e-12)


# STFT ------------------------------------------------------------------------------


def test_stft_silence_shape():
    s = dsp.stft(Waveform(np.zeros(SR)))
    assert (s.frames, s.bins, s.n_fft) == (98, 257, 512)
    assert not s.values.any()


def test_stft_1khz_peak_bin():
    s = dsp.stft(sine(1000.0))
    # 1000 / (16000 / 512) = 32
    assert np.all(np.argmax(np.abs(s.values), axis=1) == 32)
    s400 = dsp.stft(sine(1000.0), n_fft=None, window_size=256)
    assert np.all(np.argmax(np.abs(s400.values), axis=1) == 16)


def test_stft_single_frame_equals_windowed_fft():
    x = np.random.default_rng(2).normal(size=512)
    s = dsp.stft(Waveform(x), window_size=512, hop=512)
    assert s.frames == 1
    np.testing.assert_allclose(s.values[0], dsp.fft_real(x * dsp.hann(512), 512), atol=1e-12)


def test_stft_too_short():
    with pytest.raises(dsp.EmptyOutputError):
        dsp.stft(Waveform(np.zeros(399)))


def test_stft_one_sided_parseval():
    x = np.random.default_rng(3).normal(size=4000)
    s = dsp.stft(Waveform(x))
    weight = np.full(s.bins, 2.0)
    weight[0] = weight[-1] = 1.0
    lhs = (weight * np.abs(s.values) ** 2).sum(axis=1)
    idx = np.arange(400)[None] + 160 * np.arange(s.frames)[:, None]
    rhs = s.n_fft * ((x[idx] * dsp.hann(400)) ** 2).sum(axis=1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8)


@pytest.mark.parametrize("hop", [160, 80])
def test_istft_roundtrip_interior(hop):
    x = np.random.default_rng(hop).uniform(-1, 1, size=8000)
    y = dsp.istft(dsp.stft(Waveform(x), 400, hop)).samples
    assert y.size == x.size
    assert np.abs(y[400:-400] - x[400:-400]).max() <= 1e-6


def test_istft_zero_and_linearity():
    x = np.random.default_rng(4).uniform(-1, 1, size=3000)
    s = dsp.stft(Waveform(x))
    zero = dsp.ComplexSpectrogram(np.zeros_like(s.values), 400, 160, 512, signal_length=3000)
    assert not dsp.istft(zero).samples.any()
    scaled = dsp.ComplexSpectrogram(2.5 * s.values, 400, 160, 512, signal_length=3000)
    np.testing.assert_allclose(dsp.istft(scaled).samples, 2.5 * dsp.istft(s).samples, atol=1e-12)


def test_istft_envelope_gap_is_configuration_error():
    s = dsp.stft(Waveform(np.ones(4000)), window_size=400, hop=500)
    with pytest.raises(dsp.ConfigurationError):
        dsp.istft(s)


# Mel -------------------------------------------------------------------------------


def test_mel_scale_values():
    assert dsp.hz_to_mel(0.0) == 0.0
    assert dsp.hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)
    np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel([50.0, 4000.0])), [50.0, 4000.0])


def test_mel_matrix_properties():
    m = dsp.mel_filterbank_matrix(80, 512)
    assert m.shape == (257, 80)
    assert dsp.mel_filterbank_matrix(80, 400).shape == (201, 80)
    assert (m >= 0).all()
    centers = np.argmax(m, axis=0)
    assert np.all(np.diff(centers) >= 0)
    # every interior bin is covered; the two edge bins sit on the outer triangle feet
    assert (m[1:-1].max(axis=1) > 0).all()
    for col in m.T:
        nz = np.flatnonzero(col)
        assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))


def test_mel_matrix_errors():
    with pytest.raises(dsp.ConfigurationError):
        dsp.mel_filterbank_matrix(200, 64)
    with pytest.raises(dsp.ConfigurationError):
        dsp.mel_filterbank_matrix(10, 512, f_min=5000, f_max=4000)


# gammatone -------------------------------------------------------------------------


def test_erb_value():
    assert dsp.erb(1000.0) == pytest.approx(132.639)


def test_gammatone_centers_and_peaks():
    bank = dsp.gammatone_filterbank(80, 256)
    assert bank.filters.shape == (80, 256)
    assert np.all(np.diff(bank.center_frequencies) > 0)
    for filt, fc in zip(bank.filters, bank.center_frequencies):
        freqs, db = dsp.frequency_response(filt, n_fft_pad=65536)
        assert abs(freqs[np.argmax(db)] - fc) <= 0.05 * fc


def test_gammatone_bandwidth_near_erb():
    bank = dsp.gammatone_filterbank(1, 1024, f_min=500.0, f_max=500.0)
    freqs, db = dsp.frequency_response(bank.filters[0], n_fft_pad=65536)
    above = freqs[db >= -3.0]
    width = above.max() - above.min()
    assert 0.5 * dsp.erb(500.0) <= width <= 2.0 * dsp.erb(500.0)


def test_gammatone_rejects_range_beyond_nyquist():
    with pytest.raises(ValueError):
        dsp.gammatone_filterbank(10, 256, f_max=9000.0)


# resampling ------------------------------------------------------------------------


def test_resample_lengths_and_identity():
    w = Waveform(np.random.default_rng(5).uniform(-1, 1, SR))
    assert dsp.resample_speed(w, 1.0).samples.tolist() == w.samples.tolist()
    assert abs(len(dsp.resample_speed(w, 0.9)) - 17778) <= 1


def test_resample_shifts_tone():
    out = dsp.resample_speed(sine(1000.0), 1.1)
    s = dsp.stft(out)
    peak = np.median(np.argmax(np.abs(s.values), axis=1)) * SR / 512
    assert abs(peak - 1100.0) <= SR / 512


def test_resample_roundtrip_low_frequency():
    w = sine(200.0, amp=0.5)
    back = dsp.resample_speed(dsp.resample_speed(w, 1 / 1.1), 1.1)
    n = min(len(back), len(w))
    err = back.samples[400 : n - 400] - w.samples[400 : n - 400]
    assert np.sqrt(np.mean(err**2)) <= 1e-3


# frequency response ----------------------------------------------------------------


def test_frequency_response_examples():
    impulse = np.zeros(64)
    impulse[0] = 1.0
    _, db = dsp.frequency_response(impulse)
    np.testing.assert_allclose(db, 0.0, atol=1e-12)
    t = np.arange(256) / SR
    tone = np.cos(2 * np.pi * 2000 * t) * dsp.hann(256)
    freqs, db = dsp.frequency_response(tone)
    assert abs(freqs[np.argmax(db)] - 2000.0) <= SR / 1024
    with pytest.raises(dsp.DegenerateFilterError):
        dsp.frequency_response(np.zeros(16))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), log_n=st.integers(1, 9))
def test_fft_property_vs_naive(seed, log_n):
    n = 2**log_n
    x = np.random.default_rng(seed).normal(size=n)
    assert np.abs(dsp.fft_real(x, n) - dsp.naive_dft(x, n)).max() <= 1e-9
