"""FFT, STFT/iSTFT, Mel and gammatone filterbanks, speed resampling, filter responses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor

DEFAULT_SAMPLE_RATE = 16000


class ConfigurationError(ValueError):
    pass


class EmptyOutputError(ValueError):
    pass


class DegenerateFilterError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class ComplexSpectrogram:
    values: np.ndarray  # [frames, bins] complex128
    window_size: int
    hop: int
    n_fft: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    signal_length: Optional[int] = None

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


@dataclass
class FilterBank:
    filters: np.ndarray  # [n_filters, kernel_length]
    center_frequencies: Optional[np.ndarray] = None
    origin: str = "random"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.filters = np.atleast_2d(np.asarray(self.filters, dtype=np.float64))
        if self.filters.shape[1] < 1:
            raise ValueError("kernel_length must be >= 1")
        if self.center_frequencies is not None:
            cf = np.asarray(self.center_frequencies, dtype=np.float64)
            if not (np.all(np.isfinite(cf)) and np.all(cf > 0) and np.all(cf < self.sample_rate / 2)):
                raise ValueError("center frequencies must lie in (0, Nyquist)")
            self.center_frequencies = cf

    def __len__(self):
        return self.filters.shape[0]

    def as_tensor(self, requires_grad: bool = False) -> Tensor:
        return Tensor(self.filters.copy(), requires_grad=requires_grad)


# FFT -----------------------------------------------------------------------


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length {n} is not a power of two")
    lead = x.shape[:-1]
    out = np.asarray(x, dtype=np.complex128)[..., _bit_reverse(n)]
    half = 1
    while half < n:
        twiddle = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
        blocks = out.reshape(*lead, n // (2 * half), 2, half)
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        half *= 2
    return out


def ifft(spectrum: np.ndarray) -> np.ndarray:
    n = spectrum.shape[-1]
    return np.conj(fft(np.conj(spectrum))) / n


def fft_real(signal, n: int) -> np.ndarray:
    """Bins 0..n/2 of the DFT of ``signal`` zero-padded to ``n`` (works on the last axis)."""
    if not is_power_of_two(n):
        raise ValueError(f"n={n} is not a power of two")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] > n:
        raise ValueError(f"signal length {signal.shape[-1]} exceeds n={n}")
    pad = [(0, 0)] * (signal.ndim - 1) + [(0, n - signal.shape[-1])]
    return fft(np.pad(signal, pad))[..., : n // 2 + 1]


def ifft_real(half_spectrum: np.ndarray, n: int) -> np.ndarray:
    """Real inverse of a one-sided spectrum with n/2 + 1 bins."""
    full = np.concatenate([half_spectrum, np.conj(half_spectrum[..., n // 2 - 1 : 0 : -1])], axis=-1)
    return ifft(full).real


def naive_dft(signal, n: int) -> np.ndarray:
    """O(n^2) reference transform, one-sided."""
    x = np.zeros(n)
    x[: len(signal)] = signal
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


# STFT ------------------------------------------------------------------------


def hann(window_size: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window_size) / window_size)


def frame_count(length: int, window_size: int, hop: int) -> int:
    return (length - window_size) // hop + 1


def stft(w: Waveform, window_size: int = 400, hop: int = 160, n_fft: Optional[int] = None) -> ComplexSpectrogram:
    """Framed, Hann-windowed transform without boundary padding.

    ``n_fft`` defaults to the next power of two >= window_size (512 for 400).
    """
    if hop < 1:
        raise ValueError("hop must be >= 1")
    n = len(w)
    if n < window_size:
        raise EmptyOutputError(f"signal of {n} samples shorter than one window ({window_size})")
    n_fft = next_power_of_two(window_size) if n_fft is None else n_fft
    frames = frame_count(n, window_size, hop)
    idx = np.arange(window_size)[None, :] + hop * np.arange(frames)[:, None]
    framed = w.samples[idx] * hann(window_size)
    return ComplexSpectrogram(fft_real(framed, n_fft), window_size, hop, n_fft, w.sample_rate, n)


def istft(s: ComplexSpectrogram, output_length: Optional[int] = None) -> Waveform:
    """Weighted overlap-add inverse with the analysis window as synthesis window."""
    length = s.signal_length if output_length is None else output_length
    win = hann(s.window_size)
    frames = ifft_real(s.values, s.n_fft)[:, : s.window_size] * win
    span = (s.frames - 1) * s.hop + s.window_size
    total = max(length, span)
    out = np.zeros(total)
    env = np.zeros(total)
    for m in range(s.frames):
        start = m * s.hop
        out[start : start + s.window_size] += frames[m]
        env[start : start + s.window_size] += win**2
    lo, hi = s.window_size, min(span, length) - s.window_size
    if hi > lo and np.any(env[lo:hi] <= 1e-12):
        raise ConfigurationError("window envelope vanishes inside the signal; hop too large for window")
    nz = env > 1e-12
    out[nz] /= env[nz]
    out[~nz] = 0.0
    return Waveform(out[:length], s.sample_rate)


# filterbanks -----------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(n_filters: int = 80, n_fft: int = 512, sample_rate: int = DEFAULT_SAMPLE_RATE,
                          f_min: float = 0.0, f_max: Optional[float] = None) -> np.ndarray:
    """Triangular Mel filters as a [n_fft/2 + 1, n_filters] matrix."""
    f_max = sample_rate / 2 if f_max is None else f_max
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ConfigurationError(f"need 0 <= f_min < f_max <= Nyquist, got {f_min}, {f_max}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ConfigurationError(f"{empty.size} Mel filters cover no FFT bin; reduce n_filters or raise n_fft")
    return weights.T


def erb(f):
    """Equivalent rectangular bandwidth in Hz."""
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 4.37 * np.asarray(f, dtype=np.float64) / 1000.0)


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def gammatone_filterbank(n_filters: int = 80, kernel_length: int = 256, sample_rate: int = DEFAULT_SAMPLE_RATE,
                         f_min: float = 100.0, f_max: float = 7500.0, order: int = 4) -> FilterBank:
    """4th-order gammatone impulse responses, ERB-spaced, peak-normalised to unit gain."""
    if n_filters < 1 or kernel_length < 2:
        raise ValueError("need n_filters >= 1 and kernel_length >= 2")
    if f_max > sample_rate / 2 or not 0 < f_min <= f_max:
        raise ValueError(f"invalid range [{f_min}, {f_max}] for Nyquist {sample_rate / 2}")
    if n_filters == 1:
        centers = np.array([f_min])
    else:
        centers = erb_rate_to_hz(np.linspace(hz_to_erb_rate(f_min), hz_to_erb_rate(f_max), n_filters))
    t = np.arange(kernel_length) / sample_rate
    bw = 2 * np.pi * 1.019 * erb(centers)[:, None]
    filters = t ** (order - 1) * np.exp(-bw * t) * np.cos(2 * np.pi * centers[:, None] * t)
    n_pad = next_power_of_two(8 * kernel_length)
    gain = np.abs(fft_real(filters, n_pad)).max(axis=1, keepdims=True)
    return FilterBank(filters / gain, centers, "gammatone", sample_rate)


def random_filterbank(n_filters: int, kernel_length: int, rng, sample_rate: int = DEFAULT_SAMPLE_RATE) -> FilterBank:
    bound = np.sqrt(1.0 / kernel_length)
    return FilterBank(rng.uniform(-bound, bound, size=(n_filters, kernel_length)), None, "random", sample_rate)


# resampling / responses ---------------------------------------------------------


def resample_speed(w: Waveform, factor: float) -> Waveform:
    """Play ``w`` ``factor`` times faster using linear interpolation."""
    if factor <= 0:
        raise ValueError("speed factor must be positive")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    n_out = int(round(len(w) / factor))
    positions = np.arange(n_out) * factor
    return Waveform(np.interp(positions, np.arange(len(w)), w.samples), w.sample_rate)


def frequency_response(filt, sample_rate: int = DEFAULT_SAMPLE_RATE, n_fft_pad: Optional[int] = None):
    """Magnitude response in dB relative to the filter's own maximum.

    Returns ``(frequencies_hz, response_db)`` on the n_fft_pad/2 + 1 grid.
    """
    filt = np.asarray(filt, dtype=np.float64).reshape(-1)
    n_fft_pad = next_power_of_two(4 * filt.size) if n_fft_pad is None else n_fft_pad
    if n_fft_pad < 4 * filt.size:
        raise ValueError("n_fft_pad must be at least 4x the kernel length")
    mag = np.abs(fft_real(filt, n_fft_pad))
    peak = mag.max()
    if not peak > 0:
        raise DegenerateFilterError("all-zero filter has no frequency response")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    freqs = np.arange(n_fft_pad // 2 + 1) * sample_rate / n_fft_pad
    return freqs, db
