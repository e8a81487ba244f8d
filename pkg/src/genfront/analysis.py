"""Frequency-response analysis of first-layer filters, filter sorting and ordering statistics."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import dsp, frontends as fe
from .dsp import FilterBank
from .tensor import RandomSource

CUTOFF_DB = -3.0


@dataclass
class FilterAnalysis:
    filter_index: int
    peak_frequency: float
    lower_cutoff_3db: float
    upper_cutoff_3db: float
    frequencies: np.ndarray
    response: np.ndarray  # dB, 0 at the peak
    degenerate: bool = False

    @property
    def bandwidth(self) -> float:
        return self.upper_cutoff_3db - self.lower_cutoff_3db

    def is_bandpass(self) -> bool:
        """Peak above DC with a 3 dB drop found on both sides."""
        if self.degenerate:
            return False
        nyquist = self.frequencies[-1]
        return self.peak_frequency > 0 and self.lower_cutoff_3db > 0 and self.upper_cutoff_3db < nyquist


def _crossing(freqs, db, inside: int, outside: int) -> float:
    """Interpolated frequency where the response passes CUTOFF_DB between two bins."""
    a, b = db[inside], db[outside]
    if not np.isfinite(b):
        return float(freqs[outside])
    frac = (a - CUTOFF_DB) / (a - b)
    return float(freqs[inside] + frac * (freqs[outside] - freqs[inside]))


def analyze_filter(filt, index: int = 0, sample_rate: int = dsp.DEFAULT_SAMPLE_RATE,
                   n_fft_pad: Optional[int] = None) -> FilterAnalysis:
    freqs, db = dsp.frequency_response(filt, sample_rate, n_fft_pad)
    peak = int(np.argmax(db))  # first maximum -> lowest frequency on ties
    below = np.flatnonzero(db[:peak] < CUTOFF_DB)
    lower = _crossing(freqs, db, below[-1] + 1, below[-1]) if below.size else 0.0
    above = np.flatnonzero(db[peak + 1 :] < CUTOFF_DB)
    upper = _crossing(freqs, db, peak + above[0], peak + above[0] + 1) if above.size else float(freqs[-1])
    return FilterAnalysis(index, float(freqs[peak]), lower, upper, freqs, db)


def analyze_filters(bank, sample_rate: Optional[int] = None, n_fft_pad: Optional[int] = None,
                    degenerate_rel_energy: float = 1e-10) -> List[FilterAnalysis]:
    """Analyse every row of a filterbank; near-zero-energy rows are flagged, not fatal."""
    if isinstance(bank, FilterBank):
        sample_rate = bank.sample_rate if sample_rate is None else sample_rate
        filters = bank.filters
    else:
        filters = np.atleast_2d(np.asarray(bank, dtype=np.float64))
    sample_rate = dsp.DEFAULT_SAMPLE_RATE if sample_rate is None else sample_rate
    filters = filters.reshape(filters.shape[0], -1)
    energy = np.sum(filters**2, axis=1)
    threshold = degenerate_rel_energy * energy.max() if energy.max() > 0 else 0.0
    out = []
    for i, filt in enumerate(filters):
        if energy[i] <= threshold or energy[i] == 0:
            n = n_fft_pad or dsp.next_power_of_two(4 * filt.size)
            freqs = np.arange(n // 2 + 1) * sample_rate / n
            out.append(FilterAnalysis(i, math.nan, math.nan, math.nan, freqs, np.full(freqs.size, -np.inf), True))
        else:
            out.append(analyze_filter(filt, i, sample_rate, n_fft_pad))
    return out


def sort_filters(analyses: Sequence[FilterAnalysis]) -> List[int]:
    """Stable order by (peak, upper cutoff, lower cutoff); degenerate filters go last."""

    def key(i):
        a = analyses[i]
        if a.degenerate:
            return (1, 0.0, 0.0, 0.0)
        return (0, a.peak_frequency, a.upper_cutoff_3db, a.lower_cutoff_3db)

    return sorted(range(len(analyses)), key=key)


# ordering statistic -----------------------------------------------------------


class OrderingStatistic(NamedTuple):
    max_monotone_run: int
    mean_monotone_run: float
    null_p_value: float


def monotone_runs(values) -> List[int]:
    """Lengths of all maximal strictly ascending runs and all maximal strictly descending runs.

    Each direction partitions the sequence, so a random order averages close to 2.
    """
    x = np.asarray(values, dtype=np.float64)
    runs = []
    for breaks in (np.diff(x) <= 0, np.diff(x) >= 0):
        cuts = np.concatenate([[0], np.flatnonzero(breaks) + 1, [x.size]])
        runs.extend(np.diff(cuts).tolist())
    return runs


def _max_runs(rows: np.ndarray) -> np.ndarray:
    """Longest strictly monotone run per row of a 2D array."""
    d = np.diff(rows, axis=1)
    idx = np.arange(d.shape[1])
    best = np.zeros(rows.shape[0], dtype=np.int64)
    for steps in (d > 0, d < 0):
        last_break = np.maximum.accumulate(np.where(steps, -1, idx), axis=1)
        best = np.maximum(best, (idx - last_break).max(axis=1))
    return best + 1


def ordering_statistic(center_freqs, n_shuffles: int = 10_000, rng: Optional[RandomSource] = None,
                       chunk: int = 2000) -> OrderingStatistic:
    """Run-length summary of the learned filter order plus a permutation-test p-value.

    The p-value is for the longest monotone run, with the usual +1 correction.
    """
    x = np.asarray(center_freqs, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two filters")
    rng = RandomSource(0) if rng is None else rng
    runs = monotone_runs(x)
    observed = max(runs)
    exceed, done = 0, 0
    while done < n_shuffles:
        m = min(chunk, n_shuffles - done)
        shuffled = np.stack([x[rng.permutation(x.size)] for _ in range(m)])
        exceed += int(np.sum(_max_runs(shuffled) >= observed))
        done += m
    return OrderingStatistic(observed, float(np.mean(runs)), (1 + exceed) / (1 + n_shuffles))


# reports ------------------------------------------------------------------------


def frontend_row(name: str, cfg: fe.FrontendConfig, model_dim: int = fe.MODEL_DIM) -> Dict[str, object]:
    return {
        "name": name,
        "variant": cfg.variant,
        "frontend_params": fe.count_frontend_parameters(cfg),
        "params_before_encoder": fe.count_parameters(cfg, model_dim),
        "frontend_stride": fe.frontend_stride(cfg),
        "overall_stride": fe.overall_stride(cfg),
        "frontend_dim": fe.feature_dim(cfg),
        "encoder_input_dim": fe.encoder_input_dim(cfg),
        "frame_rate_hz": dsp.DEFAULT_SAMPLE_RATE / fe.overall_stride(cfg),
    }


def _table(rows: Sequence[Mapping[str, object]], sep: str = "\t") -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    buf.write(sep.join(cols) + "\n")
    for r in rows:
        buf.write(sep.join(_fmt(r[c]) for c in cols) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def filter_rows(analyses: Sequence[FilterAnalysis], order: Optional[Sequence[int]] = None) -> List[dict]:
    order = list(range(len(analyses))) if order is None else list(order)
    return [
        {
            "position": pos,
            "filter_index": analyses[i].filter_index,
            "peak_hz": analyses[i].peak_frequency,
            "lower_3db_hz": analyses[i].lower_cutoff_3db,
            "upper_3db_hz": analyses[i].upper_cutoff_3db,
            "bandpass": int(analyses[i].is_bandpass()),
            "degenerate": int(analyses[i].degenerate),
        }
        for pos, i in enumerate(order)
    ]


def emit_report(frontends: Mapping[str, fe.FrontendConfig], banks: Optional[Mapping[str, object]] = None,
                model_dim: int = fe.MODEL_DIM) -> str:
    """Tab-separated overview table, followed by one learned/sorted filter table per bank."""
    parts = [_table([frontend_row(n, c, model_dim) for n, c in frontends.items()])]
    for name, bank in (banks or {}).items():
        analyses = analyze_filters(bank)
        parts.append(f"# filters {name} learned order\n" + _table(filter_rows(analyses)))
        parts.append(f"# filters {name} sorted\n" + _table(filter_rows(analyses, sort_filters(analyses))))
    return "\n".join(parts)


def response_table(analyses: Sequence[FilterAnalysis], order: Optional[Sequence[int]] = None) -> str:
    """Long-format (filter, frequency Hz, dB) rows for external plotting."""
    order = list(range(len(analyses))) if order is None else list(order)
    buf = io.StringIO()
    buf.write("position\tfilter_index\tfrequency_hz\tdb\n")
    for pos, i in enumerate(order):
        a = analyses[i]
        for f, d in zip(a.frequencies, a.response):
            buf.write(f"{pos}\t{a.filter_index}\t{f:.6g}\t{d:.6g}\n")
    return buf.getvalue()
