"""Time/feature masking, either on extracted features or on the STFT of the waveform."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from . import dsp
from .dsp import Waveform
from .frontends import FeatureTensor
from .tensor import RandomSource, Tensor, mul

TIME, FEATURE = "time", "feature"


@dataclass
class MaskSpec:
    # defaults are placeholders; no tuned values are published
    max_time_masks: int = 2
    max_time_width: int = 20
    max_feature_masks: int = 2
    max_feature_width: int = 16
    mask_value: float = 0.0

    def __post_init__(self):
        for name in ("max_time_masks", "max_time_width", "max_feature_masks", "max_feature_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class MaskRect(NamedTuple):
    axis: str
    start: int
    width: int


def sample_masks(spec: MaskSpec, frames: int, dims: int, rng: RandomSource) -> List[MaskRect]:
    """Draw mask count, widths and starts uniformly; widths are capped at the axis extent."""
    if frames < 1 or dims < 1:
        raise ValueError("frames and dims must be >= 1")
    rects = []
    for axis, extent, max_count, max_width in (
        (TIME, frames, spec.max_time_masks, spec.max_time_width),
        (FEATURE, dims, spec.max_feature_masks, spec.max_feature_width),
    ):
        for _ in range(int(rng.integers(0, max_count))):
            width = int(rng.integers(0, min(max_width, extent)))
            start = int(rng.integers(0, extent - width))
            rects.append(MaskRect(axis, start, width))
    return rects


def mask_array(shape, rects) -> np.ndarray:
    """Boolean [frames, dims] array, True where masked."""
    frames, dims = shape
    masked = np.zeros((frames, dims), dtype=bool)
    for r in rects:
        extent = frames if r.axis == TIME else dims
        if r.axis not in (TIME, FEATURE) or r.start < 0 or r.width < 0 or r.start + r.width > extent:
            raise ValueError(f"mask {r} out of bounds for shape {shape}")
        if r.axis == TIME:
            masked[r.start : r.start + r.width, :] = True
        else:
            masked[:, r.start : r.start + r.width] = True
    return masked


def apply_feature_masks(f: FeatureTensor, rects, mask_value: float = 0.0) -> FeatureTensor:
    """Set masked cells to ``mask_value``; unmasked cells pass through untouched."""
    masked = mask_array(f.values.shape, rects)
    if not masked.any():
        return f
    keep = Tensor((~masked).astype(np.float64))
    values = mul(f.values, keep)
    if mask_value:
        values = values + Tensor(masked * mask_value)
    return FeatureTensor(values, f.frame_shift)


def mask_stft(w: Waveform, rects, window_size: int = 400, hop: int = 160) -> Waveform:
    spec = dsp.stft(w, window_size, hop)
    masked = mask_array(spec.values.shape, rects)
    spec.values = np.where(masked, 0.0, spec.values)
    return dsp.istft(spec, len(w))


def apply_stft_masks(w: Waveform, spec: MaskSpec, rng: RandomSource, window_size: int = 400,
                     hop: int = 160) -> Waveform:
    """Mask random time frames / frequency bins of the STFT and resynthesise.

    Independent of any front-end: the masked waveform can feed every extractor.
    """
    n_fft = dsp.next_power_of_two(window_size)
    frames = dsp.frame_count(len(w), window_size, hop)
    if frames < 1:
        raise dsp.EmptyOutputError("waveform shorter than one STFT window")
    rects = sample_masks(spec, frames, n_fft // 2 + 1, rng)
    return mask_stft(w, rects, window_size, hop)
