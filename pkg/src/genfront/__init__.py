"""Trainable ASR feature-extraction front-ends on a small numpy autodiff engine.

Modules: ``tensor`` (autodiff), ``dsp``, ``frontends``, ``specaugment``,
``training``, ``analysis``, ``checks``, ``io``, ``cli``.
"""
from .dsp import Waveform
from .frontends import FrontendModel, Generic2DConfig, LogMelConfig, ScfConfig, Wav2VecConfig
from .tensor import RandomSource, Tensor

__version__ = "0.1.0"

__all__ = [
    "FrontendModel",
    "Generic2DConfig",
    "LogMelConfig",
    "RandomSource",
    "ScfConfig",
    "Tensor",
    "Wav2VecConfig",
    "Waveform",
]
