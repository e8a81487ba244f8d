"""The four feature extractors, the VGG subsampling block, and parameter/stride accounting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import dsp
from .dsp import ConfigurationError, Waveform
from .tensor import (
    RandomSource,
    Tensor,
    conv1d,
    conv2d,
    gelu,
    group_norm,
    layer_norm,
    linear,
    log_eps,
    magnitude_root,
    matmul,
    relu,
    tabs,
    uniform_init,
)

TARGET_STRIDE = 640  # 40 ms at 16 kHz
MODEL_DIM = 512
VGG_CHANNELS = (32, 64, 64, 32)
VGG_STRIDES = (1, 2, 1, 2)


@dataclass
class LogMelConfig:
    window: int = 400
    hop: int = 160
    n_fft: int = 512
    n_mels: int = 80
    eps: float = 1e-10
    f_min: float = 0.0
    f_max: Optional[float] = None
    variant = "log_mel"


@dataclass
class ScfConfig:
    n_filters: int = 150
    kernel: int = 256
    stride: int = 10
    n_integration: int = 5
    integration_kernel: int = 40
    integration_stride: int = 16
    root: float = 2.5
    norm_eps: float = 1e-5
    variant = "scf"


@dataclass
class Wav2VecConfig:
    channels: int = 512
    kernels: Tuple[int, ...] = (10, 3, 3, 3, 3, 2, 2, 2)
    strides: Tuple[int, ...] = (5, 2, 2, 2, 2, 2, 2, 2)
    norm_eps: float = 1e-5
    variant = "wav2vec_fe"

    def __post_init__(self):
        self.kernels, self.strides = tuple(self.kernels), tuple(self.strides)
        if len(self.kernels) != len(self.strides):
            raise ConfigurationError("kernels and strides must have equal length")


@dataclass
class Generic2DConfig:
    """First layer + stack of 3x3 2D convolutions.

    For ``first_layer`` = ``filterbank`` the ``kernel``/``stride`` are the filter
    length and hop; for the STFT variants they are window size and hop.
    ``channels_2d`` is an int (uniform) or one entry per 2D layer; ``None``
    selects :func:`default_channel_plan`.
    """

    first_layer: str = "filterbank"
    n_filters: int = 128
    kernel: int = 256
    stride: int = 10
    trainable: bool = True
    init: str = "random"
    n_fft: Optional[int] = None
    n_2d_layers: int = 6
    stride2_layer_count: int = 6
    channels_2d: Union[int, Tuple[int, ...], None] = None
    variant = "generic2d"

    def __post_init__(self):
        if self.first_layer not in ("filterbank", "stft_magnitude", "stft_re_im"):
            raise ConfigurationError(f"unknown first layer {self.first_layer!r}")
        if self.init not in ("random", "gammatone"):
            raise ConfigurationError(f"unknown filterbank init {self.init!r}")
        if isinstance(self.channels_2d, (list, tuple)):
            self.channels_2d = tuple(int(c) for c in self.channels_2d)

    @property
    def channel_plan(self) -> Tuple[int, ...]:
        if self.channels_2d is None:
            return default_channel_plan(self.n_2d_layers)
        if isinstance(self.channels_2d, int):
            return (self.channels_2d,) * self.n_2d_layers
        if len(self.channels_2d) != self.n_2d_layers:
            raise ConfigurationError("channels_2d needs one entry per 2D layer")
        return self.channels_2d

    @property
    def feature_bins(self) -> int:
        if self.first_layer == "filterbank":
            return self.n_filters
        return (self.n_fft or dsp.next_power_of_two(self.kernel)) // 2 + 1


FrontendConfig = Union[LogMelConfig, ScfConfig, Wav2VecConfig, Generic2DConfig]
VARIANTS = {c.variant: c for c in (LogMelConfig, ScfConfig, Wav2VecConfig, Generic2DConfig)}


def make_config(variant: str, **options) -> FrontendConfig:
    try:
        cls = VARIANTS[variant]
    except KeyError:
        raise ConfigurationError(f"unknown front-end variant {variant!r}") from None
    known = {f.name for f in fields(cls)}
    unknown = set(options) - known
    if unknown:
        raise ConfigurationError(f"unknown {variant} options: {sorted(unknown)}")
    cfg = cls(**options)
    validate(cfg)
    return cfg


def config_to_dict(cfg: FrontendConfig) -> dict:
    return {"variant": cfg.variant, **asdict(cfg)}


def default_channel_plan(n_layers: int) -> Tuple[int, ...]:
    """32 channels at both ends of the 2D stack, 64 in between."""
    if n_layers < 1:
        raise ConfigurationError("need at least one 2D layer")
    if n_layers == 1:
        return (32,)
    return (32,) + (64,) * (n_layers - 2) + (32,)


def layer_time_strides(n_layers: int, n_stride2: int) -> Tuple[int, ...]:
    """Stride-2 layers first, extra stride-1 layers distributed round-robin after them."""
    if not 0 <= n_stride2 <= n_layers:
        raise ConfigurationError("stride2_layer_count must lie in [0, n_2d_layers]")
    if n_stride2 == 0:
        return (1,) * n_layers
    extra = n_layers - n_stride2
    plan = []
    for i in range(n_stride2):
        plan.append(2)
        plan.extend([1] * (extra // n_stride2 + (1 if i < extra % n_stride2 else 0)))
    return tuple(plan)


def frontend_stride(cfg: FrontendConfig) -> int:
    """Samples per output frame of the extractor alone (before any VGG block)."""
    if isinstance(cfg, LogMelConfig):
        return cfg.hop
    if isinstance(cfg, ScfConfig):
        return cfg.stride * cfg.integration_stride
    if isinstance(cfg, Wav2VecConfig):
        return int(np.prod(cfg.strides))
    return cfg.stride * 2**cfg.stride2_layer_count


def uses_vgg(cfg: FrontendConfig) -> bool:
    return isinstance(cfg, (LogMelConfig, ScfConfig))


def overall_stride(cfg: FrontendConfig) -> int:
    return frontend_stride(cfg) * (int(np.prod(VGG_STRIDES)) if uses_vgg(cfg) else 1)


def validate(cfg: FrontendConfig):
    if isinstance(cfg, Generic2DConfig):
        cfg.channel_plan  # raises on malformed plans
        layer_time_strides(cfg.n_2d_layers, cfg.stride2_layer_count)
        if overall_stride(cfg) != TARGET_STRIDE:
            raise ConfigurationError(
                f"first-layer stride {cfg.stride} x 2^{cfg.stride2_layer_count} = {overall_stride(cfg)}, "
                f"expected {TARGET_STRIDE}"
            )
        if cfg.first_layer != "filterbank" and cfg.n_fft is not None and not dsp.is_power_of_two(cfg.n_fft):
            raise ConfigurationError("n_fft must be a power of two")


def feature_dim(cfg: FrontendConfig) -> int:
    """Dimension of the extractor output (before VGG)."""
    if isinstance(cfg, LogMelConfig):
        return cfg.n_mels
    if isinstance(cfg, ScfConfig):
        return cfg.n_filters * cfg.n_integration
    if isinstance(cfg, Wav2VecConfig):
        return cfg.channels
    return cfg.feature_bins * cfg.channel_plan[-1]


def encoder_input_dim(cfg: FrontendConfig) -> int:
    """Dimension fed to the linear layer, i.e. after the VGG block where applicable."""
    return VGG_CHANNELS[-1] * feature_dim(cfg) if uses_vgg(cfg) else feature_dim(cfg)


# frame-count chains ---------------------------------------------------------------


def _valid(n, k, s):
    return (n - k) // s + 1


def _same(n, s):
    return -(-n // s)


def frame_counts(cfg: FrontendConfig, n_samples: int, with_vgg: bool = True) -> list:
    """Per-layer frame counts along the time axis, ending at the output frame count."""
    if isinstance(cfg, LogMelConfig):
        chain = [_valid(n_samples, cfg.window, cfg.hop)]
    elif isinstance(cfg, ScfConfig):
        t1 = _valid(n_samples, cfg.kernel, cfg.stride)
        chain = [t1, _valid(t1, cfg.integration_kernel, cfg.integration_stride)]
    elif isinstance(cfg, Wav2VecConfig):
        chain, t = [], n_samples
        for k, s in zip(cfg.kernels, cfg.strides):
            t = _valid(t, k, s)
            chain.append(t)
    else:
        chain = [_valid(n_samples, cfg.kernel, cfg.stride)]
        for s in layer_time_strides(cfg.n_2d_layers, cfg.stride2_layer_count):
            chain.append(_same(chain[-1], s))
    if with_vgg and uses_vgg(cfg):
        for s in VGG_STRIDES:
            chain.append(_same(chain[-1], s))
    return chain


def receptive_field(cfg: FrontendConfig, with_vgg: bool = True) -> int:
    """Input samples seen by one output frame."""
    layers = []  # (kernel, stride) along time, in input samples / frames
    if isinstance(cfg, LogMelConfig):
        layers.append((cfg.window, cfg.hop))
    elif isinstance(cfg, ScfConfig):
        layers += [(cfg.kernel, cfg.stride), (cfg.integration_kernel, cfg.integration_stride)]
    elif isinstance(cfg, Wav2VecConfig):
        layers += list(zip(cfg.kernels, cfg.strides))
    else:
        layers.append((cfg.kernel, cfg.stride))
        layers += [(3, s) for s in layer_time_strides(cfg.n_2d_layers, cfg.stride2_layer_count)]
    if with_vgg and uses_vgg(cfg):
        layers += [(3, s) for s in VGG_STRIDES]
    field, jump = 1, 1
    for k, s in layers:
        field += (k - 1) * jump
        jump *= s
    return field


# parameter accounting ---------------------------------------------------------------


def _conv2d_stack_params(in_channels: int, plan: Sequence[int], extra_first: bool = False) -> int:
    total, c_in = 0, in_channels
    for i, c in enumerate(plan):
        total += c * c_in * 9 + c
        if i == 0 and extra_first:
            total += c * c_in * 9  # second input plane of the [Re, Im] layer
        c_in = c
    return total


def count_frontend_parameters(cfg: FrontendConfig) -> int:
    """Learnable scalars of the extractor alone."""
    if isinstance(cfg, LogMelConfig):
        return 0
    if isinstance(cfg, ScfConfig):
        return cfg.n_filters * cfg.kernel + cfg.n_integration * cfg.integration_kernel + 2 * feature_dim(cfg)
    if isinstance(cfg, Wav2VecConfig):
        total, c_in = 0, 1
        for k in cfg.kernels:
            total += cfg.channels * c_in * k
            c_in = cfg.channels
        return total + 2 * cfg.channels
    first = cfg.n_filters * cfg.kernel if cfg.first_layer == "filterbank" and cfg.trainable else 0
    return first + _conv2d_stack_params(1, cfg.channel_plan, extra_first=cfg.first_layer == "stft_re_im")


def count_parameters(cfg: FrontendConfig, include_linear_to: Optional[int] = MODEL_DIM,
                     include_vgg: bool = True) -> int:
    """Learnable scalars before the encoder: extractor (+VGG) (+linear to the model dim)."""
    total = count_frontend_parameters(cfg)
    vgg = include_vgg and uses_vgg(cfg)
    if vgg:
        total += _conv2d_stack_params(1, VGG_CHANNELS)
    if include_linear_to:
        d_in = encoder_input_dim(cfg) if vgg else feature_dim(cfg)
        total += d_in * include_linear_to + include_linear_to
    return total


# parameter initialisation ---------------------------------------------------------


def _conv2d_init(params, prefix, c_out, c_in, rng, bias=True):
    # He-uniform weights, zero bias: keeps signal variance through deep ReLU stacks
    fan_in = c_in * 9
    params[f"{prefix}.weight"] = uniform_init((c_out, c_in, 3, 3), fan_in, rng, gain=math.sqrt(6.0))
    if bias:
        params[f"{prefix}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)


def init_frontend_params(cfg: FrontendConfig, rng: RandomSource) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    if isinstance(cfg, LogMelConfig):
        return params
    if isinstance(cfg, ScfConfig):
        params["scf.decomp.weight"] = uniform_init((cfg.n_filters, 1, cfg.kernel), cfg.kernel, rng)
        params["scf.integrate.weight"] = uniform_init(
            (cfg.n_integration, 1, 1, cfg.integration_kernel), cfg.integration_kernel, rng
        )
        d = feature_dim(cfg)
        params["scf.norm.gain"] = Tensor(np.ones(d), requires_grad=True)
        params["scf.norm.offset"] = Tensor(np.zeros(d), requires_grad=True)
        return params
    if isinstance(cfg, Wav2VecConfig):
        c_in = 1
        for i, k in enumerate(cfg.kernels):
            params[f"w2v.conv{i}.weight"] = uniform_init((cfg.channels, c_in, k), c_in * k, rng)
            c_in = cfg.channels
        params["w2v.norm.gain"] = Tensor(np.ones(cfg.channels), requires_grad=True)
        params["w2v.norm.offset"] = Tensor(np.zeros(cfg.channels), requires_grad=True)
        return params
    if cfg.first_layer == "filterbank":
        if cfg.init == "gammatone":
            bank = dsp.gammatone_filterbank(cfg.n_filters, cfg.kernel).filters
        else:
            bank = dsp.random_filterbank(cfg.n_filters, cfg.kernel, rng).filters
        params["g2d.filterbank.weight"] = Tensor(bank[:, None, :], requires_grad=cfg.trainable)
    c_in = 1
    for i, c in enumerate(cfg.channel_plan):
        _conv2d_init(params, f"g2d.conv{i}", c, c_in, rng)
        if i == 0 and cfg.first_layer == "stft_re_im":
            params["g2d.conv0.weight_im"] = uniform_init((c, 1, 3, 3), 9, rng, gain=math.sqrt(6.0))
        c_in = c
    return params


def init_vgg_params(rng: RandomSource) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    c_in = 1
    for i, c in enumerate(VGG_CHANNELS):
        _conv2d_init(params, f"vgg.conv{i}", c, c_in, rng)
        c_in = c
    return params


def init_linear_params(d_in: int, d_out: int, rng: RandomSource, prefix: str = "linear") -> Dict[str, Tensor]:
    return {
        f"{prefix}.weight": uniform_init((d_out, d_in), d_in, rng),
        f"{prefix}.bias": uniform_init((d_out,), d_in, rng),
    }


# forward passes -----------------------------------------------------------------------


@dataclass
class FeatureTensor:
    values: Tensor  # [frames, dim]
    frame_shift: int  # samples

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _waveform_tensor(w: Waveform) -> Tensor:
    return Tensor(w.samples[None, :])


def _merge_channels(x: Tensor) -> Tensor:
    """[C, T, F] -> [T, C*F]."""
    c, t, f = x.shape
    return x.transpose(1, 0, 2).reshape(t, c * f)


def logmel_forward(w: Waveform, cfg: LogMelConfig = LogMelConfig()) -> FeatureTensor:
    spec = dsp.stft(w, cfg.window, cfg.hop, cfg.n_fft)
    power = np.abs(spec.values) ** 2
    mel = dsp.mel_filterbank_matrix(cfg.n_mels, spec.n_fft, w.sample_rate, cfg.f_min, cfg.f_max)
    return FeatureTensor(log_eps(matmul(Tensor(power), Tensor(mel)), cfg.eps), cfg.hop)


def scf_forward(w: Waveform, params: Dict[str, Tensor], cfg: ScfConfig = ScfConfig()) -> FeatureTensor:
    x = conv1d(_waveform_tensor(w), params["scf.decomp.weight"], stride=cfg.stride)
    x = tabs(x)
    c, t = x.shape
    # the integration filters are shared across all decomposition channels
    x = conv2d(x.reshape(1, c, t), params["scf.integrate.weight"], stride_time=1,
               stride_feature=cfg.integration_stride, padding="valid")
    x = magnitude_root(x, cfg.root)
    n_int, _, frames = x.shape
    x = x.transpose(2, 1, 0).reshape(frames, c * n_int)
    x = layer_norm(x, params["scf.norm.gain"], params["scf.norm.offset"], cfg.norm_eps)
    return FeatureTensor(x, frontend_stride(cfg))


def wav2vec_fe_forward(w: Waveform, params: Dict[str, Tensor], cfg: Wav2VecConfig = Wav2VecConfig()) -> FeatureTensor:
    receptive = 1
    for k, s in reversed(list(zip(cfg.kernels, cfg.strides))):
        receptive = (receptive - 1) * s + k
    if len(w) < receptive:
        raise dsp.EmptyOutputError(f"input of {len(w)} samples shorter than receptive field {receptive}")
    x = _waveform_tensor(w)
    for i, s in enumerate(cfg.strides):
        x = conv1d(x, params[f"w2v.conv{i}.weight"], stride=s)
        if i == 0:
            x = group_norm(x, cfg.channels, params["w2v.norm.gain"], params["w2v.norm.offset"], cfg.norm_eps)
        x = gelu(x)
    return FeatureTensor(x.transpose(1, 0), frontend_stride(cfg))


def _first_layer(w: Waveform, params, cfg: Generic2DConfig):
    """Returns the [1, T, F] input of the 2D stack, or a (re, im) pair for the STFT [Re, Im] variant."""
    if cfg.first_layer == "filterbank":
        x = tabs(conv1d(_waveform_tensor(w), params["g2d.filterbank.weight"], stride=cfg.stride))
        c, t = x.shape
        return x.transpose(1, 0).reshape(1, t, c)
    spec = dsp.stft(w, cfg.kernel, cfg.stride, cfg.n_fft)
    if cfg.first_layer == "stft_magnitude":
        return Tensor(np.abs(spec.values)[None])
    return Tensor(spec.values.real[None]), Tensor(spec.values.imag[None])


def generic2d_forward(w: Waveform, params: Dict[str, Tensor], cfg: Generic2DConfig = Generic2DConfig()) -> FeatureTensor:
    validate(cfg)
    x = _first_layer(w, params, cfg)
    strides = layer_time_strides(cfg.n_2d_layers, cfg.stride2_layer_count)
    for i, s in enumerate(strides):
        weight, bias = params[f"g2d.conv{i}.weight"], params[f"g2d.conv{i}.bias"]
        if isinstance(x, tuple):
            re, im = x
            x = conv2d(re, weight, bias, stride_time=s) + conv2d(im, params["g2d.conv0.weight_im"], stride_time=s)
        else:
            x = conv2d(x, weight, bias, stride_time=s)
        x = relu(x)
    return FeatureTensor(_merge_channels(x), overall_stride(cfg))


def vgg_block_forward(f: FeatureTensor, params: Dict[str, Tensor]) -> FeatureTensor:
    t, d = f.values.shape
    x = f.values.reshape(1, t, d)
    for i, s in enumerate(VGG_STRIDES):
        x = relu(conv2d(x, params[f"vgg.conv{i}.weight"], params[f"vgg.conv{i}.bias"], stride_time=s))
    return FeatureTensor(_merge_channels(x), f.frame_shift * int(np.prod(VGG_STRIDES)))


def frontend_forward(w: Waveform, params: Dict[str, Tensor], cfg: FrontendConfig) -> FeatureTensor:
    """Extractor output only (10 ms rate for log Mel / SCF, 40 ms otherwise)."""
    if isinstance(cfg, LogMelConfig):
        return logmel_forward(w, cfg)
    if isinstance(cfg, ScfConfig):
        return scf_forward(w, params, cfg)
    if isinstance(cfg, Wav2VecConfig):
        return wav2vec_fe_forward(w, params, cfg)
    return generic2d_forward(w, params, cfg)


class FrontendModel:
    """Extractor, optional VGG block and the linear map to the model dimension."""

    def __init__(self, cfg: FrontendConfig, rng: RandomSource, model_dim: Optional[int] = MODEL_DIM):
        validate(cfg)
        self.cfg = cfg
        self.model_dim = model_dim
        self.params: Dict[str, Tensor] = init_frontend_params(cfg, rng)
        if uses_vgg(cfg):
            self.params.update(init_vgg_params(rng))
        if model_dim:
            self.params.update(init_linear_params(encoder_input_dim(cfg), model_dim, rng))

    def trainable(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.trainable().values())

    def extract(self, w: Waveform, feature_hook=None) -> FeatureTensor:
        """Features before the linear layer. ``feature_hook`` runs between extractor and VGG."""
        f = frontend_forward(w, self.params, self.cfg)
        if feature_hook is not None:
            f = feature_hook(f)
        if uses_vgg(self.cfg):
            f = vgg_block_forward(f, self.params)
        return f

    def __call__(self, w: Waveform, feature_hook=None) -> Tensor:
        f = self.extract(w, feature_hook)
        if not self.model_dim:
            return f.values
        return linear(f.values, self.params["linear.weight"], self.params["linear.bias"])


# presets --------------------------------------------------------------------------


def reference_configs() -> Dict[str, FrontendConfig]:
    """The five reference extractor configurations, each with a published parameter total."""
    return {
        "log_mel": LogMelConfig(),
        "scf": ScfConfig(),
        "wav2vec_fe": Wav2VecConfig(),
        "generic2d_128": Generic2DConfig(n_filters=128),
        "generic2d_8": Generic2DConfig(n_filters=8),
    }


def first_layer_configs() -> Dict[str, Generic2DConfig]:
    """First-layer variants; all subsample by 10 and use six stride-2 2D layers."""
    return {
        "stft_magnitude": Generic2DConfig(first_layer="stft_magnitude", kernel=400, stride=10),
        "stft_re_im": Generic2DConfig(first_layer="stft_re_im", kernel=400, stride=10),
        "gammatone_frozen": Generic2DConfig(n_filters=80, init="gammatone", trainable=False),
        "gammatone_trainable": Generic2DConfig(n_filters=80, init="gammatone"),
        "random_trainable": Generic2DConfig(n_filters=80),
    }


def subsampling_grid(max_layers: int = 12) -> Dict[Tuple[int, int], Generic2DConfig]:
    """(first-layer stride, number of 2D layers) -> config, 80 random filters of length 256."""
    grid = {}
    for stride, n_stride2 in ((10, 6), (40, 4), (160, 2)):
        for n_layers in range(n_stride2, max_layers + 1, 2):
            grid[(stride, n_layers)] = Generic2DConfig(
                n_filters=80, stride=stride, n_2d_layers=n_layers, stride2_layer_count=n_stride2
            )
    return grid


def kernel_channel_sweep() -> Dict[str, Generic2DConfig]:
    """Kernel-size sweep at 80 channels and channel sweep at kernel 256, stride 10."""
    sweep = {}
    for k in (16, 32, 64, 128, 256, 400):
        sweep[f"kernel{k}"] = Generic2DConfig(n_filters=80, kernel=k)
    for c in (8, 16, 32, 64, 80, 128):
        sweep[f"channels{c}"] = Generic2DConfig(n_filters=c, kernel=256)
    return sweep
