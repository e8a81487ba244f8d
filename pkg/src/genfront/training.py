"""Toy-scale CTC training of any front-end followed by a small feed-forward encoder."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import dsp, frontends as fe
from .dsp import Waveform
from .specaugment import MaskSpec, apply_feature_masks, apply_stft_masks, sample_masks
from .tensor import RandomSource, Tensor, backward, conv1d, layer_norm, linear, log_softmax, relu, uniform_init

logger = logging.getLogger(__name__)

BLANK = 0


class InfeasibleAlignmentError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


# CTC ----------------------------------------------------------------------------


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_alignment_length(target: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _ctc_tables(lp: np.ndarray, target: Sequence[int], blank: int):
    T = lp.shape[0]
    ext = _extend(target, blank)
    S = ext.size
    emit = lp[:, ext]  # [T, S]
    # transitions from s-2 are allowed into non-blank labels differing from the label two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]
    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return ext, alpha, beta, log_p


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = BLANK) -> Tensor:
    """Negative log of the total probability of all blank-augmented alignments.

    ``log_probs`` is [T, K+1] (log-softmax rows); computed by the forward
    recursion in log space, gradient from the forward-backward posteriors.
    """
    target = [int(s) for s in target]
    T = log_probs.shape[0]
    if T < min_alignment_length(target):
        raise InfeasibleAlignmentError(
            f"{T} frames cannot align a target needing {min_alignment_length(target)}"
        )
    lp = log_probs.data
    ext, alpha, beta, log_p = _ctc_tables(lp, target, blank)
    if not np.isfinite(log_p):
        raise InfeasibleAlignmentError("target has zero probability under log_probs")

    def bw(g):
        occupancy = alpha + beta - lp[:, ext] - log_p  # log posterior of (t, s)
        grad = np.zeros_like(lp)
        post = np.exp(occupancy)
        for s, label in enumerate(ext):
            grad[:, label] -= post[:, s]
        return (g * grad,)

    out = Tensor(np.array(-log_p), requires_grad=log_probs.requires_grad,
                 _parents=(log_probs,), _backward=bw, _op="ctc")
    return out


def greedy_decode(log_probs: np.ndarray, blank: int = BLANK) -> List[int]:
    best = np.argmax(log_probs, axis=1)
    out, prev = [], None
    for s in best:
        if s != prev and s != blank:
            out.append(int(s))
        prev = s
    return out


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            prev, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev + (x != y))
    return row[-1]


# optimisation -----------------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 7e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: OptimizerState, params: Dict[str, Tensor], grads: Dict[str, np.ndarray]):
    """Bias-corrected Adam with decoupled weight decay; updates in place."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float = 1.0):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient")
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def one_cycle_lr(step: int, total_steps: int, lr_start: float = 7e-6, lr_peak: float = 7e-4,
                 lr_end: float = 7e-6) -> float:
    """Linear warm-up to ``lr_peak`` at the midpoint, linear decay to ``lr_end``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    half = total_steps / 2
    if half == 0:
        return lr_peak
    if step <= half:
        return lr_start + (lr_peak - lr_start) * step / half
    return lr_peak + (lr_end - lr_peak) * (step - half) / half


# toy task ---------------------------------------------------------------------------


@dataclass
class ToyTask:
    """Symbol sequences rendered as noisy tone segments separated by noise-only gaps."""

    n_symbols: int = 2
    tone_frequencies: Optional[Tuple[float, ...]] = None
    segment_ms: float = 400.0
    gap_ms: float = 100.0
    snr_db: float = 10.0
    min_length: int = 1
    max_length: int = 3
    n_train: int = 48
    n_dev: int = 16
    seed: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.tone_frequencies is None:
            self.tone_frequencies = tuple(np.geomspace(500.0, 2500.0, self.n_symbols).tolist())
        self.tone_frequencies = tuple(float(f) for f in self.tone_frequencies)
        if len(self.tone_frequencies) != self.n_symbols:
            raise ValueError("need one tone frequency per symbol")

    @property
    def vocabulary(self) -> List[int]:
        return list(range(self.n_symbols + 1))

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_ms * self.sample_rate / 1000))

    def check_receptive_field(self, cfg: fe.FrontendConfig):
        rf = fe.receptive_field(cfg)
        if self.segment_samples < rf:
            raise ValueError(f"segments of {self.segment_samples} samples shorter than receptive field {rf}")

    def render(self, symbols: Sequence[int], rng: RandomSource) -> Waveform:
        gap = int(round(self.gap_ms * self.sample_rate / 1000))
        seg = self.segment_samples
        t = np.arange(seg) / self.sample_rate
        ramp = np.minimum(1.0, np.minimum(np.arange(seg), np.arange(seg)[::-1]) / (0.01 * self.sample_rate))
        parts = [np.zeros(gap)]
        for s in symbols:
            if not 1 <= s <= self.n_symbols:
                raise ValueError(f"symbol {s} outside vocabulary")
            amp = rng.uniform(0.3, 0.6)
            phase = rng.uniform(0, 2 * np.pi)
            parts.append(amp * ramp * np.sin(2 * np.pi * self.tone_frequencies[s - 1] * t + phase))
            parts.append(np.zeros(gap))
        clean = np.concatenate(parts)
        tone_power = 0.5 * 0.45**2
        noise = rng.normal(0.0, math.sqrt(tone_power / 10 ** (self.snr_db / 10)), clean.size)
        return Waveform(np.clip(clean + noise, -1.0, 1.0), self.sample_rate)

    def generate(self, split: str) -> List[Tuple[Waveform, List[int]]]:
        offset = {"train": 0, "dev": 1}[split]
        rng = RandomSource(self.seed * 2 + offset)
        n = self.n_train if split == "train" else self.n_dev
        data = []
        for _ in range(n):
            length = int(rng.integers(self.min_length, self.max_length))
            symbols = [int(rng.integers(1, self.n_symbols)) for _ in range(length)]
            data.append((self.render(symbols, rng), symbols))
        return data


# model ----------------------------------------------------------------------------


class ToyModel:
    """Front-end, linear to ``model_dim``, layer norm, two ReLU feed-forward layers, output projection.

    The layer norm mirrors the pre-norm input of a Conformer block. With
    ``context`` > 0 the first feed-forward layer sees ``context`` frames on
    each side (a same-padded temporal convolution), so frames inside a long
    stationary segment can tell where they sit in it.
    """

    def __init__(self, cfg: fe.FrontendConfig, n_outputs: int, rng: RandomSource,
                 model_dim: int = fe.MODEL_DIM, hidden_dim: int = 512, context: int = 0):
        self.context = int(context)
        self.frontend = fe.FrontendModel(cfg, rng, model_dim)
        self.params = dict(self.frontend.params)
        self.params["enc.norm.gain"] = Tensor(np.ones(model_dim), requires_grad=True)
        self.params["enc.norm.offset"] = Tensor(np.zeros(model_dim), requires_grad=True)
        if self.context:
            k = 2 * self.context + 1
            self.params["enc.ff0.weight"] = uniform_init((hidden_dim, model_dim, k), model_dim * k, rng)
            self.params["enc.ff0.bias"] = uniform_init((hidden_dim,), model_dim * k, rng)
        else:
            self.params.update(fe.init_linear_params(model_dim, hidden_dim, rng, "enc.ff0"))
        self.params.update(fe.init_linear_params(hidden_dim, hidden_dim, rng, "enc.ff1"))
        self.params.update(fe.init_linear_params(hidden_dim, n_outputs, rng, "enc.out"))
        self.frontend.params = self.params

    def trainable(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def __call__(self, w: Waveform, feature_hook=None) -> Tensor:
        x = self.frontend(w, feature_hook)
        p = self.params
        x = layer_norm(x, p["enc.norm.gain"], p["enc.norm.offset"])
        if self.context:
            x = conv1d(x.transpose(1, 0), p["enc.ff0.weight"], p["enc.ff0.bias"], padding="same")
            x = relu(x.transpose(1, 0))
        else:
            x = relu(linear(x, p["enc.ff0.weight"], p["enc.ff0.bias"]))
        x = relu(linear(x, p["enc.ff1.weight"], p["enc.ff1.bias"]))
        return log_softmax(linear(x, p["enc.out.weight"], p["enc.out.bias"]))


@dataclass
class TrainConfig:
    epochs: int = 12
    batch: int = 2
    lr_start: float = 7e-6
    lr_peak: float = 7e-4
    lr_end: float = 7e-6
    weight_decay: float = 0.01
    clip: float = 1.0
    speed_factors: Tuple[float, ...] = (0.9, 1.0, 1.1)
    mask_placement: str = "stft"  # stft | features | none
    model_dim: int = fe.MODEL_DIM
    hidden_dim: int = 512
    context: int = 4


@dataclass
class TrainReport:
    epoch_losses: List[float]
    dev_accuracy: List[float]
    step_losses: List[float]
    params: Dict[str, Tensor]
    config: fe.FrontendConfig

    @property
    def loss_reduction(self) -> float:
        return 1.0 - self.epoch_losses[-1] / self.epoch_losses[0]

    def to_lines(self) -> List[str]:
        return [
            json.dumps({"epoch": i + 1, "mean_loss": loss, "dev_symbol_accuracy": acc})
            for i, (loss, acc) in enumerate(zip(self.epoch_losses, self.dev_accuracy))
        ]


def evaluate(model: ToyModel, data) -> float:
    """Greedy-decoding symbol accuracy, 1 - (total edits / total reference symbols)."""
    errors = total = 0
    for w, target in data:
        hyp = greedy_decode(model(w).data)
        errors += edit_distance(hyp, target)
        total += len(target)
    return max(0.0, 1.0 - errors / total)


def train_toy(frontend_cfg: fe.FrontendConfig, task: ToyTask, train_cfg: TrainConfig = TrainConfig(),
              spec: Optional[MaskSpec] = None, rng: Optional[RandomSource] = None) -> TrainReport:
    rng = RandomSource(0) if rng is None else rng
    fe.validate(frontend_cfg)
    task.check_receptive_field(frontend_cfg)
    train, dev = task.generate("train"), task.generate("dev")
    model = ToyModel(frontend_cfg, task.n_symbols + 1, rng.spawn(), train_cfg.model_dim, train_cfg.hidden_dim,
                     train_cfg.context)
    params = model.trainable()
    state = OptimizerState(lr=train_cfg.lr_start, weight_decay=train_cfg.weight_decay)
    steps_per_epoch = -(-len(train) // train_cfg.batch)
    total_steps = steps_per_epoch * train_cfg.epochs
    epoch_losses, dev_acc, step_losses = [], [], []
    data_rng = rng.spawn()
    step = 0
    for epoch in range(train_cfg.epochs):
        order = data_rng.permutation(len(train))
        losses = []
        for b in range(steps_per_epoch):
            batch = [train[i] for i in order[b * train_cfg.batch : (b + 1) * train_cfg.batch]]
            for p in params.values():
                p.zero_grad()
            batch_loss = 0.0
            for w, target in batch:
                factor = data_rng.choice(train_cfg.speed_factors) if train_cfg.speed_factors else 1.0
                w = dsp.resample_speed(w, factor)
                hook = None
                if spec is not None and train_cfg.mask_placement == "stft":
                    w = apply_stft_masks(w, spec, data_rng)
                elif spec is not None and train_cfg.mask_placement == "features":
                    def hook(f, _rng=data_rng):
                        return apply_feature_masks(f, sample_masks(spec, f.frames, f.dim, _rng), spec.mask_value)
                loss = ctc_loss(model(w, hook), target) * (1.0 / len(batch))
                if not np.isfinite(loss.item()):
                    raise TrainingDivergedError(step, loss.item())
                backward(loss)
                batch_loss += loss.item()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            grads, _ = clip_grad_norm(grads, train_cfg.clip)
            state.lr = one_cycle_lr(step, total_steps, train_cfg.lr_start, train_cfg.lr_peak, train_cfg.lr_end)
            adamw_step(state, params, grads)
            step += 1
            losses.append(batch_loss)
            step_losses.append(batch_loss)
        epoch_losses.append(float(np.mean(losses)))
        dev_acc.append(evaluate(model, dev))
        logger.info("epoch %d loss %.4f dev accuracy %.3f", epoch + 1, epoch_losses[-1], dev_acc[-1])
    for p in params.values():
        p.zero_grad()
    return TrainReport(epoch_losses, dev_acc, step_losses, model.params, frontend_cfg)


# checkpoints ---------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GFCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Dict[str, Tensor], config_text: str = ""):
    """Header (magic, u16 version, u32 config length, config utf-8, u32 count), then
    per parameter: u16 name length, name, u16 rank, u64 extents, little-endian f64 data."""
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<H", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, cfg_len = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    config_text = blob[pos : pos + cfg_len].decode("utf-8")
    pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        name = blob[pos + 2 : pos + 2 + n].decode("utf-8")
        pos += 2 + n
        (rank,) = struct.unpack_from("<H", blob, pos)
        shape = struct.unpack_from(f"<{rank}Q", blob, pos + 2)
        pos += 2 + 8 * rank
        size = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return params, config_text
