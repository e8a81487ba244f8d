"""Finite-difference gradient checks for every op and each front-end composite at toy sizes."""
from __future__ import annotations

from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from . import frontends as fe
from .dsp import Waveform
from .tensor import (
    RandomSource,
    Tensor,
    activation,
    backward,
    conv1d,
    conv2d,
    grad_check,
    group_norm,
    layer_norm,
    linear,
    log_softmax,
)
from .training import ctc_loss


class CheckResult(NamedTuple):
    name: str
    max_rel_error: float
    passed: bool


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _projection(out: Tensor, seed: int = 7) -> Tensor:
    r = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(r)).sum()


def op_checks(seed: int = 0) -> Dict[str, Callable[[float], CheckResult]]:
    rng = np.random.default_rng(seed)
    x1 = Tensor(rng.normal(size=(2, 12)))
    w1 = Tensor(rng.normal(size=(3, 2, 4)))
    b1 = Tensor(rng.normal(size=3))
    x2 = Tensor(rng.normal(size=(2, 7, 5)))
    w2 = Tensor(rng.normal(size=(3, 2, 3, 3)))
    xl = Tensor(rng.normal(size=(4, 5)))
    wl = Tensor(rng.normal(size=(3, 5)))
    bl = Tensor(rng.normal(size=3))
    xs = Tensor(_away_from_zero(rng, (3, 4)))
    xpos = Tensor(rng.uniform(0.1, 2.0, size=(3, 4)))
    gain, offset = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))
    ggain, goffset = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    xg = Tensor(rng.normal(size=(4, 6)))
    logits = Tensor(rng.normal(size=(6, 3)))

    def sq(t):
        return (t * t).sum()

    def mk(name, f, x, eps=1e-6):
        return lambda corrupt=0.0: CheckResult(name, *grad_check(f, x, eps_fd=eps, corrupt=corrupt))

    return {
        "conv1d": mk("conv1d", lambda t: sq(conv1d(x1, t, b1, stride=2)), w1),
        "conv1d_input": mk("conv1d_input", lambda t: sq(conv1d(t, w1, b1, stride=3, padding="same")), x1),
        "conv2d": mk("conv2d", lambda t: sq(conv2d(x2, t, None, 2, 1, "same")), w2),
        "conv2d_input": mk("conv2d_input", lambda t: sq(conv2d(t, w2, None, 1, 2, "valid")), x2),
        "linear": mk("linear", lambda t: sq(linear(xl, t, bl)), wl),
        "relu": mk("relu", lambda t: sq(activation(t, "relu")), xs),
        "gelu": mk("gelu", lambda t: activation(t, "gelu").sum(), xs),
        "abs": mk("abs", lambda t: sq(activation(t, "abs") * Tensor(np.arange(12.0).reshape(3, 4))), xs),
        "magnitude_root": mk("magnitude_root", lambda t: activation(t, "magnitude_root", 2.5).sum(), xs),
        "log_eps": mk("log_eps", lambda t: activation(t, "log_eps", 1e-3).sum(), xpos),
        "layer_norm": mk("layer_norm", lambda t: _projection(layer_norm(t, gain, offset)), xl),
        "group_norm": mk("group_norm", lambda t: _projection(group_norm(t, 2, ggain, goffset)), xg),
        "log_softmax": mk("log_softmax", lambda t: _projection(log_softmax(t)), logits),
        "ctc_loss": mk("ctc_loss", lambda t: ctc_loss(log_softmax(t), [1, 2, 2]), logits),
    }


TOY_COMPOSITES = {
    "log_mel": (fe.LogMelConfig(n_mels=8), 1600),
    "scf": (fe.ScfConfig(n_filters=4, kernel=16, stride=2, n_integration=2, integration_kernel=5,
                         integration_stride=2), 240),
    "wav2vec_fe": (fe.Wav2VecConfig(channels=4), 1300),
    "generic2d": (fe.Generic2DConfig(n_filters=4, kernel=16, channels_2d=3), 1300),
    "generic2d_stft_re_im": (fe.Generic2DConfig(first_layer="stft_re_im", kernel=64, channels_2d=2), 1300),
    "generic2d_stft_magnitude": (fe.Generic2DConfig(first_layer="stft_magnitude", kernel=64, channels_2d=2), 1300),
}


def composite_check(name: str, seed: int = 0, corrupt: float = 0.0, max_coords: int = 24,
                    tol: float = 1e-4) -> CheckResult:
    """Check every trainable tensor of a toy front-end (+VGG) + linear pipeline.

    Large tensors are probed on a seeded subset of ``max_coords`` coordinates.
    """
    cfg, n_samples = TOY_COMPOSITES[name]
    rng = RandomSource(seed)
    model = fe.FrontendModel(cfg, rng, model_dim=4)
    w = Waveform(rng.uniform(-0.8, 0.8, size=n_samples))
    pick = np.random.default_rng(seed + 1)
    # zero-initialised biases can park pre-activations exactly on the ReLU kink
    for pname, p in model.trainable().items():
        if pname.endswith(".bias"):
            p.data[...] = _away_from_zero(pick, p.shape)
    worst = 0.0
    for pname, p in model.trainable().items():
        coords = np.arange(p.size)
        if p.size > max_coords:
            coords = np.sort(pick.choice(p.size, max_coords, replace=False))
        err = _subset_check(lambda t: _projection(model(w)), model.params, pname, coords, corrupt)
        worst = max(worst, err)
    return CheckResult(name, worst, worst <= tol)


def _subset_check(f, params, name, coords, corrupt, eps_fd=(1e-5, 1e-6, 1e-7, 1e-8), floor=1e-6) -> float:
    """Worst relative error over ``coords``; the best of several step sizes.

    Large steps straddle ReLU/abs kinks, small steps drown in roundoff through deep stacks;
    a wrong analytic gradient disagrees at every step.
    """
    p = params[name]
    for q in params.values():
        q.zero_grad()
    backward(f(None))
    analytic = p.grad.reshape(-1)[coords].copy() if p.grad is not None else np.zeros(coords.size)
    for q in params.values():
        q.zero_grad()
    if corrupt:
        analytic = analytic * (1.0 + corrupt) + corrupt
    flat = p.data.reshape(-1)
    best = np.inf
    for eps in eps_fd:
        numeric = np.zeros(coords.size)
        for j, i in enumerate(coords):
            base = flat[i]
            flat[i] = base + eps
            up = f(None).item()
            flat[i] = base - eps
            down = f(None).item()
            flat[i] = base
            numeric[j] = (up - down) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        best = min(best, float(np.max(np.abs(analytic - numeric) / denom)))
    return best


def run_checks(scope: str = "all", seed: int = 0, corrupt: float = 0.0, tol: float = 1e-4) -> List[CheckResult]:
    ops = op_checks(seed)
    if scope == "all":
        names = list(ops) + list(TOY_COMPOSITES)
    elif scope == "ops":
        names = list(ops)
    elif scope == "frontends":
        names = list(TOY_COMPOSITES)
    else:
        names = [scope]
    results = []
    for name in names:
        if name in ops:
            r = ops[name](corrupt)
            results.append(CheckResult(r.name, r.max_rel_error, r.max_rel_error <= tol))
        elif name in TOY_COMPOSITES:
            results.append(composite_check(name, seed, corrupt, tol=tol))
        else:
            raise KeyError(f"unknown gradcheck scope {name!r}")
    return results
