import math

import numpy as np
import pytest

from genfront import frontends as fe
from genfront.dsp import ConfigurationError, EmptyOutputError, Waveform
from genfront.tensor import RandomSource, Tensor, backward

SR = 16000


def noise(seconds=1.0, seed=0):
    return Waveform(np.random.default_rng(seed).uniform(-0.5, 0.5, int(SR * seconds)))


# parameter accounting -----------------------------------------------------------------

# Published reference totals, in millions of parameters.
REFERENCE_TOTALS = {"log_mel": 1.4, "scf": 12.4, "wav2vec_fe": 5.0, "generic2d_128": 2.3, "generic2d_8": 0.3}


def test_parameter_counts_exact():
    counts = {name: fe.count_parameters(cfg) for name, cfg in fe.reference_configs().items()}
    assert counts == {
        "log_mel": 1_385_440,
        "scf": 12_402_820,
        "wav2vec_fe": 4_987_392,
        "generic2d_128": 2_278_496,
        "generic2d_8": 281_696,
    }


def test_parameter_counts_against_table():
    for name, cfg in fe.reference_configs().items():
        rel = abs(fe.count_parameters(cfg) / 1e6 - REFERENCE_TOTALS[name]) / REFERENCE_TOTALS[name]
        tol = {"wav2vec_fe": 0.01, "log_mel": 0.05, "scf": 0.05}.get(name, 0.30)
        assert rel <= tol, (name, rel)


def test_count_parameters_edge_cases():
    assert fe.count_parameters(fe.LogMelConfig(), include_linear_to=None, include_vgg=False) == 0
    # scf: the linear layer dominates
    linear = 32 * 750 * 512 + 512
    assert linear / fe.count_parameters(fe.ScfConfig()) > 0.99


@pytest.mark.parametrize("name", ["log_mel", "scf", "wav2vec_fe", "generic2d_8", "stft_re_im", "gammatone_frozen"])
def test_count_parameters_equals_brute_force(name):
    cfg = {**fe.reference_configs(), **fe.first_layer_configs()}[name]
    model = fe.FrontendModel(cfg, RandomSource(0))
    assert model.num_parameters() == fe.count_parameters(cfg)


# strides and frame counts -----------------------------------------------------------


def test_overall_stride_is_640_everywhere():
    configs = {**fe.reference_configs(), **fe.first_layer_configs(), **fe.kernel_channel_sweep()}
    configs.update({str(k): c for k, c in fe.subsampling_grid().items()})
    for name, cfg in configs.items():
        assert fe.overall_stride(cfg) == 640, name
    assert fe.overall_stride(fe.Wav2VecConfig()) == 5 * 2**7
    assert fe.frontend_stride(fe.LogMelConfig()) == 160


def test_frame_chains_one_second():
    c = fe.reference_configs()
    assert fe.frame_counts(c["log_mel"], SR) == [98, 98, 49, 49, 25]
    assert fe.frame_counts(c["scf"], SR)[:2] == [1575, 96]
    assert fe.frame_counts(c["scf"], SR)[-1] == 24
    assert fe.frame_counts(c["wav2vec_fe"], SR) == [3199, 1599, 799, 399, 199, 99, 49, 24]
    assert fe.frame_counts(c["generic2d_128"], SR) == [1575, 788, 394, 197, 99, 50, 25]


def test_invalid_stride_product_rejected():
    with pytest.raises(ConfigurationError):
        fe.validate(fe.Generic2DConfig(stride=20))
    with pytest.raises(ConfigurationError):
        fe.make_config("generic2d", stride=10, stride2_layer_count=5, n_2d_layers=5)
    with pytest.raises(ConfigurationError):
        fe.make_config("nonsense")
    with pytest.raises(ConfigurationError):
        fe.make_config("log_mel", bogus=1)


def test_layer_time_strides_round_robin():
    assert fe.layer_time_strides(6, 6) == (2,) * 6
    assert fe.layer_time_strides(8, 6) == (2, 1, 2, 1, 2, 2, 2, 2)
    assert fe.layer_time_strides(6, 2) == (2, 1, 1, 2, 1, 1)
    assert sum(s == 2 for s in fe.layer_time_strides(12, 4)) == 4


def test_dims():
    assert fe.feature_dim(fe.ScfConfig()) == 750
    assert fe.feature_dim(fe.Generic2DConfig(n_filters=128, channels_2d=32)) == 4096
    assert fe.encoder_input_dim(fe.LogMelConfig()) == 2560


# forward passes ----------------------------------------------------------------------


def test_logmel_shapes_and_silence():
    f = fe.logmel_forward(Waveform(np.zeros(SR)))
    assert f.values.shape == (98, 80)
    np.testing.assert_allclose(f.values.data, math.log(1e-10))


def test_logmel_scaling_adds_2_ln_alpha():
    w = noise()
    a = fe.logmel_forward(w).values.data
    b = fe.logmel_forward(Waveform(2.0 * w.samples)).values.data
    loud = a > math.log(1e-10) + 20
    np.testing.assert_allclose((b - a)[loud], 2 * math.log(2.0), atol=1e-6)


def test_scf_forward_shape_and_zero_input():
    cfg = fe.ScfConfig()
    params = fe.init_frontend_params(cfg, RandomSource(0))
    f = fe.scf_forward(noise(), params, cfg)
    assert f.values.shape == (96, 750)
    params["scf.norm.offset"].data[:] = 0.25
    z = fe.scf_forward(Waveform(np.zeros(SR)), params, cfg)
    np.testing.assert_allclose(z.values.data, 0.25)


def test_wav2vec_forward_shape_and_short_input():
    cfg = fe.Wav2VecConfig(channels=16)
    params = fe.init_frontend_params(cfg, RandomSource(0))
    assert fe.wav2vec_fe_forward(noise(), params, cfg).values.shape == (24, 16)
    with pytest.raises(EmptyOutputError):
        fe.wav2vec_fe_forward(Waveform(np.zeros(399)), params, cfg)


@pytest.mark.parametrize("first", ["filterbank", "stft_magnitude", "stft_re_im"])
def test_generic2d_forward_frames(first):
    kernel = 256 if first == "filterbank" else 400
    cfg = fe.Generic2DConfig(first_layer=first, n_filters=8, kernel=kernel, channels_2d=2)
    params = fe.init_frontend_params(cfg, RandomSource(0))
    f = fe.generic2d_forward(noise(), params, cfg)
    assert f.values.shape == (25, fe.feature_dim(cfg))


def test_stft_magnitude_half_second_tone_gives_12_frames():
    t = np.arange(SR // 2) / SR
    cfg = fe.first_layer_configs()["stft_magnitude"]
    model = fe.FrontendModel(cfg, RandomSource(0), model_dim=None)
    f = model.extract(Waveform(np.sin(2 * np.pi * 1000 * t)))
    assert f.frames == 12 == fe.frame_counts(cfg, SR // 2)[-1]


def test_vgg_block_98x80_to_25x2560():
    params = fe.init_vgg_params(RandomSource(0))
    f = fe.vgg_block_forward(fe.FeatureTensor(Tensor(np.random.default_rng(0).normal(size=(98, 80))), 160), params)
    assert f.values.shape == (25, 2560) and f.frame_shift == 640


def test_model_frames_match_chain():
    for name, cfg in [("log_mel", fe.LogMelConfig()), ("g2d", fe.Generic2DConfig(n_filters=8, channels_2d=2))]:
        out = fe.FrontendModel(cfg, RandomSource(0), model_dim=8)(noise())
        assert out.shape == (fe.frame_counts(cfg, SR)[-1], 8), name


def test_stft_magnitude_invariant_to_negation():
    cfg = fe.Generic2DConfig(first_layer="stft_magnitude", kernel=400, channels_2d=2)
    params = fe.init_frontend_params(cfg, RandomSource(1))
    w = noise(0.5)
    a = fe.generic2d_forward(w, params, cfg).values.data
    b = fe.generic2d_forward(Waveform(-w.samples), params, cfg).values.data
    assert np.array_equal(a, b)


def test_first_layer_filter_permutation_equivariance():
    cfg = fe.Generic2DConfig(n_filters=6, channels_2d=2)
    params = fe.init_frontend_params(cfg, RandomSource(2))
    w = noise(0.2)
    perm = np.random.default_rng(0).permutation(6)
    base = fe._first_layer(w, params, cfg).data
    shuffled = dict(params)
    shuffled["g2d.filterbank.weight"] = Tensor(params["g2d.filterbank.weight"].data[perm])
    np.testing.assert_array_equal(fe._first_layer(w, shuffled, cfg).data, base[:, :, perm])


@pytest.mark.parametrize("cfg", [
    fe.ScfConfig(n_filters=4, kernel=16, n_integration=2, integration_kernel=8),
    fe.Wav2VecConfig(channels=4),
    fe.Generic2DConfig(n_filters=4, kernel=32, channels_2d=3),
    fe.Generic2DConfig(first_layer="stft_re_im", kernel=64, channels_2d=2),
], ids=["scf", "wav2vec_fe", "generic2d", "stft_re_im"])
def test_every_parameter_receives_gradient(cfg):
    model = fe.FrontendModel(cfg, RandomSource(3), model_dim=4)
    out = model(noise(0.25, seed=5))
    backward((out * Tensor(np.random.default_rng(1).normal(size=out.shape))).sum())
    for name, p in model.trainable().items():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_frozen_gammatone_is_not_trainable():
    cfg = fe.first_layer_configs()["gammatone_frozen"]
    model = fe.FrontendModel(cfg, RandomSource(0))
    assert "g2d.filterbank.weight" not in model.trainable()
    assert "g2d.filterbank.weight" in model.params


def test_channel_plan():
    assert fe.default_channel_plan(6) == (32, 64, 64, 64, 64, 32)
    assert fe.Generic2DConfig(channels_2d=16).channel_plan == (16,) * 6
    with pytest.raises(ConfigurationError):
        fe.Generic2DConfig(channels_2d=(8, 8)).channel_plan


def test_receptive_field():
    assert fe.receptive_field(fe.Wav2VecConfig()) == 720  # 10 + 5*(2+4+8+16) + 80 + 160 + 320
    assert fe.receptive_field(fe.LogMelConfig(), with_vgg=False) == 400


def test_config_roundtrip():
    cfg = fe.Generic2DConfig(n_filters=8)
    d = fe.config_to_dict(cfg)
    variant = d.pop("variant")
    assert fe.make_config(variant, **d) == cfg
