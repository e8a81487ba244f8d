"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line to the terminal.
"""
import itertools
import math
import time

import numpy as np
import pytest

from genfront import analysis, cli, dsp, frontends as fe, training as tr
from genfront.checks import run_checks
from genfront.dsp import Waveform
from genfront.specaugment import MaskRect, MaskSpec, FEATURE, apply_feature_masks, mask_array, mask_stft, sample_masks
from genfront.tensor import RandomSource, Tensor, log_softmax

SR = 16000


def verdict(capsys, n: int, checks: dict, elapsed: float):
    ok = all(passed for passed, _ in checks.values())
    detail = "; ".join(f"{k}={v}" for k, (_, v) in checks.items())
    failed = [k for k, (passed, _) in checks.items() if not passed]
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s) {detail}")
    assert ok, f"criterion {n} failed: {failed}"


# 1 --------------------------------------------------------------------------------------


def test_criterion_1_parameter_accounting(capsys):
    t = time.time()
    table = {"log_mel": (1.4, 0.05), "scf": (12.4, 0.05), "wav2vec_fe": (5.0, 0.01),
             "generic2d_128": (2.3, 0.30), "generic2d_8": (0.3, 0.30)}
    checks = {}
    for name, cfg in fe.reference_configs().items():
        ref, tol = table[name]
        count = fe.count_parameters(cfg)
        dev = (count / 1e6 - ref) / ref
        checks[name] = (abs(dev) <= tol, f"{count / 1e6:.3f}M({dev:+.1%})")
    elapsed = time.time() - t
    checks["runtime<1s"] = (elapsed < 1.0, f"{elapsed:.2f}")
    verdict(capsys, 1, checks, elapsed)


# 2 --------------------------------------------------------------------------------------


def test_criterion_2_frame_rate_invariant(capsys):
    t = time.time()
    configs = {**fe.reference_configs(), **fe.first_layer_configs(), **fe.kernel_channel_sweep()}
    configs.update({f"grid{k}": c for k, c in fe.subsampling_grid().items()})
    strides = {name: fe.overall_stride(cfg) for name, cfg in configs.items()}
    checks = {"stride640": (set(strides.values()) == {640}, f"{len(strides)} configs")}
    expected = {"log_mel": 25, "scf": 24, "wav2vec_fe": 24, "generic2d_128": 25, "generic2d_8": 25}
    t1 = fe.reference_configs()
    for name, frames in expected.items():
        got = fe.frame_counts(t1[name], SR)[-1]
        checks[name] = (got == frames, got)
    checks["log_mel_pre_vgg"] = (fe.frame_counts(t1["log_mel"], SR)[0] == 98, fe.frame_counts(t1["log_mel"], SR)[0])
    checks["scf_pre_vgg"] = (fe.frame_counts(t1["scf"], SR)[1] == 96, fe.frame_counts(t1["scf"], SR)[1])
    # and the forward passes agree with the length arithmetic
    w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, SR))
    for name, cfg in [("log_mel", t1["log_mel"]), ("generic2d", fe.Generic2DConfig(n_filters=8, channels_2d=2)),
                      ("wav2vec_fe", fe.Wav2VecConfig(channels=8))]:
        got = fe.FrontendModel(cfg, RandomSource(0), model_dim=4)(w).shape[0]
        checks[f"{name}_forward"] = (got == fe.frame_counts(cfg, SR)[-1], got)
    verdict(capsys, 2, checks, time.time() - t)


# 3 --------------------------------------------------------------------------------------


def test_criterion_3_gradient_suite(capsys):
    t = time.time()
    results = run_checks("all", seed=0, tol=1e-4)
    checks = {r.name: (r.passed, f"{r.max_rel_error:.1e}") for r in results}
    required = {"conv1d", "conv2d", "linear", "relu", "gelu", "abs", "magnitude_root", "log_eps",
                "layer_norm", "group_norm", "ctc_loss", "log_mel", "scf", "wav2vec_fe", "generic2d"}
    checks["coverage"] = (required <= set(checks), len(checks))
    elapsed = time.time() - t
    checks["runtime<5min"] = (elapsed < 300, f"{elapsed:.0f}s")
    verdict(capsys, 3, checks, elapsed)


# 4 --------------------------------------------------------------------------------------


def _enumerate_ctc(lp, target):
    total = 0.0
    for path in itertools.product(range(lp.shape[1]), repeat=lp.shape[0]):
        collapsed = [s for i, s in enumerate(path) if s != 0 and (i == 0 or s != path[i - 1])]
        if collapsed == list(target):
            total += math.exp(sum(lp[t, s] for t, s in enumerate(path)))
    return -math.log(total)


def test_criterion_4_ctc_oracle(capsys):
    t = time.time()
    worst, cases, infeasible = 0.0, 0, 0
    rng = np.random.default_rng(0)
    for T, K in itertools.product(range(1, 5), range(1, 3)):
        lp = log_softmax(Tensor(rng.normal(size=(T, K + 1)))).data
        for L in range(3):
            for target in itertools.product(range(1, K + 1), repeat=L):
                if T < tr.min_alignment_length(target):
                    infeasible += 1
                    continue
                worst = max(worst, abs(tr.ctc_loss(Tensor(lp), target).item() - _enumerate_ctc(lp, target)))
                cases += 1
    verdict(capsys, 4, {"max_abs_err": (worst <= 1e-9, f"{worst:.1e}"), "cases": (cases > 0, f"{cases}+{infeasible}inf")},
            time.time() - t)


# 5 --------------------------------------------------------------------------------------


def test_criterion_5_dsp_suite(capsys):
    t = time.time()
    rng = np.random.default_rng(0)
    fft_err = max(np.abs(dsp.fft_real(x, x.size) - dsp.naive_dft(x, x.size)).max()
                  for x in (rng.normal(size=2**k) for k in range(1, 10)))
    checks = {"fft_vs_dft": (fft_err <= 1e-9, f"{fft_err:.1e}")}
    for hop in (160, 80):
        x = rng.uniform(-1, 1, 8000)
        y = dsp.istft(dsp.stft(Waveform(x), 400, hop)).samples
        err = np.abs(y[400:-400] - x[400:-400]).max()
        checks[f"istft_hop{hop}"] = (err <= 1e-6, f"{err:.1e}")
    m = dsp.mel_filterbank_matrix(80, 512)
    contiguous = all(np.all(np.diff(np.flatnonzero(c)) == 1) for c in m.T)
    mel_ok = (m.shape == (257, 80) and (m >= 0).all() and np.all(np.diff(np.argmax(m, axis=0)) >= 0)
              and (m[1:-1].max(axis=1) > 0).all() and contiguous)
    checks["mel"] = (bool(mel_ok), m.shape)
    bank = dsp.gammatone_filterbank(80, 256)
    rel = []
    for filt, fc in zip(bank.filters, bank.center_frequencies):
        freqs, db = dsp.frequency_response(filt, n_fft_pad=65536)
        rel.append(abs(freqs[np.argmax(db)] - fc) / fc)
    checks["gammatone_peaks"] = (max(rel) <= 0.05, f"{max(rel):.2%}")
    elapsed = time.time() - t
    checks["runtime<1min"] = (elapsed < 60, f"{elapsed:.0f}s")
    verdict(capsys, 5, checks, elapsed)


# 6 --------------------------------------------------------------------------------------


def test_criterion_6_specaugment(capsys):
    t = time.time()
    rng = RandomSource(0)
    preserved = True
    for seed in range(50):
        f = fe.FeatureTensor(Tensor(np.random.default_rng(seed).normal(size=(60, 40))), 160)
        rects = sample_masks(MaskSpec(2, 20, 2, 16), 60, 40, rng)
        out = apply_feature_masks(f, rects).values.data
        keep = ~mask_array((60, 40), rects)
        preserved &= np.array_equal(out[keep], f.values.data[keep]) and not out[~keep].any()
    checks = {"feature_bitwise": (bool(preserved), "50 draws")}

    w = Waveform(0.5 * np.sin(2 * np.pi * 1000 * np.arange(SR) / SR))
    out = mask_stft(w, [MaskRect(FEATURE, 28, 9)]).samples
    rms = lambda x: np.sqrt(np.mean(x[400:-400] ** 2))
    drop = 20 * np.log10(rms(w.samples) / rms(out))
    checks["tone_attenuation"] = (drop > 20, f"{drop:.1f}dB")

    frames, width, draws = 1000, 20, 100_000
    spec = MaskSpec(2, width, 0, 0)
    covered = sum(mask_array((frames, 1), sample_masks(spec, frames, 1, rng)).sum() for _ in range(draws))
    expected = (width / 2) / frames  # E[count] = 1, E[width] = W/2
    rel = abs(covered / draws / frames - expected) / expected
    checks["masked_fraction"] = (rel <= 0.02, f"{rel:.2%}")
    elapsed = time.time() - t
    checks["runtime<1min"] = (elapsed < 60, f"{elapsed:.0f}s")
    verdict(capsys, 6, checks, elapsed)


# 7 and 8 --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_run():
    cfg = fe.Generic2DConfig(**cli.TOY_GENERIC2D)
    start = time.time()
    report = tr.train_toy(cfg, tr.ToyTask(), tr.TrainConfig(), MaskSpec(), RandomSource(0))
    return cfg, report, time.time() - start


@pytest.mark.slow
def test_criterion_7_toy_end_to_end(capsys, toy_run):
    cfg, report, elapsed = toy_run
    checks = {
        "first_layer": (cfg.first_layer == "filterbank", cfg.first_layer),
        "dev_accuracy": (report.dev_accuracy[-1] >= 0.9, f"{report.dev_accuracy[-1]:.3f}"),
        "loss_reduction": (report.loss_reduction >= 0.5, f"{report.loss_reduction:.1%}"),
        "runtime<30min": (elapsed < 1800, f"{elapsed:.0f}s"),
    }
    t1 = fe.reference_configs()
    for name, frontend in [("log_mel", t1["log_mel"]), ("scf", t1["scf"]), ("wav2vec_fe", t1["wav2vec_fe"]),
                           ("generic2d", cfg)]:
        small = tr.TrainConfig(epochs=1, batch=2, model_dim=16, hidden_dim=16, context=1)
        try:
            r = tr.train_toy(frontend, tr.ToyTask(n_train=2, n_dev=1, max_length=2), small, MaskSpec(),
                             RandomSource(0))
            checks[f"runs_{name}"] = (bool(np.isfinite(r.epoch_losses).all()), "ok")
        except Exception as err:  # reported as a failed check, not an error
            checks[f"runs_{name}"] = (False, type(err).__name__)
    verdict(capsys, 7, checks, elapsed)


@pytest.mark.slow
def test_criterion_8_analysis_fidelity(capsys, toy_run):
    t = time.time()
    _, report, _ = toy_run
    learned = report.params["g2d.filterbank.weight"].data
    bank = learned.reshape(learned.shape[0], -1)
    analyses = analysis.analyze_filters(bank)
    bandpass = float(np.mean([a.is_bandpass() for a in analyses]))
    checks = {"bandpass_fraction": (bandpass >= 0.5, f"{bandpass:.2f}")}

    order = analysis.sort_filters(analyses)
    keys = [(analyses[i].peak_frequency, analyses[i].upper_cutoff_3db, analyses[i].lower_cutoff_3db) for i in order]
    perm = np.random.default_rng(0).permutation(len(bank))
    shuffled = analysis.analyze_filters(bank[perm])
    shuffled_keys = [(shuffled[i].peak_frequency, shuffled[i].upper_cutoff_3db, shuffled[i].lower_cutoff_3db)
                     for i in analysis.sort_filters(shuffled)]
    gt = analysis.analyze_filters(dsp.gammatone_filterbank(40, 256))
    sort_ok = (keys == sorted(keys) and keys == shuffled_keys and sorted(order) == list(range(len(bank)))
               and analysis.sort_filters(gt) == list(range(40)))
    checks["sort_invariants"] = (sort_ok, "ok" if sort_ok else "broken")

    inc = analysis.ordering_statistic(np.arange(32.0), n_shuffles=1000, rng=RandomSource(1))
    const_runs = analysis.monotone_runs(np.ones(10))
    peaks = [a.peak_frequency for a in analyses if not a.degenerate]
    learned_stat = analysis.ordering_statistic(peaks, n_shuffles=1000, rng=RandomSource(2))
    stat_ok = (inc.max_monotone_run == 32 and inc.null_p_value < 0.01 and max(const_runs) == 1
               and 0 < learned_stat.null_p_value <= 1)
    checks["ordering_invariants"] = (stat_ok, f"learned_max_run={learned_stat.max_monotone_run}")

    rng = np.random.default_rng(3)
    null_mean = np.mean([np.mean(analysis.monotone_runs(rng.permutation(128))) for _ in range(4000)])
    checks["null_mean_run"] = (abs(null_mean - 2.0) / 2.0 <= 0.05, f"{null_mean:.3f}")
    verdict(capsys, 8, checks, time.time() - t)
