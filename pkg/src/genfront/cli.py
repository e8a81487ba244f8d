"""Command-line entry point: extract | params | gradcheck | train-toy | analyze | mask.

Exit codes: 0 success, 1 check failure, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import analysis, dsp, frontends as fe, io, training
from .checks import run_checks
from .specaugment import MaskSpec, apply_stft_masks
from .tensor import RandomSource

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT_ERROR = 0, 1, 2

logger = logging.getLogger("genfront")

TOY_GENERIC2D = dict(n_filters=32, kernel=256, stride=10, channels_2d=16)


def presets() -> Dict[str, fe.FrontendConfig]:
    out = dict(fe.reference_configs())
    out.update(fe.first_layer_configs())
    out["generic2d"] = fe.Generic2DConfig()
    out["generic2d_toy"] = fe.Generic2DConfig(**TOY_GENERIC2D)
    return out


def frontend_from_sections(sections, name: Optional[str]) -> fe.FrontendConfig:
    """Preset name, then ``[frontend]`` config keys override."""
    options = dict(sections.get("frontend", {}))
    preset = name or options.pop("preset", None)
    variant = options.pop("variant", None)
    if preset:
        table = presets()
        if preset not in table:
            raise io.InputError(f"unknown front-end {preset!r}; choose from {sorted(table)}")
        base = table[preset]
        cfg = replace(base, **options) if options else base
        fe.validate(cfg)
        return cfg
    if variant is None:
        raise io.InputError("no front-end given (use --frontend or a [frontend] section)")
    return fe.make_config(variant, **options)


def _sections(args) -> dict:
    if not args.config:
        return {}
    try:
        return io.read_config(Path(args.config).read_text())
    except (OSError, ValueError) as err:
        raise io.InputError(f"cannot read config {args.config}: {err}") from err


def _mask_spec(args, sections) -> MaskSpec:
    opts = dict(sections.get("mask", {}))
    for key in ("max_time_masks", "max_time_width", "max_feature_masks", "max_feature_width"):
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return MaskSpec(**opts)


# commands ------------------------------------------------------------------------


def cmd_extract(args) -> int:
    sections = _sections(args)
    cfg = frontend_from_sections(sections, args.frontend)
    w = io.read_wav(args.audio)
    model = fe.FrontendModel(cfg, RandomSource(args.seed), model_dim=None)
    if args.checkpoint:
        params, _ = training.load_checkpoint(args.checkpoint)
        for k, v in params.items():
            if k in model.params:
                model.params[k].data[...] = v
    try:
        feats = fe.frontend_forward(w, model.params, cfg).values.data
    except dsp.EmptyOutputError as err:
        raise io.InputError(str(err)) from err
    out = Path(args.out or Path(args.audio).with_suffix(".ften"))
    io.write_features(out, feats)
    if args.preview:
        with open(str(out) + ".txt", "w") as fh:
            fh.write(f"# {cfg.variant} frames={feats.shape[0]} dim={feats.shape[1]}\n")
            np.savetxt(fh, feats[: args.preview], fmt="%.6g")
    print(f"{out}\t{feats.shape[0]}x{feats.shape[1]}")
    return EXIT_OK


def cmd_params(args) -> int:
    sections = _sections(args)
    if args.frontend or "frontend" in sections:
        configs = {args.frontend or "config": frontend_from_sections(sections, args.frontend)}
    else:
        configs = fe.reference_configs()
    report = analysis.emit_report(configs, model_dim=args.model_dim)
    _emit(report, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        results = run_checks(args.scope, args.seed, corrupt=args.corrupt_grad, tol=args.tol)
    except KeyError as err:
        raise io.InputError(str(err)) from err
    ok = True
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\t{r.max_rel_error:.3e}")
        ok &= r.passed
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_train_toy(args) -> int:
    sections = _sections(args)
    cfg = frontend_from_sections(sections, args.frontend or ("generic2d_toy" if "frontend" not in sections else None))
    task = training.ToyTask(**{**sections.get("task", {}), **({"seed": args.seed} if "task" not in sections else {})})
    train_opts = dict(sections.get("train", {}))
    if args.epochs is not None:
        train_opts["epochs"] = args.epochs
    train_cfg = training.TrainConfig(**train_opts)
    spec = None if args.no_masks else _mask_spec(args, sections)
    report = training.train_toy(cfg, task, train_cfg, spec, RandomSource(args.seed))
    out = Path(args.out or "toy_run")
    out.mkdir(parents=True, exist_ok=True)
    config_text = io.write_config({
        "frontend": {"variant": cfg.variant, **io.dataclass_options(cfg)},
        "task": io.dataclass_options(task),
        "train": io.dataclass_options(train_cfg),
        **({"mask": io.dataclass_options(spec)} if spec else {}),
    })
    (out / "run.cfg").write_text(config_text)
    (out / "report.jsonl").write_text("\n".join(report.to_lines()) + "\n")
    training.save_checkpoint(out / "checkpoint.bin", report.params, config_text)
    print(report.to_lines()[-1] if report.epoch_losses else "{}")
    return EXIT_OK


FIRST_LAYER_KEYS = ("g2d.filterbank.weight", "scf.decomp.weight", "w2v.conv0.weight")


def cmd_analyze(args) -> int:
    rng = RandomSource(args.seed)
    if args.bank == "gammatone":
        bank = dsp.gammatone_filterbank(args.n_filters, args.kernel)
        name = "gammatone"
    elif args.bank == "random":
        bank = dsp.random_filterbank(args.n_filters, args.kernel, rng)
        name = "random"
    else:
        if not args.checkpoint:
            raise io.InputError("analyze needs a checkpoint or --bank")
        try:
            params, _ = training.load_checkpoint(args.checkpoint)
        except (OSError, ValueError) as err:
            raise io.InputError(f"cannot read checkpoint: {err}") from err
        key = next((k for k in FIRST_LAYER_KEYS if k in params), None)
        if key is None:
            raise io.InputError("checkpoint has no waveform-level filterbank")
        w = params[key]
        bank = dsp.FilterBank(w.reshape(w.shape[0], -1), origin="learned")
        name = key.split(".")[0]
    analyses = analysis.analyze_filters(bank)
    order = analysis.sort_filters(analyses)
    active = [a.peak_frequency for a in analyses if not a.degenerate]
    stat = analysis.ordering_statistic(active, args.shuffles, rng.spawn())
    bandpass = float(np.mean([a.is_bandpass() for a in analyses]))
    out = Path(args.out or "analysis")
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}_filters_learned.tsv").write_text(analysis._table(analysis.filter_rows(analyses)))
    (out / f"{name}_filters_sorted.tsv").write_text(analysis._table(analysis.filter_rows(analyses, order)))
    (out / f"{name}_responses_learned.tsv").write_text(analysis.response_table(analyses))
    (out / f"{name}_responses_sorted.tsv").write_text(analysis.response_table(analyses, order))
    summary = {
        "bank": name,
        "n_filters": len(analyses),
        "degenerate": int(sum(a.degenerate for a in analyses)),
        "bandpass_fraction": bandpass,
        "sort_is_identity": order == list(range(len(analyses))),
        "max_monotone_run": stat.max_monotone_run,
        "mean_monotone_run": stat.mean_monotone_run,
        "null_p_value": stat.null_p_value,
    }
    (out / f"{name}_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_mask(args) -> int:
    sections = _sections(args)
    w = io.read_wav(args.audio)
    try:
        masked = apply_stft_masks(w, _mask_spec(args, sections), RandomSource(args.seed))
    except dsp.EmptyOutputError as err:
        raise io.InputError(str(err)) from err
    out = Path(args.out or Path(args.audio).with_suffix(".masked.wav"))
    io.write_wav(out, masked)
    print(out)
    return EXIT_OK


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


# parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI-style key-value config file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path")

    parser = argparse.ArgumentParser(prog="genfront", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def masks(p):
        p.add_argument("--max-time-masks", dest="max_time_masks", type=int)
        p.add_argument("--max-time-width", dest="max_time_width", type=int)
        p.add_argument("--max-feature-masks", dest="max_feature_masks", type=int)
        p.add_argument("--max-feature-width", dest="max_feature_width", type=int)

    p = sub.add_parser("extract", parents=[common], help="write features of a WAV file")
    p.add_argument("audio")
    p.add_argument("--frontend", help=f"preset name")
    p.add_argument("--checkpoint", help="load parameters from a checkpoint")
    p.add_argument("--preview", type=int, default=0, help="also write the first N rows as text")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("params", parents=[common], help="parameter and stride table")
    p.add_argument("--frontend")
    p.add_argument("--model-dim", type=int, default=fe.MODEL_DIM)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("scope", nargs="?", default="all", help="op name, front-end name, ops, frontends or all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt-grad", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", parents=[common], help="train on the synthetic tone task")
    p.add_argument("--frontend")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-masks", action="store_true")
    masks(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("analyze", parents=[common], help="filter response tables from a checkpoint")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--bank", choices=("gammatone", "random"), help="analyse a fresh bank instead")
    p.add_argument("--n-filters", type=int, default=80)
    p.add_argument("--kernel", type=int, default=256)
    p.add_argument("--shuffles", type=int, default=10_000)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mask", parents=[common], help="STFT-domain masking of a WAV file")
    p.add_argument("audio")
    masks(p)
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (io.InputError, dsp.ConfigurationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
