"""Train the tone-sequence toy model and summarise the learned first layer.

Default run matches the acceptance configuration (~2-3 min on one core).
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from genfront import analysis, cli, io, training as tr
from genfront.specaugment import MaskSpec
from genfront.tensor import RandomSource


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frontend", default="generic2d_toy", help="preset name (see genfront params)")
    ap.add_argument("--epochs", type=int, default=tr.TrainConfig.epochs)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--context", type=int, default=tr.TrainConfig.context,
                    help="encoder context frames on each side; 0 gives a frame-wise encoder")
    ap.add_argument("--mask-placement", choices=("stft", "features"), default="stft")
    ap.add_argument("--no-masks", action="store_true")
    ap.add_argument("--out", default="runs/toy")
    args = ap.parse_args()

    cfg = cli.presets()[args.frontend]
    task = tr.ToyTask(seed=args.seed)
    train_cfg = tr.TrainConfig(epochs=args.epochs, context=args.context, mask_placement=args.mask_placement)
    spec = None if args.no_masks else MaskSpec()
    start = time.time()
    report = tr.train_toy(cfg, task, train_cfg, spec, RandomSource(args.seed))
    elapsed = time.time() - start

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.jsonl").write_text("\n".join(report.to_lines()) + "\n")
    config_text = io.write_config({"frontend": {"variant": cfg.variant, **io.dataclass_options(cfg)},
                                   "train": io.dataclass_options(train_cfg)})
    tr.save_checkpoint(out / "checkpoint.bin", report.params, config_text)
    for line in report.to_lines():
        print(line)
    summary = {"seconds": round(elapsed, 1), "loss_reduction": report.loss_reduction,
               "final_dev_accuracy": report.dev_accuracy[-1]}

    key = next((k for k in cli.FIRST_LAYER_KEYS if k in report.params), None)
    if key is not None:
        w = report.params[key].data
        learned = analysis.analyze_filters(w.reshape(w.shape[0], -1))
        # same construction as train_toy, so these are the exact starting filters
        init = tr.ToyModel(cfg, task.n_symbols + 1, RandomSource(args.seed).spawn(), train_cfg.model_dim,
                           train_cfg.hidden_dim, train_cfg.context).params[key].data
        initial = analysis.analyze_filters(init.reshape(init.shape[0], -1))
        summary["bandpass_fraction"] = float(np.mean([a.is_bandpass() for a in learned]))
        summary["bandpass_fraction_at_init"] = float(np.mean([a.is_bandpass() for a in initial]))
        summary["peak_hz_learned"] = sorted(round(a.peak_frequency) for a in learned)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
