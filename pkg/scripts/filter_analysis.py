"""Frequency-response analysis of a filter bank: learned order vs sorted by peak.

Reads the first layer of a checkpoint, or builds a gammatone / random bank.
Writes per-filter tables and response matrices to --out.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from genfront import analysis, cli, dsp, training as tr
from genfront.tensor import RandomSource


def load_bank(args) -> dsp.FilterBank:
    if args.checkpoint:
        params, _ = tr.load_checkpoint(args.checkpoint)
        key = next(k for k in cli.FIRST_LAYER_KEYS if k in params)
        w = params[key]
        return dsp.FilterBank(w.reshape(w.shape[0], -1), origin="learned")
    if args.bank == "gammatone":
        return dsp.gammatone_filterbank(args.n_filters, args.kernel)
    return dsp.random_filterbank(args.n_filters, args.kernel, RandomSource(args.seed))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint", nargs="?")
    ap.add_argument("--bank", choices=("gammatone", "random"), default="random")
    ap.add_argument("--n-filters", type=int, default=80)
    ap.add_argument("--kernel", type=int, default=256)
    ap.add_argument("--shuffles", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/filters")
    args = ap.parse_args()

    bank = load_bank(args)
    analyses = analysis.analyze_filters(bank)
    order = analysis.sort_filters(analyses)
    peaks = [a.peak_frequency for a in analyses if not a.degenerate]
    stat = analysis.ordering_statistic(peaks, args.shuffles, RandomSource(args.seed + 1))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "filters_learned.tsv").write_text(analysis._table(analysis.filter_rows(analyses)))
    (out / "filters_sorted.tsv").write_text(analysis._table(analysis.filter_rows(analyses, order)))
    # filters x frequency matrices in dB, ready for an image plot
    np.savetxt(out / "responses_learned.txt", np.stack([a.response for a in analyses]), fmt="%.2f")
    np.savetxt(out / "responses_sorted.txt", np.stack([analyses[i].response for i in order]), fmt="%.2f")
    summary = {
        "origin": bank.origin,
        "n_filters": len(analyses),
        "bandpass_fraction": float(np.mean([a.is_bandpass() for a in analyses])),
        "median_bandwidth_hz": float(np.median([a.bandwidth for a in analyses if not a.degenerate])),
        "max_monotone_run": stat.max_monotone_run,
        "mean_monotone_run": stat.mean_monotone_run,
        "null_p_value": stat.null_p_value,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
