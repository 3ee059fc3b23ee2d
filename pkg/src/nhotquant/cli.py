"""Command-line surface: codebook dumps, tensor codec, datapath
verification, cost reports, and the QAT demo.

Exit codes: 0 success, 1 verification/format failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import codebook as cb
from . import codec, cost, datapath, qat


def _cmd_codebook(args) -> int:
    book = cb.gen_codebook(args.bits, args.terms, args.mode, pot_levels=args.pot_levels)
    counts = {"enumerated": len(book)}
    if args.mode == "additive":
        counts["formula"] = cb.count_additive(args.bits, args.terms)
    elif args.mode == "nhot" and args.terms == 2 and args.bits >= 3:
        counts["formula"] = cb.count_nhot(args.bits, args.terms)
    if args.json:
        doc = {
            "bits": args.bits,
            "terms": args.terms,
            "mode": args.mode,
            "magnitudes": list(book.magnitudes),
            "codes": None if book.code_of is None else
                     {str(m): str(c) for m, c in sorted(book.code_of.items())},
            "counts": counts,
        }
        print(json.dumps(doc, sort_keys=True))
    else:
        for m in book.magnitudes:
            if book.code_of is None:
                print(m)
            else:
                print(f"{m}\t{book.code_of[m]}")
        line = f"count: {counts['enumerated']}"
        if "formula" in counts:
            line += f" (formula: {counts['formula']})"
        print(line)
    if args.fig:
        from .figures import plot_codebook_levels
        plot_codebook_levels(args.bits, args.terms, args.fig)
    return 0


def _cmd_quantize(args) -> int:
    with open(args.infile, "rb") as f:
        data = codec.unpack_floats(f.read())
    qt = codec.quantize_tensor(data, args.bits, args.terms, args.mode,
                               range_policy=args.range)
    with open(args.outfile, "wb") as f:
        f.write(codec.pack(qt))
    recon = codec.dequantize(qt)
    mse = float(np.mean((data.astype(np.float64) - recon) ** 2))
    report = {
        "elements": int(data.size),
        "mse": mse,
        "bits_per_element": codec.element_bits(qt),
        "scale": qt.params.scale,
    }
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for k in sorted(report):
            print(f"{k}\t{report[k]}")
    return 0


def _cmd_dequantize(args) -> int:
    with open(args.infile, "rb") as f:
        qt = codec.unpack(f.read())
    with open(args.outfile, "wb") as f:
        f.write(codec.pack_floats(codec.dequantize(qt)))
    return 0


def _cmd_simulate(args) -> int:
    book = cb.gen_codebook(args.bits, args.terms, "nhot")
    assert book.code_of is not None
    if args.trace is not None:
        mag_s, act_s = args.trace.split(",")
        code = cb.decompose(int(mag_s), args.bits, args.terms)
        result, trace = datapath.shift_add_multiply(
            int(act_s), datapath.plan(code, args.terms), b_a=args.bits_act)
        print(trace.dump())
        print(f"result\t{result}")
        return 0
    if args.exhaustive:
        acts = range(1 << args.bits_act)
    else:
        rng = np.random.default_rng(args.seed)
        acts = rng.integers(0, 1 << args.bits_act, size=args.trials).tolist()
    mismatches = 0
    checked = 0
    plans = {m: datapath.plan(c, args.terms) for m, c in book.code_of.items()}
    for mag, p in plans.items():
        for ext_sign in (1, -1) if mag else (1,):
            for a in acts:
                got, _ = datapath.shift_add_multiply(int(a), p, b_a=args.bits_act)
                got *= ext_sign
                checked += 1
                if got != ext_sign * mag * int(a):
                    mismatches += 1
                    print(f"MISMATCH mag={ext_sign * mag} act={a} got={got}",
                          file=sys.stderr)
    print(f"checked {checked} products, {mismatches} mismatches")
    return 1 if mismatches else 0


def _cmd_cost(args) -> int:
    with open(args.layers) as f:
        layers = cost.load_layers(f.read())
    baseline = cost.Scheme.parse(args.baseline)
    report = cost.model_report(layers, baseline)
    if args.json:
        print(report.to_json(indent=None))
    else:
        for d in report.layers:
            print(f"{d['name']}\t{d['scheme']}\t{d['bitops']}\t{d['storage_bits']}")
        t = report.totals
        print(f"total bitops\t{t['bitops']}\t(ratio {t['bitops_ratio']:.4f} vs {t['baseline']})")
        print(f"total storage bits\t{t['storage_bits']}\t(ratio {t['storage_ratio']:.4f})")
    if args.fig:
        from .figures import plot_cost_report
        plot_cost_report(report, args.fig)
    return 0


def _cmd_train_demo(args) -> int:
    with open(args.config) as f:
        cfg = qat.TrainConfig.from_json(f.read())
    data = qat.make_toy_dataset(cfg.seed, args.dataset_size)
    rng = np.random.default_rng(cfg.seed)
    net = qat.Network.init((2, *cfg.hidden, 2), rng)
    trainer = qat.train_single_stage if args.single_stage else qat.train_two_stage
    net, log = trainer(net, data, cfg)
    lines = "\n".join(json.dumps(r, sort_keys=True) for r in log)
    if args.out:
        with open(args.out, "w") as f:
            f.write(lines + "\n")
    else:
        print(lines)
    final = log[-1]
    print(f"final test accuracy: {final['test_accuracy']:.4f}", file=sys.stderr)
    if args.fig:
        from .figures import plot_training_log
        plot_training_log(log, args.fig)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", help="dump levels, codes, and counts")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--terms", type=int, default=2)
    p.add_argument("--mode", choices=cb.MODES, default="nhot")
    p.add_argument("--pot-levels", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--fig", metavar="PATH", help="write a level-placement figure")
    p.set_defaults(func=_cmd_codebook)

    p = sub.add_parser("quantize", help="quantize an NHFT float tensor to NHQT")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--terms", type=int, default=2)
    p.add_argument("--mode", choices=cb.MODES, default="nhot")
    p.add_argument("--range", choices=("symmetric", "minmax"), default="symmetric")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct an NHFT tensor from NHQT")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=_cmd_dequantize)

    p = sub.add_parser("simulate", help="verify the shift-add datapath vs integer multiply")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--terms", type=int, default=2)
    p.add_argument("--bits-act", type=int, default=8)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--trace", metavar="MAG,ACT", help="dump one multiply's trace")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("cost", help="bitOPs / storage report over a layer spec file")
    p.add_argument("--layers", required=True)
    p.add_argument("--baseline", default="uniform:8")
    p.add_argument("--json", action="store_true")
    p.add_argument("--fig", metavar="PATH")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("train-demo", help="run the two-stage QAT demo")
    p.add_argument("--config", required=True)
    p.add_argument("--single-stage", action="store_true")
    p.add_argument("--dataset-size", type=int, default=400)
    p.add_argument("--out", metavar="PATH", help="metrics log (line-delimited JSON)")
    p.add_argument("--fig", metavar="PATH")
    p.set_defaults(func=_cmd_train_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, cb.NotInCodebookError, qat.TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
