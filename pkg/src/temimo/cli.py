"""Command-line harness: data generation, training, evaluation, accounting.

Subcommands: gen-data, gen-labels, train, eval, count-mults, ablate-patterns.
Every command is deterministic given (config, seed); reports are CSV files
with a rendered figure written alongside.  Exit code 0 on success, nonzero
with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from . import complexity, dataio, evaluation, layers, mimo, networks, plotting, training


def _parse_snrs(text):
    return tuple(float(x) for x in text.split(","))


def _load_run_config(args, task=None):
    if getattr(args, "config", None):
        cfg = dataio.load_config(args.config)
    else:
        cfg = dataio.RunConfig()
    if task is not None:
        cfg.task = task
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "snr", None):
        cfg.snrs = _parse_snrs(args.snr)
    if getattr(args, "scale", None):
        preset = dataio.SCALE_PRESETS[args.scale]
        cfg.iterations = preset["iterations"]
        cfg.batch_size = preset["batch_size"]
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    return cfg


def _read_channels(path):
    return dataio.array_to_channels(dataio.read_tensor(path))


def cmd_gen_data(args):
    cfg = _load_run_config(args)
    system = cfg.system()
    count = args.count
    if count is None:
        count = dataio.SCALE_PRESETS[args.scale or "desk"]["samples"]
    candidates = cfg.task == "schedule" or args.candidates
    h = mimo.gen_channels(system, count, cfg.seed, candidates=candidates)
    num, den = dataio.TRAIN_SPLIT
    n_train = count * num // den
    base = args.out
    dataio.write_tensor(base + ".train.teds", dataio.channels_to_array(h[:n_train]))
    dataio.write_tensor(base + ".test.teds", dataio.channels_to_array(h[n_train:]))
    print(
        f"wrote {n_train} train / {count - n_train} test samples "
        f"of shape {h.shape[1:]} to {base}.{{train,test}}.teds"
    )


def cmd_gen_labels(args):
    cfg = _load_run_config(args, task="schedule")
    if args.label_snr is not None:
        cfg.label_snr = args.label_snr
    if args.precoder:
        cfg.label_precoder = args.precoder
    h = _read_channels(args.data)
    labels = training.generate_labels(h, cfg, checkpoint=args.checkpoint)
    dataio.write_tensor(args.out, labels[..., None].astype(np.float64))
    print(f"wrote {len(labels)} greedy-{cfg.label_precoder} labels (K={cfg.k}) to {args.out}")


def cmd_train(args):
    cfg = _load_run_config(args)
    dataset = args.data or cfg.dataset
    if not dataset:
        raise ValueError("no dataset given (flag --data or config key train.dataset)")
    h_train = _read_channels(dataset)
    labels = None
    model = None
    if args.resume:
        model, rcfg, _ = training.load_checkpoint(args.resume)
        cfg = rcfg
        if args.iterations is not None:
            cfg.iterations = args.iterations
    if cfg.task == "schedule":
        labels_path = args.labels or cfg.labels
        if not labels_path:
            raise ValueError("scheduling training needs labels (--labels)")
        labels = dataio.read_tensor(labels_path)[..., 0].astype(np.int64)

    log_rows = []

    def log(step, lr, loss):
        log_rows.append((step, lr, loss))
        if step % 200 == 0:
            print(f"step {step} lr {lr:g} loss {loss:.6f}")

    model, losses = training.train(cfg, h_train, labels=labels, model=model, log=log)
    training.save_checkpoint(args.out, model, cfg)
    log_path = args.out + ".log.csv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("step,lr,loss\n")
        for step, lr, loss in log_rows:
            f.write(f"{step},{lr:g},{loss:.9g}\n")
    if not args.no_figures and losses:
        plotting.loss_figure(losses, args.out + ".loss.png")
    print(f"saved checkpoint to {args.out} ({model.store.total_size()} parameters)")


def cmd_eval(args):
    snrs = _parse_snrs(args.snr) if args.snr else (0.0, 10.0, 20.0, 30.0)
    h = _read_channels(args.testset)
    power = args.power
    methods = [m.strip() for m in args.method.split(",")] if args.method else []
    ccfg = None
    if args.checkpoint:
        _, ccfg, _ = training.load_checkpoint(args.checkpoint)
    if args.config:
        cfg = dataio.load_config(args.config)
    elif ccfg is not None:
        cfg = ccfg
    else:
        cfg = dataio.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    scheduling = (ccfg is not None and ccfg.task == "schedule") or any(
        m in evaluation.SCHEDULING_METHODS for m in methods
    )
    if scheduling:
        if not methods:
            methods = ["teus"]
        records = evaluation.eval_scheduling(
            h, snrs, power, cfg.k, methods,
            checkpoint=args.checkpoint, precoder=cfg.label_precoder, seed=cfg.seed,
        )
    else:
        if not methods:
            methods = ["tecfp"] if args.checkpoint else ["zf", "mmse"]
        records = evaluation.eval_precoding(h, snrs, power, methods, checkpoint=args.checkpoint)
    evaluation.write_csv(records, args.out)
    if not args.no_figures:
        plotting.sum_rate_figure(records, os.path.splitext(args.out)[0] + ".png")
    for r in records:
        print(
            f"snr {r.snr_db:g} dB  {r.method:<16} mean sum-rate {r.mean_rate:.4f} "
            f"({r.samples} samples)"
        )
    print(f"wrote {args.out}")


def cmd_count_mults(args):
    cfg = _load_run_config(args)
    count = complexity.count_mults(
        args.method,
        cfg.k,
        cfg.n_r,
        cfg.n_t,
        k_cand=cfg.k_cand,
        depth=cfg.depth,
        hidden=cfg.hidden,
        pattern=cfg.pattern,
        iterations=args.iters,
    )
    print(f"{args.method}: {count} real multiplications ({count:.2e})")


def cmd_ablate_patterns(args):
    cfg = _load_run_config(args, task="precode")
    dataset = args.data or cfg.dataset
    if not dataset:
        raise ValueError("no dataset given (flag --data or config key train.dataset)")
    h_train = _read_channels(dataset)
    h_test = _read_channels(args.testset) if args.testset else h_train[: args.eval_samples]
    snr = cfg.snrs[len(cfg.snrs) // 2]
    noise = cfg.power / 10.0 ** (snr / 10.0)
    rows = []
    for pattern in ("FULL", "P1", "P2", "P3"):
        pcfg = dataio.config_from_text(cfg.to_text())
        pcfg.pattern = pattern
        model, _ = training.train(pcfg, h_train)
        totals = []
        for start in range(0, len(h_test), 256):
            part = h_test[start : start + 256]
            w = ad.value_of(model.precode(part, noise, pcfg.power))
            totals.append(ad.value_of(mimo.sum_rate(part, w, noise)[1]))
        ratio = complexity.mde_pattern_ratio(pattern, 3, pcfg.depth)
        rows.append(
            {
                "pattern": pattern,
                "param_ratio": ratio,
                "mult_ratio": ratio,
                "mean_rate": float(np.mean(np.concatenate(totals))),
                "snr_db": snr,
            }
        )
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("pattern,mde_param_ratio,mde_mult_ratio,mean_sum_rate,snr_db\n")
        for r in rows:
            f.write(
                f"{r['pattern']},{r['param_ratio']:.6g},{r['mult_ratio']:.6g},"
                f"{r['mean_rate']:.9g},{r['snr_db']:g}\n"
            )
    if not args.no_figures:
        plotting.ablation_figure(rows, os.path.splitext(args.out)[0] + ".png")
    for r in rows:
        print(
            f"{r['pattern']:<5} module cost {100 * r['param_ratio']:.1f}% of FULL, "
            f"mean sum-rate {r['mean_rate']:.4f} at {r['snr_db']:g} dB"
        )
    print(f"wrote {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="temimo",
        description="Equivariant precoding/scheduling harness (datasets, training, evaluation)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--snr", help='SNR list in dB, e.g. "0,10,20,30"')
        p.add_argument("--scale", choices=("desk", "paper"), help="preset sizes")
        if out_required:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("gen-data", help="generate a normalized channel dataset")
    common(p)
    p.add_argument("--count", type=int, help="sample count (default from --scale)")
    p.add_argument(
        "--candidates", action="store_true",
        help="generate k_cand-user candidate sets (implied by task=schedule)",
    )
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("gen-labels", help="greedy scheduling labels for a dataset")
    common(p)
    p.add_argument("--data", required=True, help="candidate channel file (.teds)")
    p.add_argument("--precoder", choices=("mmse", "zf", "wmmse", "tecfp"))
    p.add_argument("--label-snr", type=float, help="SNR in dB used for the labels")
    p.add_argument("--checkpoint", help="precoding checkpoint (precoder=tecfp)")
    p.set_defaults(fn=cmd_gen_labels)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    common(p)
    p.add_argument("--data", help="training channel file (.teds)")
    p.add_argument("--labels", help="label file for the scheduling task")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="sum-rate sweep over SNR, CSV + figure")
    common(p)
    p.add_argument("--testset", required=True, help="test channel file (.teds)")
    p.add_argument("--checkpoint", help="trained model to evaluate")
    p.add_argument(
        "--method",
        help="comma list: zf,mmse,wmmse-rand,wmmse-mmseinit,tecfp,"
        "random-sched,greedy-sched,teus",
    )
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("count-mults", help="analytic multiplication count")
    common(p, out_required=False)
    p.add_argument("--method", required=True, choices=("zf", "mmse", "wmmse", "tecfp", "teus"))
    p.add_argument("--iters", type=int, default=300, help="iteration count for wmmse")
    p.set_defaults(fn=cmd_count_mults)

    p = sub.add_parser("ablate-patterns", help="train and compare subset patterns")
    common(p)
    p.add_argument("--data", help="training channel file (.teds)")
    p.add_argument("--testset", help="evaluation channel file (.teds)")
    p.add_argument("--eval-samples", type=int, default=256)
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_ablate_patterns)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, OSError, dataio.FormatError, ad.NumericalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
