"""Command-line interface.

Exit codes: 0 success, 1 runtime/assertion failure, 2 usage or config error.
Every randomized command takes an explicit --seed; nothing is seeded from the
clock.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .backbone import DetectionModel, count_params, named_tensors
from .config import ConfigError, RunConfig, parse_config
from .metrics import ap_from_scores


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_pgm(path, grad_map):
    """8-bit max-normalized PGM."""
    h, w = grad_map.shape
    scaled = np.round(grad_map / grad_map.max() * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(scaled.tobytes())


def cmd_gradcheck(args):
    from .checks import run_checks

    try:
        reports = run_checks(args.scope)
    except KeyError:
        print(f"unknown gradcheck scope: {args.scope}", file=sys.stderr)
        return 2
    failed = False
    for rep in reports:
        status = "ok" if rep.passed else "FAIL"
        print(f"{rep.unit:24s} max rel err {rep.max_rel_err:.3e} "
              f"(tol {rep.tolerance:.0e}) {status}  worst: {rep.worst()}")
        failed |= not rep.passed
    return 1 if failed else 0


def cmd_bench(args):
    from .bench import run_bench

    run_bench(_load_config(args))
    return 0


def cmd_train(args):
    from .train import train

    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    history, model = train(cfg)
    write_csv(os.path.join(cfg.out_dir, "metrics.csv"),
              ["epoch", "loss", "ap"],
              [(h.epoch, f"{h.loss:.9g}", f"{h.ap:.9g}") for h in history])
    from .serialize import save_weights

    save_weights(os.path.join(cfg.out_dir, "weights.mksw"), named_tensors(model))
    print(f"final loss {history[-1].loss:.4f}  final AP {history[-1].ap:.4f}")
    print(f"wrote {cfg.out_dir}/metrics.csv and {cfg.out_dir}/weights.mksw")
    return 0


def cmd_ablate(args):
    from .train import ablation_run

    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(cfg.out_dir, exist_ok=True)
    report = ablation_run(cfg, seeds)
    rows = [(name, f"{report.final_ap[name]:.6f}", f"{report.delta(name):+.6f}",
             ";".join(f"{a:.6f}" for a in report.per_seed[name]))
            for name in report.final_ap]
    write_csv(os.path.join(cfg.out_dir, "ablation.csv"),
              ["variant", "mean_ap", "delta_vs_base", "per_seed_ap"], rows)
    for row in rows:
        print(f"{row[0]:12s} mean AP {row[1]}  delta {row[2]}")
    return 0


def cmd_erf(args):
    from .train import erf_estimate

    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = DetectionModel(cfg.model, seed=cfg.train.seed)
    size = args.size
    result = erf_estimate(model, (1, cfg.model.in_channels, size, size),
                          samples=args.samples, seed=cfg.train.seed)
    write_pgm(os.path.join(cfg.out_dir, "erf.pgm"), result.grad_map)
    write_csv(os.path.join(cfg.out_dir, "erf.csv"),
              [f"c{j}" for j in range(result.grad_map.shape[1])],
              [[f"{v:.9g}" for v in row] for row in result.grad_map])
    print(f"support width {result.support_width}  95%-mass radius {result.radius95}")
    return 0


def cmd_eval_ap(args):
    scores, labels, positives = [], [], None
    with open(args.file) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("positives="):
                positives = int(line.split("=", 1)[1])
                continue
            s, l = line.split()
            scores.append(float(s))
            labels.append(int(l))
    if positives is None:
        positives = sum(labels)
    print(f"{ap_from_scores(scores, labels, positives):.6f}")
    return 0


def cmd_export(args):
    from .serialize import dump_tensor, save_weights

    cfg = _load_config(args)
    model = DetectionModel(cfg.model, seed=cfg.train.seed)
    if cfg.weights:
        from .serialize import load_into

        load_into(model, cfg.weights)
    if args.what == "weights":
        save_weights(args.path, named_tensors(model))
        print(f"wrote {count_params(model)} parameters to {args.path}")
    else:
        tensors = named_tensors(model)
        if args.name not in tensors:
            print(f"no tensor named {args.name!r} in the model", file=sys.stderr)
            return 2
        dump_tensor(args.path, tensors[args.name])
        print(f"wrote tensor {args.name} {tensors[args.name].shape} to {args.path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="mksnet",
        description="Multi-kernel selection attention: gradcheck, train, "
                    "ablate, benchmark, evaluate.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("scope", help="op name, module name, or 'all'")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("bench", help="FLOPs/params table and latency")
    common(sp)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("train", help="train on the synthetic task")
    common(sp, seed_required=False)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("ablate", help="run the four-variant ablation")
    common(sp)
    sp.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("erf", help="effective receptive field estimate")
    common(sp)
    sp.add_argument("--size", type=int, default=64, help="probe input size")
    sp.add_argument("--samples", type=int, default=8)
    sp.set_defaults(fn=cmd_erf)

    sp = sub.add_parser("eval-ap", help="AP of a 'score label' fixture file")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_eval_ap)

    sp = sub.add_parser("export", help="export weights or a named tensor")
    sp.add_argument("what", choices=["weights", "tensor"])
    sp.add_argument("path")
    sp.add_argument("--name", help="tensor name (for 'tensor')")
    common(sp)
    sp.set_defaults(fn=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if getattr(args, "what", None) == "tensor" and not args.name:
        print("export tensor requires --name", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
