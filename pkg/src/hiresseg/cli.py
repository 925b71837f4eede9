"""Command line entry point: ``hiresseg {synth,run,eval,sweep,gradcheck,train}``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, synthdata, training
from .errors import ConfigError, FormatError, HiResSegError
from .geometry import GridConfig
from .objectives import LossConfig
from .selection import SelectionHeads, Strategy

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
PATCH = 14  # synthetic pixels per token side

log = logging.getLogger("hiresseg")


def _pipeline_config(args) -> pipeline.PipelineConfig:
    """Flag > config file/inline field > built-in default."""
    base = pipeline.PipelineConfig.from_dict(pipeline.parse_config_arg(getattr(args, "config", None)))
    return base.with_overrides(
        gamma=getattr(args, "gamma", None),
        layers=getattr(args, "layers", None),
        pool_source=getattr(args, "pool_source", None),
        strategy=getattr(args, "strategy", None),
        k_top=getattr(args, "k_top", None),
        threshold=getattr(args, "threshold", None),
        model_seed=getattr(args, "model_seed", None),
        heads=getattr(args, "heads", None),
    )


def cmd_synth(args) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    base = args.base_side or PATCH * args.grid
    grid = GridConfig(base_side=base, mag=args.mag, token_side=args.grid, dim=args.dim)
    synthdata.build_dataset(args.n, grid, args.seed, args.out, gt_mode=args.gt_mode,
                            n_seeds=args.n_seeds, seg_dim=args.seg_dim, sigma=args.sigma,
                            model_seed=args.model_seed)
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


def cmd_run(args) -> int:
    man = synthdata.load_manifest(args.manifest)
    cfg = _pipeline_config(args)
    run = pipeline.run_manifest(man, cfg, args.out, oracle=args.oracle_scores, manifest_ref=str(args.manifest))
    print(f"{len(run['samples'])} samples -> {Path(args.out) / 'run.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    man = synthdata.load_manifest(args.manifest)
    run_path = Path(args.run)
    if run_path.is_dir():
        run_path = run_path / "run.json"
    run = json.loads(run_path.read_text())
    report = pipeline.evaluate_run(run, run_path.parent, man)
    js, cs = pipeline.write_report(report, args.report, run.get("config"))
    print(f"gIoU={report.g_iou:.6f} cIoU={report.c_iou:.6f} n={report.n} -> {js}, {cs}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    man = synthdata.load_manifest(args.manifest)
    values = [v for chunk in args.values for v in chunk.split(",") if v]
    if not values:
        raise ConfigError("--values is empty")
    rows = pipeline.sweep(man, _pipeline_config(args), args.param, values, args.out, args.oracle_scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = pipeline.rows_to_csv(rows)
    (out / f"sweep_{args.param}.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.tol < 0:
        raise ConfigError(f"--tol must be >= 0, got {args.tol}")
    rng = np.random.default_rng(args.seed)
    checks = []
    for _ in range(3):
        s = rng.normal(0.0, 2.0, size=16)
        ious = rng.uniform(0.0, 1.0, size=16) * (rng.uniform(size=16) < 0.6)
        checks.append(training.check_loss_sim(s, ious, tol=args.tol))
        checks.append(training.check_loss_sup(rng.uniform(size=16), rng.uniform(size=16), tol=args.tol))
    heads, sample = pipeline.gradcheck_case(args.seed)
    checks += training.check_head_grads(heads, sample, h=args.h, tol=args.tol, perturb=args.perturb)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        if args.verbose or not c.passed:
            print(f"{'ok  ' if c.passed else 'FAIL'} {c.name:28s} max_rel_err={c.max_rel_err:.3e}")
    print(f"{len(checks) - len(failed)}/{len(checks)} gradient checks within tol={args.tol:g}")
    if failed:
        print("failing: " + ", ".join(sorted({c.name for c in failed})))
        return EXIT_CHECK
    return EXIT_OK


def cmd_train(args) -> int:
    if args.steps < 0:
        raise ConfigError(f"--steps must be >= 0, got {args.steps}")
    man = synthdata.load_manifest(args.manifest)
    cfg = _pipeline_config(args)
    seg_dim = int(man.config.get("seg_dim", synthdata.DEFAULT_SEG_DIM))
    pipe = pipeline.Pipeline(cfg.with_overrides(head_seed=args.seed), man.grid, seg_dim)
    samples = [pipe.train_sample(synthdata.load_sample(man, s)) for s in sorted(man.samples, key=lambda s: s.id)]
    heads, trace = training.train_heads(samples, pipe.heads, args.steps, args.lr, cfg.loss, args.optimizer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "l_sel", "l_sim", "l_sup"])
        for r in trace:
            w.writerow([r.step, repr(r.l_sel), repr(r.l_sim), repr(r.l_sup)])
    pipeline.save_heads(heads, out / "heads")
    meta = {"steps": args.steps, "lr": args.lr, "seed": args.seed, "optimizer": args.optimizer,
            "config": cfg.to_dict(), "initial_l_sel": trace[0].l_sel if trace else None,
            "final_l_sel": trace[-1].l_sel if trace else None}
    (out / "train.json").write_text(json.dumps(meta, indent=2) + "\n")
    if trace:
        print(f"L_sel {trace[0].l_sel:.6f} -> {trace[-1].l_sel:.6f} over {len(trace)} steps")
    else:
        print("no steps run")
    return EXIT_OK


def _add_pipeline_flags(p):
    p.add_argument("--config", help="JSON config file or inline key=value[,key=value]")
    p.add_argument("--gamma", type=float)
    p.add_argument("--layers", type=int, help="number of HRE layers")
    p.add_argument("--pool-source", choices=["hybrid", "region"])
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--k-top", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--model-seed", type=int)
    p.add_argument("--heads", help="trained heads bundle (directory or heads.json)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiresseg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=8, help="tokens per global side (n_g)")
    p.add_argument("--mag", type=int, default=2, help="magnification N")
    p.add_argument("--dim", type=int, default=64, help="feature channels d")
    p.add_argument("--base-side", type=int, help=f"encoder input side in pixels (default {PATCH} * grid)")
    p.add_argument("--seg-dim", type=int, default=synthdata.DEFAULT_SEG_DIM)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--sigma", type=float, default=synthdata.DEFAULT_SIGMA)
    p.add_argument("--gt-mode", default="mixed", choices=["mixed", *synthdata.GT_MODES])
    p.add_argument("--model-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the pipeline over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle-scores", action="store_true", help="score proposals by true IoU/IoP")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="gIoU / cIoU of a run")
    p.add_argument("--run", required=True, help="run directory or run.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="report JSON path; CSV goes next to it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ablation sweep over one parameter")
    p.add_argument("--param", required=True, choices=sorted(pipeline.SWEEP_PARAMS))
    p.add_argument("--values", required=True, nargs="+", help="values, space or comma separated")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle-scores", action="store_true")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--h", type=float, default=1e-3, help="central-difference step for head parameters")
    p.add_argument("--perturb", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train the selection heads")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=training.DEFAULT_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--optimizer", default="adam", choices=sorted(training.OPTIMIZERS))
    p.add_argument("--config", help="JSON config file or inline key=value[,key=value]")
    p.set_defaults(func=cmd_train)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (HiResSegError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
