"""Command-line entry point: ``rpgd <subcommand> --out DIR [options]``.

Every subcommand accepts ``--config FILE.json``; keys are option names with
underscores (``n_views``, ``lr_start`` ...) and explicit flags override them.
Exit status: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .io import load_array, save_array, write_json
from .classical import ReconstructorA
from .linops import ConfigurationError, RadonTransform, SinogramGeometry
from .metrics import EvalReport, score_image
from .neural import (
    NoiseConfig,
    TrainingError,
    TrainingSchedule,
    linear_recon_inputs,
    load_params,
    save_params,
    train,
)
from .phantoms import PhantomSpec, load_split, write_dataset
from .pipeline import METHODS, MethodContext, measure_set, parse_snr, run_method, snr_label
from .projectors import InvalidSetError, idempotence_defect
from .solvers import SolverConfig
from .tv import CGBreakdown

logger = logging.getLogger("rpgd")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class ValidationError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def _ensure_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ValidationError(f"output directory {path} is not writable")


def _dataset_size(dataset):
    path = os.path.join(dataset, "manifest.json")
    if not os.path.isfile(path):
        raise ValidationError(f"no dataset manifest at {path}")
    with open(path) as fh:
        return int(json.load(fh)["size"])


def _geometry(args, size):
    return SinogramGeometry.parallel(size, args.n_views, args.n_offsets, args.pixel_size)


def _config_dict(args):
    skip = {"func", "config", "verbose"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = "inf" if isinstance(v, float) and math.isinf(v) else v
    return out


def _load_model(path, what):
    if not path:
        return None
    if not os.path.isfile(path):
        raise ValidationError(f"{what} model file {path} does not exist")
    return load_params(path)[0]


def _fmt(v):
    return "inf" if isinstance(v, float) and math.isinf(v) else v


# --- subcommands ----------------------------------------------------------------

def cmd_phantom_gen(args):
    PhantomSpec("RandomEllipses", args.size, args.n_ellipses)      # validate before touching disk
    if min(args.n_train, args.n_test) < 0:
        raise ValidationError("phantom counts must be non-negative")
    _ensure_out(args.out)
    manifest = write_dataset(args.out, args.n_train, args.n_test, args.size, args.seed, args.n_ellipses)
    print(f"wrote {args.n_train} train / {args.n_test} test phantoms ({args.size}x{args.size}) to {args.out}")
    return manifest


def cmd_simulate(args):
    size = _dataset_size(args.dataset)
    _ensure_out(args.out)
    geo = _geometry(args, size)
    levels = [parse_snr(s) for s in args.snr_db]
    for split in args.splits:
        images = load_split(args.dataset, split)
        for level in levels:
            d = os.path.join(args.out, "sinograms", f"snr_{snr_label(level)}", split)
            os.makedirs(d, exist_ok=True)
            for i, y in enumerate(measure_set(images, geo, level, args.jitter_std, args.seed)):
                save_array(os.path.join(d, f"{i:04d}.sino.f64"), y,
                           angles_deg=list(geo.angles_deg), snr_db=_fmt(level), seed=args.seed + i)
    write_json(os.path.join(args.out, "simulate.json"),
               {"config": _config_dict(args), "geometry": geo.to_dict()})
    print(f"simulated {len(levels)} SNR level(s) for splits {args.splits} into {args.out}")


def cmd_train(args):
    size = _dataset_size(args.dataset)
    _ensure_out(args.out)
    geo = _geometry(args, size)
    op, A = RadonTransform(geo), ReconstructorA("FBP", geo)
    images = load_split(args.dataset, "train")
    schedule = TrainingSchedule(args.t1, args.t2, args.t3, args.lr_start, args.lr_end, args.momentum,
                                args.grad_clip, args.batch_size, args.seed)
    noise = NoiseConfig(None if math.isinf(args.train_snr_db) else args.train_snr_db,
                        args.view_jitter_prob, args.jitter_std, args.seed)
    init = _load_model(args.init, "initial")
    if args.resume_stage1:
        init = _load_model(args.resume_stage1, "stage-1")
        schedule.t1 = 0
    t0 = time.time()
    result = train(schedule, images, op, A, noise, init_params=init)
    header = {"seed": args.seed, "schedule": schedule.__dict__, "geometry": geo.to_dict(),
              "train_snr_db": _fmt(args.train_snr_db)}
    save_params(os.path.join(args.out, "stage1.rpgdnet"), result.stage1_params, role="regressor", **header)
    save_params(os.path.join(args.out, "projector.rpgdnet"), result.params, role="projector", **header)
    with open(os.path.join(args.out, "training_curve.csv"), "w", newline="") as fh:
        cols = ["stage", "epoch", "lr", "sgd_loss", "Identity", "LinearRecon", "Dynamic"]
        w = csv.writer(fh)
        w.writerow(cols)
        for h in result.history:
            w.writerow([h.get(c, "") for c in cols])
    summary = {"config": _config_dict(args), "seconds": time.time() - t0, "epochs": len(result.history)}
    if os.path.isdir(os.path.join(args.dataset, "phantoms", "test")):
        test = load_split(args.dataset, "test")
        inputs = linear_recon_inputs(test, op, A, noise)
        mx, mean = idempotence_defect(result.params, len(inputs), test[0].shape, 0, 1.0, inputs=inputs)
        summary["idempotence_defect"] = {"max": mx, "mean": mean, "n_images": len(inputs)}
    write_json(os.path.join(args.out, "training_summary.json"), summary)
    print(f"trained {len(result.history)} epochs in {summary['seconds']:.1f}s; models in {args.out}")


def cmd_reconstruct(args):
    size = _dataset_size(args.dataset)
    _ensure_out(args.out)
    methods = [m.upper() for m in args.methods]
    geo = _geometry(args, size)
    solver = SolverConfig(gamma=args.gamma[0] if len(args.gamma) == 1 else None, alpha0=args.alpha0,
                          c=args.c if len(args.c) > 1 else args.c[0], max_iter=args.max_iter,
                          stop_tol=args.stop_tol, skip_first_gradient=args.skip_first_gradient)
    ctx = MethodContext(geo, _load_model(args.regressor, "regressor"), _load_model(args.model, "projector"),
                        solver, tuple(args.gamma) if len(args.gamma) > 1 else (), args.tv_grid, args.tv_iter,
                        args.pgd_projector)
    for m in methods:
        ctx.require(m)
    truths = load_split(args.dataset, "test")
    if args.limit:
        truths = truths[:args.limit]
    y_clean = [ctx.op.forward(x) for x in truths]
    config = _config_dict(args)
    table = {}
    for level in (parse_snr(s) for s in args.snr_db):
        ys = measure_set(truths, geo, level, args.jitter_std, args.seed)
        for m in methods:
            res = run_method(m, ctx, truths, ys, y_clean)
            d = os.path.join(args.out, m, f"snr_{snr_label(level)}")
            os.makedirs(d, exist_ok=True)
            for i, (img, tr) in enumerate(zip(res.images, res.traces)):
                save_array(os.path.join(d, f"{i:04d}.f64"), img, method=m, snr_db=_fmt(level))
                if tr is not None:
                    os.makedirs(os.path.join(d, "traces"), exist_ok=True)
                    tr.to_csv(os.path.join(d, "traces", f"{i:04d}.csv"))
            res.report.config = {**config, **res.report.config, "snr_db": _fmt(level)}
            res.report.to_json(os.path.join(d, "report.json"))
            res.report.to_csv(os.path.join(d, "report.csv"))
            table.setdefault(snr_label(level), {})[m] = res.report.regressed_snr_db
            logger.info("%s at %s dB: mean regressed SNR %.2f", m, snr_label(level), res.report.regressed_snr_db)
    _write_table(args.out, table, methods, config)
    write_json(os.path.join(args.out, "reconstruct.json"), {"config": config, "geometry": geo.to_dict()})
    print(_table_text(table, methods))


def _write_table(out, table, methods, config):
    """Rows = measurement SNR levels, columns = methods (mean regressed SNR in dB)."""
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db"] + methods)
        for level, row in table.items():
            w.writerow([level] + [_fmt(row.get(m, float("nan"))) for m in methods])
    write_json(os.path.join(out, "summary.json"),
               {"config": config, "table": {k: {m: _fmt(v) for m, v in r.items()} for k, r in table.items()}})


def _table_text(table, methods):
    lines = ["snr_db".ljust(10) + "".join(m.rjust(12) for m in methods)]
    for level, row in table.items():
        lines.append(level.ljust(10) + "".join(f"{row.get(m, float('nan')):12.2f}" for m in methods))
    return "\n".join(lines)


def cmd_evaluate(args):
    """Re-score stored reconstructions of a ``reconstruct`` run against the dataset."""
    meta_path = os.path.join(args.recon, "reconstruct.json")
    if not os.path.isfile(meta_path):
        raise ValidationError(f"{args.recon} is not a reconstruct output directory")
    with open(meta_path) as fh:
        meta = json.load(fh)
    geo = SinogramGeometry.from_dict(meta["geometry"])
    op = RadonTransform(geo)
    _ensure_out(args.out)
    truths = load_split(args.dataset, "test")
    methods = sorted(d for d in os.listdir(args.recon) if d in METHODS)
    table = {}
    for m in methods:
        for level_dir in sorted(os.listdir(os.path.join(args.recon, m))):
            d = os.path.join(args.recon, m, level_dir)
            files = sorted(f for f in os.listdir(d) if f.endswith(".f64"))
            scores = []
            for f in files:
                i = int(f.split(".")[0])
                img, _ = load_array(os.path.join(d, f))
                scores.append(score_image(i, img, truths[i], op, op.forward(truths[i])))
            rep = EvalReport.from_scores(scores, {"method": m, "source": d})
            od = os.path.join(args.out, m, level_dir)
            os.makedirs(od, exist_ok=True)
            rep.to_json(os.path.join(od, "report.json"))
            rep.to_csv(os.path.join(od, "report.csv"))
            table.setdefault(level_dir[len("snr_"):], {})[m] = rep.regressed_snr_db
    _write_table(args.out, table, methods, _config_dict(args))
    print(_table_text(table, methods))


def cmd_trace_export(args):
    """Average per-iteration traces over images (curves padded with their last value)."""
    d = os.path.join(args.recon, args.method.upper(), f"snr_{snr_label(parse_snr(args.snr_db))}", "traces")
    if not os.path.isdir(d):
        raise ValidationError(f"no traces in {d}")
    _ensure_out(args.out)
    cols = ["snr_db", "sinogram_snr_db", "alpha", "step_norm", "update_norm", "data_residual"]
    runs = []
    for f in sorted(os.listdir(d)):
        with open(os.path.join(d, f)) as fh:
            rows = list(csv.DictReader(fh))
        runs.append(np.array([[float(r[c]) for c in cols] for r in rows]))
    n = max(len(r) for r in runs)
    padded = np.stack([np.vstack([r, np.repeat(r[-1:], n - len(r), axis=0)]) for r in runs])
    mean = padded.mean(axis=0)
    path = os.path.join(args.out, f"{args.method.upper()}_snr_{snr_label(parse_snr(args.snr_db))}_mean_trace.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"mean_{c}" for c in cols])
        for k, row in enumerate(mean):
            w.writerow([k] + list(row))
    print(f"averaged {len(runs)} traces ({n} iterations) into {path}")


# --- parser -------------------------------------------------------------------

def _add_geometry(p):
    p.add_argument("--n-views", type=int, default=45)
    p.add_argument("--n-offsets", type=int, default=None, help="default 1.5x image width")
    p.add_argument("--pixel-size", type=float, default=1.0)
    p.add_argument("--jitter-std", type=float, default=0.05, help="view-angle jitter in degrees")


def build_parser():
    parser = argparse.ArgumentParser(prog="rpgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    p = common("phantom-gen", cmd_phantom_gen, "write a random-ellipse phantom dataset")
    p.add_argument("--n-train", type=int, default=475)
    p.add_argument("--n-test", type=int, default=25)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--n-ellipses", type=int, default=6)

    p = common("simulate", cmd_simulate, "simulate jittered, noisy sinograms for a dataset")
    p.add_argument("--dataset", required=True)
    _add_geometry(p)
    p.add_argument("--snr-db", nargs="+", default=["inf"], help="SNR levels in dB ('inf' = noiseless)")
    p.add_argument("--splits", nargs="+", default=["test"], choices=["train", "test"])

    p = common("train-projector", cmd_train, "train the residual CNN in three stages")
    p.add_argument("--dataset", required=True)
    _add_geometry(p)
    for name, typ, default in (("t1", int, 20), ("t2", int, 10), ("t3", int, 4), ("lr-start", float, 1e-2),
                               ("lr-end", float, 1e-3), ("momentum", float, 0.99), ("grad-clip", float, 1e-2),
                               ("batch-size", int, 2)):
        p.add_argument(f"--{name}", type=typ, default=default)
    p.add_argument("--train-snr-db", type=parse_snr, default=math.inf, help="noise on training sinograms")
    p.add_argument("--view-jitter-prob", type=float, default=0.0,
                   help="fraction of training sinograms measured with jittered views")
    p.add_argument("--init", help="initial parameters (all three stages still run)")
    p.add_argument("--resume-stage1", help="stage-1 checkpoint; runs stages 2 and 3 only")

    p = common("reconstruct", cmd_reconstruct, "reconstruct the test split with one or more methods")
    p.add_argument("--dataset", required=True)
    _add_geometry(p)
    p.add_argument("--methods", nargs="+", default=["FBP"], type=str.upper, choices=METHODS)
    p.add_argument("--snr-db", nargs="+", default=["inf"])
    p.add_argument("--model", help="projector (stage-3) model for RPGD")
    p.add_argument("--regressor", help="regressor (stage-1) model for REGRESSOR")
    p.add_argument("--gamma", type=float, nargs="+", default=[],
                   help="step size; several values are tuned for the best mean SNR")
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--c", type=float, nargs="+", default=[0.99], help="constant C or a c_k sequence")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--stop-tol", type=float, default=1e-6)
    p.add_argument("--skip-first-gradient", action="store_true")
    p.add_argument("--tv-grid", type=int, default=20)
    p.add_argument("--tv-iter", type=int, default=100)
    p.add_argument("--pgd-projector", choices=["box", "cnn"], default="box")
    p.add_argument("--limit", type=int, default=0, help="use only the first N test images")

    p = common("evaluate", cmd_evaluate, "re-score a reconstruct output directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--recon", required=True)

    p = common("trace-export", cmd_trace_export, "average solver traces into one curve")
    p.add_argument("--recon", required=True)
    p.add_argument("--method", default="RPGD")
    p.add_argument("--snr-db", default="inf")
    return parser


def _apply_config(parser, argv):
    """Parse once to find --config, load it as defaults, then parse again."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read config {args.config}: {e}") from e
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(cfg) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, ConfigurationError, InvalidSetError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, CGBreakdown, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
