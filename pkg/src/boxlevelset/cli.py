"""Command-line interface.

Four subcommands: `segment` runs a dataset of annotated images and exports
masks, `evolve-demo` runs a single instance and writes snapshot frames,
`eval` scores an exported result file against ground truth, `synth`
generates the synthetic benchmark. Machine-readable JSON goes to stdout,
human summaries and log output to stderr.

Exit codes: 0 on success, 1 on validation problems (bad flags, malformed
annotations or config), 2 on I/O failure.

Parameter precedence is flags over config file over built-in defaults. The
config file is plain `key = value` text with `#` comments; keys mirror the
EnergyParams / EvolveConfig field names plus `rho_cls.<class_id>` entries
and `enlarge_factor`. `--dump-config` prints the effective configuration in
the same format and exits.

The BOXLEVELSET_LOG environment variable (off | info | debug) controls log
verbosity on stderr.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields

from .energy import ConfigError, EnergyParams
from .evolve import EvolveConfig, evolve_instance
from .grid import AnnotationError, BoxAnnotation, crop_region, enlarge_box, load_image, normalize_image
from .pipeline import (
    GenerationError,
    SynthSpec,
    evaluate_rle_files,
    export_masks,
    generate_synthetic,
    load_annotations,
    run_dataset,
)

__all__ = ["main"]

_PARAM_KEYS = ("alpha1", "alpha2", "lam", "mu", "rho_default", "sigmoid_slope", "eps_grad", "eps_denom")
_CFG_FLOAT_KEYS = ("step_size", "tol", "backtrack_factor")
_CFG_INT_KEYS = ("max_iters", "snapshot_every")


class CliError(Exception):
    """Validation failure; carries the usage text of the failing parser."""

    def __init__(self, message, usage=None):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1
    def error(self, message):
        raise CliError(message, usage=self.format_usage())


def _setup_logging():
    level = os.environ.get("BOXLEVELSET_LOG", "off").lower()
    chosen = {"off": None, "info": logging.INFO, "debug": logging.DEBUG}.get(level)
    if chosen is not None:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger = logging.getLogger("boxlevelset")
        logger.addHandler(handler)
        logger.setLevel(chosen)


def _read_config_file(path):
    values = {}
    with open(path) as fp:
        for lineno, raw in enumerate(fp, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError("%s:%d: expected key = value" % (path, lineno))
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _effective_config(args):
    """Merge defaults, config file, and flag overrides into one dict."""
    merged = {f.name: getattr(EnergyParams(), f.name) for f in fields(EnergyParams) if f.name != "rho_cls"}
    merged.update({f.name: getattr(EvolveConfig(), f.name) for f in fields(EvolveConfig)
                   if f.name not in ("snapshot_dir", "snapshot_name")})
    merged["enlarge_factor"] = 2.0
    rho_cls = {}

    if getattr(args, "config", None):
        for key, text in _read_config_file(args.config).items():
            if key.startswith("rho_cls."):
                try:
                    rho_cls[int(key.split(".", 1)[1])] = float(text)
                except ValueError:
                    raise CliError("bad config entry %s = %s" % (key, text))
            elif key in _PARAM_KEYS or key in _CFG_FLOAT_KEYS or key == "enlarge_factor":
                try:
                    merged[key] = None if text == "none" else float(text)
                except ValueError:
                    raise CliError("bad config value %s = %s" % (key, text))
            elif key in _CFG_INT_KEYS:
                try:
                    merged[key] = int(text)
                except ValueError:
                    raise CliError("bad config value %s = %s" % (key, text))
            else:
                raise CliError("unknown config key %r" % key)

    for key in (*_PARAM_KEYS, *_CFG_FLOAT_KEYS, *_CFG_INT_KEYS, "enlarge_factor"):
        override = getattr(args, key, None)
        if override is not None:
            merged[key] = override
    for entry in getattr(args, "rho", None) or []:
        try:
            cls, _, value = entry.partition("=")
            rho_cls[int(cls)] = float(value)
        except ValueError:
            raise CliError("bad --rho entry %r (expected class_id=value)" % entry)

    merged["rho_cls"] = rho_cls
    return merged


def _build_params_cfg(merged, snapshot_dir=None, snapshot_name="instance", snapshot_every=None):
    params = EnergyParams(
        alpha1=merged["alpha1"], alpha2=merged["alpha2"], lam=merged["lam"], mu=merged["mu"],
        rho_cls=merged["rho_cls"], rho_default=merged["rho_default"],
        sigmoid_slope=merged["sigmoid_slope"], eps_grad=merged["eps_grad"],
        eps_denom=merged["eps_denom"],
    )
    cfg = EvolveConfig(
        step_size=merged["step_size"], max_iters=int(merged["max_iters"]),
        tol=merged["tol"], backtrack_factor=merged["backtrack_factor"],
        snapshot_every=snapshot_every if snapshot_every is not None else int(merged["snapshot_every"]),
        snapshot_dir=snapshot_dir, snapshot_name=snapshot_name,
    )
    return params, cfg


def _dump_config(merged):
    for key in sorted(k for k in merged if k != "rho_cls"):
        value = merged[key]
        print("%s = %s" % (key, "none" if value is None else repr(float(value)) if isinstance(value, float) else value))
    for cls in sorted(merged["rho_cls"]):
        print("rho_cls.%d = %r" % (cls, merged["rho_cls"][cls]))


def _add_param_flags(sub):
    for key in _PARAM_KEYS:
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=float, default=None)
    for key in _CFG_FLOAT_KEYS:
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=float, default=None)
    for key in _CFG_INT_KEYS:
        sub.add_argument("--" + key.replace("_", "-"), dest=key, type=int, default=None)
    sub.add_argument("--enlarge-factor", dest="enlarge_factor", type=float, default=None)
    sub.add_argument("--rho", action="append", metavar="CLASS_ID=VALUE",
                     help="per-class data weight, repeatable")
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--dump-config", action="store_true",
                     help="print the effective configuration and exit")


def _emit(obj):
    json.dump(obj, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _cmd_segment(args):
    merged = _effective_config(args)
    if args.dump_config:
        _dump_config(merged)
        return 0
    params, cfg = _build_params_cfg(merged)
    records = load_annotations(args.annotations)
    t0 = time.perf_counter()
    masks, report = run_dataset(
        records, params=params, cfg=cfg, parallelism=args.jobs,
        enlarge_factor=merged["enlarge_factor"],
        constraints=not args.no_constraints, image_root=args.images,
    )
    elapsed = time.perf_counter() - t0
    export_masks(masks, "png", args.out)
    export_masks(masks, "json", os.path.join(args.out, "results.json"), report=report)
    _emit({"out": args.out, "metrics": report.to_dict()})
    print(
        "segmented %d instances from %d records in %.1f s (%d failures)"
        % (report.n_instances, len(records), elapsed, len(report.failures)),
        file=sys.stderr,
    )
    return 0


def _cmd_evolve_demo(args):
    merged = _effective_config(args)
    if args.dump_config:
        _dump_config(merged)
        return 0
    try:
        parts = [int(v) for v in args.box.split(",")]
    except ValueError:
        raise CliError("bad --box %r (expected x_min,y_min,x_max,y_max[,class_id])" % args.box)
    if len(parts) == 4:
        parts.append(0)
    if len(parts) != 5:
        raise CliError("bad --box %r (expected 4 or 5 integers)" % args.box)
    box = BoxAnnotation(*parts)

    stem = os.path.splitext(os.path.basename(args.image))[0]
    every = args.snapshot_every if args.snapshot_every is not None else 10
    params, cfg = _build_params_cfg(
        merged, snapshot_dir=args.frames, snapshot_name=stem, snapshot_every=every
    )
    u = normalize_image(load_image(args.image))
    region = enlarge_box(box, merged["enlarge_factor"], u.shape[2], u.shape[1])
    result = evolve_instance(crop_region(u, region), box, region, box.class_id, params, cfg)
    _emit({
        "image": args.image,
        "region": [region.x_min, region.y_min, region.x_max, region.y_max],
        "iterations": result.iterations_used,
        "converged": result.converged,
        "energy_initial": result.energy_trace[0],
        "energy_final": result.energy_trace[-1],
        "mask_pixels": int(result.mask.sum()),
        "frames": args.frames,
    })
    print(
        "evolved %s for %d iterations (converged=%s), frames in %s"
        % (stem, result.iterations_used, result.converged, args.frames),
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args):
    report = evaluate_rle_files(args.pred, args.gt)
    _emit(report.to_dict())
    if report.n_instances:
        print(
            "%d instances: mean IoU %.4f, AP@0.5 %.3f, AP@0.75 %.3f"
            % (report.n_instances, report.mean_iou, report.ap50, report.ap75),
            file=sys.stderr,
        )
    else:
        print("no instances to score", file=sys.stderr)
    return 0


def _cmd_synth(args):
    spec = SynthSpec()
    records = generate_synthetic(args.seed, args.count, spec, out_dir=args.out)
    n = sum(len(r.boxes) for r in records)
    _emit({"out": args.out, "images": len(records), "instances": n, "seed": args.seed})
    print("wrote %d images / %d instances to %s" % (len(records), n, args.out), file=sys.stderr)
    return 0


def _build_parser():
    parser = _Parser(prog="boxlevelset", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(
        dest="command", parser_class=_Parser,
        metavar="{segment,evolve-demo,eval,synth}",
    )

    p = sub.add_parser("segment", help="segment an annotated dataset")
    p.add_argument("--images", required=True, help="directory image paths resolve against")
    p.add_argument("--annotations", required=True, help="annotation JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel instance evolutions (default: cores)")
    p.add_argument("--no-constraints", action="store_true",
                   help="drop the box/background constraint terms (ablation)")
    _add_param_flags(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("evolve-demo", help="run one instance and write frames")
    p.add_argument("--image", required=True)
    p.add_argument("--box", required=True, metavar="X0,Y0,X1,Y1[,CLS]")
    p.add_argument("--frames", required=True, help="snapshot output directory")
    _add_param_flags(p)
    p.set_defaults(func=_cmd_evolve_demo)

    p = sub.add_parser("eval", help="score exported results against ground truth")
    p.add_argument("--pred", required=True, help="results.json from segment")
    p.add_argument("--gt", required=True, help="ground_truth.json from synth")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None):
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise CliError("a subcommand is required", usage=parser.format_usage())
        return args.func(args)
    except CliError as exc:
        if exc.usage:
            sys.stderr.write(exc.usage)
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (AnnotationError, ConfigError, GenerationError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("I/O error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
