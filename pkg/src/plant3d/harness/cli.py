"""Command-line entry point: synth, keypoints, describe and run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from ..cloud import cloud_resolution, estimate_normals, load_cloud
from ..descriptors import DEFAULT_RADIUS_MULT, describe_all, descriptors_to_csv, write_p3df
from ..detectors import (
    detect_harris3d,
    detect_iss,
    detect_sift3d,
    keypoints_from_json,
    keypoints_to_json,
)
from ..errors import (
    InvalidParameterError,
    InvalidSpecError,
    NotFoundError,
    ParseError,
    Plant3DError,
)
from ..io import write_ply, write_xyz
from .experiment import ExperimentConfig, run_experiment, samples_from_manifest, synthetic_suite
from .manifest import load_manifest
from .report import emit_report
from .synth import KINDS, SynthSpec, synth_cloud

logger = logging.getLogger("plant3d")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _both(value, choices):
    return tuple(choices) if value == "both" else (value,)


def _csv_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser():
    parser = _Parser(prog="plant3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="write a synthetic point cloud")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--params", default="{}", help="JSON object of shape parameters")
    p.add_argument("--out", required=True, help=".ply or .xyz")

    p = sub.add_parser("keypoints", parents=[common], help="detect keypoints on a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--detector", required=True, choices=("harris", "iss", "sift"))
    p.add_argument("--out", required=True, help="keypoint JSON")

    p = sub.add_parser("describe", parents=[common], help="compute descriptors at keypoints")
    p.add_argument("--input", required=True)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--descriptor", required=True, choices=("sift", "shot"))
    p.add_argument("--radius-mult", type=float, default=DEFAULT_RADIUS_MULT)
    p.add_argument("--out", required=True, help=".p3df (binary) or .csv")

    p = sub.add_parser("run", parents=[common], help="run the classification benchmark")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest", help="CSV: path,species,condition,replicate,day")
    src.add_argument("--synthetic", action="store_true", help="use the synthetic suite")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=45)
    p.add_argument("--n-points", type=int, default=3000)
    p.add_argument("--config", help="JSON file mirroring the experiment configuration")
    p.add_argument("--task", choices=("condition", "stage", "both"))
    p.add_argument("--encoder", choices=("fv", "vlad", "both"))
    p.add_argument("--detectors", type=_csv_list, help="comma list, default all")
    p.add_argument("--descriptors", type=_csv_list, help="comma list, default all")
    p.add_argument("--species", type=_csv_list, help="comma list, default all")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-ratio", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--report", default="-", help="output path, '-' for stdout")
    p.add_argument("--format", choices=("csv", "markdown"))
    return parser


def _detect(cloud, detector, config=ExperimentConfig()):
    res = float(cloud_resolution(cloud))
    if detector == "harris":
        return detect_harris3d(cloud, estimate_normals(cloud, config.normal_k), config.harris, res)
    if detector == "iss":
        return detect_iss(cloud, config.iss, res)
    return detect_sift3d(cloud, config.sift, res)


def cmd_synth(args):
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--params is not valid JSON: {exc}") from None
    cloud = synth_cloud(SynthSpec(args.kind, args.n, params, args.noise, args.seed))
    out = Path(args.out)
    if out.suffix.lower() == ".xyz":
        write_xyz(out, cloud.points)
    else:
        write_ply(out, cloud.points)
    logger.info("wrote %d points to %s", len(cloud), out)


def cmd_keypoints(args):
    cloud = load_cloud(args.input)
    kps = _detect(cloud, args.detector)
    Path(args.out).write_text(keypoints_to_json(kps) + "\n", encoding="utf-8")
    logger.info("%d %s keypoints -> %s", len(kps), args.detector, args.out)


def cmd_describe(args):
    cloud = load_cloud(args.input)
    kp_path = Path(args.keypoints)
    if not kp_path.is_file():
        raise NotFoundError(f"no such keypoint file: {kp_path}")
    try:
        kps = keypoints_from_json(kp_path.read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad keypoint file {kp_path}: {exc}") from None
    res = float(cloud_resolution(cloud))
    normals = estimate_normals(cloud, min(10, len(cloud)))
    D, kept = describe_all(cloud, normals, kps, args.descriptor, args.radius_mult * res)
    out = Path(args.out)
    if out.suffix.lower() == ".csv":
        out.write_text(descriptors_to_csv(D), encoding="utf-8")
    else:
        with open(out, "wb") as fh:
            write_p3df(fh, D)
    logger.info("%d of %d keypoints described -> %s", len(kept), len(kps), out)


def _load_config(args):
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"no such config file: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    overrides = {
        "tasks": _both(args.task, ("condition", "stage")) if args.task else None,
        "encoders": _both(args.encoder, ("fv", "vlad")) if args.encoder else None,
        "detectors": args.detectors,
        "descriptors": args.descriptors,
        "species": args.species,
        "k": args.k,
        "seed": args.seed,
        "train_ratio": args.train_ratio,
        "repeats": args.repeats,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def cmd_run(args):
    if not args.manifest and not args.synthetic:
        raise UsageError("run needs --manifest <csv> or --synthetic")
    config = _load_config(args)
    if args.synthetic:
        samples = synthetic_suite(args.classes, args.per_class, args.n_points, seed=config.seed)
        dataset = f"synthetic classes={args.classes} per_class={args.per_class} n_points={args.n_points}"
    else:
        samples = samples_from_manifest(load_manifest(args.manifest))
        dataset = f"manifest {args.manifest}"
    table = run_experiment(config, samples, dataset=dataset)
    fmt = args.format or ("markdown" if str(args.report).endswith(".md") else "csv")
    text = emit_report(table, fmt)
    if args.report == "-":
        sys.stdout.write(text)
    else:
        Path(args.report).write_text(text, encoding="utf-8")
        logger.info("report written to %s", args.report)


COMMANDS = {"synth": cmd_synth, "keypoints": cmd_keypoints,
            "describe": cmd_describe, "run": cmd_run}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidParameterError, InvalidSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Plant3DError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001 - last-resort handler for the exit code contract
        logger.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
