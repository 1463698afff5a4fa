"""
@mainpage jferc: joint-vector cross-modal fusion for emotion recognition
@section main_section Command-Line Entry Point

Subcommands: synth-data, train, eval, gradcheck, ablate, sweep.
Exit codes: 0 on success, 2 when an internal acceptance assertion fails,
1 for any other package error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from config.settings import RunConfig, load_config, parse_override
from errors import HarnessAssertionError, JfercError

load_dotenv()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSERTION = 2
GRADCHECK_TOLERANCE = 1e-4


def _overrides(assignments: Optional[List[str]]) -> Dict[str, object]:
    merged: Dict[str, object] = {}
    for assignment in assignments or []:
        merged.update(parse_override(assignment))
    return merged


def _config(args) -> RunConfig:
    config = load_config(user_file=args.config, overrides=_overrides(args.set))
    for key in config.decision_defaults_in_use():
        logging.info(f"Using decision default for {key}")
    return config


def cmd_synth_data(args) -> int:
    from harness.synth import synth_from_config
    config = _config(args)
    manifest = synth_from_config(config, args.out, write_audio=not args.inline, n=args.n)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    from harness.trainer import train
    result = train(_config(args), args.manifest, args.run_dir)
    held_out = result.held_out
    print(f"acc {held_out.accuracy:.4f} w-f1 {held_out.weighted_f1:.4f} ({result.epochs_run} epochs) "
          f"-> {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from harness.trainer import evaluate
    out_dir = args.out or Path(args.checkpoint).parent / "eval"
    report = evaluate(args.checkpoint, args.manifest, out_dir=out_dir)
    print(f"acc {report.accuracy:.4f} w-f1 {report.weighted_f1:.4f} -> {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from harness.experiments import gradient_check, write_gradcheck_json
    report = gradient_check(seed=args.seed, max_coords_per_tensor=args.max_coords)
    if args.out:
        write_gradcheck_json(args.out, report)
    print(f"max relative error {report.max_relative_error:.3e} at {report.worst_parameter} "
          f"({report.coordinates_checked} coordinates)")
    if not report.passed(GRADCHECK_TOLERANCE):
        raise HarnessAssertionError(f"gradient check failed: {report.max_relative_error:.3e} >= "
                                    f"{GRADCHECK_TOLERANCE} in {report.worst_parameter}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from harness.experiments import run_ablation
    outcome = run_ablation(_config(args), args.manifest, args.out, seeds=args.seeds,
                           include_modalities=args.modalities)
    print(outcome.report_path.read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from harness.experiments import sweep
    grid = [parse_override(f"value={raw}")["value"] for raw in args.grid] if args.grid else None
    points = sweep(_config(args), args.manifest, args.out, param=args.param, grid=grid, workers=args.workers)
    for point in points:
        print(f"{point.param}={point.value}: acc {point.accuracy:.4f} w-f1 {point.weighted_f1:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jferc", description="Joint-vector cross-modal emotion recognition")
    parser.add_argument("--log-level", default="INFO", help="Log level")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="YAML or JSON config file layered over config/")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="Override a config key, e.g. --set fusion.blocks=3 (repeatable)")
        return p

    p = with_config(sub.add_parser("synth-data", help="Generate a synthetic dataset and manifest"))
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--n", type=int, default=None, help="Number of utterances (default synth.n)")
    p.add_argument("--inline", action="store_true", help="Store audio as inline synth specs instead of WAVs")
    p.set_defaults(func=cmd_synth_data)

    p = with_config(sub.add_parser("train", help="Train a model"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="Directory for metrics.json / confusion.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient check on the micro-config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=None, help="Sample at most this many coordinates per tensor")
    p.add_argument("--out", default=None, help="Write the report as JSON")
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("ablate", help="Run the ablation and fusion-method comparison"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--modalities", action="store_true", help="Also run text-only and audio-only rows")
    p.set_defaults(func=cmd_ablate)

    p = with_config(sub.add_parser("sweep", help="Sweep one hyperparameter"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", default="blocks", help="blocks, joint_length or a dotted config key")
    p.add_argument("--grid", nargs="+", default=None, help="Values to try (default from the sweep config)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """!
    @brief Parse arguments, run one subcommand and map errors to exit codes
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.func(args)
    except HarnessAssertionError as e:
        logging.error(f"Assertion failed: {e}")
        return EXIT_ASSERTION
    except (JfercError, FileNotFoundError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
