"""Command-line entry points.

Subcommands: gen-world, build-bank, train, eval, report, export-bank,
sweep, noise. All randomness is pinned by --seed (or the seed embedded in
the relevant config/spec), so repeated invocations produce byte-identical
CSV/PGM/JSON outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bank import ConfusionBank, build_bank
from .errors import ConfigurationError, FormatError, ParameterError, UsageError
from .harness import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    noise_ablation,
    results_csv_bytes,
    sweep,
    train,
)
from .harness.trainer import select_training_ids
from .serialization import canonical_json
from .world import WorldSpec, generate_world, load_world, save_world


def _cmd_gen_world(args) -> int:
    if args.spec:
        spec = WorldSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = WorldSpec()
    if args.seed is not None:
        spec = WorldSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    world = generate_world(spec)
    save_world(world, args.out)
    print(f"world written to {args.out} "
          f"({world.sample_count} samples, {world.num_categories} categories)")
    return 0


def _cmd_build_bank(args) -> int:
    world = load_world(args.world)
    ids = select_training_ids(world, args.shots)
    bank = build_bank(
        world, ids, args.tau, builder=args.builder, seed=args.seed or 0,
        extra_provenance={"shots": args.shots, "world": str(args.world)},
    )
    bank.save(args.out)
    print(f"bank written to {args.out} ({bank.total_records} records "
          f"from {len(ids)} training samples)")
    return 0


def _load_config(path, seed_override) -> TrainConfig:
    config = TrainConfig.from_json(path) if path else TrainConfig()
    if seed_override is not None:
        config = config.with_overrides(seed=seed_override)
    return config


def _cmd_train(args) -> int:
    world = load_world(args.world)
    bank = ConfusionBank.load(args.bank)
    config = _load_config(args.config, args.seed)
    _, report = train(world, bank, config, run_dir=args.out,
                      world_path=args.world, bank_path=args.bank)
    trained = report.trained
    print(f"run written to {args.out}")
    print(f"baseline hm={report.baseline.hm:.4f}  trained hm={trained.hm:.4f}  "
          f"correction_rate={report.correction_rate}")
    return 0


def _resolve_world_from_run(run_dir: Path, override: str | None):
    if override:
        return load_world(override)
    config = json.loads((run_dir / "config.json").read_text())
    world_path = config.get("world_path")
    if not world_path:
        raise UsageError(
            "run config does not record a world path; pass --world explicitly"
        )
    return load_world(world_path)


def _cmd_eval(args) -> int:
    run_dir = Path(args.rundir)
    world = _resolve_world_from_run(run_dir, args.world)
    model = load_checkpoint(run_dir / "checkpoint.bin", world)
    result = evaluate(world, model, split=args.split)
    print(canonical_json(result.to_dict()), end="")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.rundir)
    report = json.loads((run_dir / "report.json").read_text())
    baseline, trained = report["baseline"], report["trained"]
    print(f"seed: {report['seed']}")
    print(f"bank records: {report['bank_records']}")
    print(f"baseline: base={baseline['base_accuracy']:.4f} "
          f"novel={baseline['novel_accuracy']:.4f} hm={baseline['harmonic_mean']:.4f}")
    print(f"trained:  base={trained['base_accuracy']:.4f} "
          f"novel={trained['novel_accuracy']:.4f} hm={trained['harmonic_mean']:.4f}")
    rate = report["correction_rate"]
    print(f"correction rate: {rate if rate is not None else 'n/a (empty bank)'}")
    curve = report["loss_curve"]
    if curve:
        print(f"loss: first epoch {curve[0]:.4f} -> last epoch {curve[-1]:.4f}")
    return 0


def _cmd_export_bank(args) -> int:
    bank = ConfusionBank.load(args.bank)
    Path(args.out).write_text(canonical_json(bank.to_json_dict()))
    print(f"bank JSON written to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    world = load_world(args.world)
    bank = ConfusionBank.load(args.bank)
    config = _load_config(args.config, args.seed)
    values = [int(v) for v in args.values.split(",") if v]
    results = sweep(world, bank, config, args.param, values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(results_csv_bytes(args.param, results))
    print(f"sweep table written to {out}")
    return 0


def _cmd_noise(args) -> int:
    world = load_world(args.world)
    bank = ConfusionBank.load(args.bank)
    config = _load_config(args.config, args.seed)
    levels = [float(v) for v in args.levels.split(",") if v]
    results = noise_ablation(world, bank, config, levels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(results_csv_bytes("noise_level", results))
    print(f"noise table written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confusionkit",
        description="Confusion-aware prompt tuning on a synthetic vision-language world",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic world")
    p.add_argument("--spec", help="world spec JSON (defaults to the desk configuration)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("build-bank", help="index the frozen model's misclassifications")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--builder", default="frozen-baseline")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_build_bank)

    p = sub.add_parser("train", help="train adapter, experts and text projection")
    p.add_argument("--world", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--config", help="training config JSON (defaults apply)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run")
    p.add_argument("--rundir", required=True)
    p.add_argument("--split", choices=["base", "novel", "both"], default="both")
    p.add_argument("--world", help="override the world path recorded in the run")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="print a run summary")
    p.add_argument("--rundir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("export-bank", help="dump a bank as JSON for inspection")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_bank)

    p = sub.add_parser("sweep", help="sweep a mining hyperparameter")
    p.add_argument("--world", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--config")
    p.add_argument("--param", required=True, choices=["pairs_c", "reps_per_category"])
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("noise", help="robustness to representative corruption")
    p.add_argument("--world", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--config")
    p.add_argument("--levels", required=True, help="comma-separated levels in [0, 1]")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_noise)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ParameterError, UsageError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
