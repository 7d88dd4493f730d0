"""Command line entry point: ``bongard <generate|train|eval|bounds-verify|report>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .bounds import verify_bounds
from .errors import BongardError, ConfigError
from .synth import SINGLE_FACTOR_SUITE
from .training import RunConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("bongard")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _seeds(text: str) -> list[int]:
    # "5" means five seeds 0..4, "3,7,9" lists them explicitly
    if "," in text:
        return _int_list(text)
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return list(range(n))


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bongard", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic problem set")
    g.add_argument("--concept", action="append",
                   help="concept spec, e.g. 'fill:filled=true' (repeatable; default: single-factor suite)")
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--canvas", type=int, default=64)
    g.add_argument("--leading-pairs", action="store_true")
    g.add_argument("--out", help=f"output directory (default ${harness.DATA_ENV} or ./data)")

    t = sub.add_parser("train", help="train agents over several seeds")
    t.add_argument("--config", help="JSON run config; flags override it")
    t.add_argument("--data", help=f"dataset root (default ${harness.DATA_ENV} or ./data)")
    t.add_argument("--out", dest="out_dir", help="run directory")
    t.add_argument("--algo", dest="algorithm", choices=["ppo", "a2c"])
    t.add_argument("--model", dest="encoder", choices=["mlp", "snn"])
    t.add_argument("--bounds", dest="bounds_mode", choices=["off", "base", "extended"])
    t.add_argument("--episodes", type=int)
    t.add_argument("--episode-length", type=int)
    t.add_argument("--seeds", type=_seeds, help="count (0..n-1) or comma list")
    t.add_argument("--seed", type=int, help="single seed")
    t.add_argument("--train-ids", type=_int_list)
    t.add_argument("--eval-ids", type=_int_list)
    t.add_argument("--image-side", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-episodes", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--minibatch-size", type=int)
    t.add_argument("--min-samples", type=int)
    t.add_argument("--swap-history-in-lower", type=_bool)
    t.add_argument("--shuffle", type=_bool)
    t.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help=f"dataset root (default ${harness.DATA_ENV} or ./data)")
    e.add_argument("--ids", type=_int_list)
    e.add_argument("--oracle", action="store_true", help="replay true labels instead of the policy")
    e.add_argument("--out", help="also write the JSON here")

    b = sub.add_parser("bounds-verify", help="check the causal bounds against random SCMs")
    b.add_argument("--trials", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="summarize runs into report.csv and report.svg")
    r.add_argument("runs", nargs="+", help="run directories")
    r.add_argument("--out", default=".")
    r.add_argument("--window", type=int, default=50)
    return p


_RUN_FLAGS = ("algorithm", "encoder", "bounds_mode", "episodes", "episode_length", "seeds",
              "train_ids", "eval_ids", "image_side", "gamma", "lr", "batch_episodes", "epochs",
              "minibatch_size", "min_samples", "swap_history_in_lower", "shuffle", "out_dir")


def resolve_run_config(args) -> RunConfig:
    """Defaults, then the JSON file, then explicit flags."""
    values = {}
    if args.config:
        path = Path(args.config)
        try:
            values.update(json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    for name in _RUN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.seed is not None:
        values["seeds"] = [args.seed]
    try:
        return RunConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _data_root(arg) -> Path:
    return Path(arg) if arg else harness.default_data_root()


def cmd_generate(args) -> int:
    out = _data_root(args.out)
    manifest = harness.generate_dataset(out, args.concept or SINGLE_FACTOR_SUITE, args.count,
                                        args.seed, args.canvas, args.leading_pairs)
    print(f"wrote {manifest['count']} problems to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_run_config(args)
    if args.workers < 1:
        raise ConfigError("workers must be at least 1")
    meta = harness.train_run(_data_root(args.data), config, workers=args.workers)
    for seed, info in meta["seeds"].items():
        print(f"seed {seed}: final mean return {info['final_mean_return']:.2f} "
              f"over {info['episodes']} episodes ({info['wall_time_s']:.1f}s)")
    print(f"run written to {meta['config']['out_dir']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    result = harness.evaluate(args.checkpoint, _data_root(args.data), args.ids, args.oracle)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_bounds_verify(args) -> int:
    if args.trials < 0:
        raise ConfigError("trials must be nonnegative")
    report = verify_bounds(args.trials, args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    ok = report["containment_violations"] == 0 and report["max_endpoint_gap"] <= 1e-9
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def cmd_report(args) -> int:
    summary = harness.write_report(args.runs, args.out, args.window)
    for name, (mean, std) in summary.items():
        last = f"{mean[-1]:.2f} +- {std[-1]:.2f}" if len(mean) else "empty"
        print(f"{name}: final smoothed return {last}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "bounds-verify": cmd_bounds_verify, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BongardError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
