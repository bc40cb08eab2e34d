"""Command-line entry point: train, eval, gradcheck, sparsity, synth, sweep-depth."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import corpus, harness
from .model import NumericError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--data", help="data directory (train/val/test.jsonl) or JSONL file")
    p.add_argument("--out", help="output / run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--variant", choices=["ddgcn", "gcn"])
    p.add_argument("--l0", choices=["on", "off"])
    p.add_argument("--undirected", action="store_true", default=None)
    p.add_argument("--single-hop", action="store_true", default=None)
    p.add_argument("--fixed-graph", type=float, metavar="COSINE_THRESHOLD")
    p.add_argument("--no-special-node", action="store_true", default=None)
    p.add_argument("--encoder", choices=["bag", "vectors"])
    p.add_argument("--traits", type=int, help="number of binary traits per user")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddgcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--val", help="validation JSONL (when --data is a file)")
    p.add_argument("--test", help="test JSONL")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", help="comma-separated seeds for a multi-seed run")

    p = sub.add_parser("eval", help="evaluate a run directory on a dataset")
    _common(p)

    p = sub.add_parser("sparsity", help="kept-edge ratios of a trained run as CSV")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _common(p)
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--hid", type=int, default=5)
    p.add_argument("--posts", type=int, default=4)

    p = sub.add_parser("synth", help="generate a synthetic planted-signal corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--val-users", type=int)
    p.add_argument("--test-users", type=int)
    p.add_argument("--posts", type=int, default=8)
    p.add_argument("--traits", type=int, default=4)
    p.add_argument("--vocab", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--post-length", type=int, default=6)
    p.add_argument("--positive-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("sweep-depth", help="train across the depth grid")
    _common(p)
    p.add_argument("--depths", help="comma-separated depths (default 1..6,9..24 step 3)")
    p.add_argument("--epochs", type=int)
    return parser


def _run_config(args) -> harness.RunConfig:
    cfg = harness.load_config(args.config) if args.config else harness.RunConfig()
    overrides = {
        "seed": args.seed,
        "depth": args.depth,
        "variant": args.variant,
        "l0": None if args.l0 is None else args.l0 == "on",
        "undirected": args.undirected,
        "single_hop": args.single_hop,
        "fixed_graph": args.fixed_graph,
        "no_special_node": args.no_special_node,
        "encoder": args.encoder,
        "traits": args.traits,
        "epochs": getattr(args, "epochs", None),
    }
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def _require(args, *names) -> None:
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise harness.ConfigError(f"missing required option(s): {', '.join(missing)}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise harness.ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _cmd_train(args) -> int:
    _require(args, "data", "out")
    cfg = _run_config(args)
    if args.seeds:
        summary = harness.run_seeds(cfg, args.data, args.out, _ints(args.seeds), val=args.val, test=args.test)
        print(json.dumps({"mean": summary["mean"], "max": summary["max"]}))
        return EXIT_OK
    art = harness.train(cfg, args.data, args.out, val=args.val, test=args.test)
    print((art.test or art.val).to_json())
    return EXIT_OK


def _cmd_eval(args) -> int:
    _require(args, "data", "out")
    print(harness.evaluate(args.out, args.data).to_json())
    return EXIT_OK


def _cmd_sparsity(args) -> int:
    _require(args, "data", "out")
    sys.stdout.write(harness.sparsity_report(args.out, args.data))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = _run_config(args)
    result = harness.gradcheck(d=args.d, hid=args.hid, L=cfg.depth, N=args.posts, T=args.traits or 2, seed=cfg.seed)
    for name, err in result.op_errors.items():
        print(f"{'ok  ' if err < result.op_tolerance else 'FAIL'} op {name}: {err:.3e}")
    status = "ok  " if result.max_rel_error < result.tolerance else "FAIL"
    print(f"{status} full model (attempt {result.attempts}): max rel. error {result.max_rel_error:.3e}")
    return EXIT_OK if result.passed else EXIT_RUNTIME


def _cmd_synth(args) -> int:
    corpus.synth_generate(
        args.users, args.posts, args.traits, args.vocab, args.noise, args.seed, args.out,
        val_users=args.val_users, test_users=args.test_users, post_length=args.post_length,
        positive_rate=args.positive_rate,
    )
    print(f"wrote {args.out}/train.jsonl, val.jsonl, test.jsonl, vocab.txt")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    _require(args, "data", "out")
    cfg = _run_config(args)
    depths = _ints(args.depths) if args.depths else harness.DEPTH_GRID
    results = harness.sweep_depth(cfg, args.data, args.out, depths)
    for depth, rep in results.items():
        print(json.dumps({"depth": depth, **rep}))
    return EXIT_OK


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sparsity": _cmd_sparsity,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "sweep-depth": _cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (harness.ConfigError, corpus.SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, harness.BoundaryCollision, FloatingPointError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
