"""Command-line entry point: ``nmtree {synth,train,eval,ground,gradcheck}``.

Machine-readable results go to stdout as JSON; progress and tables go to
stderr.  Exit status is 0 on success, 1 on a runtime failure and 2 on a
usage error (bad flags, unknown or invalid config keys).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .config import Config, ConfigError
from .gradcheck import run_gradcheck, tiny_config
from .synthetic import generate_dataset, read_dataset, write_dataset
from .training import (
    evaluate_top1,
    fit,
    load_checkpoint,
    module_frequencies,
    prepare,
    relation_comp_fraction,
    save_checkpoint,
)


class UsageError(Exception):
    pass


def _err(*args) -> None:
    print(*args, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (same names as the JSON keys)")
    group.add_argument("--config", help="JSON config file; unknown keys are rejected")
    for f in dataclasses.fields(Config):
        default = f.default_factory() if f.default is dataclasses.MISSING else f.default
        flag = f"--{f.name}"
        if isinstance(default, bool):
            group.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            group.add_argument(flag, nargs="+", default=None, metavar="NAME")
        else:
            group.add_argument(flag, type=type(default), default=None)


def _config_from(args: argparse.Namespace, base: Config | None = None) -> Config:
    values = (base or Config()).to_dict()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        unknown = sorted(set(loaded) - set(values))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for name in values:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return Config.from_dict(values)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _load_examples(path: str, config: Config):
    if not path:
        raise UsageError("a dataset path is required (--data)")
    return prepare(read_dataset(path), config)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    config = _config_from(args)
    if not config.out:
        raise UsageError("synth needs --out")
    if args.num < 0:
        raise UsageError("--num must be non-negative")
    count = write_dataset(config.out, generate_dataset(config.seed, args.num, config))
    _err(f"wrote {count} examples to {config.out}")
    _emit({"count": count, "path": config.out})
    return 0


def cmd_train(args) -> int:
    config = _config_from(args)
    if not config.out:
        raise UsageError("train needs --out (checkpoint path)")
    train = _load_examples(config.data, config)
    val = _load_examples(config.val, config) if config.val else None
    out = Path(config.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    with open(log_path, "w", encoding="utf-8") as log:
        def on_epoch(record):
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            _err(f"epoch {record['epoch']:3d}  loss {record['mean_loss']:.4f}  "
                 f"train {record['train_acc']:.3f}  val {record['val_acc']}  "
                 f"({time.perf_counter() - start:.0f}s)")

        model, history = fit(config, train, val, on_epoch=on_epoch)
    save_checkpoint(out, model, epoch=len(history))
    _emit({"checkpoint": str(out), "log": str(log_path), **history[-1]})
    return 0


def _format_table(freqs: dict) -> str:
    lines = [f"{'label':<14}{'Sum':>8}{'Comp':>8}"]
    for key in ("pos", "dep"):
        for label, counts in freqs[key].items():
            lines.append(f"{key}={label:<10}{counts.get('Sum', 0):>8}{counts.get('Comp', 0):>8}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    data = _load_examples(args.data, model.config)
    if not data:
        raise UsageError(f"{args.data} holds no examples")
    top1 = evaluate_top1(model, data, threads=args.threads)
    freqs = module_frequencies(model, data)
    _err(_format_table(freqs))
    _emit({"top1": top1, "modules": freqs, "relation_comp_fraction": relation_comp_fraction(freqs)})
    return 0


def _vec(t) -> list[float] | None:
    return None if t is None else [float(v) for v in np.asarray(t.data).reshape(-1)]


def ground_report(model, example, index: int | None = None) -> dict:
    """Per-node explanation of one grounding decision."""
    tree = example.tree
    with ag.no_grad():
        fwd = model.forward(tree, example.features, "infer")
    nodes = []
    for n in tree.ids:
        tok = tree.token(n)
        rec = fwd.result.records[n]
        entry = {
            "id": n, "word": tok.word, "pos": tok.pos, "dep": tok.dep, "head": tok.head,
            "children": list(tree.children[n]), "module": rec.kind.value,
            "span": tree.node_set(n), "alpha_s": _vec(rec.alpha_s), "alpha_p": _vec(rec.alpha_p),
            "beta": _vec(rec.beta), "scores": _vec(rec.scores),
        }
        d = fwd.assignment.decisions.get(n)
        if d is not None:
            entry["decision_probs"] = _vec(ag.softmax(d.logits))
        nodes.append(entry)
    root_scores = _vec(fwd.root_scores)
    return {
        "index": index, "words": [t.word for t in tree.tokens], "root": tree.root,
        "nodes": nodes, "root_scores": root_scores,
        "predicted": int(np.argmax(root_scores)), "target": example.target,
    }


def cmd_ground(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    data = _load_examples(args.data, model.config)
    if not 0 <= args.index < len(data):
        raise UsageError(f"--index {args.index} out of range for {len(data)} examples")
    _emit(ground_report(model, data[args.index], args.index))
    return 0


def cmd_gradcheck(args) -> int:
    config = _config_from(args, tiny_config())
    start = time.perf_counter()
    report = run_gradcheck(config, config.seed)
    elapsed = time.perf_counter() - start
    ok = report.max_rel_error < 1e-3
    _err(f"max relative error {report.max_rel_error:.3e} (worst: {report.worst}) over "
         f"{report.checked} values in {elapsed:.1f}s")
    _emit({"max_rel_error": report.max_rel_error, "worst": report.worst,
           "checked": report.checked, "passed": ok})
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmtree", description="Tree-structured visual grounding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic JSON-lines dataset")
    p.add_argument("--num", type=int, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write a checkpoint plus a JSON-lines log")
    p.add_argument("--log", help="log path (default: checkpoint path with .log.jsonl)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Top-1 accuracy and module-assignment frequencies")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ground", help="per-node JSON dump for one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(f"nmtree {args.command}: {exc}")
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        _err(f"nmtree {args.command}: error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
