"""Command-line entry point: ``stagger {train,tag,eval,selfcheck,synth}``.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure,
4 selfcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import modelfile
from .checks import run_selfcheck
from .corpus import DEFAULT_ATTRIBUTE, read_conll, read_titles, split_dataset, tokenize, write_conll, decode_spans
from .errors import ConfigError, DataError, NumericError, StaggerError
from .evaluation import format_report
from .numeric import SeededRng
from .synthetic import generate_corpus
from .training import VARIANTS, ModelConfig, cross_validate, evaluate, tag_tokens, train

log = logging.getLogger("stagger")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_SELFCHECK = 0, 1, 2, 3, 4

# flag name -> ModelConfig field
CONFIG_FLAGS = {
    "variant": "variant", "word_dim": "word_dim", "char_dim": "char_dim", "hidden": "hidden",
    "attn_dim": "attn_dim", "dropout": "dropout", "lr": "lr", "clip": "clip", "epochs": "epochs",
    "folds": "folds", "seed": "seed", "min_frequency": "min_frequency", "lowercase": "lowercase",
    "bio_constraints": "bio_constraints",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(ModelConfig)}
    kind = types[name]
    if not isinstance(raw, str):
        return raw
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def build_config(args) -> ModelConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(CONFIG_FLAGS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {}
    for flag, field_name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            v = file_values.get(flag)
        if v is not None:
            values[field_name] = _coerce(field_name, v)
    if values.get("variant") is not None:
        values["variant"] = str(values["variant"]).lower()
    return ModelConfig(**values)


def _add_model_flags(p):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--word-dim", dest="word_dim", type=int)
    p.add_argument("--char-dim", dest="char_dim", type=int)
    p.add_argument("--attn-dim", dest="attn_dim", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--min-frequency", dest="min_frequency", type=int)
    p.add_argument("--lowercase", action="store_const", const=True, default=None)
    p.add_argument("--bio-constraints", dest="bio_constraints", action="store_const", const=True, default=None,
                   help="forbid O->I and START->I transitions in CRF variants")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stagger", description="BiLSTM-CRF attribute extraction from product titles")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a labeled dataset")
    p.add_argument("--data", required=True, help="dataset in token<TAB>tag format")
    p.add_argument("--out", "--model", dest="out", required=True, help="model file to write")
    p.add_argument("--log", help="write the per-epoch training log here")
    p.add_argument("--attribute", default=DEFAULT_ATTRIBUTE)
    p.add_argument("--cv", action="store_true", help="also run k-fold cross-validation on train+val")
    p.add_argument("--parallel-folds", dest="parallel_folds", type=int, default=1)
    p.add_argument("--tsv", action="store_true")
    _add_model_flags(p)

    p = sub.add_parser("tag", help="extract attribute values from raw titles")
    p.add_argument("--model", required=True)
    p.add_argument("--titles", "--data", dest="titles", default="-", help="one title per line ('-' = stdin)")

    p = sub.add_parser("eval", help="score a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tsv", action="store_true")

    p = sub.add_parser("selfcheck", help="run the gradient, CRF and BIO oracles")
    p.add_argument("--trials", type=int, default=1000, help="random CRF instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-seeds", dest="grad_seeds", type=int, default=3, help="gradient checks per variant")
    p.add_argument("--perturb-gradients", dest="perturb", action="store_true",
                   help="fault injection: corrupt analytic gradients (the check must fail)")

    p = sub.add_parser("synth", help="write the synthetic product-title corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--brands", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_train(args) -> int:
    config = build_config(args)
    if args.parallel_folds < 1:
        raise ConfigError("--parallel-folds must be >= 1")
    data = read_conll(args.data, args.attribute)
    if len(data) < 3:
        raise DataError(f"{args.data}: need at least 3 sequences for a train/val/test split, got {len(data)}")
    train_part, val_part, test_part = split_dataset(data, (0.6, 0.2, 0.2), SeededRng(config.seed, 4))
    log.info("split: %d train, %d val, %d test", len(train_part), len(val_part), len(test_part))
    style = "tsv" if args.tsv else "text"

    if args.cv:
        cv = cross_validate(config, train_part + val_part, parallel=args.parallel_folds)
        for k, rep in enumerate(cv.reports):
            print(format_report(rep, style, f"{config.variant}/fold{k + 1}"))
        print(format_report(cv.aggregate, style, f"{config.variant}/cv-mean"))

    lines = []

    def on_epoch(rec):
        lines.append(rec.to_line())
        log.info(rec.to_line())

    result = train(config, train_part, val_part, on_epoch=on_epoch)
    best = result.best_model()
    meta = {"seed": config.seed, "epochs_completed": len(result.log), "best_epoch": result.best_epoch,
            "split": [len(train_part), len(val_part), len(test_part)]}
    modelfile.save(args.out, best, meta, args.attribute)
    if args.log:
        Path(args.log).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    if val_part:
        print(format_report(evaluate(best, val_part), style, f"{config.variant}/val"))
    if test_part:
        print(format_report(evaluate(best, test_part), style, f"{config.variant}/test"))
    return EXIT_OK


def extract(model, title: str) -> list[str]:
    tokens = tokenize(title)
    return [text for _, text in decode_spans(tokens, tag_tokens(model, tokens))]


def cmd_tag(args) -> int:
    model, _ = modelfile.load(args.model)
    titles = sys.stdin.read().splitlines() if args.titles == "-" else read_titles(args.titles)
    skipped = 0
    out = []
    for title in titles:
        if not title.strip():
            skipped += 1
            continue
        out.append(f"{title}\t{' | '.join(extract(model, title))}\n")
    sys.stdout.write("".join(out))
    if skipped:
        log.warning("skipped %d empty title line(s)", skipped)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, header = modelfile.load(args.model)
    data = read_conll(args.data, header.get("attribute", DEFAULT_ATTRIBUTE))
    if not data:
        raise DataError(f"{args.data}: no sequences")
    report = evaluate(model, data)
    print(format_report(report, "tsv" if args.tsv else "text", model.config.variant))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    if args.trials < 1 or args.grad_seeds < 0:
        raise ConfigError("--trials must be >= 1 and --grad-seeds >= 0")
    ok = True
    for res in run_selfcheck(args.trials, args.seed, args.grad_seeds, perturb=1e-3 if args.perturb else 0.0):
        print(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}", flush=True)
        if not res.passed:
            ok = False
            print("  instance: " + json.dumps(res.instance, sort_keys=True))
    return EXIT_OK if ok else EXIT_SELFCHECK


def cmd_synth(args) -> int:
    if args.n < 1 or args.brands < 1:
        raise ConfigError("--n and --brands must be positive")
    write_conll(args.out, generate_corpus(args.n, args.seed, args.brands))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "tag": cmd_tag, "eval": cmd_eval, "selfcheck": cmd_selfcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"stagger: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"stagger: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"stagger: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, StaggerError) as exc:
        print(f"stagger: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
