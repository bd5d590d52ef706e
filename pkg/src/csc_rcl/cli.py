"""``csc`` command line.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure. The last stderr line is always ``csc: status=<ok|error> exit=<n> ...``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import InjectionStats, inject_errors, load_corpus, make_batches, write_corpus, write_sidecar
from .errors import CSCError, DataError
from .evaluation import (case_report, evaluate, postfilter_de, render_case_report,
                         write_metrics_csv)
from .lexicon import Lexicon, load_lexicon
from .model import BackboneConfig, TransformerBackbone, predict_ids
from .rcl import RclConfig, dump_pairs, mine_pairs
from .train import TrainConfig, sweep_alpha, train

logger = logging.getLogger("csc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# option dest -> default; these can come from --config as well as flags
DEFAULTS = {
    "seed": 0,
    "alpha": 0.0005,
    "tau": 0.1,
    "use_pinyin": True,
    "use_confusion": True,
    "exclude_identical": True,
    "batch_size": 16,
    "epochs": 30,
    "lr": 1e-3,
    "optimizer": "sgd",
    "warmup_fraction": 0.0,
    "weight_decay": 0.0,
    "eval_every": 0,
    "granularity": "sentence",
    "d": 32,
    "layers": 2,
    "heads": 1,
    "d_ff": None,
    "representation_tap": None,
    "jobs": 1,
    "error_rate": 0.1,
    "p_pinyin": 0.5,
}


def _add_lexicon_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lexicon")
    g.add_argument("--data-dir", default=os.environ.get("CSC_DATA_DIR"),
                   help="directory holding vocab.txt, pinyin.tsv, confusion.tsv and "
                        "optionally simp.tsv (default: $CSC_DATA_DIR)")
    g.add_argument("--vocab")
    g.add_argument("--pinyin")
    g.add_argument("--confusion")
    g.add_argument("--simp-map")
    g.add_argument("--allow-missing-pinyin", action="store_true")
    g.add_argument("--symmetrize-confusion", action="store_true")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values (flags override it)")
    p.add_argument("--seed", type=int, default=None)


def _add_rcl_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("reverse contrastive loss")
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--tau", type=float, default=None)
    g.add_argument("--use-pinyin", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--use-confusion", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--exclude-identical", action=argparse.BooleanOptionalAction, default=None)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--optimizer", choices=["sgd", "adamw"], default=None)
    g.add_argument("--warmup-fraction", type=float, default=None)
    g.add_argument("--weight-decay", type=float, default=None)
    g.add_argument("--eval-every", type=int, default=None)
    g.add_argument("--granularity", choices=["sentence", "character"], default=None)
    m = p.add_argument_group("backbone")
    m.add_argument("--d", type=int, default=None)
    m.add_argument("--layers", type=int, default=None)
    m.add_argument("--heads", type=int, default=None)
    m.add_argument("--d-ff", type=int, default=None)
    m.add_argument("--representation-tap", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="csc", description="Chinese spelling check with reverse contrastive learning")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="inject synthetic errors into clean text")
    _add_common(p)
    _add_lexicon_args(p)
    p.add_argument("--clean", required=True, help="one clean sentence per line")
    p.add_argument("--out", required=True, help="output corpus TSV; sidecar goes to <out>.json")
    p.add_argument("--error-rate", type=float, default=None)
    p.add_argument("--p-pinyin", type=float, default=None,
                   help="probability of a homophone substitution (rest: confusion set)")

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_lexicon_args(p)
    _add_rcl_args(p)
    _add_train_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", help="score predictions or a checkpoint on a corpus")
    _add_common(p)
    _add_lexicon_args(p)
    p.add_argument("--corpus", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="one predicted sentence per line")
    p.add_argument("--granularity", choices=["sentence", "character", "both"], default=None)
    p.add_argument("--postfilter-de", action="store_true", help="revert edits touching 的/地/得")
    p.add_argument("--out", help="metrics CSV (default: stdout)")
    p.add_argument("--pred-out", help="write predictions here")

    p = sub.add_parser("sweep", help="train and evaluate once per alpha")
    _add_common(p)
    _add_lexicon_args(p)
    _add_rcl_args(p)
    _add_train_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--alphas", required=True, help="comma separated, e.g. 0.1,0.01,0.001")
    p.add_argument("--out", required=True, help="output directory; writes sweep.csv")
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("pairs", help="dump mined negative pairs per batch as JSON")
    _add_common(p)
    _add_lexicon_args(p)
    _add_rcl_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--shuffle", action="store_true", help="shuffle sentences with --seed")
    p.add_argument("--out", help="JSON file (default: stdout)")

    p = sub.add_parser("casediff", help="markdown table of sentences where two systems differ")
    _add_common(p)
    _add_lexicon_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--name-a", default="A")
    p.add_argument("--name-b", default="B")
    p.add_argument("--out", help="markdown file (default: stdout)")
    return ap


def resolve_options(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    opts = {k: v for k, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(cfg) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
        opts.update(cfg)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def _lexicon(args: argparse.Namespace) -> Lexicon:
    base = Path(args.data_dir) if args.data_dir else None

    def pick(explicit: str | None, name: str, required: bool = True) -> Path | None:
        if explicit:
            return Path(explicit)
        if base is not None and (base / name).exists():
            return base / name
        if required:
            raise UsageError(f"no {name}: pass --{name.split('.')[0]} or --data-dir / CSC_DATA_DIR")
        return None

    simp = pick(args.simp_map, "simp.tsv", required=False)
    return load_lexicon(
        pick(args.vocab, "vocab.txt"),
        pick(args.pinyin, "pinyin.tsv"),
        pick(args.confusion, "confusion.tsv"),
        simp,
        allow_missing_pinyin=args.allow_missing_pinyin,
        symmetrize_confusion=args.symmetrize_confusion,
    )


def _rcl_config(o: dict) -> RclConfig:
    return RclConfig(tau=o["tau"], alpha=o["alpha"], use_pinyin=o["use_pinyin"],
                     use_confusion=o["use_confusion"], exclude_identical=o["exclude_identical"])


def _train_config(o: dict) -> TrainConfig:
    return TrainConfig(lr=o["lr"], batch_size=o["batch_size"], epochs=o["epochs"],
                       warmup_fraction=o["warmup_fraction"], optimizer=o["optimizer"],
                       weight_decay=o["weight_decay"], rcl=_rcl_config(o), seed=o["seed"],
                       eval_every=o["eval_every"], granularity=o["granularity"])


def _model_config(o: dict, lex: Lexicon) -> BackboneConfig:
    return BackboneConfig(vocab_size=lex.vocab_size, d=o["d"], L=o["layers"], heads=o["heads"],
                          seed=o["seed"], d_ff=o["d_ff"], representation_tap=o["representation_tap"])


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh if line.strip()]


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_gen(args, o) -> None:
    lex = _lexicon(args)
    p = o["p_pinyin"]
    if not 0.0 <= p <= 1.0:
        raise UsageError("--p-pinyin must lie in [0, 1]")
    mix = (p, 1.0 - p)
    stats = InjectionStats()
    pairs = inject_errors(_read_lines(args.clean), lex, o["error_rate"], mix, o["seed"], stats=stats)
    write_corpus(args.out, pairs, lex)
    write_sidecar(args.out + ".json", seed=o["seed"], error_rate=o["error_rate"], mix=mix, stats=stats)
    logger.info("wrote %d pairs (%d corrupted characters) to %s", len(pairs), stats.corrupted, args.out)


def cmd_train(args, o) -> None:
    lex = _lexicon(args)
    corpus = load_corpus(args.train, lex)
    dev = load_corpus(args.dev, lex) if args.dev else None
    model = TransformerBackbone(_model_config(o, lex))
    rec = train(corpus, lex, model, _train_config(o), dev=dev, run_dir=args.out,
                resume_from=args.resume)
    if rec.best_report is not None:
        logger.info("best dev C-F %.1f at step %s", rec.best_report.c_f, rec.best_step)


def cmd_eval(args, o) -> None:
    from .checkpoint import load_checkpoint

    lex = _lexicon(args)
    pairs = load_corpus(args.corpus, lex)
    sources = [lex.decode(p.source) for p in pairs]
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint, lex.fingerprint())
        preds = [lex.decode(ids) for ids in predict_ids(model, pairs)]
    else:
        preds = [lex.simplify(s) for s in _read_lines(args.predictions)]
        if len(preds) != len(pairs):
            raise DataError(f"{args.predictions}: {len(preds)} lines for {len(pairs)} sentences")
    if args.postfilter_de:
        preds = postfilter_de(preds, sources)
    if args.pred_out:
        _write_text(args.pred_out, "".join(s + "\n" for s in preds))
    gold = [(s, lex.decode(p.target)) for s, p in zip(sources, pairs)]
    gran = o["granularity"]
    grans = ["sentence", "character"] if gran == "both" else [gran]
    reports = [evaluate(gold, preds, g) for g in grans]
    if args.out:
        write_metrics_csv(args.out, reports)
    else:
        write_metrics_csv(sys.stdout, reports)


def _parse_alphas(text: str) -> list[float]:
    try:
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"--alphas: not a comma separated list of numbers: {text!r}") from None
    if not alphas or any(a < 0 for a in alphas):
        raise UsageError("--alphas needs at least one non-negative value")
    return alphas


def cmd_sweep(args, o) -> None:
    alphas = _parse_alphas(args.alphas)
    lex = _lexicon(args)
    train_pairs = load_corpus(args.train, lex)
    dev = load_corpus(args.dev, lex)
    test = load_corpus(args.test, lex) if args.test else None
    rows = sweep_alpha(train_pairs, lex, _model_config(o, lex), _train_config(o), alphas,
                       dev=dev, test=test, out_dir=args.out, jobs=o["jobs"])
    for r in rows:
        logger.info("alpha=%g C-F=%.1f D-F=%.1f", r.alpha, r.report.c_f, r.report.d_f)


def cmd_pairs(args, o) -> None:
    lex = _lexicon(args)
    pairs = load_corpus(args.corpus, lex)
    cfg = _rcl_config(o)
    batches = make_batches(pairs, o["batch_size"], o["seed"] if args.shuffle else None)
    dump = []
    for b, batch in enumerate(batches):
        sets = mine_pairs(batch, lex, cfg)
        dump.append({"batch": b, "anchors": dump_pairs(batch.source_ids, sets, lex)})
    _write_text(args.out, json.dumps(dump, ensure_ascii=False, indent=1) + "\n")


def cmd_casediff(args, o) -> None:
    lex = _lexicon(args)
    pairs = load_corpus(args.corpus, lex)
    gold = [(lex.decode(p.source), lex.decode(p.target)) for p in pairs]
    a = [lex.simplify(s) for s in _read_lines(args.pred_a)]
    b = [lex.simplify(s) for s in _read_lines(args.pred_b)]
    cases = case_report(gold, a, b)
    _write_text(args.out, render_case_report(cases, args.name_a, args.name_b))


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "pairs": cmd_pairs,
    "casediff": cmd_casediff,
}


def _status(code: int, detail: str = "") -> None:
    state = "ok" if code == 0 else "error"
    line = f"csc: status={state} exit={code}"
    if detail:
        line += " " + detail
    print(line, file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                            stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args)
        COMMANDS[args.command](args, opts)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        _status(1, "kind=usage")
        return 1
    except CSCError as exc:
        print(f"csc: {exc}", file=sys.stderr)
        _status(exc.exit_code, f"kind={type(exc).__name__}")
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        # invalid option values rejected by the config dataclasses
        print(f"csc: {exc}", file=sys.stderr)
        _status(1, "kind=usage")
        return 1
    except OSError as exc:
        print(f"csc: {exc}", file=sys.stderr)
        _status(2, "kind=io")
        return 2
    except SystemExit as exc:  # --help / --version
        code = exc.code if isinstance(exc.code, int) else 0
        _status(code)
        return code
    _status(0)
    return 0


def main() -> None:
    sys.exit(run())
