"""Command-line entry points: prepare, train, eval, ablate, export-curves.

Configuration is layered: built-in defaults, then a YAML/JSON ``--config``
file, then ``RATIONALE_ST_*`` environment variables, then command-line
flags. A config file has the sections ``synthetic``, ``split``,
``encoder`` and ``selftrain`` (with ``loss_weights`` nested inside it) plus a
top-level ``seed``. Environment variables address nested keys with double
underscores, e.g. ``RATIONALE_ST_SELFTRAIN__MAX_ITERATIONS=3`` or
``RATIONALE_ST_SEED=7``.

Exit codes: 0 on success, 1 for user or configuration errors, 2 for
internal failures.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .data import (
    Corpus,
    CorpusFormatError,
    RationaleMask,
    SyntheticConfig,
    holdout,
    load_eraser_corpus,
    read_corpus,
    sample_few_shot,
    synthetic_split,
    write_corpus,
)
from .encoder import EncoderConfig
from .losses import LossWeights
from .metrics import metric_report
from .model import load_model
from .selftrain import RunDirectory, SealedGold, SelfTrainConfig, encode_corpus, evaluate_examples, self_train

logger = logging.getLogger("rationale_st")

ENV_PREFIX = "RATIONALE_ST_"
EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    """Bad input, configuration or file layout; maps to exit code 1."""


DEFAULTS = {
    "seed": 0,
    "synthetic": {},
    "split": {"n_per_class": 20, "validation_size": 200, "strict": False},
    "encoder": {"hidden_dim": 64, "num_layers": 2, "num_heads": 4, "max_len": 512, "dropout_rate": 0.1},
    "selftrain": {},
}

# --------------------------------------------------------------------- ablation subsets
#
# Each subset derives a self-training config from the configured full model
# by switching components off; coefficient values of the components left on
# are those of the full configuration.

COMPONENTS = ("wu", "suff", "comp", "sparsity", "continuity")


def _with_components(cfg: SelfTrainConfig, keep: Sequence[str], reweight: bool) -> SelfTrainConfig:
    lw = cfg.loss_weights.to_dict()
    for c in COMPONENTS:
        if c not in keep:
            lw[f"coef_{c}"] = 0.0
    return replace(cfg, loss_weights=LossWeights(**lw), reweight=reweight)


ABLATIONS = {
    "teacher": lambda c: replace(c, teacher_only=True),
    "suff": lambda c: _with_components(c, ("wu", "suff"), reweight=False),
    "reweight": lambda c: _with_components(c, ("wu", "suff"), reweight=True),
    "sparsity": lambda c: _with_components(c, ("wu", "suff", "sparsity"), reweight=True),
    "completeness": lambda c: _with_components(c, ("wu", "suff", "sparsity", "comp"), reweight=True),
    "full": lambda c: c,
    "suff_only": lambda c: _with_components(c, ("suff",), reweight=c.reweight),
    "suff_only_sparsity": lambda c: _with_components(c, ("suff", "sparsity"), reweight=c.reweight),
    "no_reweight": lambda c: replace(c, reweight=False),
    "no_suff": lambda c: _with_components(c, ("wu", "comp", "sparsity", "continuity"), c.reweight),
    "no_comp": lambda c: _with_components(c, ("wu", "suff", "sparsity", "continuity"), c.reweight),
    "no_coherence": lambda c: _with_components(c, ("wu", "suff", "comp"), c.reweight),
}
DEFAULT_SUBSETS = ("teacher", "suff", "reweight", "sparsity", "completeness", "full")

ABLATE_ALIASES = {"co": ("sparsity", "continuity"), "coherence": ("sparsity", "continuity")}


def apply_ablate(cfg: SelfTrainConfig, spec: str) -> SelfTrainConfig:
    """Switch off the comma-separated components of ``spec`` (``wu``, ``suff``, ``comp``, ``co``, ...)."""
    off: set[str] = set()
    reweight = cfg.reweight
    for name in (s.strip() for s in spec.split(",") if s.strip()):
        if name == "reweight":
            reweight = False
        elif name in ABLATE_ALIASES:
            off.update(ABLATE_ALIASES[name])
        elif name in COMPONENTS:
            off.add(name)
        else:
            raise UserError(f"unknown component {name!r} in --ablate; choose from "
                            f"{', '.join(COMPONENTS + tuple(ABLATE_ALIASES) + ('reweight',))}")
    return _with_components(cfg, [c for c in COMPONENTS if c not in off], reweight)


# --------------------------------------------------------------------- configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise UserError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UserError(f"config {path} must be a mapping")
    return data


def env_config(environ=None) -> dict:
    """Nested overrides from ``RATIONALE_ST_SECTION__KEY=value`` variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = yaml.safe_load(raw)
    return out


def resolve_config(args, flag_overrides: dict) -> dict:
    cfg = _merge(DEFAULTS, load_config_file(getattr(args, "config", None)))
    cfg = _merge(cfg, env_config())
    cfg = _merge(cfg, flag_overrides)
    return cfg


def selftrain_config(cfg: dict) -> SelfTrainConfig:
    st = dict(cfg.get("selftrain", {}))
    st["seed"] = int(cfg["seed"])
    try:
        return SelfTrainConfig.from_dict(st)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid selftrain config: {exc}") from None


def encoder_config(cfg: dict) -> EncoderConfig:
    enc = {k: v for k, v in cfg.get("encoder", {}).items() if k != "vocab_size"}
    known = {f.name for f in fields(EncoderConfig)}
    unknown = set(enc) - known
    if unknown:
        raise UserError(f"unknown encoder options: {sorted(unknown)}")
    try:
        # vocab_size is fixed later from the split's vocabulary
        return EncoderConfig(vocab_size=max(4, enc.get("mask_token_id", 3) + 1, enc.get("sep_token_id", 2) + 1), **enc)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid encoder config: {exc}") from None


def synthetic_inputs(cfg: dict, seed: int | None = None):
    """``(split, validation, selftrain_config, encoder_config)`` for a config with a synthetic section.

    ``seed`` (default: the config's) drives corpus generation, the few-label
    draw and training alike.
    """
    seed = int(cfg["seed"] if seed is None else seed)
    split_cfg = {**DEFAULTS["split"], **cfg.get("split", {})}
    try:
        scfg = SyntheticConfig(**{**cfg.get("synthetic", {}), "seed": seed})
    except TypeError as exc:
        raise UserError(f"invalid synthetic config: {exc}") from None
    split, validation = synthetic_split(scfg, int(split_cfg["n_per_class"]), int(split_cfg["validation_size"]), seed,
                                        bool(split_cfg["strict"]))
    return split, validation, selftrain_config({**cfg, "seed": seed}), encoder_config(cfg)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------- prepare

SPLIT_FILES = ("labeled.jsonl", "unlabeled.jsonl", "validation.jsonl", "unlabeled_gold.jsonl")


def cmd_prepare(args) -> int:
    flags: dict = {"split": {}}
    if args.seed is not None:
        flags["seed"] = args.seed
    for name in ("n_per_class", "validation_size"):
        if getattr(args, name) is not None:
            flags["split"][name] = getattr(args, name)
    if args.strict:
        flags["split"]["strict"] = True
    if args.num_docs is not None:
        flags["synthetic"] = {"num_docs": args.num_docs}
    cfg = resolve_config(args, flags)
    seed, split_cfg = int(cfg["seed"]), cfg["split"]
    n, val_size, strict = int(split_cfg["n_per_class"]), int(split_cfg["validation_size"]), bool(split_cfg["strict"])

    sources = [bool(args.corpus), bool(args.eraser), bool(args.synthetic)]
    if sum(sources) != 1:
        raise UserError("choose exactly one data source: --synthetic, --corpus or --eraser")
    if args.synthetic:
        syn = {"seed": seed, **cfg.get("synthetic", {})}
        try:
            scfg = SyntheticConfig(**syn)
        except TypeError as exc:
            raise UserError(f"invalid synthetic config: {exc}") from None
        split, validation = synthetic_split(scfg, n, val_size, seed, strict)
        source = {"synthetic": asdict(scfg)}
    else:
        if args.corpus:
            corpus = read_corpus(args.corpus)
            source = {"corpus": os.path.abspath(args.corpus)}
        else:
            corpus = load_eraser_corpus(args.eraser, args.eraser_split, pair_order=args.pair_order)
            source = {"eraser": os.path.abspath(args.eraser), "split": args.eraser_split}
        if args.validation:
            validation = read_corpus(args.validation, corpus.class_names)
            source["validation"] = os.path.abspath(args.validation)
        elif args.eraser and args.eraser_validation_split:
            validation = load_eraser_corpus(args.eraser, args.eraser_validation_split, corpus.class_names,
                                            args.pair_order)
            source["validation_split"] = args.eraser_validation_split
        else:
            if val_size >= len(corpus):
                raise UserError(f"validation_size {val_size} leaves no training documents")
            corpus, validation = holdout(corpus, val_size, seed)
        split = sample_few_shot(corpus, n, seed, strict)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(split.labeled, out / "labeled.jsonl")
        write_corpus(split.unlabeled, out / "unlabeled.jsonl")
        write_corpus(validation, out / "validation.jsonl")
        write_corpus(split.sealed.restore(split.unlabeled), out / "unlabeled_gold.jsonl")
    except OSError as exc:
        raise UserError(f"cannot write split to {out}: {exc}") from None

    labels = split.labeled.labels()
    manifest = {
        "seed": seed,
        "n_per_class": n,
        "source": source,
        "class_names": split.labeled.class_names,
        "counts": {"labeled": len(split.labeled), "unlabeled": len(split.unlabeled), "validation": len(validation)},
        "labeled_per_class": np.bincount(labels, minlength=split.labeled.num_classes).tolist(),
        "files": {name: _sha256(out / name) for name in SPLIT_FILES},
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out / "manifest.json").write_text(text)
    print(json.dumps({"manifest": str(out / "manifest.json"), "sha256": hashlib.sha256(text.encode()).hexdigest(),
                      **manifest["counts"]}))
    return EXIT_OK


def load_split(path: str) -> tuple[Corpus, Corpus, Corpus, SealedGold | None, dict]:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise UserError(f"{root} is not a prepared split (no manifest.json); run `prepare` first")
    manifest = json.loads(manifest_path.read_text())
    names = manifest["class_names"]
    labeled = read_corpus(root / "labeled.jsonl", names)
    unlabeled = read_corpus(root / "unlabeled.jsonl", names)
    validation = read_corpus(root / "validation.jsonl", names)
    gold_path = root / "unlabeled_gold.jsonl"
    sealed = SealedGold(read_corpus(gold_path, names)) if gold_path.exists() else None
    return labeled, unlabeled, validation, sealed, manifest


# --------------------------------------------------------------------- train


def _train_flags(args) -> dict:
    flags: dict = {"selftrain": {}}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.max_iterations is not None:
        flags["selftrain"]["max_iterations"] = args.max_iterations
    if args.learning_rate is not None:
        flags["selftrain"]["learning_rate"] = args.learning_rate
    if args.selection_metric is not None:
        flags["selftrain"]["selection_metric"] = args.selection_metric
    if args.teacher_only:
        flags["selftrain"]["teacher_only"] = True
    return flags


def _file_logging(run_dir: Path) -> logging.Handler:
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "train.log")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    if logger.level == logging.NOTSET or logger.level > logging.INFO:
        logger.setLevel(logging.INFO)
    logger.addHandler(handler)
    return handler


def cmd_train(args) -> int:
    cfg = resolve_config(args, _train_flags(args))
    st = selftrain_config(cfg)
    if args.ablate:
        st = apply_ablate(st, args.ablate)
    enc = encoder_config(cfg)
    labeled, unlabeled, validation, sealed, manifest = load_split(args.split)
    run_dir = Path(args.out)
    handler = _file_logging(run_dir)
    try:
        logger.info("loss coefficients %s reweight=%s", json.dumps(st.loss_weights.to_dict(), sort_keys=True),
                    st.reweight)
        result = self_train(
            labeled, unlabeled, validation, st, enc, run_dir=run_dir, resume=args.resume, sealed=sealed,
            extra_snapshot={"split": {"path": os.path.abspath(args.split), "manifest": manifest}},
        )
    except Exception:
        logger.error("training failed:\n%s", traceback.format_exc())
        raise
    finally:
        logger.removeHandler(handler)
        handler.close()
    best = result.records[[r.iteration for r in result.records].index(result.best_iteration)]
    print(json.dumps({"run_dir": str(run_dir), "iterations": len(result.records),
                      "best_iteration": result.best_iteration, **best.validation}, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------- eval


def _checkpoint_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "best.npz"
    if not p.exists():
        raise UserError(f"checkpoint {p} does not exist")
    return p


def _read_predictions(path: str, gold: Corpus) -> tuple[list[int], list[np.ndarray]]:
    """Predicted labels and masks from ``{id, label, rationale | rationale_spans}`` records."""
    by_id = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                rec = json.loads(line)
                if "id" not in rec:
                    raise CorpusFormatError(f"{path}:{n}: prediction without an id")
                by_id[str(rec["id"])] = rec
    index = {name: k for k, name in enumerate(gold.class_names)}
    labels, masks = [], []
    for d in gold:
        if d.id not in by_id:
            raise UserError(f"no prediction for document {d.id!r}")
        rec = by_id[d.id]
        label = rec["label"]
        labels.append(index[label] if isinstance(label, str) else int(label))
        if "rationale" in rec:
            mask = np.asarray(rec["rationale"], dtype=np.int64)
        else:
            mask = RationaleMask.from_spans(len(d.tokens), rec.get("rationale_spans", [])).to_array()
        if len(mask) != len(d.tokens):
            raise UserError(f"prediction mask for {d.id!r} has {len(mask)} entries, document has {len(d.tokens)}")
        masks.append(mask)
    return labels, masks


def cmd_eval(args) -> int:
    if args.predictions:
        gold = read_corpus(args.data)
        labels, masks = _read_predictions(args.predictions, gold)
        report = metric_report(labels, gold.labels(), masks, [d.gold_rationale.to_array() for d in gold],
                               [d.tokens for d in gold], gold.num_classes, args.task_average, args.token_average)
        record = report.to_record()
    else:
        model, vocab, header = load_model(_checkpoint_path(args.checkpoint))
        if vocab is None:
            raise UserError("checkpoint carries no vocabulary; it was not written by `train`")
        names = header.get("class_names")
        gold = read_corpus(args.data)
        if names is not None and gold.class_names == [str(k) for k in range(len(names))]:
            # integer labels without a class-name header take the checkpoint's names
            gold = read_corpus(args.data, names)
        if names is not None and list(gold.class_names) != list(names):
            raise UserError(f"evaluation classes {gold.class_names} do not match checkpoint classes {names}")
        if gold.num_classes != model.num_classes:
            raise UserError(f"evaluation data has {gold.num_classes} classes, checkpoint has {model.num_classes}")
        examples = encode_corpus(gold, vocab, model.config.max_len)
        report, losses = evaluate_examples(model, examples, model.num_classes, "sum", 64, args.task_average,
                                           args.token_average)
        if report is None:
            raise UserError("evaluation data lacks gold labels or rationales")
        record = {**report.to_record(), **losses}
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------- ablate

ABLATION_METRICS = ("task_f1", "token_precision", "token_recall", "token_f1", "bleu2", "rationale_pct")


def run_ablation(labeled, unlabeled, validation, base: SelfTrainConfig, enc: EncoderConfig, subsets, seeds,
                 sealed=None, out_dir: Path | None = None) -> list[dict]:
    """One row per subset: validation metrics of the returned model, averaged over seeds."""
    rows = []
    for name in subsets:
        per_seed = []
        for seed in seeds:
            cfg = ABLATIONS[name](replace(base, seed=int(seed)))
            run_dir = None if out_dir is None else out_dir / "runs" / f"{name}_seed{seed}"
            res = self_train(labeled, unlabeled, validation, cfg, enc, run_dir=run_dir, sealed=sealed)
            best = res.records[[r.iteration for r in res.records].index(res.best_iteration)]
            per_seed.append({m: best.validation[m] for m in ABLATION_METRICS})
            logger.info("ablation %s seed %s: %s", name, seed, per_seed[-1])
        row = {"subset": name, "seeds": [int(s) for s in seeds]}
        row.update({m: float(np.mean([p[m] for p in per_seed])) for m in ABLATION_METRICS})
        row["per_seed"] = per_seed
        rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    cfg = resolve_config(args, {"seed": args.seed} if args.seed is not None else {})
    base = selftrain_config(cfg)
    if args.max_iterations is not None:
        base = replace(base, max_iterations=args.max_iterations)
    enc = encoder_config(cfg)
    subsets = [s.strip() for s in args.subsets.split(",") if s.strip()] if args.subsets else list(DEFAULT_SUBSETS)
    unknown = [s for s in subsets if s not in ABLATIONS]
    if unknown:
        raise UserError(f"unknown subset(s) {unknown}; choose from {sorted(ABLATIONS)}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [int(cfg["seed"])]
    labeled, unlabeled, validation, sealed, _ = load_split(args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(labeled, unlabeled, validation, base, enc, subsets, seeds, sealed, out)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "ablation.tsv", "w") as fh:
        fh.write("\t".join(("subset",) + ABLATION_METRICS) + "\n")
        for row in rows:
            fh.write("\t".join([row["subset"]] + [f"{row[m]:.6f}" for m in ABLATION_METRICS]) + "\n")
    print((out / "ablation.tsv").read_text(), end="")
    return EXIT_OK


# --------------------------------------------------------------------- export-curves


def cmd_export_curves(args) -> int:
    rd = RunDirectory(args.run)
    if not rd.log_path.exists():
        raise UserError(f"{args.run} has no iterations.jsonl; is it a completed run directory?")
    records = rd.read_records()
    if not records:
        raise UserError(f"{rd.log_path} holds no iteration records")
    out = Path(args.out) if args.out else rd.path / "curves"
    out.mkdir(parents=True, exist_ok=True)
    for name, key in (("task_f1", "task_f1"), ("rationale_pct", "rationale_pct")):
        with open(out / f"{name}.tsv", "w") as fh:
            fh.write(f"iteration\t{name}\n")
            for r in records:
                fh.write(f"{r.iteration}\t{r.validation[key]!r}\n")
    print(json.dumps({"out": str(out), "rows": len(records)}))
    return EXIT_OK


# --------------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rationale-st", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, help="random seed (overrides config and environment)")

    p = sub.add_parser("prepare", help="materialise a few-shot split on disk")
    common(p)
    src = p.add_argument_group("data source (choose one)")
    src.add_argument("--synthetic", action="store_true", help="generate the corpus from the config's synthetic section")
    src.add_argument("--corpus", help="JSONL corpus with id/tokens/query/label/rationale_spans records")
    src.add_argument("--eraser", help="ERASER-style directory with docs/ and <split>.jsonl")
    p.add_argument("--eraser-split", default="train")
    p.add_argument("--eraser-validation-split", help="ERASER split to use as validation (e.g. val)")
    p.add_argument("--pair-order", default="first_as_document", choices=("first_as_document", "second_as_document"))
    p.add_argument("--validation", help="separate JSONL validation corpus")
    p.add_argument("--n-per-class", type=int, help="labelled documents per class")
    p.add_argument("--validation-size", type=int, help="documents held out (or generated) for validation")
    p.add_argument("--num-docs", type=int, help="synthetic corpus size before the validation set")
    p.add_argument("--strict", action="store_true", help="fail when a class has fewer than n-per-class documents")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run self-training on a prepared split")
    common(p)
    p.add_argument("--split", required=True, help="directory written by `prepare`")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--selection-metric", choices=("validation_total_loss", "validation_rationale_loss"))
    p.add_argument("--ablate", help="comma-separated components to switch off: wu,suff,comp,co,sparsity,"
                                    "continuity,reweight")
    p.add_argument("--teacher-only", action="store_true", help="fit the teacher only (no student iterations)")
    p.add_argument("--resume", action="store_true", help="continue from the last completed iteration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint .npz or run directory (uses best.npz)")
    p.add_argument("--predictions", help="JSONL predictions {id, label, rationale|rationale_spans} instead of a model")
    p.add_argument("--data", required=True, help="gold JSONL corpus")
    p.add_argument("--out", help="write the flat metric record here (JSON)")
    p.add_argument("--task-average", default="macro", choices=("macro", "micro", "weighted"))
    p.add_argument("--token-average", default="micro", choices=("micro", "macro"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train once per loss-component subset and tabulate")
    common(p)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subsets", help=f"comma-separated subsets (default {','.join(DEFAULT_SUBSETS)}); "
                                     f"available: {','.join(ABLATIONS)}")
    p.add_argument("--seeds", help="comma-separated seeds to average over (default: --seed)")
    p.add_argument("--max-iterations", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-curves", help="write per-iteration task F1 and rationale %% series")
    common(p)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", help="output directory (default <run>/curves)")
    p.set_defaults(func=cmd_export_curves)
    return parser


USER_ERRORS = (UserError, ValueError, FileNotFoundError, IsADirectoryError, PermissionError, KeyError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not (args.checkpoint or args.predictions):
        parser.error("eval needs --checkpoint or --predictions")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
