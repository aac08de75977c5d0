"""Iterative teacher-student self-training with rationale objectives.

Each iteration fits the teacher on the labelled set, pseudo-labels the
unlabelled set, fits the student on the joint objective and copies the
student back into the teacher. The best iteration under the selection metric
is returned.
"""

from __future__ import annotations

import base64
import copy
import json
import logging
import math
import os
import shutil
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from filelock import FileLock, Timeout

from .data import Corpus, Document, EncodedInput, SealedGold, Vocabulary, build_input
from .encoder import EncoderConfig
from .losses import (
    LossWeights,
    PseudoBatch,
    StudentLossOptions,
    joint_student_loss,
    supervised_loss,
    supervised_terms,
)
from .metrics import MetricReport, metric_report, token_prf
from .model import (
    Batch,
    MultiTaskModel,
    PseudoLabeledExample,
    collate,
    copy_into_teacher,
    inference_mode,
    label_from_probs,
    load_model,
    new_model,
    pad_rows,
    predict_batches,
    save_model,
)

logger = logging.getLogger(__name__)

SELECTION_METRICS = ("validation_total_loss", "validation_rationale_loss")


class TrainingError(RuntimeError):
    """A training phase produced a non-finite loss."""


@dataclass
class SelfTrainConfig:
    max_iterations: int = 15
    teacher_epochs: int = 20
    student_epochs: int = 1
    batch_size: int = 8
    student_batch_size: int | None = None
    learning_rate: float = 3e-5
    student_learning_rate: float | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    refit_teacher_each_iter: bool = True
    class_rebalance: bool = False
    early_stop_patience: int = 3
    teacher_patience: int = 5
    selection_metric: str = "validation_total_loss"
    seed: int = 0
    reweight: bool = True
    rationale_weight_norm: str = "batch"
    rationale_reduction: str = "sum"
    student_init: str = "warm"
    pseudo_label_mode: str = "argmax"
    mask_source: str = "teacher"
    coherence_normalize: bool = True
    teacher_only: bool = False
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        self.validate()

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.early_stop_patience < 0 or self.teacher_patience < 0:
            raise ValueError("patience must be >= 0")
        if self.teacher_epochs < 0 or self.student_epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        choices = {
            "selection_metric": SELECTION_METRICS,
            "rationale_weight_norm": ("batch", "example"),
            "rationale_reduction": ("sum", "mean"),
            "student_init": ("warm", "cold"),
            "pseudo_label_mode": ("argmax", "sample"),
            "mask_source": ("teacher", "student"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SelfTrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown self-training options: {sorted(unknown)}")
        return cls(**data)

    def student_options(self) -> StudentLossOptions:
        return StudentLossOptions(self.reweight, self.rationale_weight_norm, self.mask_source, self.coherence_normalize)


@dataclass
class IterationRecord:
    iteration: int
    teacher_losses: dict
    student_losses: dict
    validation: dict
    pseudo_histogram: list
    rationale_pct: float
    pseudo_quality: dict = field(default_factory=dict)
    teacher_validation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "IterationRecord":
        return cls(**data)

    def selection_value(self, metric: str) -> float:
        return self.validation["total_loss" if metric == "validation_total_loss" else "rationale_loss"]


# --------------------------------------------------------------------- encoded examples


@dataclass
class Example:
    doc: Document
    encoded: EncodedInput
    label: int | None
    rationale: np.ndarray | None  # over the kept document region


def encode_corpus(corpus: Corpus, vocab: Vocabulary, max_len: int) -> list[Example]:
    out = []
    for d in corpus:
        enc = build_input(d, vocab, max_len)
        rat = None if d.gold_rationale is None else d.gold_rationale.to_array()[: enc.doc_len].astype(np.int64)
        out.append(Example(d, enc, d.gold_label, rat))
    return out


def labeled_batch(examples: Sequence[Example], pad_id: int) -> tuple[Batch, torch.Tensor, torch.Tensor]:
    batch = collate([e.encoded for e in examples], pad_id)
    labels = torch.tensor([e.label for e in examples], dtype=torch.long)
    targets = pad_rows([e.rationale for e in examples], batch.ids.shape[1], 0, np.int64)
    return batch, labels, targets


def _check_labeled(examples: Sequence[Example], what: str) -> None:
    if not examples:
        raise ValueError(f"{what} set is empty")
    bad = [e.doc.id for e in examples if e.label is None or e.rationale is None]
    if bad:
        raise ValueError(f"{what} documents lack gold labels or rationales: {bad[:5]}")


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# --------------------------------------------------------------------- evaluation


def evaluate_examples(
    model: MultiTaskModel,
    examples: Sequence[Example],
    num_classes: int,
    rationale_reduction: str = "sum",
    batch_size: int = 64,
    task_average: str = "macro",
    token_average: str = "micro",
) -> tuple[MetricReport | None, dict]:
    """Metrics plus validation losses (``total_loss``, ``task_loss``, ``rationale_loss``)."""
    preds, masks = [], []
    for tp, rp in predict_batches(model, [e.encoded for e in examples], batch_size):
        preds.append(int(np.argmax(tp)))
        masks.append((rp >= 0.5).astype(np.int64))
    losses = {}
    if all(e.label is not None and e.rationale is not None for e in examples):
        task_sum = rat_sum = 0.0
        with inference_mode(model):
            for start in range(0, len(examples), batch_size):
                chunk = examples[start : start + batch_size]
                b, y, r = labeled_batch(chunk, model.config.pad_token_id)
                out = model(b.ids, b.attention_mask)
                t, ra = supervised_terms(out.task_logp, out.rationale_logp, y, r, b.doc_mask, rationale_reduction)
                task_sum += float(t.double().sum())
                rat_sum += float(ra.double().sum())
        n = len(examples)
        losses = {"task_loss": task_sum / n, "rationale_loss": rat_sum / n, "total_loss": (task_sum + rat_sum) / n}
    report = None
    if all(e.label is not None and e.rationale is not None for e in examples):
        report = metric_report(
            preds,
            [e.label for e in examples],
            masks,
            [e.rationale for e in examples],
            [e.doc.tokens[: e.encoded.doc_len] for e in examples],
            num_classes,
            task_average,
            token_average,
        )
    return report, losses


def _validation_summary(model, examples, num_classes, config) -> dict:
    report, losses = evaluate_examples(model, examples, num_classes, config.rationale_reduction)
    return {**report.to_record(), **losses}


# --------------------------------------------------------------------- teacher phase


def _non_finite(loss: torch.Tensor, ids: Sequence[str], phase: str, detail: dict | None = None):
    if not torch.isfinite(loss):
        extra = f"; terms {detail}" if detail else ""
        raise TrainingError(f"{phase}: non-finite loss on batch {list(ids)[:8]}{extra}")


def fit_teacher(
    teacher: MultiTaskModel,
    labeled: Sequence[Example],
    validation: Sequence[Example],
    config: SelfTrainConfig,
    rng: np.random.Generator,
) -> dict:
    """Minibatch Adam on the supervised loss with early stopping on validation loss.

    The parameters with the best validation loss (including the starting
    point) are restored. Returns per-epoch losses.
    """
    _check_labeled(labeled, "labeled")
    _check_labeled(validation, "validation")
    pad = teacher.config.pad_token_id
    optimizer = torch.optim.Adam(teacher.parameters(), lr=config.learning_rate)

    def val_loss() -> float:
        return _validation_losses(teacher, validation, config.rationale_reduction)["total_loss"]

    best_val = val_loss()
    best_state = copy.deepcopy(teacher.state_dict())
    best_epoch, stale = 0, 0
    history = {"train": [], "validation": []}
    teacher.train()
    for epoch in range(1, config.teacher_epochs + 1):
        total, count = 0.0, 0
        for idx in _minibatches(len(labeled), config.batch_size, rng):
            chunk = [labeled[i] for i in idx]
            b, y, r = labeled_batch(chunk, pad)
            out = teacher(b.ids, b.attention_mask)
            loss = supervised_loss(out.task_logp, out.rationale_logp, y, r, b.doc_mask, config.rationale_reduction)
            _non_finite(loss, [e.doc.id for e in chunk], "teacher")
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(teacher.parameters(), config.grad_clip)
            optimizer.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
        v = val_loss()
        history["train"].append(total / count)
        history["validation"].append(v)
        if v < best_val:
            best_val, best_epoch, stale = v, epoch, 0
            best_state = copy.deepcopy(teacher.state_dict())
        else:
            stale += 1
            if stale > config.teacher_patience:
                break
    teacher.load_state_dict(best_state)
    history["best_epoch"] = best_epoch
    history["best_validation"] = best_val
    return history


def _validation_losses(model, examples, reduction) -> dict:
    _, losses = evaluate_examples(model, examples, model.num_classes, reduction)
    return losses


# --------------------------------------------------------------------- pseudo-labels


def pseudo_label_corpus(
    teacher: MultiTaskModel,
    unlabeled: Sequence[Example],
    config: SelfTrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[list[PseudoLabeledExample], np.ndarray]:
    """Teacher pseudo-labels for every unlabelled example plus a class histogram."""
    sample_rng = rng if config.pseudo_label_mode == "sample" else None
    pseudo = [
        label_from_probs(e.doc, e.encoded, tp, rp, sample_rng)
        for e, (tp, rp) in zip(unlabeled, predict_batches(teacher, [e.encoded for e in unlabeled]))
    ]
    hist = np.bincount([p.y_pseudo for p in pseudo], minlength=teacher.num_classes)
    return pseudo, hist


def rebalance_weights(pseudo: Sequence[PseudoLabeledExample]) -> np.ndarray:
    """Per-example multipliers ``(total / C) / count(class)`` over the C classes present.

    Absent classes have no examples to weight and are skipped.
    """
    if not pseudo:
        raise ValueError("cannot rebalance an empty pseudo-labelled set")
    labels = np.asarray([p.y_pseudo for p in pseudo])
    classes, counts = np.unique(labels, return_counts=True)
    n_classes = max(labels.max() + 1, 1)
    if len(classes) < n_classes:
        missing = sorted(set(range(n_classes)) - set(classes.tolist()))
        logger.warning("no pseudo-labels for class(es) %s; their multipliers are undefined", missing)
    per_class = {int(c): (len(labels) / len(classes)) / n for c, n in zip(classes, counts)}
    return np.asarray([per_class[int(y)] for y in labels], dtype=np.float64)


def make_pseudo_batch(
    pseudo: Sequence[PseudoLabeledExample], pad_id: int, multipliers: np.ndarray | None = None
) -> PseudoBatch:
    batch = collate([p.encoded for p in pseudo], pad_id)
    width = batch.ids.shape[1]
    return PseudoBatch(
        batch=batch,
        y_pseudo=torch.tensor([p.y_pseudo for p in pseudo], dtype=torch.long),
        r_pseudo=pad_rows([np.asarray(p.r_pseudo.values, dtype=np.int64) for p in pseudo], width, 0, np.int64),
        y_confidence=torch.tensor([p.y_confidence for p in pseudo], dtype=torch.float64),
        r_confidences=pad_rows([np.asarray(p.r_confidences, dtype=np.float64) for p in pseudo], width, 0.0),
        task_multipliers=None if multipliers is None else torch.as_tensor(multipliers, dtype=torch.float64),
    )


# --------------------------------------------------------------------- student phase


def fit_student(
    student: MultiTaskModel,
    pseudo: Sequence[PseudoLabeledExample],
    config: SelfTrainConfig,
    rng: np.random.Generator,
    multipliers: np.ndarray | None = None,
) -> list[dict]:
    """Minibatch Adam on the joint student objective; returns per-epoch mean terms."""
    if not pseudo:
        raise ValueError("student phase needs a non-empty pseudo-labelled set")
    pad = student.config.pad_token_id
    lr = config.student_learning_rate if config.student_learning_rate is not None else config.learning_rate
    bs = config.student_batch_size or config.batch_size
    optimizer = torch.optim.Adam(student.parameters(), lr=lr)
    options = config.student_options()
    history = []
    student.train()
    for _ in range(config.student_epochs):
        sums: dict = {}
        count = 0
        for idx in _minibatches(len(pseudo), bs, rng):
            chunk = [pseudo[i] for i in idx]
            pb = make_pseudo_batch(chunk, pad, None if multipliers is None else multipliers[idx])
            br = joint_student_loss(student, pb, config.loss_weights, options)
            terms = br.as_floats()
            _non_finite(br.total, [p.doc.id for p in chunk], "student", terms)
            if br.total.requires_grad:
                optimizer.zero_grad()
                br.total.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(student.parameters(), config.grad_clip)
                optimizer.step()
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v * len(chunk)
            count += len(chunk)
        history.append({k: v / count for k, v in sums.items()})
    return history


# --------------------------------------------------------------------- run directory


class RunDirectory:
    """On-disk layout of a self-training run.

    ``config.json`` snapshot, ``iterations.jsonl`` (one IterationRecord per
    line), ``checkpoints/iter_NNN.npz`` model after each iteration with
    ``iter_NNN.state.json`` holding RNG and model-selection state, and
    ``best.json`` / ``best.npz`` for the selected model. ``run.lock`` keeps
    concurrent writers out.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.checkpoints = self.path / "checkpoints"
        self.config_path = self.path / "config.json"
        self.log_path = self.path / "iterations.jsonl"
        self.best_marker = self.path / "best.json"
        self.best_model = self.path / "best.npz"
        self._lock = FileLock(str(self.path / "run.lock"))

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        self.checkpoints.mkdir(exist_ok=True)
        try:
            self._lock.acquire(timeout=0)
        except Timeout:
            raise RuntimeError(f"run directory {self.path} is locked by another process") from None
        return self

    def __exit__(self, *exc):
        self._lock.release()
        return False

    def checkpoint_path(self, iteration: int) -> Path:
        return self.checkpoints / f"iter_{iteration:03d}.npz"

    def state_path(self, iteration: int) -> Path:
        return self.checkpoints / f"iter_{iteration:03d}.state.json"

    def read_config(self) -> dict | None:
        if not self.config_path.exists():
            return None
        return json.loads(self.config_path.read_text())

    def write_config(self, snapshot: dict) -> None:
        self.config_path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    def read_records(self) -> list[IterationRecord]:
        if not self.log_path.exists():
            return []
        with open(self.log_path) as fh:
            return [IterationRecord.from_dict(json.loads(line)) for line in fh if line.strip()]

    def write_records(self, records: Sequence[IterationRecord]) -> None:
        tmp = self.log_path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        os.replace(tmp, self.log_path)

    def append_record(self, record: IterationRecord) -> None:
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def last_completed(self) -> int | None:
        done = [r.iteration for r in self.read_records()]
        done = [i for i in done if self.checkpoint_path(i).exists() and self.state_path(i).exists()]
        return max(done) if done else None

    def write_best(self, iteration: int, metric: str, value: float) -> None:
        shutil.copyfile(self.checkpoint_path(iteration), self.best_model)
        marker = {"iteration": iteration, "checkpoint": str(self.checkpoint_path(iteration).relative_to(self.path)),
                  "selection_metric": metric, "value": value}
        self.best_marker.write_text(json.dumps(marker, indent=2) + "\n")


def _rng_state(np_rng: np.random.Generator) -> dict:
    return {
        "numpy": np_rng.bit_generator.state,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    }


def _restore_rng(np_rng: np.random.Generator, state: dict) -> None:
    np_rng.bit_generator.state = state["numpy"]
    raw = np.frombuffer(base64.b64decode(state["torch"]), dtype=np.uint8).copy()
    torch.set_rng_state(torch.from_numpy(raw))


# --------------------------------------------------------------------- driver


@dataclass
class SelfTrainResult:
    model: MultiTaskModel
    records: list
    best_iteration: int
    vocab: Vocabulary
    class_names: list


def _pseudo_quality(pseudo: Sequence[PseudoLabeledExample], sealed: SealedGold | None) -> dict:
    if not sealed:
        return {}
    rows = [(p, sealed[p.doc.id]) for p in pseudo if p.doc.id in sealed]
    rows = [(p, g) for p, g in rows if g[0] is not None]
    if not rows:
        return {}
    acc = float(np.mean([p.y_pseudo == g[0] for p, g in rows]))
    with_mask = [(p, g) for p, g in rows if g[1] is not None]
    out = {"task_accuracy": acc}
    if with_mask:
        _, _, f = token_prf(
            [np.asarray(p.r_pseudo.values) for p, _ in with_mask],
            [g[1].to_array()[: p.encoded.doc_len] for p, g in with_mask],
        )
        out["token_f1"] = f
    return out


def self_train(
    labeled: Corpus,
    unlabeled: Corpus,
    validation: Corpus,
    config: SelfTrainConfig,
    encoder_config: EncoderConfig | None = None,
    vocab: Vocabulary | None = None,
    run_dir: str | os.PathLike | None = None,
    resume: bool = False,
    sealed: SealedGold | None = None,
    callback: Callable[[int, MultiTaskModel, MultiTaskModel], None] | None = None,
    extra_snapshot: dict | None = None,
) -> SelfTrainResult:
    """Run the self-training loop and return the iteration-best student.

    ``callback(iteration, teacher, student)`` fires right after each copy of
    the student into the teacher. ``sealed`` (gold annotations of the
    unlabelled set) is only used to log pseudo-label quality.
    """
    config.validate()
    num_classes = labeled.num_classes
    vocab = vocab or Vocabulary.build(labeled, unlabeled)
    base = encoder_config or EncoderConfig(vocab_size=len(vocab))
    enc_cfg = replace(base, vocab_size=len(vocab))
    snapshot = {"selftrain": config.to_dict(), "encoder": enc_cfg.to_dict(), **(extra_snapshot or {})}

    if run_dir is None:
        return _run(labeled, unlabeled, validation, config, enc_cfg, vocab, num_classes, None, False, sealed,
                    callback, snapshot, labeled.class_names)
    with RunDirectory(run_dir) as rd:
        return _run(labeled, unlabeled, validation, config, enc_cfg, vocab, num_classes, rd, resume, sealed,
                    callback, snapshot, labeled.class_names)


def _run(labeled, unlabeled, validation, config, enc_cfg, vocab, num_classes, rd, resume, sealed, callback,
         snapshot, class_names) -> SelfTrainResult:
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    max_len = enc_cfg.max_len
    lab = encode_corpus(labeled, vocab, max_len)
    unl = encode_corpus(unlabeled, vocab, max_len)
    val = encode_corpus(validation, vocab, max_len)
    _check_labeled(lab, "labeled")
    _check_labeled(val, "validation")

    teacher = new_model(enc_cfg, num_classes, config.seed)
    student = new_model(enc_cfg, num_classes, config.seed)
    records: list[IterationRecord] = []
    best_iter, best_value, best_state, stale = -1, math.inf, None, 0
    start = 1

    if rd is not None:
        stored = rd.read_config()
        if resume and stored is not None:
            if {k: stored.get(k) for k in ("selftrain", "encoder")} != {k: snapshot[k] for k in ("selftrain", "encoder")}:
                raise ValueError(f"cannot resume {rd.path}: configuration differs from the stored snapshot")
            last = rd.last_completed()
            if last is not None:
                model, saved_vocab, _ = load_model(rd.checkpoint_path(last))
                if saved_vocab is not None and saved_vocab != vocab:
                    raise ValueError("cannot resume: vocabulary differs from the checkpoint")
                teacher.load_state_dict(model.state_dict())
                state = json.loads(rd.state_path(last).read_text())
                _restore_rng(rng, state["rng"])
                best_iter, best_value, stale = state["best_iteration"], state["best_value"], state["stale"]
                if best_iter >= 0:
                    best_state = load_model(rd.checkpoint_path(best_iter))[0].state_dict()
                records = [r for r in rd.read_records() if r.iteration <= last]
                rd.write_records(records)
                start = last + 1
                if state.get("finished"):
                    start = config.max_iterations + 1
                logger.info("resuming %s after iteration %d", rd.path, last)
        else:
            for p in rd.checkpoints.glob("iter_*"):
                p.unlink()
            for p in (rd.log_path, rd.best_marker, rd.best_model):
                if p.exists():
                    p.unlink()
        rd.write_config(snapshot)

    def checkpoint(iteration: int, model: MultiTaskModel, finished: bool = False) -> None:
        if rd is None:
            return
        save_model(model, rd.checkpoint_path(iteration), vocab, class_names)
        state = {"rng": _rng_state(rng), "best_iteration": best_iter, "best_value": best_value, "stale": stale,
                 "finished": finished}
        rd.state_path(iteration).write_text(json.dumps(state))
        rd.append_record(records[-1])
        if best_iter >= 0:
            rd.write_best(best_iter, config.selection_metric, best_value)

    if config.teacher_only or not unl:
        if not unl and not config.teacher_only:
            logger.warning("unlabeled set is empty; returning the fitted teacher")
        if start == 1:
            hist = fit_teacher(teacher, lab, val, config, rng)
            summary = _validation_summary(teacher, val, num_classes, config)
            records.append(IterationRecord(0, _teacher_summary(hist), {}, summary, [], summary["rationale_pct"],
                                           teacher_validation=summary))
            best_iter, best_value = 0, records[-1].selection_value(config.selection_metric)
            checkpoint(0, teacher, finished=True)
        return SelfTrainResult(teacher, records, 0, vocab, list(class_names))

    for it in range(start, config.max_iterations + 1):
        if it == 1 or config.refit_teacher_each_iter:
            t_hist = _teacher_summary(fit_teacher(teacher, lab, val, config, rng))
        else:
            t_hist = {}
        teacher_val = _validation_summary(teacher, val, num_classes, config)
        pseudo, hist = pseudo_label_corpus(teacher, unl, config, rng)
        multipliers = rebalance_weights(pseudo) if config.class_rebalance else None

        if config.student_init == "warm":
            copy_into_teacher(teacher, student)
        else:
            student = new_model(enc_cfg, num_classes, config.seed + 1000 * it)
        s_hist = fit_student(student, pseudo, config, rng, multipliers)
        summary = _validation_summary(student, val, num_classes, config)
        record = IterationRecord(
            iteration=it,
            teacher_losses=t_hist,
            student_losses=s_hist[-1] if s_hist else {},
            validation=summary,
            pseudo_histogram=hist.tolist(),
            rationale_pct=summary["rationale_pct"],
            pseudo_quality=_pseudo_quality(pseudo, sealed),
            teacher_validation=teacher_val,
        )
        records.append(record)
        copy_into_teacher(student, teacher)
        if callback is not None:
            callback(it, teacher, student)

        value = record.selection_value(config.selection_metric)
        if value < best_value:
            best_iter, best_value, stale = it, value, 0
            best_state = copy.deepcopy(student.state_dict())
        else:
            stale += 1
        done = stale >= config.early_stop_patience > 0 or it == config.max_iterations
        checkpoint(it, student, finished=done)
        logger.info(
            "iteration %d: val task F1 %.3f token F1 %.3f rationale %.1f%% %s %.4f",
            it, summary["task_f1"], summary["token_f1"], summary["rationale_pct"], config.selection_metric, value,
        )
        if done:
            break

    best = new_model(enc_cfg, num_classes, config.seed)
    best.load_state_dict(best_state)
    best.eval()
    return SelfTrainResult(best, records, best_iter, vocab, list(class_names))


def _teacher_summary(history: dict) -> dict:
    return {
        "epochs": len(history["train"]),
        "best_epoch": history["best_epoch"],
        "train": history["train"][-1] if history["train"] else None,
        "validation": history["best_validation"],
    }
