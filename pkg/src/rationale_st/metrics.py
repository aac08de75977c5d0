"""Task F1, token-level rationale P/R/F1, BLEU-2 and rationale coverage."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from nltk.translate.bleu_score import corpus_bleu
from sklearn.metrics import f1_score, precision_recall_fscore_support


@dataclass
class MetricReport:
    task_f1: float
    token_precision: float
    token_recall: float
    token_f1: float
    bleu2: float
    rationale_pct: float
    support: list = field(default_factory=list)

    def to_record(self, prefix: str = "") -> dict:
        """Flat key-value form for run logs."""
        rec = {f"{prefix}{k}": v for k, v in asdict(self).items() if k != "support"}
        for k, n in enumerate(self.support):
            rec[f"{prefix}support_{k}"] = int(n)
        return rec


def task_f1(predictions: Sequence[int], golds: Sequence[int], num_classes: int, average: str = "macro") -> float:
    predictions, golds = np.asarray(predictions), np.asarray(golds)
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    if len(golds) == 0:
        raise ValueError("task_f1 of an empty set is undefined")
    return float(f1_score(golds, predictions, labels=list(range(num_classes)), average=average, zero_division=0))


def _check_aligned(pred_masks, gold_masks):
    if len(pred_masks) != len(gold_masks):
        raise ValueError(f"{len(pred_masks)} predicted masks for {len(gold_masks)} gold masks")
    for i, (p, g) in enumerate(zip(pred_masks, gold_masks)):
        if len(p) != len(g):
            raise ValueError(f"mask {i}: predicted length {len(p)} != gold length {len(g)}")


def token_prf(pred_masks, gold_masks, average: str = "micro") -> tuple[float, float, float]:
    """Token-level precision, recall and F1.

    ``micro`` pools every token of the evaluation set; ``macro`` averages the
    per-document scores. Zero denominators give 0.
    """
    _check_aligned(pred_masks, gold_masks)
    if average == "micro":
        pred = np.concatenate([np.asarray(p, dtype=np.int64) for p in pred_masks]) if len(pred_masks) else np.zeros(0)
        gold = np.concatenate([np.asarray(g, dtype=np.int64) for g in gold_masks]) if len(gold_masks) else np.zeros(0)
        tp = int(((pred == 1) & (gold == 1)).sum())
        fp = int(((pred == 1) & (gold == 0)).sum())
        fn = int(((pred == 0) & (gold == 1)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f
    if average == "macro":
        scores = []
        for pm, gm in zip(pred_masks, gold_masks):
            p, r, f, _ = precision_recall_fscore_support(
                np.asarray(gm), np.asarray(pm), labels=[1], average="binary", zero_division=0
            )
            scores.append((p, r, f))
        if not scores:
            return 0.0, 0.0, 0.0
        return tuple(float(x) for x in np.mean(scores, axis=0))
    raise ValueError(f"unknown average {average!r}")


def extract_rationale(tokens: Sequence[str], mask) -> list[str]:
    """Ordered subsequence of ``tokens`` where ``mask`` is 1."""
    return [t for t, m in zip(tokens, mask) if int(m) == 1]


def bleu2(pred_rationale_tokens: Sequence[Sequence[str]], gold_rationale_tokens: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU with equal unigram/bigram weights and brevity penalty, no smoothing.

    When no hypothesis has two tokens the bigram precision is undefined and
    the score falls back to unigram BLEU, so identical one-token rationales
    still score 1.
    """
    if len(pred_rationale_tokens) != len(gold_rationale_tokens):
        raise ValueError("prediction and reference lists differ in length")
    hyps = [list(h) for h in pred_rationale_tokens]
    if sum(len(h) for h in hyps) == 0:
        return 0.0
    refs = [[list(g)] for g in gold_rationale_tokens]
    weights = (0.5, 0.5) if any(len(h) >= 2 for h in hyps) else (1.0,)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(corpus_bleu(refs, hyps, weights=weights))


def rationale_pct(masks) -> float:
    total = sum(len(m) for m in masks)
    if total == 0:
        raise ValueError("rationale_pct needs at least one token")
    return 100.0 * sum(int(np.sum(np.asarray(m))) for m in masks) / total


def metric_report(
    pred_labels,
    gold_labels,
    pred_masks,
    gold_masks,
    tokens,
    num_classes: int,
    task_average: str = "macro",
    token_average: str = "micro",
) -> MetricReport:
    p, r, f = token_prf(pred_masks, gold_masks, token_average)
    hyps = [extract_rationale(t, m) for t, m in zip(tokens, pred_masks)]
    refs = [extract_rationale(t, m) for t, m in zip(tokens, gold_masks)]
    support = np.bincount(np.asarray(gold_labels, dtype=np.int64), minlength=num_classes).tolist()
    return MetricReport(
        task_f1=task_f1(pred_labels, gold_labels, num_classes, task_average),
        token_precision=p,
        token_recall=r,
        token_f1=f,
        bleu2=bleu2(hyps, refs),
        rationale_pct=rationale_pct(pred_masks),
        support=support,
    )
