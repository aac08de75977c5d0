"""Training objectives as functions of model outputs.

Tensor conventions: ``task_logp`` is ``(B, K)`` log-probabilities,
``rationale_logp`` is ``(B, L, 2)`` with index 1 meaning "in rationale",
and ``doc_mask`` ``(B, L)`` marks document positions, the only ones that
carry rationale terms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .model import Batch, MultiTaskModel, masked_ids

LOG_FLOOR = math.log(1e-12)


def _clamp(logp: torch.Tensor) -> torch.Tensor:
    return logp.clamp_min(LOG_FLOOR)


@dataclass
class LossWeights:
    coef_wu: float = 1.0
    coef_suff: float = 1.0
    coef_comp: float = 1.0
    coef_sparsity: float = 1.0
    coef_continuity: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BatchWeights:
    task_weights: torch.Tensor  # (B,)
    rationale_weights: torch.Tensor  # (B, L), zero off the document region


def _rationale_nll(rationale_logp: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return -_clamp(rationale_logp.gather(-1, targets.long().clamp(0, 1).unsqueeze(-1)).squeeze(-1))


def supervised_terms(task_logp, rationale_logp, labels, rationale_targets, doc_mask, token_reduction="sum"):
    """Per-example task and rationale negative log-likelihoods."""
    task = -_clamp(task_logp.gather(-1, labels.long().unsqueeze(-1)).squeeze(-1))
    tok = _rationale_nll(rationale_logp, rationale_targets) * doc_mask
    rat = tok.sum(-1)
    if token_reduction == "mean":
        rat = rat / doc_mask.sum(-1).clamp_min(1)
    elif token_reduction != "sum":
        raise ValueError(f"unknown token_reduction {token_reduction!r}")
    return task, rat


def supervised_loss(task_logp, rationale_logp, labels, rationale_targets, doc_mask, token_reduction="sum"):
    """Batch mean of ``-log p(y|x) - sum_j log p(r_j|x)`` on gold labels."""
    if labels is None or rationale_targets is None:
        raise ValueError("supervised loss needs gold labels and gold rationales")
    task, rat = supervised_terms(task_logp, rationale_logp, labels, rationale_targets, doc_mask, token_reduction)
    return (task + rat).mean()


def compute_batch_weights(y_confidence, r_confidences, doc_mask, normalization="batch", task_multipliers=None):
    """Confidence weights normalised to sum to one over the batch.

    ``normalization="batch"`` divides token confidences by their sum over all
    (example, token) pairs; ``"example"`` normalises within each example and
    then gives every example an equal ``1/B`` share.
    """
    y = torch.as_tensor(y_confidence, dtype=torch.float64)
    r = torch.as_tensor(r_confidences, dtype=torch.float64)
    m = torch.as_tensor(doc_mask).bool()
    if y.numel() == 0:
        raise ValueError("cannot weight an empty batch")
    if r.shape != m.shape or r.shape[0] != y.shape[0]:
        raise ValueError("confidence shapes do not line up with the batch")
    if task_multipliers is not None:
        y = y * torch.as_tensor(task_multipliers, dtype=torch.float64)
    task_w = y / y.sum()
    r = torch.where(m, r, torch.zeros_like(r))
    if normalization == "batch":
        rat_w = r / r.sum()
    elif normalization == "example":
        rat_w = r / r.sum(-1, keepdim=True).clamp_min(1e-300) / r.shape[0]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return BatchWeights(task_w, rat_w)


def uniform_batch_weights(doc_mask) -> BatchWeights:
    """Weights that reduce the weighted loss to the plain pseudo-label loss."""
    m = torch.as_tensor(doc_mask).bool()
    return compute_batch_weights(torch.ones(m.shape[0]), m.double(), m)


def weighted_pseudo_loss(task_logp, rationale_logp, y_pseudo, r_pseudo, weights: BatchWeights, doc_mask):
    """``sum_i w_i * nll(y_i) + sum_ij w_ij * nll(r_ij)``.

    With uniform weights the task term is the batch mean and the rationale
    term is the mean over all document tokens in the batch, i.e. the
    per-example token sum scaled by ``B / total_tokens``.
    """
    if weights.task_weights.shape[0] != task_logp.shape[0] or weights.rationale_weights.shape != doc_mask.shape:
        raise ValueError("weights are not aligned with the batch")
    dtype = task_logp.dtype
    task = -_clamp(task_logp.gather(-1, y_pseudo.long().unsqueeze(-1)).squeeze(-1))
    tok = _rationale_nll(rationale_logp, r_pseudo) * doc_mask
    return (weights.task_weights.to(dtype) * task).sum() + (weights.rationale_weights.to(dtype) * tok).sum()


def sufficiency_loss(task_logp_kept, y_pseudo):
    """Mean ``-log p(y^T | rationale-only input)``."""
    return -_clamp(task_logp_kept.gather(-1, y_pseudo.long().unsqueeze(-1)).squeeze(-1)).mean()


def completeness_loss(task_logp_dropped):
    """Mean negative entropy of the task distribution on the rationale-dropped input.

    Lies in ``[-ln K, 0]``; minimising it pushes towards uniform predictions.
    """
    logp = _clamp(task_logp_dropped)
    p = task_logp_dropped.exp()
    return (p * logp).sum(-1).mean()


def coherence_terms(rationale_probs, doc_mask=None, normalize=True):
    """Per-example ``(sparsity, continuity)`` of rationale probabilities.

    Sparsity is ``sum_j p_j``; continuity is ``sum_{j>=2} |p_j - p_{j-1}|``
    over adjacent document positions. On 0/1 inputs these are the rationale
    size and the number of on/off boundaries. ``normalize`` divides both by
    the document length.
    """
    p = torch.as_tensor(rationale_probs)
    if p.dim() == 1:
        p = p[None]
        doc_mask = None if doc_mask is None else torch.as_tensor(doc_mask)[None]
    m = torch.ones_like(p, dtype=torch.bool) if doc_mask is None else torch.as_tensor(doc_mask).bool()
    lengths = m.sum(-1)
    if p.shape[-1] == 0 or bool((lengths == 0).any()):
        raise ValueError("coherence loss needs at least one document token")
    mf = m.to(p.dtype)
    sparsity = (p * mf).sum(-1)
    pair = mf[:, 1:] * mf[:, :-1]
    continuity = ((p[:, 1:] - p[:, :-1]).abs() * pair).sum(-1)
    if normalize:
        sparsity = sparsity / lengths
        continuity = continuity / lengths
    return sparsity, continuity


def coherence_loss(rationale_probs, doc_mask=None, coef_sparsity=1.0, coef_continuity=1.0, normalize=True):
    sparsity, continuity = coherence_terms(rationale_probs, doc_mask, normalize)
    return (coef_sparsity * sparsity + coef_continuity * continuity).mean()


# --------------------------------------------------------------------- student objective


@dataclass
class PseudoBatch:
    """A minibatch of pseudo-labelled inputs with teacher outputs attached."""

    batch: Batch
    y_pseudo: torch.Tensor  # (B,)
    r_pseudo: torch.Tensor  # (B, L) 0/1
    y_confidence: torch.Tensor  # (B,)
    r_confidences: torch.Tensor  # (B, L)
    task_multipliers: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.batch)


@dataclass
class StudentLossOptions:
    reweight: bool = True
    rationale_weight_norm: str = "batch"
    mask_source: str = "teacher"
    coherence_normalize: bool = True


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: dict  # coefficient-weighted contributions; they sum to ``total``

    def as_floats(self) -> dict:
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def _batch_weights(pb: PseudoBatch, options: StudentLossOptions) -> BatchWeights:
    doc_mask = pb.batch.doc_mask
    if not options.reweight:
        weights = uniform_batch_weights(doc_mask)
        if pb.task_multipliers is not None:
            mult = pb.task_multipliers.double()
            weights.task_weights = mult / mult.sum()
        return weights
    return compute_batch_weights(
        pb.y_confidence, pb.r_confidences, doc_mask, options.rationale_weight_norm, pb.task_multipliers
    )


def joint_student_loss(
    student: MultiTaskModel,
    pb: PseudoBatch,
    loss_weights: LossWeights,
    options: StudentLossOptions | None = None,
) -> LossBreakdown:
    """Coefficient-weighted sum of the four student objectives.

    Terms whose coefficient is zero are skipped and reported as 0. With
    ``mask_source="teacher"`` the sufficiency and completeness inputs are the
    teacher's hard rationales applied as ``[MASK]`` replacements; with
    ``"student"`` the student's own rationale probabilities gate each token's
    embedding towards ``[MASK]``, which lets those two objectives shape the
    rationale head.
    """
    options = options or StudentLossOptions()
    b = pb.batch
    lw = loss_weights
    zero = torch.zeros((), dtype=next(student.parameters()).dtype)
    terms = {"wu": zero, "suff": zero, "comp": zero, "sparsity": zero, "continuity": zero}

    need_full = lw.coef_wu > 0 or lw.coef_sparsity > 0 or lw.coef_continuity > 0 or options.mask_source == "student"
    full = student(b.ids, b.attention_mask) if need_full else None

    if lw.coef_wu > 0:
        weights = _batch_weights(pb, options)
        terms["wu"] = lw.coef_wu * weighted_pseudo_loss(
            full.task_logp, full.rationale_logp, pb.y_pseudo, pb.r_pseudo, weights, b.doc_mask
        )
    if lw.coef_sparsity > 0 or lw.coef_continuity > 0:
        sp, co = coherence_terms(full.rationale_probs(), b.doc_mask, options.coherence_normalize)
        terms["sparsity"] = lw.coef_sparsity * sp.mean()
        terms["continuity"] = lw.coef_continuity * co.mean()

    mask_id = student.config.mask_token_id
    if lw.coef_suff > 0 or lw.coef_comp > 0:
        if options.mask_source == "student":
            keep = torch.where(b.doc_mask, full.rationale_probs(), torch.ones_like(full.rationale_probs()))
            drop = torch.where(b.doc_mask, 1.0 - full.rationale_probs(), torch.ones_like(keep))
            kept = student(b.ids, b.attention_mask, keep_gate=keep) if lw.coef_suff > 0 else None
            dropped = student(b.ids, b.attention_mask, keep_gate=drop) if lw.coef_comp > 0 else None
        elif options.mask_source == "teacher":
            kept = student(masked_ids(b, pb.r_pseudo, mask_id, True), b.attention_mask) if lw.coef_suff > 0 else None
            dropped = (
                student(masked_ids(b, pb.r_pseudo, mask_id, False), b.attention_mask) if lw.coef_comp > 0 else None
            )
        else:
            raise ValueError(f"unknown mask_source {options.mask_source!r}")
        if kept is not None:
            terms["suff"] = lw.coef_suff * sufficiency_loss(kept.task_logp, pb.y_pseudo)
        if dropped is not None:
            terms["comp"] = lw.coef_comp * completeness_loss(dropped.task_logp)

    total = terms["wu"] + terms["suff"] + terms["comp"] + terms["sparsity"] + terms["continuity"]
    return LossBreakdown(total, terms)

