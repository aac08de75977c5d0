"""Shared-encoder model with a task head and a token-level rationale head."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .data import Document, EncodedInput, RationaleMask, Vocabulary, build_input
from .encoder import EncoderConfig, ReferenceEncoder, load_arrays, new_encoder, save_arrays


class MultiTaskModel(nn.Module):
    def __init__(self, encoder: ReferenceEncoder, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.encoder = encoder
        self.num_classes = num_classes
        d = encoder.config.hidden_dim
        self.task_head = nn.Linear(d, num_classes)
        self.rationale_head = nn.Linear(d, 2)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def forward(self, ids, attention_mask=None, keep_gate=None) -> "ModelOutput":
        out = self.encoder(ids, attention_mask, keep_gate)
        task_logp = torch.log_softmax(self.task_head(out.pooled), dim=-1)
        rationale_logp = torch.log_softmax(self.rationale_head(out.token_states), dim=-1)
        return ModelOutput(task_logp, rationale_logp)


class ModelOutput(NamedTuple):
    task_logp: torch.Tensor  # (batch, K)
    rationale_logp: torch.Tensor  # (batch, seq, 2); index 1 is "in rationale"

    def task_probs(self) -> torch.Tensor:
        return self.task_logp.exp()

    def rationale_probs(self) -> torch.Tensor:
        return self.rationale_logp[..., 1].exp()


def new_model(config: EncoderConfig, num_classes: int, seed: int) -> MultiTaskModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return MultiTaskModel(new_encoder(config, seed), num_classes)


# --------------------------------------------------------------------- batching


@dataclass
class Batch:
    ids: torch.Tensor  # (B, L) long
    attention_mask: torch.Tensor  # (B, L) bool
    doc_mask: torch.Tensor  # (B, L) bool, document positions only

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(inputs: Sequence[EncodedInput], pad_id: int = 0) -> Batch:
    width = max(len(x) for x in inputs)
    ids = np.full((len(inputs), width), pad_id, dtype=np.int64)
    attn = np.zeros((len(inputs), width), dtype=bool)
    doc = np.zeros((len(inputs), width), dtype=bool)
    for i, x in enumerate(inputs):
        ids[i, : len(x)] = x.ids
        attn[i, : len(x)] = True
        doc[i, : x.doc_len] = True
    return Batch(torch.from_numpy(ids), torch.from_numpy(attn), torch.from_numpy(doc))


def pad_rows(rows: Sequence[np.ndarray], width: int, fill=0, dtype=None) -> torch.Tensor:
    dtype = dtype or np.asarray(rows[0]).dtype
    out = np.full((len(rows), width), fill, dtype=dtype)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return torch.from_numpy(out)


# --------------------------------------------------------------------- single-example API


@dataclass
class TaskDistribution:
    probs: np.ndarray


@dataclass
class RationaleDistribution:
    probs: np.ndarray  # P(r_j = 1) over document positions


def forward(model: MultiTaskModel, inp: EncodedInput) -> tuple[TaskDistribution, RationaleDistribution]:
    """Differentiable forward lives in ``model(...)``; this is the numpy view."""
    if len(inp) > model.config.max_len:
        raise ValueError(f"input of {len(inp)} positions exceeds max_len {model.config.max_len}")
    batch = collate([inp], model.config.pad_token_id)
    with torch.no_grad():
        out = model(batch.ids, batch.attention_mask)
    task = out.task_probs()[0].double().numpy()
    rat = out.rationale_probs()[0, : inp.doc_len].double().numpy()
    return TaskDistribution(task), RationaleDistribution(rat)


# --------------------------------------------------------------------- pseudo-labels


@dataclass
class PseudoLabeledExample:
    doc: Document
    encoded: EncodedInput
    y_pseudo: int
    y_confidence: float
    r_pseudo: RationaleMask
    r_confidences: tuple


class inference_mode:
    """Eval mode without gradients; restores the previous training flag."""

    def __init__(self, model: nn.Module):
        self.model = model

    def __enter__(self):
        self.was_training = self.model.training
        self.model.eval()
        self.no_grad = torch.no_grad()
        self.no_grad.__enter__()
        return self.model

    def __exit__(self, *exc):
        self.no_grad.__exit__(*exc)
        self.model.train(self.was_training)
        return False


def predict_batches(model: MultiTaskModel, inputs: Sequence[EncodedInput], batch_size: int = 64):
    """Yield ``(task_probs, rationale_probs)`` numpy arrays per input, in order."""
    with inference_mode(model):
        for start in range(0, len(inputs), batch_size):
            chunk = inputs[start : start + batch_size]
            b = collate(chunk, model.config.pad_token_id)
            out = model(b.ids, b.attention_mask)
            tp = out.task_probs().double().numpy()
            rp = out.rationale_probs().double().numpy()
            for i, x in enumerate(chunk):
                yield tp[i], rp[i, : x.doc_len]


def label_from_probs(
    doc: Document,
    encoded: EncodedInput,
    task_probs: np.ndarray,
    rationale_probs: np.ndarray,
    rng: np.random.Generator | None = None,
) -> PseudoLabeledExample:
    """Mode of each distribution (or a draw from it when ``rng`` is given).

    Ties go to the lowest class index and to "in rationale" at exactly 0.5.
    """
    if rng is None:
        y = int(np.argmax(task_probs))
        r = (rationale_probs >= 0.5).astype(np.int64)
    else:
        y = int(rng.choice(len(task_probs), p=task_probs / task_probs.sum()))
        r = (rng.random(len(rationale_probs)) < rationale_probs).astype(np.int64)
    r_conf = np.where(r == 1, rationale_probs, 1.0 - rationale_probs)
    return PseudoLabeledExample(
        doc, encoded, y, float(task_probs[y]), RationaleMask(tuple(r)), tuple(float(c) for c in r_conf)
    )


def pseudo_label(
    teacher: MultiTaskModel, doc: Document, vocab: Vocabulary, rng: np.random.Generator | None = None
) -> PseudoLabeledExample:
    encoded = build_input(doc, vocab, teacher.config.max_len)
    tp, rp = next(predict_batches(teacher, [encoded]))
    return label_from_probs(doc, encoded, tp, rp, rng)


# --------------------------------------------------------------------- masking


def _apply_mask(ids, r, mask_token_id: int, keep: bool, doc_len: int | None):
    if isinstance(ids, EncodedInput):
        if len(r) != ids.doc_len:
            raise ValueError(f"mask of length {len(r)} does not match document region of {ids.doc_len}")
        new = _apply_mask(list(ids.ids), r, mask_token_id, keep, ids.doc_len)
        return EncodedInput(tuple(new), ids.doc_len, ids.truncated)
    values = r.values if isinstance(r, RationaleMask) else tuple(r)
    n = len(values) if doc_len is None else doc_len
    if len(values) != n or n > len(ids):
        raise ValueError(f"mask of length {len(values)} does not fit {len(ids)} ids (document region {n})")
    out = list(ids)
    hide = 0 if keep else 1
    for j, v in enumerate(values):
        if int(v) == hide:
            out[j] = mask_token_id
    return type(ids)(out) if isinstance(ids, (list, tuple)) else out


def mask_keep_rationale(ids, r, mask_token_id: int, doc_len: int | None = None):
    """Replace document tokens outside the rationale with ``mask_token_id``.

    ``ids`` is an :class:`EncodedInput` or a plain id sequence whose first
    ``len(r)`` positions are the document.
    """
    return _apply_mask(ids, r, mask_token_id, True, doc_len)


def mask_drop_rationale(ids, r, mask_token_id: int, doc_len: int | None = None):
    """Replace the rationale tokens themselves with ``mask_token_id``."""
    return _apply_mask(ids, r, mask_token_id, False, doc_len)


def masked_ids(batch: Batch, r: torch.Tensor, mask_token_id: int, keep: bool) -> torch.Tensor:
    """Batched tensor form of the two masking operations."""
    hide = (r == 0) if keep else (r == 1)
    return torch.where(batch.doc_mask & hide, torch.full_like(batch.ids, mask_token_id), batch.ids)


# --------------------------------------------------------------------- teacher / student


def same_architecture(a: MultiTaskModel, b: MultiTaskModel) -> bool:
    return a.config.to_dict() == b.config.to_dict() and a.num_classes == b.num_classes


def copy_into_teacher(student: MultiTaskModel, teacher: MultiTaskModel) -> None:
    """Overwrite the teacher's parameters with the student's, without sharing storage."""
    if not same_architecture(student, teacher):
        raise ValueError("teacher and student configurations differ")
    with torch.no_grad():
        for name, t in teacher.state_dict().items():
            t.copy_(student.state_dict()[name])


# --------------------------------------------------------------------- checkpoints


def save_model(model: MultiTaskModel, path: str | os.PathLike, vocab: Vocabulary | None = None,
               class_names: Sequence[str] | None = None) -> None:
    header = {
        "encoder": model.config.to_dict(),
        "num_classes": model.num_classes,
        "class_names": list(class_names) if class_names else None,
        "vocab": vocab.tokens if vocab is not None else None,
    }
    save_arrays(path, model.state_dict(), header)


def load_model(path: str | os.PathLike) -> tuple[MultiTaskModel, Vocabulary | None, dict]:
    state, header = load_arrays(path)
    model = MultiTaskModel(ReferenceEncoder(EncoderConfig(**header["encoder"])), header["num_classes"])
    model.to(next(iter(state.values())).dtype)
    model.load_state_dict(state)
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") else None
    return model, vocab, header
