"""Corpora, few-shot splits, synthetic corpora and model-ready inputs.

Documents store word-level tokens and word-level rationale masks. Anything
subword-specific belongs to the encoder side.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, SEP, MASK = "[PAD]", "[UNK]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, SEP, MASK)


class CorpusFormatError(ValueError):
    """A corpus record could not be parsed."""


class AlignmentError(ValueError):
    """A rationale annotation does not fit the token sequence it annotates."""


class ConfigurationError(ValueError):
    pass


class ClassShortageError(ValueError):
    pass


@dataclass(frozen=True)
class RationaleMask:
    values: tuple
    kind: str = "hard"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.kind not in ("hard", "soft"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == "hard":
            if any(v not in (0, 1) for v in self.values):
                raise ValueError("hard rationale masks must be 0/1")
            object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        elif any(not (0.0 <= v <= 1.0) for v in self.values):
            raise ValueError("soft rationale masks must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.values)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64 if self.kind == "hard" else np.float64)

    @classmethod
    def from_spans(cls, length: int, spans: Iterable[Sequence[int]]) -> "RationaleMask":
        values = [0] * length
        for span in spans:
            start, end = int(span[0]), int(span[1])
            if not (0 <= start < end <= length):
                raise AlignmentError(f"span [{start}, {end}) outside a document of {length} tokens")
            values[start:end] = [1] * (end - start)
        return cls(tuple(values), "hard")

    def spans(self) -> list[list[int]]:
        """Maximal runs of 1s as half-open ``[start, end)`` intervals."""
        out, start = [], None
        for j, v in enumerate(self.values):
            if v and start is None:
                start = j
            elif not v and start is not None:
                out.append([start, j])
                start = None
        if start is not None:
            out.append([start, len(self.values)])
        return out


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple
    query: tuple | None = None
    gold_label: int | None = None
    gold_rationale: RationaleMask | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.query is not None:
            object.__setattr__(self, "query", tuple(self.query))
        if not self.tokens:
            raise ValueError(f"document {self.id!r} has no tokens")
        if self.gold_rationale is not None and len(self.gold_rationale) != len(self.tokens):
            raise AlignmentError(
                f"document {self.id!r}: rationale length {len(self.gold_rationale)} "
                f"!= token count {len(self.tokens)}"
            )

    def strip_gold(self) -> "Document":
        return replace(self, gold_label=None, gold_rationale=None)


@dataclass
class Corpus:
    documents: list
    num_classes: int
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(k) for k in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names must have num_classes entries")
        for doc in self.documents:
            if doc.gold_label is not None and not (0 <= doc.gold_label < self.num_classes):
                raise ValueError(f"document {doc.id!r}: label {doc.gold_label} out of range")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]

    def labels(self) -> np.ndarray:
        return np.asarray([d.gold_label for d in self.documents])

    def with_documents(self, documents: list) -> "Corpus":
        return Corpus(list(documents), self.num_classes, list(self.class_names))


class SealedGold(Mapping):
    """Read-only side table of gold annotations withheld from training.

    Only evaluation code should look inside.
    """

    def __init__(self, documents: Iterable[Document]):
        self._table = {d.id: (d.gold_label, d.gold_rationale) for d in documents}

    def __getitem__(self, doc_id):
        return self._table[doc_id]

    def __iter__(self):
        return iter(self._table)

    def __len__(self) -> int:
        return len(self._table)

    def restore(self, corpus: Corpus) -> Corpus:
        """Reattach withheld gold fields to the documents of ``corpus``."""
        docs = []
        for d in corpus:
            label, mask = self._table[d.id]
            docs.append(replace(d, gold_label=label, gold_rationale=mask))
        return corpus.with_documents(docs)


@dataclass
class FewShotSplit:
    labeled: Corpus
    unlabeled: Corpus
    seed: int
    sealed: SealedGold = field(default_factory=lambda: SealedGold([]))


# --------------------------------------------------------------------- corpus IO


def _record_to_document(rec: dict, class_index: Mapping | None) -> Document:
    doc_id = rec.get("id")
    if doc_id is None:
        raise CorpusFormatError(f"record without an id: {str(rec)[:80]}")
    doc_id = str(doc_id)
    tokens = rec.get("tokens")
    if not isinstance(tokens, list) or not tokens:
        raise CorpusFormatError(f"document {doc_id!r}: 'tokens' must be a non-empty list")
    label = rec.get("label")
    if label is not None:
        if isinstance(label, str):
            if class_index is None or label not in class_index:
                raise CorpusFormatError(f"document {doc_id!r}: unknown label {label!r}")
            label = class_index[label]
        elif not isinstance(label, int):
            raise CorpusFormatError(f"document {doc_id!r}: label must be int or str")
    spans = rec.get("rationale_spans")
    mask = None
    if spans is not None:
        try:
            mask = RationaleMask.from_spans(len(tokens), spans)
        except AlignmentError as exc:
            raise AlignmentError(f"document {doc_id!r}: {exc}") from None
        except (TypeError, IndexError, ValueError):
            raise CorpusFormatError(f"document {doc_id!r}: malformed rationale_spans") from None
    query = rec.get("query")
    return Document(doc_id, tokens, query, label, mask)


def read_corpus(path: str | os.PathLike, class_names: Sequence[str] | None = None) -> Corpus:
    """Read a line-delimited JSON corpus.

    Each line is ``{"id", "tokens", "query", "label", "rationale_spans"}`` with
    half-open token spans. An optional first line ``{"__meta__": {"class_names": [...]}}``
    fixes the label set; otherwise string labels are sorted and integer labels
    define ``max + 1`` classes.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "__meta__" in rec:
                class_names = class_names or rec["__meta__"].get("class_names")
                continue
            records.append(rec)
    if class_names is None:
        str_labels = sorted({r["label"] for r in records if isinstance(r.get("label"), str)})
        if str_labels:
            class_names = str_labels
        else:
            int_labels = [r["label"] for r in records if isinstance(r.get("label"), int)]
            class_names = [str(k) for k in range(max(int_labels) + 1)] if int_labels else ["0"]
    class_index = {name: k for k, name in enumerate(class_names)}
    docs = [_record_to_document(r, class_index) for r in records]
    return Corpus(docs, len(class_names), list(class_names))


def write_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"__meta__": {"class_names": list(corpus.class_names)}}) + "\n")
        for d in corpus:
            rec = {
                "id": d.id,
                "tokens": list(d.tokens),
                "query": list(d.query) if d.query is not None else None,
                "label": d.gold_label,
                "rationale_spans": d.gold_rationale.spans() if d.gold_rationale is not None else None,
            }
            fh.write(json.dumps(rec) + "\n")


def _read_eraser_doc(docs_dir: Path, docid: str) -> list[list[str]]:
    path = docs_dir / docid
    if not path.exists():
        raise CorpusFormatError(f"document {docid!r}: missing file {path}")
    text = path.read_text(encoding="utf-8")
    return [line.split() for line in text.split("\n") if line.strip()]


def load_eraser_corpus(
    path: str | os.PathLike,
    split: str = "train",
    class_names: Sequence[str] | None = None,
    pair_order: str = "first_as_document",
) -> Corpus:
    """Load one split of an ERASER-layout dataset directory.

    The directory holds ``docs/<docid>`` (whitespace tokenised, one sentence
    per line) and ``<split>.jsonl`` annotation records. Token-level evidence
    (``start_token``/``end_token``) and sentence-level evidence
    (``start_sentence``/``end_sentence``) are both projected onto token masks.

    Annotations referencing two documents (premise/hypothesis style) become
    ``document [SEP] query``; ``pair_order`` picks which one is the document
    (``first_as_document`` or ``second_as_document``). Only evidence on the
    document side is kept, since query positions are never rationale targets.
    """
    root = Path(path)
    ann_path = root / f"{split}.jsonl"
    if not ann_path.exists():
        raise FileNotFoundError(ann_path)
    if pair_order not in ("first_as_document", "second_as_document"):
        raise ConfigurationError(f"unknown pair_order {pair_order!r}")
    records = []
    with open(ann_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise CorpusFormatError(f"{ann_path}:{lineno}: invalid JSON ({exc.msg})") from None
    if class_names is None:
        class_names = sorted({str(r.get("classification")) for r in records})
    class_index = {name: k for k, name in enumerate(class_names)}

    docs = []
    for rec in records:
        ann_id = rec.get("annotation_id")
        if ann_id is None or "classification" not in rec:
            raise CorpusFormatError(f"record {str(rec)[:60]!r}: needs annotation_id and classification")
        label = rec["classification"]
        if label not in class_index:
            raise CorpusFormatError(f"document {ann_id!r}: unknown label {label!r}")
        docids = rec.get("docids") or [ann_id]
        if len(docids) > 2:
            raise CorpusFormatError(f"document {ann_id!r}: more than two source documents")
        if len(docids) == 2 and pair_order == "second_as_document":
            docids = [docids[1], docids[0]]
        doc_id = docids[0]
        sentences = _read_eraser_doc(root / "docs", doc_id)
        tokens = [t for s in sentences for t in s]
        offsets = np.cumsum([0] + [len(s) for s in sentences])

        query = rec.get("query")
        query_tokens = query.split() if isinstance(query, str) and query.strip() else None
        if len(docids) == 2:
            second = [t for s in _read_eraser_doc(root / "docs", docids[1]) for t in s]
            query_tokens = second + (query_tokens or [])

        spans = []
        for group in rec.get("evidences") or []:
            for ev in group if isinstance(group, list) else [group]:
                if ev.get("docid", doc_id) != doc_id:
                    continue
                st, et = ev.get("start_token", -1), ev.get("end_token", -1)
                if st is not None and st >= 0:
                    spans.append((st, et))
                    continue
                ss, es = ev.get("start_sentence", -1), ev.get("end_sentence", -1)
                if ss is None or ss < 0 or es is None or es <= ss or es > len(sentences):
                    raise AlignmentError(f"document {ann_id!r}: evidence sentence range [{ss}, {es}) invalid")
                spans.append((int(offsets[ss]), int(offsets[es])))
        try:
            mask = RationaleMask.from_spans(len(tokens), spans)
        except AlignmentError as exc:
            raise AlignmentError(f"document {ann_id!r}: {exc}") from None
        docs.append(Document(str(ann_id), tokens, query_tokens, class_index[label], mask))
    return Corpus(docs, len(class_names), list(class_names))


# --------------------------------------------------------------------- vocabulary / inputs


class Vocabulary:
    """Word-level vocabulary with the four special tokens at ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            tokens = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    pad_id = 0
    unk_id = 1
    sep_id = 2
    mask_id = 3

    @classmethod
    def build(cls, *corpora: Corpus, min_count: int = 1) -> "Vocabulary":
        counts: Counter = Counter()
        for corpus in corpora:
            for d in corpus:
                counts.update(d.tokens)
                if d.query:
                    counts.update(d.query)
        words = sorted(t for t, c in counts.items() if c >= min_count and t not in SPECIAL_TOKENS)
        return cls(list(SPECIAL_TOKENS) + words)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, self.unk_id) for t in tokens]


@dataclass(frozen=True)
class EncodedInput:
    """Token ids laid out as ``document [SEP] query``.

    Positions ``0 .. doc_len - 1`` are the document and the only rationale
    targets.
    """

    ids: tuple
    doc_len: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def build_input(doc: Document, vocab: Vocabulary, max_len: int = 512) -> EncodedInput:
    """Encode ``doc`` for the model, truncating the document tail if needed.

    The query is always kept whole; the overhead with a query is
    ``1 + len(query)`` positions.
    """
    doc_ids = vocab.encode(doc.tokens)
    tail: list[int] = []
    if doc.query:
        tail = [vocab.sep_id] + vocab.encode(doc.query)
    room = max_len - len(tail)
    if room < 1:
        raise ValueError(f"document {doc.id!r}: query of {len(doc.query)} tokens leaves no room in {max_len}")
    truncated = len(doc_ids) > room
    if truncated:
        doc_ids = doc_ids[:room]
    return EncodedInput(tuple(doc_ids + tail), len(doc_ids), truncated)


def project_mask(mask: RationaleMask, encoded: EncodedInput) -> np.ndarray:
    """Cut a word-level mask down to the document region kept by ``build_input``."""
    return mask.to_array()[: encoded.doc_len]


# --------------------------------------------------------------------- few-shot split


def sample_few_shot(corpus: Corpus, n_per_class: int, seed: int, strict: bool = False) -> FewShotSplit:
    """Stratified few-label split; the rest becomes unlabeled.

    Classes with fewer than ``n_per_class`` documents contribute all of them,
    unless ``strict`` is set, in which case that is an error.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    by_class: dict[int, list[int]] = {k: [] for k in range(corpus.num_classes)}
    for i, d in enumerate(corpus):
        if d.gold_label is None:
            raise ValueError(f"document {d.id!r} has no gold label")
        by_class[d.gold_label].append(i)
    empty = [corpus.class_names[k] for k, idx in by_class.items() if not idx]
    if empty:
        raise ClassShortageError(f"no examples for class(es): {', '.join(empty)}")
    if strict:
        short = [f"{corpus.class_names[k]} ({len(idx)})" for k, idx in by_class.items() if len(idx) < n_per_class]
        if short:
            raise ClassShortageError(f"fewer than {n_per_class} examples for class(es): {', '.join(short)}")

    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    for k in range(corpus.num_classes):
        idx = np.asarray(by_class[k])
        take = rng.permutation(len(idx))[: min(n_per_class, len(idx))]
        chosen.update(int(i) for i in idx[take])
    labeled = [d for i, d in enumerate(corpus) if i in chosen]
    missing = [d.id for d in labeled if d.gold_rationale is None]
    if missing:
        raise ValueError(f"labeled documents need gold rationales; missing for {missing[:5]}")
    held = [d for i, d in enumerate(corpus) if i not in chosen]
    return FewShotSplit(
        labeled=corpus.with_documents(labeled),
        unlabeled=corpus.with_documents([d.strip_gold() for d in held]),
        seed=seed,
        sealed=SealedGold(held),
    )


def holdout(corpus: Corpus, size: int, seed: int) -> tuple[Corpus, Corpus]:
    """Split off ``size`` random documents, returning ``(rest, held_out)``."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    held = set(int(i) for i in order[:size])
    rest = [d for i, d in enumerate(corpus) if i not in held]
    out = [d for i, d in enumerate(corpus) if i in held]
    return corpus.with_documents(rest), corpus.with_documents(out)


# --------------------------------------------------------------------- synthetic corpora


@dataclass
class SyntheticConfig:
    """Planted-phrase corpus parameters.

    Each class owns ``signal_tokens_per_class`` tokens; its phrases are
    ``phrases_per_class`` distinct ordered tuples drawn from that pool. All
    other vocabulary entries are noise, drawn independently of the class.
    With ``distractor_rate > 0`` each noise slot is, with that probability,
    filled by a signal token of a uniformly random class instead, so token
    identity alone no longer marks the rationale while the label still
    depends only on the planted phrase.
    """

    vocab_size: int = 200
    num_classes: int = 2
    phrase_length: int = 3
    phrases_per_class: int = 8
    signal_tokens_per_class: int | None = None
    doc_length_min: int = 30
    doc_length_max: int = 30
    noise: str = "uniform"
    zipf_exponent: float = 1.0
    distractor_rate: float = 0.0
    num_docs: int = 1000
    seed: int = 0

    def signal_pool_size(self) -> int:
        if self.signal_tokens_per_class is None:
            return self.phrases_per_class * self.phrase_length
        return self.signal_tokens_per_class

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.phrase_length < 1 or self.phrases_per_class < 1:
            raise ConfigurationError("phrase_length and phrases_per_class must be >= 1")
        if not (self.phrase_length <= self.doc_length_min <= self.doc_length_max):
            raise ConfigurationError("need phrase_length <= doc_length_min <= doc_length_max")
        pool = self.signal_pool_size()
        if pool < self.phrase_length:
            raise ConfigurationError("signal pool smaller than a phrase")
        n_noise = self.vocab_size - pool * self.num_classes
        if n_noise < 1:
            raise ConfigurationError(
                f"vocab_size {self.vocab_size} cannot hold {self.num_classes} x {pool} signal tokens "
                "plus at least one noise token"
            )
        from math import perm

        if perm(pool, self.phrase_length) < self.phrases_per_class:
            raise ConfigurationError("signal pool too small for the requested number of distinct phrases")
        if not (0.0 <= self.distractor_rate < 1.0):
            raise ConfigurationError("distractor_rate must lie in [0, 1)")
        if self.noise not in ("uniform", "zipf"):
            raise ConfigurationError(f"unknown noise distribution {self.noise!r}")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "SyntheticConfig":
        import yaml

        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SyntheticVocabulary:
    signal: list  # per class, list of token strings
    phrases: list  # per class, list of token tuples
    noise: list
    noise_probs: np.ndarray


def _synthetic_vocabulary(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticVocabulary:
    width = len(str(cfg.vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(cfg.vocab_size)]
    order = rng.permutation(cfg.vocab_size)
    pool = cfg.signal_pool_size()
    signal = [[words[j] for j in order[k * pool : (k + 1) * pool]] for k in range(cfg.num_classes)]
    noise = [words[j] for j in sorted(order[cfg.num_classes * pool :])]
    phrases = []
    for k in range(cfg.num_classes):
        seen: set = set()
        while len(seen) < cfg.phrases_per_class:
            pick = tuple(signal[k][j] for j in rng.choice(pool, cfg.phrase_length, replace=False))
            seen.add(pick)
        phrases.append(sorted(seen))
    if cfg.noise == "zipf":
        ranks = np.arange(1, len(noise) + 1, dtype=np.float64)
        probs = ranks ** -cfg.zipf_exponent
        probs = probs[rng.permutation(len(noise))]
    else:
        probs = np.ones(len(noise))
    return SyntheticVocabulary(signal, phrases, noise, probs / probs.sum())


def generate_synthetic(cfg: SyntheticConfig, id_prefix: str = "syn") -> Corpus:
    """Planted-phrase corpus whose labels are fully determined by the phrase.

    The vocabulary layout depends on ``cfg.seed`` only through a dedicated
    stream, so corpora generated with different ``num_docs`` share phrases.
    """
    cfg.validate()
    vocab_rng = np.random.default_rng([cfg.seed, 0])
    doc_rng = np.random.default_rng([cfg.seed, 1])
    sv = _synthetic_vocabulary(cfg, vocab_rng)
    L = cfg.phrase_length
    docs = []
    for i in range(cfg.num_docs):
        k = int(doc_rng.integers(cfg.num_classes))
        phrase = sv.phrases[k][int(doc_rng.integers(len(sv.phrases[k])))]
        length = int(doc_rng.integers(cfg.doc_length_min, cfg.doc_length_max + 1))
        filler = [sv.noise[j] for j in doc_rng.choice(len(sv.noise), size=length - L, p=sv.noise_probs)]
        if cfg.distractor_rate > 0:
            swap = doc_rng.random(length - L) < cfg.distractor_rate
            for j in np.flatnonzero(swap):
                pool = sv.signal[int(doc_rng.integers(cfg.num_classes))]
                filler[j] = pool[int(doc_rng.integers(len(pool)))]
        pos = int(doc_rng.integers(length - L + 1))
        tokens = filler[:pos] + list(phrase) + filler[pos:]
        mask = [0] * pos + [1] * L + [0] * (length - L - pos)
        docs.append(Document(f"{id_prefix}-{i:06d}", tokens, None, k, RationaleMask(mask)))
    return Corpus(docs, cfg.num_classes, [f"class{k}" for k in range(cfg.num_classes)])


def synthetic_vocabulary(cfg: SyntheticConfig) -> SyntheticVocabulary:
    cfg.validate()
    return _synthetic_vocabulary(cfg, np.random.default_rng([cfg.seed, 0]))


def synthetic_split(cfg: SyntheticConfig, n_per_class: int, validation_size: int, seed: int | None = None,
                    strict: bool = False) -> tuple[FewShotSplit, Corpus]:
    """Few-shot split of a synthetic corpus plus a separate validation set.

    ``validation_size`` extra documents are generated after the first
    ``cfg.num_docs`` (the document stream is prefix-stable), so the split
    itself covers exactly ``cfg.num_docs`` documents.
    """
    seed = cfg.seed if seed is None else seed
    full = generate_synthetic(replace(cfg, num_docs=cfg.num_docs + validation_size))
    pool = full.with_documents(list(full.documents[: cfg.num_docs]))
    validation = full.with_documents(list(full.documents[cfg.num_docs :]))
    return sample_few_shot(pool, n_per_class, seed, strict), validation
