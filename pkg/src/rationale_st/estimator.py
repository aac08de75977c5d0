"""Scikit-learn style wrapper around the self-training loop.

``X`` is a sequence of documents, each a :class:`Document`, a token list or a
whitespace-separated string. ``y`` follows the semi-supervised convention of
:mod:`sklearn.semi_supervised`: ``-1`` (or ``None``) marks an unlabelled
document. Gold rationales for labelled documents are passed as 0/1 masks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from .data import Corpus, Document, RationaleMask, build_input
from .encoder import EncoderConfig
from .losses import LossWeights
from .model import predict_batches
from .selftrain import SelfTrainConfig, self_train

UNLABELED = -1


def check_documents(X, name: str = "X") -> list[Document]:
    """Coerce ``X`` to a list of :class:`Document`, rejecting empty inputs."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError(f"{name} must be a sequence of documents, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    docs = []
    for i, x in enumerate(X):
        if isinstance(x, Document):
            docs.append(x)
            continue
        tokens = x.split() if isinstance(x, str) else list(x)
        if not tokens or not all(isinstance(t, str) for t in tokens):
            raise ValueError(f"{name}[{i}] must be a non-empty string or list of string tokens")
        docs.append(Document(f"{name}-{i}", tokens))
    return docs


def check_rationales(rationales, docs: Sequence[Document], labeled: np.ndarray, name: str = "rationales"):
    """Masks aligned with ``docs``; required for every labelled document."""
    if rationales is None:
        missing = [d.gold_rationale is None for d, lab in zip(docs, labeled) if lab]
        if any(missing):
            raise ValueError(f"{name} are required for labelled documents")
        return [d.gold_rationale for d in docs]
    if len(rationales) != len(docs):
        raise ValueError(f"{name} has {len(rationales)} entries for {len(docs)} documents")
    out = []
    for i, (r, d, lab) in enumerate(zip(rationales, docs, labeled)):
        if r is None:
            if lab:
                raise ValueError(f"{name}[{i}] is missing for a labelled document")
            out.append(None)
            continue
        r = np.asarray(r)
        if r.shape != (len(d.tokens),):
            raise ValueError(f"{name}[{i}] has length {r.size}, document has {len(d.tokens)} tokens")
        out.append(RationaleMask(tuple(int(v) for v in r)))
    return out


def _labeled_mask(y) -> np.ndarray:
    return np.asarray([v is not None and not (isinstance(v, (int, np.integer)) and v == UNLABELED) for v in y])


class RationaleSelfTrainingClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Joint document classifier and rationale extractor trained by self-training.

    ``predict`` returns class labels and ``transform`` the predicted 0/1
    rationale mask of each document. When no validation set is supplied to
    ``fit``, ``validation_fraction`` of the labelled documents is held out
    (stratified) for early stopping and model selection.
    """

    def __init__(
        self,
        hidden_dim=64,
        num_layers=2,
        num_heads=4,
        max_len=512,
        dropout_rate=0.1,
        max_iterations=15,
        teacher_epochs=20,
        student_epochs=1,
        batch_size=8,
        learning_rate=3e-5,
        coef_wu=1.0,
        coef_suff=1.0,
        coef_comp=1.0,
        coef_sparsity=1.0,
        coef_continuity=1.0,
        reweight=True,
        refit_teacher_each_iter=True,
        class_rebalance=False,
        early_stop_patience=3,
        teacher_patience=5,
        selection_metric="validation_total_loss",
        mask_source="teacher",
        rationale_reduction="sum",
        validation_fraction=0.2,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.max_iterations = max_iterations
        self.teacher_epochs = teacher_epochs
        self.student_epochs = student_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.coef_wu = coef_wu
        self.coef_suff = coef_suff
        self.coef_comp = coef_comp
        self.coef_sparsity = coef_sparsity
        self.coef_continuity = coef_continuity
        self.reweight = reweight
        self.refit_teacher_each_iter = refit_teacher_each_iter
        self.class_rebalance = class_rebalance
        self.early_stop_patience = early_stop_patience
        self.teacher_patience = teacher_patience
        self.selection_metric = selection_metric
        self.mask_source = mask_source
        self.rationale_reduction = rationale_reduction
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _selftrain_config(self) -> SelfTrainConfig:
        return SelfTrainConfig(
            max_iterations=self.max_iterations,
            teacher_epochs=self.teacher_epochs,
            student_epochs=self.student_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            loss_weights=LossWeights(self.coef_wu, self.coef_suff, self.coef_comp, self.coef_sparsity,
                                     self.coef_continuity),
            refit_teacher_each_iter=self.refit_teacher_each_iter,
            class_rebalance=self.class_rebalance,
            early_stop_patience=self.early_stop_patience,
            teacher_patience=self.teacher_patience,
            selection_metric=self.selection_metric,
            seed=int(self.random_state),
            reweight=self.reweight,
            mask_source=self.mask_source,
            rationale_reduction=self.rationale_reduction,
        )

    def _encoder_config(self) -> EncoderConfig:
        # vocab_size is replaced by the fitted vocabulary's size
        return EncoderConfig(vocab_size=4, hidden_dim=self.hidden_dim, num_layers=self.num_layers,
                             num_heads=self.num_heads, max_len=self.max_len, dropout_rate=self.dropout_rate)

    def _corpus(self, docs, y_idx, masks) -> Corpus:
        out = []
        for d, yi, m in zip(docs, y_idx, masks):
            out.append(Document(d.id, d.tokens, d.query, None if yi is None else int(yi), m))
        return Corpus(out, len(self.classes_), [str(c) for c in self.classes_])

    def fit(self, X, y, rationales=None, X_val=None, y_val=None, rationales_val=None):
        docs = check_documents(X)
        y = list(y)
        if len(y) != len(docs):
            raise ValueError(f"y has {len(y)} entries for {len(docs)} documents")
        labeled = _labeled_mask(y)
        if not labeled.any():
            raise ValueError("at least one labelled document is required")
        masks = check_rationales(rationales, docs, labeled)
        self.classes_ = np.unique(np.asarray([v for v, lab in zip(y, labeled) if lab]))
        if len(self.classes_) < 2:
            raise ValueError("labelled documents must cover at least two classes")
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        y_idx = [index[v] if lab else None for v, lab in zip(y, labeled)]

        lab_ids = np.flatnonzero(labeled)
        if X_val is None:
            train_ids, val_ids = train_test_split(
                lab_ids, test_size=self.validation_fraction, random_state=self.random_state,
                stratify=[y_idx[i] for i in lab_ids],
            )
            val_docs = [docs[i] for i in val_ids]
            val_y = [y_idx[i] for i in val_ids]
            val_masks = [masks[i] for i in val_ids]
        else:
            train_ids = lab_ids
            val_docs = check_documents(X_val, "X_val")
            if y_val is None or len(y_val) != len(val_docs):
                raise ValueError("y_val must label every validation document")
            unknown = set(y_val) - set(index)
            if unknown:
                raise ValueError(f"y_val has classes unseen in y: {sorted(map(str, unknown))}")
            val_y = [index[v] for v in y_val]
            val_masks = check_rationales(rationales_val, val_docs, np.ones(len(val_docs), bool), "rationales_val")

        pick = lambda ids: ([docs[i] for i in ids], [y_idx[i] for i in ids], [masks[i] for i in ids])  # noqa: E731
        lab_corpus = self._corpus(*pick(train_ids))
        unl_corpus = self._corpus([docs[i] for i in np.flatnonzero(~labeled)], [None] * int((~labeled).sum()),
                                  [None] * int((~labeled).sum()))
        val_corpus = self._corpus(val_docs, val_y, val_masks)

        result = self_train(lab_corpus, unl_corpus, val_corpus, self._selftrain_config(), self._encoder_config())
        self.model_ = result.model
        self.vocab_ = result.vocab
        self.records_ = result.records
        self.best_iteration_ = result.best_iteration
        return self

    def _probabilities(self, X):
        check_is_fitted(self, "model_")
        docs = check_documents(X)
        inputs = [build_input(d, self.vocab_, self.max_len) for d in docs]
        task, rationale = [], []
        for d, enc, (tp, rp) in zip(docs, inputs, predict_batches(self.model_, inputs)):
            task.append(tp)
            # truncated document tails carry no prediction; report them as outside the rationale
            rationale.append(np.concatenate([rp, np.zeros(len(d.tokens) - enc.doc_len)]))
        return np.vstack(task), rationale

    def predict_proba(self, X) -> np.ndarray:
        return self._probabilities(X)[0]

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def predict_rationale_proba(self, X) -> list[np.ndarray]:
        """Per-token probability of belonging to the rationale, one array per document."""
        return self._probabilities(X)[1]

    def transform(self, X) -> list[np.ndarray]:
        """Predicted 0/1 rationale mask of each document (threshold 0.5, ties to 1)."""
        return [(p >= 0.5).astype(np.int64) for p in self.predict_rationale_proba(X)]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)
