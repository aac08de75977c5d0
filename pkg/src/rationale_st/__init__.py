"""Few-label self-training of a joint task classifier and rationale extractor."""

from .data import (
    Corpus,
    Document,
    FewShotSplit,
    RationaleMask,
    SyntheticConfig,
    Vocabulary,
    build_input,
    generate_synthetic,
    load_eraser_corpus,
    read_corpus,
    sample_few_shot,
    synthetic_split,
    write_corpus,
)
from .encoder import EncoderConfig, new_encoder
from .estimator import RationaleSelfTrainingClassifier
from .losses import LossWeights
from .model import MultiTaskModel, copy_into_teacher, mask_drop_rationale, mask_keep_rationale, pseudo_label
from .selftrain import IterationRecord, SelfTrainConfig, self_train

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "Document",
    "EncoderConfig",
    "FewShotSplit",
    "IterationRecord",
    "LossWeights",
    "MultiTaskModel",
    "RationaleMask",
    "RationaleSelfTrainingClassifier",
    "SelfTrainConfig",
    "SyntheticConfig",
    "Vocabulary",
    "build_input",
    "copy_into_teacher",
    "generate_synthetic",
    "load_eraser_corpus",
    "mask_drop_rationale",
    "mask_keep_rationale",
    "new_encoder",
    "pseudo_label",
    "read_corpus",
    "sample_few_shot",
    "self_train",
    "synthetic_split",
    "write_corpus",
]
