import numpy as np
import pytest
import torch

from rationale_st.encoder import EncoderConfig
from rationale_st.model import Batch, new_model

torch.set_num_threads(1)

TINY = dict(vocab_size=12, hidden_dim=8, num_layers=1, num_heads=2, max_len=16, dropout_rate=0.0)


def tiny_model(seed=0, num_classes=3, dtype=torch.float64, **overrides):
    model = new_model(EncoderConfig(**{**TINY, **overrides}), num_classes, seed)
    model.to(dtype)
    model.eval()
    return model


def random_batch(rng, batch_size=3, vocab_size=12, min_len=3, max_len=7, query_len=2, sep_id=2):
    """Padded batch of "document [SEP] query" rows with random lengths."""
    rows, doc_lens = [], []
    for _ in range(batch_size):
        n = int(rng.integers(min_len, max_len + 1))
        doc = rng.integers(4, vocab_size, n).tolist()
        query = rng.integers(4, vocab_size, query_len).tolist() if query_len else []
        rows.append(doc + ([sep_id] + query if query_len else []))
        doc_lens.append(n)
    width = max(len(r) for r in rows)
    ids = torch.zeros(batch_size, width, dtype=torch.long)
    attn = torch.zeros(batch_size, width, dtype=torch.bool)
    doc = torch.zeros(batch_size, width, dtype=torch.bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = torch.tensor(r)
        attn[i, : len(r)] = True
        doc[i, : doc_lens[i]] = True
    return Batch(ids, attn, doc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
