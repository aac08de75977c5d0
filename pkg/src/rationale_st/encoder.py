"""Text encoder contract and a small from-scratch reference transformer.

Any ``nn.Module`` exposing ``config`` (an :class:`EncoderConfig`) and
``forward(ids, attention_mask=None, keep_gate=None) -> EncoderOutput`` can
stand in for :class:`ReferenceEncoder`.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 512
    dropout_rate: float = 0.1
    mask_token_id: int = 3
    sep_token_id: int = 2
    pad_token_id: int = 0
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.hidden_dim
        self.validate()

    def validate(self) -> None:
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        ids = (self.mask_token_id, self.sep_token_id, self.pad_token_id)
        if len(set(ids)) != 3:
            raise ValueError("mask, sep and pad token ids must be distinct")
        if max(ids) >= self.vocab_size or min(ids) < 0:
            raise ValueError("special token ids must lie in [0, vocab_size)")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.num_layers < 1 or self.max_len < 1:
            raise ValueError("num_layers and max_len must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(config: EncoderConfig) -> int:
    """Closed-form parameter count of :class:`ReferenceEncoder`.

    ``V*d + T*d`` embeddings, then per layer ``4d^2 + 4d`` attention,
    ``2df + f + d`` feed-forward and ``4d`` for two layer norms, plus ``2d``
    for the final norm.
    """
    d, f = config.hidden_dim, config.ffn_dim
    per_layer = (4 * d * d + 4 * d) + (2 * d * f + f + d) + 4 * d
    return config.vocab_size * d + config.max_len * d + config.num_layers * per_layer + 2 * d


class EncoderOutput(NamedTuple):
    token_states: torch.Tensor  # (batch, seq, hidden)
    pooled: torch.Tensor  # (batch, hidden), first position


class ReferenceEncoder(nn.Module):
    """Pre-norm bidirectional transformer with learned positions."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.token_embedding = nn.Embedding(config.vocab_size, d)
        self.position_embedding = nn.Embedding(config.max_len, d)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d,
                config.num_heads,
                dim_feedforward=config.ffn_dim,
                dropout=config.dropout_rate,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            for _ in range(config.num_layers)
        )
        self.final_norm = nn.LayerNorm(d)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.position_embedding.weight, std=0.02)

    def embed(self, ids: torch.Tensor, keep_gate: torch.Tensor | None = None) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise ValueError("token id out of range for the encoder vocabulary")
        emb = self.token_embedding(ids)
        if keep_gate is not None:
            # interpolate towards [MASK]; gate 1 keeps the token, 0 masks it
            mask_vec = self.token_embedding.weight[self.config.mask_token_id]
            g = keep_gate.unsqueeze(-1).to(emb.dtype)
            emb = g * emb + (1.0 - g) * mask_vec
        positions = torch.arange(ids.shape[1], device=ids.device)
        return emb + self.position_embedding(positions)

    def forward(
        self,
        ids: torch.Tensor,
        attention_mask: torch.Tensor | None = None,
        keep_gate: torch.Tensor | None = None,
    ) -> EncoderOutput:
        if ids.dim() == 1:
            out = self.forward(ids[None], None if attention_mask is None else attention_mask[None],
                               None if keep_gate is None else keep_gate[None])
            return EncoderOutput(out.token_states[0], out.pooled[0])
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        x = self.dropout(self.embed(ids, keep_gate))
        pad = None if attention_mask is None else ~attention_mask.bool()
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=pad)
        x = self.final_norm(x)
        return EncoderOutput(x, x[:, 0])


def new_encoder(config: EncoderConfig, seed: int) -> ReferenceEncoder:
    """Freshly initialised reference encoder; the global RNG is left untouched."""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ReferenceEncoder(config)


def encode(encoder: nn.Module, ids, attention_mask=None) -> EncoderOutput:
    if not isinstance(ids, torch.Tensor):
        ids = torch.as_tensor(np.asarray(ids), dtype=torch.long)
    return encoder(ids, attention_mask)


# --------------------------------------------------------------------- checkpoints
#
# An ``.npz`` archive: one array per state-dict entry plus ``__header__``, a
# JSON string holding the configuration. Arrays keep their dtype, so a save /
# load round trip is bit-exact.

HEADER_KEY = "__header__"


def save_arrays(path: str | os.PathLike, state: dict, header: dict) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in state.items()}
    arrays[HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))
    tmp = f"{os.fspath(path)}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_arrays(path: str | os.PathLike) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data[HEADER_KEY]))
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files if k != HEADER_KEY}
    return state, header


def save_encoder(encoder: ReferenceEncoder, path: str | os.PathLike) -> None:
    save_arrays(path, encoder.state_dict(), {"encoder": encoder.config.to_dict()})


def load_encoder(path: str | os.PathLike) -> ReferenceEncoder:
    state, header = load_arrays(path)
    enc = ReferenceEncoder(EncoderConfig(**header["encoder"]))
    dtype = next(iter(state.values())).dtype
    enc.to(dtype)
    enc.load_state_dict(state)
    return enc
