"""Shared encoder with a CTC head and an attention decoder."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import AttentionDecoder, AttnConfig, AttnTrace, attention_loss
from .ctc import ctc_loss_from_logits, greedy_collapse_decode
from .encoder import Encoder, EncoderConfig, EncoderOutput, output_length
from .nn import Linear, make_rng
from .numgrad import Param, Tensor, _softmax_rows, no_grad

__all__ = ["JointModel", "save_params", "load_params"]


class JointModel:
    """Encoder shared by a CTC output layer and an attention decoder.

    ``vocab_size`` is the full inventory (base symbols, sos/eos, blank).  Both
    heads have ``vocab_size - 1`` outputs: the CTC head's last column is the
    blank, the attention head's last index is sos/eos.
    """

    def __init__(self, enc_config: EncoderConfig, attn_config: AttnConfig, vocab_size: int, seed: int = 0):
        rng = make_rng(seed)
        self.enc_config = enc_config
        self.attn_config = attn_config
        self.vocab_size = vocab_size
        self.seed = seed
        self.encoder = Encoder(enc_config, rng)
        self.ctc_head = Linear(enc_config.proj_dim, vocab_size - 1, rng, name="ctc.out")
        self.decoder = AttentionDecoder(attn_config, enc_config.proj_dim, vocab_size - 1, rng)

    @property
    def n_base(self) -> int:
        return self.vocab_size - 2

    @property
    def eos(self) -> int:
        return self.decoder.eos

    def params(self) -> list[Param]:
        return self.encoder.params() + self.ctc_head.params() + self.decoder.params()

    def encode(self, features) -> EncoderOutput:
        x = features if isinstance(features, Tensor) else Tensor(features)
        return self.encoder(x)

    def encoder_length(self, num_frames: int) -> int:
        return output_length(self.enc_config, num_frames)

    def ctc_loss(self, h: EncoderOutput, labels: Sequence[int]) -> Tensor:
        return ctc_loss_from_logits(self.ctc_head(h.h), labels)

    def attention_loss(self, h: EncoderOutput, labels: Sequence[int]) -> tuple[Tensor, AttnTrace]:
        return attention_loss(self.attn_config, self.decoder, h, list(labels) + [self.eos])

    def ctc_posteriors(self, h: EncoderOutput) -> np.ndarray:
        with no_grad():
            return _softmax_rows(self.ctc_head(h.h).data)

    def greedy_ctc(self, features) -> tuple[int, ...]:
        with no_grad():
            return greedy_collapse_decode(self.ctc_posteriors(self.encode(features)))

    def describe(self) -> dict:
        enc = asdict(self.enc_config)
        enc["subsample_layers"] = sorted(enc["subsample_layers"])
        return {"encoder": enc, "attention": asdict(self.attn_config), "vocab_size": self.vocab_size}


def save_params(model: JointModel, path, vocab_symbols: Sequence[str] = ()) -> None:
    """Store parameters, architecture and vocabulary in one ``.npz``."""
    arrays = {p.name: p.data for p in model.params()}
    meta = model.describe()
    meta["vocab"] = list(vocab_symbols)
    np.savez(Path(path), __meta__=np.array(json.dumps(meta)), **arrays)


def load_params(path) -> tuple[JointModel, list[str]]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        enc = EncoderConfig(**{**meta["encoder"], "subsample_layers": frozenset(meta["encoder"]["subsample_layers"])})
        att = AttnConfig(**meta["attention"])
        model = JointModel(enc, att, meta["vocab_size"])
        for p in model.params():
            if p.name not in z:
                raise KeyError(f"parameter {p.name} missing from {path}")
            if z[p.name].shape != p.data.shape:
                raise ValueError(f"parameter {p.name}: stored shape {z[p.name].shape}, model expects {p.data.shape}")
            p.data[...] = z[p.name]
    return model, meta.get("vocab", [])
