"""Shared pyramidal BLSTM encoder.

Each layer is a BLSTM followed by an affine projection.  Layers listed in
``subsample_layers`` (1-based) first keep every second frame of the layer
below, starting at frame 0, so an odd length ``n`` becomes ``ceil(n / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .nn import Linear, Lstm, blstm_layer, make_rng
from .numgrad import DimensionError, Param, Tensor, take_rows

__all__ = ["EncoderConfig", "EncoderOutput", "Encoder", "InputTooShortError", "encode", "output_length"]


class InputTooShortError(ValueError):
    """Too few frames survive temporal subsampling."""


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_layers: int = 4
    cells_per_dir: int = 320
    proj_dim: int | None = None
    subsample_layers: frozenset[int] = field(default_factory=lambda: frozenset({3, 4}))

    def __post_init__(self):
        object.__setattr__(self, "subsample_layers", frozenset(self.subsample_layers))
        if self.num_layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.input_dim < 1 or self.cells_per_dir < 1:
            raise ValueError("encoder dims must be positive")
        if not self.subsample_layers <= set(range(1, self.num_layers + 1)):
            raise ValueError(f"subsample_layers {sorted(self.subsample_layers)} outside 1..{self.num_layers}")
        if self.proj_dim is None:
            object.__setattr__(self, "proj_dim", self.cells_per_dir)

    @property
    def min_frames(self) -> int:
        return 2 ** len(self.subsample_layers)


@dataclass
class EncoderOutput:
    """The L x proj_dim representation; one row per encoder frame."""

    h: Tensor

    def __len__(self) -> int:
        return self.h.rows

    @property
    def dim(self) -> int:
        return self.h.cols


def output_length(config: EncoderConfig, num_frames: int) -> int:
    n = num_frames
    for layer in range(1, config.num_layers + 1):
        if layer in config.subsample_layers:
            n = (n + 1) // 2
    return n


class Encoder:
    def __init__(self, config: EncoderConfig, rng=0):
        rng = make_rng(rng)
        self.config = config
        self.layers: list[tuple[Lstm, Lstm, Linear]] = []
        width = config.input_dim
        for i in range(1, config.num_layers + 1):
            fwd = Lstm(width, config.cells_per_dir, rng, name=f"enc{i}.fwd")
            bwd = Lstm(width, config.cells_per_dir, rng, name=f"enc{i}.bwd")
            proj = Linear(2 * config.cells_per_dir, config.proj_dim, rng, name=f"enc{i}.proj")
            self.layers.append((fwd, bwd, proj))
            width = config.proj_dim

    def params(self) -> list[Param]:
        out: list[Param] = []
        for fwd, bwd, proj in self.layers:
            out += fwd.params() + bwd.params() + proj.params()
        return out

    def __call__(self, x: Tensor) -> EncoderOutput:
        return encode(self.config, self, x)


def encode(config: EncoderConfig, params: Encoder, x: Tensor) -> EncoderOutput:
    """Map T x D input frames to the encoder representation h."""
    if x.cols != config.input_dim:
        raise DimensionError(f"encoder input width {x.cols}, expected {config.input_dim}")
    if x.rows < config.min_frames:
        raise InputTooShortError(
            f"{x.rows} frames; {len(config.subsample_layers)} subsampling layers need at least {config.min_frames}"
        )
    out = x
    for i, (fwd, bwd, proj) in enumerate(params.layers, start=1):
        if i in config.subsample_layers:
            out = take_rows(out, slice(0, None, 2))
        out = proj(blstm_layer(fwd, bwd, out))
    return EncoderOutput(out)
