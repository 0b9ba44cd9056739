"""Vocabulary, feature files, manifests and the synthetic alignment task.

Feature file layout (little-endian)::

    b"FEAT"  u32 version (=1)  u32 T  u32 D  T*D float64, row-major

A manifest is UTF-8 text with one ``id<TAB>path<TAB>transcript`` record per
line; relative paths resolve against the manifest's directory.  A
vocabulary file lists one symbol per line, the line number being its index.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SPACE",
    "NOISE",
    "SOS_EOS",
    "BLANK",
    "Vocab",
    "Utterance",
    "ManifestEntry",
    "Manifest",
    "FeatureFormatError",
    "TranscriptError",
    "save_features",
    "load_features",
    "read_manifest",
    "write_manifest",
    "load_utterances",
    "encode_transcript",
    "normalize_features",
    "SynthConfig",
    "SynthDataset",
    "synth_task",
    "write_dataset",
    "load_dataset_dir",
]

SPACE = "<space>"
NOISE = "<noise>"
SOS_EOS = "<sos/eos>"
BLANK = "<blank>"

_MAGIC = b"FEAT"
_HEADER = struct.Struct("<4sIII")
_VERSION = 1


class FeatureFormatError(ValueError):
    pass


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Ordered symbol inventory: base symbols, then sos/eos, then blank.

    Attention outputs cover indices ``[0, sos_eos]``; CTC outputs cover the
    base symbols plus the blank, which the CTC head places in column
    ``n_base``.
    """

    symbols: tuple[str, ...]

    def __post_init__(self):
        syms = tuple(self.symbols)
        object.__setattr__(self, "symbols", syms)
        if len(set(syms)) != len(syms):
            raise ValueError("vocabulary symbols must be unique")
        if len(syms) < 3 or syms[-1] != BLANK or syms[-2] != SOS_EOS:
            raise ValueError(f"vocabulary must end with {SOS_EOS}, {BLANK}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(syms)})

    @classmethod
    def paper(cls) -> "Vocab":
        """26 letters, apostrophe, period, dash, space, noise, sos/eos (32) plus blank."""
        letters = [chr(c) for c in range(ord("A"), ord("Z") + 1)]
        return cls(tuple(letters + ["'", ".", "-", SPACE, NOISE, SOS_EOS, BLANK]))

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        if not 2 <= size <= 26:
            raise ValueError("synthetic vocabulary size must be in [2, 26]")
        letters = [chr(ord("A") + i) for i in range(size)]
        return cls(tuple(letters + [NOISE, SOS_EOS, BLANK]))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def n_base(self) -> int:
        return len(self.symbols) - 2

    @property
    def sos_eos(self) -> int:
        return len(self.symbols) - 2

    @property
    def blank(self) -> int:
        return len(self.symbols) - 1

    @property
    def space(self) -> int | None:
        return self._index.get(SPACE)

    @property
    def noise(self) -> int | None:
        return self._index.get(NOISE)

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    def encode(self, text: str) -> tuple[int, ...]:
        return encode_transcript(text, self)

    def decode(self, labels: Iterable[int]) -> str:
        out = []
        for k in labels:
            sym = self.symbols[int(k)]
            out.append(" " if sym == SPACE else sym)
        return "".join(out)

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line != ""))


_TOKEN = re.compile(r"<[^<>]+>|.", re.DOTALL)


def encode_transcript(text: str, vocab: Vocab) -> tuple[int, ...]:
    """One label per character of the uppercased text; ``<name>`` tokens map to specials."""
    out = []
    for m in _TOKEN.finditer(text):
        tok = m.group(0)
        if tok == " ":
            sym = SPACE
        elif len(tok) > 1:
            sym = tok
        else:
            sym = tok.upper()
        if sym in (SOS_EOS, BLANK) or sym not in vocab._index:
            raise TranscriptError(f"character {tok!r} at position {m.start()} is not in the vocabulary")
        out.append(vocab._index[sym])
    return tuple(out)


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # T x D
    labels: tuple[int, ...]
    alignment: np.ndarray | None = None  # label position of each frame, when known

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"utterance {self.id}: features must be T x D with T >= 1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"utterance {self.id}: non-finite feature values")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


# -- feature files ---------------------------------------------------------------


def save_features(path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f8")
    if feats.ndim != 2:
        raise ValueError("features must be a T x D matrix")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def load_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: {len(raw)} bytes, header needs {_HEADER.size}")
    magic, version, T, D = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != _VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version} at byte 4")
    expected = _HEADER.size + 8 * T * D
    if len(raw) != expected:
        raise FeatureFormatError(
            f"{path}: expected {expected} bytes for {T}x{D} frames, got {len(raw)} "
            f"(data starts at byte {_HEADER.size})"
        )
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(T, D).astype(np.float64)


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    transcript: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in ("train", "valid", "eval"):
            raise ValueError(f"unknown split {self.split!r}")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate utterance id {dup!r} in {self.split} manifest")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def _split_from_name(path: Path) -> str:
    stem = path.stem.lower()
    for split in ("train", "valid", "eval"):
        if split in stem:
            return split
    return "train"


def read_manifest(path, split: str | None = None) -> Manifest:
    path = Path(path)
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected 3 tab-separated fields, got {len(parts)}")
        entries.append(ManifestEntry(*parts))
    return Manifest(entries, split or _split_from_name(path), path.parent)


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    Path(path).write_text("".join(f"{e.id}\t{e.path}\t{e.transcript}\n" for e in entries), encoding="utf-8")


def load_utterances(manifest: Manifest, vocab: Vocab) -> list[Utterance]:
    return [
        Utterance(e.id, load_features(manifest.resolve(e)), encode_transcript(e.transcript, vocab))
        for e in manifest.entries
    ]


def normalize_features(utts: Sequence[Utterance], stats: tuple[np.ndarray, np.ndarray] | None = None):
    """Per-dimension mean/variance normalisation in place; returns the stats used."""
    if stats is None:
        allf = np.concatenate([u.features for u in utts], axis=0)
        stats = (allf.mean(axis=0), allf.std(axis=0) + 1e-8)
    mean, std = stats
    for u in utts:
        u.features = (u.features - mean) / std
    return stats


# -- synthetic task ------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 8
    num_train: int = 500
    num_valid: int = 50
    label_range: tuple[int, int] = (5, 15)
    frames_per_label: tuple[int, int] = (3, 8)
    noise_sigma: float = 0.3
    feat_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("synthetic task needs at least 2 symbols")
        if self.frames_per_label[0] < 1 or self.frames_per_label[1] < self.frames_per_label[0]:
            raise ValueError(f"bad frames_per_label range {self.frames_per_label}")
        if self.label_range[0] < 1 or self.label_range[1] < self.label_range[0]:
            raise ValueError(f"bad label_range {self.label_range}")
        if self.feat_dim is not None and self.feat_dim < self.vocab_size:
            raise ValueError("feat_dim must be at least vocab_size")


@dataclass
class SynthDataset:
    vocab: Vocab
    train: list[Utterance]
    valid: list[Utterance]
    config: SynthConfig


def _synth_utterance(uid: str, cfg: SynthConfig, dim: int, rng: np.random.Generator) -> Utterance:
    U = int(rng.integers(cfg.label_range[0], cfg.label_range[1] + 1))
    labels = [int(rng.integers(cfg.vocab_size))]
    while len(labels) < U:
        # adjacent repeats would produce indistinguishable runs of frames
        k = int(rng.integers(cfg.vocab_size - 1))
        labels.append(k if k < labels[-1] else k + 1)
    reps = rng.integers(cfg.frames_per_label[0], cfg.frames_per_label[1] + 1, size=U)
    alignment = np.repeat(np.arange(U), reps)
    frames = np.zeros((alignment.size, dim))
    frames[np.arange(alignment.size), np.asarray(labels)[alignment]] = 1.0
    if cfg.noise_sigma > 0:
        frames += rng.normal(0.0, cfg.noise_sigma, size=frames.shape)
    return Utterance(uid, frames, tuple(labels), alignment)


def synth_task(config: SynthConfig = SynthConfig()) -> SynthDataset:
    """Random label strings rendered as noisy one-hot frame runs.

    Each label holds for a uniformly drawn number of frames, so the true
    alignment is monotone and stored on every utterance.
    """
    rng = np.random.default_rng(config.seed)
    dim = config.feat_dim or config.vocab_size
    train = [_synth_utterance(f"train{i:04d}", config, dim, rng) for i in range(config.num_train)]
    valid = [_synth_utterance(f"valid{i:04d}", config, dim, rng) for i in range(config.num_valid)]
    return SynthDataset(Vocab.synthetic(config.vocab_size), train, valid, config)


def write_dataset(dataset: SynthDataset, out_dir) -> dict[str, Path]:
    """Materialise features, ``train.tsv``/``valid.tsv`` manifests and ``vocab.txt``."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    paths = {"vocab": out / "vocab.txt"}
    dataset.vocab.save(paths["vocab"])
    for split, utts in (("train", dataset.train), ("valid", dataset.valid)):
        entries = []
        for u in utts:
            rel = os.path.join("feats", f"{u.id}.feat")
            save_features(out / rel, u.features)
            entries.append(ManifestEntry(u.id, rel, dataset.vocab.decode(u.labels)))
        paths[split] = out / f"{split}.tsv"
        write_manifest(paths[split], entries)
    return paths


def load_dataset_dir(data_dir) -> tuple[Vocab, list[Utterance], list[Utterance]]:
    d = Path(data_dir)
    vocab = Vocab.load(d / "vocab.txt")
    train = load_utterances(read_manifest(d / "train.tsv", "train"), vocab)
    valid = load_utterances(read_manifest(d / "valid.tsv", "valid"), vocab)
    return vocab, train, valid
