"""Command-line entry point: ``train``, ``decode``, ``check``, ``synth``, ``align-dump``.

Every command reads an optional flat ``key = value`` config file, applies
command-line overrides on top and writes the resolved config next to its
outputs, so ``--config <out>/config.resolved`` replays a run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import AttnConfig
from .beam import BeamConfig, beam_decode, edit_distance, greedy_decode
from .checks import SUITES
from .data import SynthConfig, Vocab, load_utterances, read_manifest, synth_task, write_dataset
from .encoder import EncoderConfig
from .model import JointModel, load_params, save_params
from .numgrad import no_grad
from .train import MtlConfig, train

log = logging.getLogger("jointctc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # data
    train_manifest: str = "data/train.tsv"
    valid_manifest: str = "data/valid.tsv"
    vocab: str = "data/vocab.txt"
    probe_id: str = ""
    out: str = "run"
    seed: int = 0
    # encoder
    num_layers: int = 2
    cells_per_dir: int = 32
    proj_dim: int = 32
    subsample_layers: str = "2"
    # attention
    mechanism: str = "location"
    gamma: float = 2.0
    num_conv_filters: int = 4
    conv_width: int = 11
    attn_dim: int = 32
    decoder_cells: int = 32
    embed_dim: int = 16
    # training
    mtl_lambda: float = 0.2
    epochs: int = 20
    clip_threshold: float = 100.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-7
    skip_infeasible: bool = True
    # decoding
    decoder: str = "beam"
    beam_size: int = 20
    length_penalty: float = 0.0
    max_output_len: int = 0
    # synthetic data
    synth_vocab_size: int = 8
    synth_num_train: int = 500
    synth_num_valid: int = 50
    synth_min_labels: int = 5
    synth_max_labels: int = 15
    synth_min_frames: int = 3
    synth_max_frames: int = 8
    synth_noise_sigma: float = 0.3
    synth_feat_dim: int = 0

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        sub = frozenset(int(s) for s in self.subsample_layers.replace(",", " ").split())
        return EncoderConfig(input_dim, self.num_layers, self.cells_per_dir, self.proj_dim or None, sub)

    def attn_config(self) -> AttnConfig:
        return AttnConfig(
            self.mechanism, self.gamma, self.num_conv_filters, self.conv_width,
            self.attn_dim, self.decoder_cells, self.embed_dim or None,
        )

    def mtl_config(self) -> MtlConfig:
        return MtlConfig(
            self.mtl_lambda, self.epochs, self.clip_threshold, self.adadelta_rho,
            self.adadelta_eps, self.seed, self.skip_infeasible,
        )

    def beam_config(self) -> BeamConfig:
        return BeamConfig(self.beam_size, self.length_penalty, self.max_output_len or None)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            self.synth_vocab_size, self.synth_num_train, self.synth_num_valid,
            (self.synth_min_labels, self.synth_max_labels), (self.synth_min_frames, self.synth_max_frames),
            self.synth_noise_sigma, self.synth_feat_dim or None, self.seed,
        )

    def dump(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value) -> str:
    return ("true" if value else "false") if isinstance(value, bool) else str(value)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(path: str | None, overrides: dict[str, object]) -> RunConfig:
    raw: dict[str, object] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {k: (_coerce(k, kinds[k], v) if isinstance(v, str) else v) for k, v in raw.items()}
    return RunConfig(**values)


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.dump(), encoding="utf-8")


def _manifest(path: str):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"manifest not found: {p}")
    return read_manifest(p)


def cmd_train(cfg: RunConfig) -> int:
    vocab_path = Path(cfg.vocab)
    if not vocab_path.is_file():
        raise ConfigError(f"vocabulary file not found: {vocab_path}")
    vocab = Vocab.load(vocab_path)
    train_utts = load_utterances(_manifest(cfg.train_manifest), vocab)
    valid_utts = load_utterances(_manifest(cfg.valid_manifest), vocab) if cfg.valid_manifest else []
    if not train_utts:
        raise ConfigError(f"training manifest {cfg.train_manifest} is empty")
    probe = None
    if cfg.probe_id:
        pool = {u.id: u for u in list(valid_utts) + list(train_utts)}
        if cfg.probe_id not in pool:
            raise ConfigError(f"probe utterance {cfg.probe_id!r} not found")
        probe = pool[cfg.probe_id]
    out = Path(cfg.out)
    _write_resolved(cfg, out)
    model = JointModel(cfg.encoder_config(train_utts[0].features.shape[1]), cfg.attn_config(), len(vocab), cfg.seed)
    history, model = train(model, train_utts, valid_utts, cfg.mtl_config(), probe=probe, out_dir=out)
    save_params(model, out / "params.npz", vocab.symbols)
    last = history.records[-1] if history.records else None
    if last is not None:
        print(f"trained {len(history)} epochs: loss {last.total_loss:.4f} val_acc {last.val_acc:.4f}")
    print(f"wrote {out / 'params.npz'}")
    return EXIT_OK


def _load_model(cfg: RunConfig, params_path: str | None) -> tuple[JointModel, Vocab]:
    if not params_path:
        raise ConfigError("--params is required")
    p = Path(params_path)
    if not p.is_file():
        raise ConfigError(f"parameter file not found: {p}")
    model, symbols = load_params(p)
    vocab = Vocab(tuple(symbols))
    cfg_vocab = Path(cfg.vocab)
    if cfg_vocab.is_file() and Vocab.load(cfg_vocab).symbols != vocab.symbols:
        raise ConfigError(f"vocabulary in {cfg_vocab} does not match the one stored in {p}")
    return model, vocab


def cmd_decode(cfg: RunConfig, params_path: str | None, manifest_path: str | None) -> int:
    model, vocab = _load_model(cfg, params_path)
    utts = load_utterances(_manifest(manifest_path or cfg.valid_manifest), vocab)
    out = Path(cfg.out)
    _write_resolved(cfg, out)
    beam_cfg = cfg.beam_config()
    errors = total = 0
    lines = []
    with no_grad():
        for u in utts:
            if cfg.decoder == "greedy-ctc":
                hyp = model.greedy_ctc(u.features)
            elif cfg.decoder == "greedy":
                hyp = greedy_decode(model.decoder, model.encode(u.features), beam_cfg.max_output_len).tokens()
            elif cfg.decoder == "beam":
                hyp = beam_decode(model.decoder, model.encode(u.features), beam_cfg)[0].tokens()
            else:
                raise ConfigError(f"unknown decoder {cfg.decoder!r}")
            errors += edit_distance(hyp, u.labels)
            total += len(u.labels)
            lines.append(f"{u.id}\t{vocab.decode(hyp)}\n")
    cer = errors / max(total, 1)
    (out / "hyps.txt").write_text("".join(lines), encoding="utf-8")
    summary = f"utterances {len(utts)}\nerrors {errors}\nreference_length {total}\ncer {cer:.6f}\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(f"CER {cer:.4f} ({errors}/{total}) over {len(utts)} utterances")
    return EXIT_OK


def cmd_check(cfg: RunConfig, only: str | None) -> int:
    names = [only] if only else list(SUITES)
    ok = True
    for name in names:
        for res in SUITES[name](cfg.seed):
            print(res.line())
            ok &= res.passed
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        paths = write_dataset(synth_task(cfg.synth_config()), out)
    except OSError as exc:
        raise ConfigError(f"cannot write dataset to {out}: {exc}") from None
    _write_resolved(cfg, out)
    print(f"wrote {cfg.synth_num_train} train / {cfg.synth_num_valid} valid utterances to {out}")
    for key, p in paths.items():
        print(f"  {key}: {p}")
    return EXIT_OK


def cmd_align_dump(cfg: RunConfig, params_path: str | None, manifest_path: str | None, utt_id: str | None) -> int:
    """Teacher-forced alignment matrix of each selected utterance as CSV."""
    model, vocab = _load_model(cfg, params_path)
    utts = load_utterances(_manifest(manifest_path or cfg.valid_manifest), vocab)
    if utt_id:
        utts = [u for u in utts if u.id == utt_id]
        if not utts:
            raise ConfigError(f"utterance {utt_id!r} not in manifest")
    out = Path(cfg.out)
    _write_resolved(cfg, out)
    with no_grad():
        for u in utts:
            _, trace = model.attention_loss(model.encode(u.features), u.labels)
            np.savetxt(out / f"align_{u.id}.csv", trace.alignments, delimiter=",", fmt="%.10g")
    print(f"wrote {len(utts)} alignment files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="jointctc", description="Joint CTC-attention training, decoding and self-checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a joint model")
    p.add_argument("--lambda", dest="mtl_lambda", type=float, help="CTC weight in [0, 1]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--manifest", dest="train_manifest", help="training manifest")

    helps = {"decode": "transcribe a manifest", "align-dump": "export teacher-forced attention alignments"}
    for name in ("decode", "align-dump"):
        p = sub.add_parser(name, parents=[common], help=helps[name])
        p.add_argument("--params", help="trained parameters (.npz)")
        p.add_argument("--manifest", help="utterances to process")
        if name == "decode":
            p.add_argument("--decoder", choices=("beam", "greedy", "greedy-ctc"))
            p.add_argument("--beam-size", dest="beam_size", type=int)
            p.add_argument("--length-penalty", dest="length_penalty", type=float)
        else:
            p.add_argument("--id", dest="utt_id", help="only this utterance")

    p = sub.add_parser("check", parents=[common], help="oracle and gradient self-checks")
    p.add_argument("--only", choices=sorted(SUITES))

    sub.add_parser("synth", parents=[common], help="write the synthetic dataset")
    return parser


_OVERRIDE_KEYS = ("seed", "out", "mtl_lambda", "epochs", "train_manifest", "decoder", "beam_size", "length_penalty")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides: dict[str, object] = {k: getattr(args, k) for k in _OVERRIDE_KEYS if hasattr(args, k)}
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            overrides.update(parse_config_text(f"{key} = {value}", "--set"))
        cfg = resolve_config(args.config, overrides)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "decode":
            return cmd_decode(cfg, args.params, args.manifest)
        if args.command == "check":
            return cmd_check(cfg, args.only)
        if args.command == "synth":
            return cmd_synth(cfg)
        return cmd_align_dump(cfg, args.params, args.manifest, args.utt_id)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
