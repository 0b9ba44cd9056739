import hashlib

import numpy as np
import pytest

from jointctc import data
from jointctc.data import SynthConfig, Vocab, encode_transcript, synth_task


def test_paper_vocab():
    v = Vocab.paper()
    assert len(v) == 33 and v.n_base == 31
    assert v.symbols[v.sos_eos] == data.SOS_EOS and v.blank == 32
    assert v.space is not None and v.noise is not None


def test_vocab_validation():
    with pytest.raises(ValueError):
        Vocab(("A", "B", data.BLANK, data.SOS_EOS))
    with pytest.raises(ValueError):
        Vocab(("A", "A", data.SOS_EOS, data.BLANK))


def test_encode_examples():
    v = Vocab.paper()
    assert encode_transcript("CAT", v) == (2, 0, 19)
    assert encode_transcript("A B", v) == (0, v.space, 1)
    assert encode_transcript("cat", v) == encode_transcript("CAT", v)
    assert encode_transcript("A<noise>B", v) == (0, v.noise, 1)


def test_encode_oov():
    with pytest.raises(data.TranscriptError, match="position 2"):
        encode_transcript("ABé", Vocab.paper())
    with pytest.raises(data.TranscriptError):
        encode_transcript("<sos/eos>", Vocab.paper())


def test_encode_decode_bijection(rng):
    v = Vocab.paper()
    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ'.- "
    for _ in range(50):
        text = "".join(rng.choice(list(alphabet), size=rng.integers(0, 20)))
        assert v.decode(v.encode(text)) == text


def test_vocab_file_round_trip(tmp_path):
    v = Vocab.synthetic(8)
    v.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt") == v
    assert len(v) == 11


def test_feature_round_trip(tmp_path, rng):
    x = rng.normal(size=(17, 120))
    data.save_features(tmp_path / "x.feat", x)
    y = data.load_features(tmp_path / "x.feat")
    assert y.shape == (17, 120) and np.array_equal(x, y)
    assert x.tobytes() == y.tobytes()


def test_feature_truncated(tmp_path, rng):
    p = tmp_path / "x.feat"
    data.save_features(p, rng.normal(size=(4, 3)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(data.FeatureFormatError, match="expected 112 bytes.*got 107"):
        data.load_features(p)


def test_feature_bad_magic(tmp_path):
    p = tmp_path / "x.feat"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(data.FeatureFormatError, match="byte 0"):
        data.load_features(p)
    p.write_bytes(b"FE")
    with pytest.raises(data.FeatureFormatError):
        data.load_features(p)


def test_manifest_round_trip_and_duplicates(tmp_path):
    entries = [data.ManifestEntry("u1", "a.feat", "AB"), data.ManifestEntry("u2", "b.feat", "C")]
    data.write_manifest(tmp_path / "train.tsv", entries)
    m = data.read_manifest(tmp_path / "train.tsv")
    assert m.entries == entries and m.split == "train"
    assert m.resolve(entries[0]) == tmp_path / "a.feat"
    with pytest.raises(ValueError, match="duplicate"):
        data.Manifest(entries + entries[:1])
    (tmp_path / "bad.tsv").write_text("u1\tonly-two\n")
    with pytest.raises(ValueError, match="3 tab-separated"):
        data.read_manifest(tmp_path / "bad.tsv")


def test_utterance_validation():
    with pytest.raises(ValueError):
        data.Utterance("x", np.zeros((0, 3)), ())
    with pytest.raises(ValueError):
        data.Utterance("x", np.array([[np.nan]]), ())


def test_synth_defaults():
    cfg = SynthConfig()
    assert (cfg.vocab_size, cfg.num_train, cfg.num_valid) == (8, 500, 50)
    assert cfg.label_range == (5, 15) and cfg.frames_per_label == (3, 8) and cfg.noise_sigma == 0.3


def test_synth_structure():
    ds = synth_task(SynthConfig(num_train=40, num_valid=5, seed=3))
    assert len(ds.train) == 40 and len(ds.valid) == 5
    for u in ds.train:
        U = len(u.labels)
        assert 5 <= U <= 15
        assert u.features.shape[1] == 8
        runs = np.bincount(u.alignment, minlength=U)
        assert np.all((runs >= 3) & (runs <= 8))
        assert np.all(np.diff(u.alignment) >= 0)
        assert max(u.labels) < 8


def test_synth_noiseless_frame_classifier():
    cfg = SynthConfig(num_train=20, num_valid=0, frames_per_label=(1, 1), noise_sigma=0.0, seed=1)
    for u in synth_task(cfg).train:
        assert tuple(int(k) for k in np.argmax(u.features, axis=1)) == u.labels


def digest(ds):
    h = hashlib.sha256()
    for u in ds.train + ds.valid:
        h.update(u.features.tobytes())
        h.update(bytes(u.labels))
    return h.hexdigest()


def test_synth_deterministic():
    cfg = SynthConfig(num_train=30, num_valid=5, seed=9)
    assert digest(synth_task(cfg)) == digest(synth_task(cfg))
    assert digest(synth_task(cfg)) != digest(synth_task(SynthConfig(num_train=30, num_valid=5, seed=10)))


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(vocab_size=1)
    with pytest.raises(ValueError):
        SynthConfig(frames_per_label=(0, 2))
    with pytest.raises(ValueError):
        SynthConfig(feat_dim=4)


def test_write_and_load_dataset(tmp_path):
    ds = synth_task(SynthConfig(num_train=10, num_valid=3, seed=2))
    paths = data.write_dataset(ds, tmp_path)
    assert set(paths) == {"vocab", "train", "valid"}
    vocab, train, valid = data.load_dataset_dir(tmp_path)
    assert vocab == ds.vocab
    assert [u.labels for u in train] == [u.labels for u in ds.train]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(train, ds.train))
    assert len(valid) == 3


def test_normalize_features(rng):
    utts = [data.Utterance(f"u{i}", rng.normal(3.0, 2.0, size=(20, 4)), ()) for i in range(3)]
    mean, std = data.normalize_features(utts)
    allf = np.concatenate([u.features for u in utts])
    assert np.allclose(allf.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(allf.std(axis=0), 1, atol=1e-6)
