import numpy as np
import pytest

from jointctc.encoder import Encoder, EncoderConfig, InputTooShortError, output_length
from jointctc.numgrad import DimensionError, Param, Tensor, check_gradients, mul, sum_all


def paper_like(input_dim=3):
    # paper layout (4 layers, subsampling in the top two) at toy width
    return EncoderConfig(input_dim=input_dim, num_layers=4, cells_per_dir=3)


@pytest.mark.parametrize("T,L", [(16, 4), (4, 1), (10, 3), (5, 2), (7, 2)])
def test_output_length(T, L, rng):
    cfg = paper_like()
    assert output_length(cfg, T) == L
    h = Encoder(cfg, 0)(Tensor(rng.normal(size=(T, 3))))
    assert len(h) == L and h.dim == cfg.proj_dim
    assert L < T


def test_defaults():
    cfg = EncoderConfig(input_dim=120)
    assert cfg.num_layers == 4 and cfg.cells_per_dir == 320 and cfg.proj_dim == 320
    assert cfg.subsample_layers == frozenset({3, 4})


def test_too_short(rng):
    with pytest.raises(InputTooShortError):
        Encoder(paper_like(), 0)(Tensor(rng.normal(size=(3, 3))))


def test_dim_mismatch(rng):
    with pytest.raises(DimensionError):
        Encoder(paper_like(), 0)(Tensor(rng.normal(size=(8, 4))))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(input_dim=3, num_layers=2, subsample_layers={3})
    with pytest.raises(ValueError):
        EncoderConfig(input_dim=3, num_layers=0)


def test_subsampling_keeps_even_frames(rng):
    cfg = EncoderConfig(input_dim=2, num_layers=2, cells_per_dir=3, subsample_layers={2})
    enc = Encoder(cfg, 1)
    x = rng.normal(size=(7, 2))
    full = enc(Tensor(x))
    assert len(full) == 4
    # changing an odd input frame still reaches every kept frame through layer 1
    xp = x.copy()
    xp[1] += 1.0
    assert np.all(np.abs(enc(Tensor(xp)).h.data - full.h.data).max(axis=1) > 0)


def test_deterministic(rng):
    x = Tensor(rng.normal(size=(9, 3)))
    a = Encoder(paper_like(), 7)(x).h.data
    b = Encoder(paper_like(), 7)(x).h.data
    assert np.array_equal(a, b)


def test_encoder_gradients(rng):
    cfg = EncoderConfig(input_dim=2, num_layers=2, cells_per_dir=2, proj_dim=2, subsample_layers={2})
    enc = Encoder(cfg, 3)
    x = Tensor(rng.normal(size=(5, 2)))
    w = Tensor(rng.normal(size=(3, 2)))
    assert check_gradients(lambda: sum_all(mul(enc(x).h, w)), enc.params()).passed
