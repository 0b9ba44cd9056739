import functools
import itertools

import numpy as np
import pytest

from jointctc.attention import AttentionDecoder, AttnConfig, decoder_step, initial_step_inputs
from jointctc.beam import BeamConfig, Hypothesis, adjusted_score, beam_decode, edit_distance, greedy_decode
from jointctc.encoder import EncoderOutput
from jointctc.numgrad import Tensor, _log_softmax_rows, no_grad

CFG = AttnConfig(num_conv_filters=2, conv_width=3, attn_dim=4, decoder_cells=4, embed_dim=3)


def toy(seed, K=4, L=5):
    rng = np.random.default_rng(seed)
    dec = AttentionDecoder(CFG, 3, K, seed)
    for p in dec.params():
        p.data[...] = rng.uniform(-1.5, 1.5, p.data.shape)
    return dec, EncoderOutput(Tensor(rng.normal(size=(L, 3))))


def sequence_score(dec, h, labels):
    with no_grad():
        s, a, c, y = initial_step_inputs(dec, h)
        total = 0.0
        for k in labels:
            st = decoder_step(CFG, dec, s, a, h, y, c)
            total += float(_log_softmax_rows(st.logits.data)[0, k])
            s, a, c, y = st.state, st.alignment, st.context, k
    return total


def exhaustive(dec, h, max_len, penalty):
    """Best adjusted score over every eos-terminated sequence within max_len steps."""
    best = -np.inf
    base = range(dec.num_labels - 1)
    for n in range(max_len):
        for seq in itertools.product(base, repeat=n):
            score = sequence_score(dec, h, seq + (dec.eos,))
            best = max(best, adjusted_score(score, n, penalty))
    return best


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("penalty", [0.0, 0.5, -0.3])
def test_full_beam_equals_exhaustive(seed, penalty):
    dec, h = toy(seed, K=int(3 + seed % 3))
    K = dec.num_labels
    hyps = beam_decode(dec, h, BeamConfig(beam_size=K**3, length_penalty=penalty, max_output_len=3))
    best = hyps[0]
    assert best.finished
    ref = exhaustive(dec, h, 3, penalty)
    assert adjusted_score(best.log_score, best.length, penalty) == pytest.approx(ref, abs=1e-12)
    assert best.log_score == pytest.approx(sequence_score(dec, h, best.labels), abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_beam_one_is_greedy(seed):
    dec, h = toy(seed)
    g = greedy_decode(dec, h)
    b = beam_decode(dec, h, BeamConfig(beam_size=1))[0]
    assert b.labels == g.labels
    assert b.log_score == pytest.approx(g.log_score, abs=1e-12)
    assert b.truncated == g.truncated


def test_larger_beam_never_worse():
    for seed in range(10):
        dec, h = toy(seed, K=5, L=6)
        prev = -np.inf
        for width in (1, 2, 4, 8, 16):
            best = beam_decode(dec, h, BeamConfig(beam_size=width, length_penalty=0.1))[0]
            score = adjusted_score(best.log_score, best.length, 0.1) if best.finished else -np.inf
            assert score >= prev - 1e-12
            prev = max(prev, score)


def test_ranked_and_finished():
    dec, h = toy(2)
    hyps = beam_decode(dec, h, BeamConfig(beam_size=5, length_penalty=0.3))
    scores = [adjusted_score(x.log_score, x.length, 0.3) for x in hyps]
    assert scores == sorted(scores, reverse=True)
    for x in hyps:
        assert x.finished == (x.labels[-1] == dec.eos)
        assert x.tokens() == x.labels[:-1]


def test_truncation_flag():
    dec, h = toy(0)
    dec.generate.bias.data[0, dec.eos] = -1e3  # eos never wins
    out = beam_decode(dec, h, BeamConfig(beam_size=3, max_output_len=2))
    assert len(out) == 1 and out[0].truncated and not out[0].finished
    assert len(out[0].labels) == 2


def test_deterministic():
    dec, h = toy(4)
    a = beam_decode(dec, h, BeamConfig(beam_size=4))
    b = beam_decode(dec, h, BeamConfig(beam_size=4))
    assert [x.labels for x in a] == [x.labels for x in b]


def test_tie_break_lower_label():
    dec, h = toy(1)
    dec.generate.weight.data[...] = 0
    dec.generate.bias.data[...] = 0
    out = beam_decode(dec, h, BeamConfig(beam_size=1, max_output_len=3))
    assert out[0].labels == (0, 0, 0) and out[0].truncated


def test_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    assert BeamConfig().beam_size == 20


def test_hypothesis_length():
    assert Hypothesis((1, 2, 3), 0.0, finished=True).length == 2
    assert Hypothesis((1, 2), 0.0).length == 2


@functools.lru_cache(maxsize=None)
def recursive_distance(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        recursive_distance(a[1:], b) + 1,
        recursive_distance(a, b[1:]) + 1,
        recursive_distance(a[1:], b[1:]) + (a[0] != b[0]),
    )


def test_edit_distance_examples():
    assert edit_distance("cat", "cat") == 0
    assert edit_distance("cat", "cut") == 1
    assert edit_distance("", "abc") == 3
    assert edit_distance((1, 2, 3), ()) == 3


def test_edit_distance_random(rng):
    for _ in range(200):
        a = tuple(rng.integers(0, 3, size=rng.integers(0, 8)))
        b = tuple(rng.integers(0, 3, size=rng.integers(0, 8)))
        assert edit_distance(a, b) == recursive_distance(a, b) == edit_distance(b, a)
