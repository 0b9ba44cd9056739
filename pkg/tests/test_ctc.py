import itertools
import math

import numpy as np
import pytest

from jointctc import ctc
from jointctc.checks import random_ctc_instance
from jointctc.numgrad import Param, check_gradients

BLANK = 3  # three base labels a, b, c = 0, 1, 2; blank last


def test_augment_examples():
    assert ctc.augment_with_blanks((2, 0, 1), BLANK).tolist() == [3, 2, 3, 0, 3, 1, 3]
    assert ctc.augment_with_blanks((), BLANK).tolist() == [3]
    assert ctc.augment_with_blanks((0, 0), BLANK).tolist() == [3, 0, 3, 0, 3]


def test_augment_rejects_blank():
    with pytest.raises(ValueError):
        ctc.augment_with_blanks((0, BLANK), BLANK)


def test_uniform_two_frames():
    q = np.full((2, 2), 0.5)
    assert ctc.ctc_loss(q, (0,)) == pytest.approx(-math.log(0.75), abs=1e-15)
    assert ctc.ctc_brute_force(q, (0,)) == pytest.approx(0.75, abs=1e-15)


def test_impossible_alignment():
    q = np.full((1, 3), 1 / 3)
    with pytest.raises(ctc.ImpossibleAlignment) as err:
        ctc.ctc_loss(q, (0, 1))
    assert err.value.loss == math.inf
    # a repeat needs a separating blank
    with pytest.raises(ctc.ImpossibleAlignment):
        ctc.ctc_loss(np.full((2, 2), 0.5), (0, 0))
    assert ctc.ctc_loss(np.full((3, 2), 0.5), (0, 0)) == pytest.approx(-math.log(1 / 8))


def test_min_frames():
    assert ctc.min_frames(()) == 0
    assert ctc.min_frames((0, 1, 2)) == 3
    assert ctc.min_frames((0, 0, 1, 1)) == 6


def test_deterministic_path_loss_zero():
    path = [0, BLANK, 1, 1]
    q = np.zeros((4, 4))
    q[np.arange(4), path] = 1.0
    assert ctc.ctc_loss(q, (0, 1)) == 0.0


def test_matches_brute_force_random(rng):
    for _ in range(200):
        q, y = random_ctc_instance(rng)
        ref = -math.log(ctc.ctc_brute_force(q, y))
        assert abs(ctc.ctc_loss(q, y) - ref) <= 1e-9 * abs(ref)


def test_brute_force_guard():
    with pytest.raises(ValueError):
        ctc.ctc_brute_force(np.full((13, 3), 1 / 3), (0,))


def test_brute_force_target_longer_than_input():
    assert ctc.ctc_brute_force(np.full((2, 3), 1 / 3), (0, 1, 0)) == 0.0


def naive_collapse_prob(q, y):
    """Independent path sum written with itertools."""
    T, C = q.shape
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        merged = [k for i, k in enumerate(path) if i == 0 or k != path[i - 1]]
        if tuple(k for k in merged if k != C - 1) == tuple(y):
            total += np.prod(q[np.arange(T), path])
    return total


def test_brute_force_matches_itertools(rng):
    for _ in range(20):
        q, y = random_ctc_instance(rng, max_T=5, max_K=2)
        assert ctc.ctc_brute_force(q, y) == pytest.approx(naive_collapse_prob(q, y), rel=1e-12)


def test_forward_backward_identity(rng):
    for _ in range(50):
        q, y = random_ctc_instance(rng, max_T=12, max_K=4)
        lat = ctc.ctc_forward_backward(q, ctc.augment_with_blanks(y, q.shape[1] - 1))
        totals = lat.frame_totals()
        assert np.ptp(totals) <= 1e-9
        assert abs(lat.log_likelihood - lat.log_likelihood_backward) <= 1e-9
        assert abs(totals[0] + ctc.ctc_loss(q, y)) <= 1e-9


def test_lattice_boundaries(rng):
    q = rng.dirichlet(np.ones(4), size=6)
    lat = ctc.ctc_forward_backward(q, ctc.augment_with_blanks((0, 1, 2), BLANK))
    assert np.all(np.isneginf(lat.alpha[0, 2:]))
    assert np.all(np.isneginf(lat.beta[-1, :-2]))


def test_single_cell_lattice(rng):
    q = rng.dirichlet(np.ones(3), size=1)
    lat = ctc.ctc_forward_backward(q, [2])
    assert lat.alpha[0, 0] == math.log(q[0, 2])


def test_forward_backward_rejects_unaugmented():
    with pytest.raises(ValueError):
        ctc.ctc_forward_backward(np.full((3, 3), 1 / 3), [0, 1])


def test_loss_rejects_unnormalized():
    with pytest.raises(ValueError):
        ctc.ctc_loss(np.full((3, 3), 0.5), (0,))


def test_grad_matches_fd(rng):
    for _ in range(5):
        logits = Param(rng.normal(size=(4, 4)), name="logits")
        y = tuple(int(k) for k in rng.integers(0, 3, size=2))
        rep = check_gradients(lambda: ctc.ctc_loss_from_logits(logits, y), [logits])
        assert rep.passed, str(rep)
        q = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
        g = ctc.ctc_grad(q, y)
        assert np.allclose(g, logits.grad, atol=1e-12)
        assert np.all(np.abs(g.sum(axis=1)) <= 1e-10)


def test_grad_zero_at_deterministic_optimum():
    q = np.zeros((3, 3))
    q[np.arange(3), [0, 2, 1]] = 1.0
    assert np.all(np.abs(ctc.ctc_grad(q, (0, 1))) <= 1e-10)


def test_posteriors_rows_normalized(rng):
    q, y = random_ctc_instance(rng)
    post = ctc.ctc_posteriors(q, y)
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-12)


def test_trailing_certain_blank_keeps_probability(rng):
    for _ in range(20):
        q, y = random_ctc_instance(rng, max_T=6, max_K=2)
        extra = np.zeros((1, q.shape[1]))
        extra[0, -1] = 1.0
        longer = np.concatenate([q, extra])
        # paths of the short input ending in a label still finish by emitting blank
        p_short = ctc.ctc_brute_force(q, y)
        assert ctc.ctc_brute_force(longer, y) == pytest.approx(p_short, rel=1e-12)


@pytest.mark.parametrize(
    "path,expected", [((0, 0, BLANK, 1), (0, 1)), ((0, BLANK, 0), (0, 0)), ((BLANK, BLANK), ())]
)
def test_greedy_collapse(path, expected):
    q = np.full((len(path), 4), 0.1)
    q[np.arange(len(path)), path] = 0.7
    assert ctc.greedy_collapse_decode(q) == expected
