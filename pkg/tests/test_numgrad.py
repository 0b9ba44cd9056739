import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointctc import numgrad as ng
from jointctc.ctc import ctc_loss_from_logits
from jointctc.numgrad import Param, Tape, Tensor, check_gradients, log_sum_exp


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ng.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)


def test_matmul_hand_example():
    out = ng.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.allclose(ng.matmul(Tensor(a), Tensor(b)).data, triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ng.DimensionError):
        ng.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (Tensor(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
        left = ng.matmul(ng.matmul(a, b), c).data
        right = ng.matmul(a, ng.matmul(b, c)).data
        assert np.max(np.abs(left - right)) <= 1e-10 * np.max(np.abs(left))


def test_matmul_gradients_accumulate(rng):
    a = Param(rng.normal(size=(2, 3)))
    b = Param(rng.normal(size=(3, 2)))
    with Tape() as tape:
        out = ng.sum_all(ng.add(ng.matmul(a, b), ng.matmul(a, b)))
    tape.backward(out)
    assert np.allclose(a.grad, 2 * np.ones((2, 2)) @ b.data.T)
    assert np.allclose(b.grad, 2 * a.data.T @ np.ones((2, 2)))


def test_log_sum_exp_examples():
    assert log_sum_exp([math.log(0.5), math.log(0.5)]) == pytest.approx(0.0, abs=1e-15)
    assert log_sum_exp([-math.inf, math.log(0.3)]) == pytest.approx(math.log(0.3), abs=1e-15)
    assert abs(log_sum_exp([math.log(0.01)] * 100)) <= 1e-12


def test_log_sum_exp_all_zero_probability():
    assert log_sum_exp([-math.inf, -math.inf]) == -math.inf


def test_log_sum_exp_empty():
    with pytest.raises(ValueError):
        log_sum_exp([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20), st.randoms(use_true_random=False))
def test_log_sum_exp_permutation_invariant_no_overflow(values, r):
    ref = log_sum_exp(values)
    shuffled = list(values)
    r.shuffle(shuffled)
    assert math.isfinite(ref)
    assert log_sum_exp(shuffled) == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert ref >= max(values) - 1e-12


def test_check_gradients_quadratic():
    theta = Param(np.array([[1.0, 2.0]]), name="theta")
    f = lambda: ng.sum_all(ng.mul(theta, theta))
    rep = check_gradients(f, [theta], tol=1e-8)
    assert rep.passed
    with Tape() as tape:
        out = f()
    theta.zero_grad()
    tape.backward(out)
    assert np.allclose(theta.grad, [[2.0, 4.0]], atol=1e-12)


def test_check_gradients_ctc_three_frames(rng):
    logits = Param(rng.normal(size=(3, 3)), name="logits")
    assert check_gradients(lambda: ctc_loss_from_logits(logits, (0, 1)), [logits], tol=1e-4).passed


def test_check_gradients_constant():
    theta = Param(np.array([[0.3, -0.7]]), name="theta")
    rep = check_gradients(lambda: Tensor([[4.2]]), [theta], eps=1e-5)
    assert rep.passed
    assert np.all(np.abs(theta.grad) <= 1e-10)


def test_check_gradients_non_finite():
    theta = Param(np.array([[1.0]]))
    with pytest.raises(ng.EvaluationError):
        check_gradients(lambda: Tensor([[math.inf]]), [theta])


def test_check_gradients_reports_wrong_gradient():
    theta = Param(np.array([[1.0]]), name="theta")
    def f():
        # forward doubles theta but records a backward that does nothing
        out = Tensor(2 * theta.data, requires_grad=True)
        tape = ng._active_tape()
        if tape is not None:
            tape.record(lambda: None)
        return out

    rep = check_gradients(f, [theta])
    assert not rep.passed
    assert rep.max_rel_error["theta"] == pytest.approx(1.0)


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: ng.sum_all(ng.tanh(ng.matmul(a, b))),
        lambda a, b: ng.sum_all(ng.mul(ng.sigmoid(a), a)),
        lambda a, b: ng.sum_all(ng.sub(ng.scale(a, 3.0), ng.add(a, ng.take_rows(ng.transpose(b), 0)))),
        lambda a, b: ng.nll_from_logits(ng.concat_rows([a, ng.take_rows(ng.transpose(b), [1, 0])]), [0, 1, 2, 0]),
        lambda a, b: ng.sum_all(ng.mul(ng.softmax(a, 2.0), ng.log_softmax(a))),
        lambda a, b: ng.sum_all(ng.concat_cols([a, ng.take_rows(ng.transpose(b), slice(0, 2))])),
        lambda a, b: ng.sum_all(ng.add_n([a, a, ng.take_rows(ng.transpose(b), [1, 1])])),
    ],
)
def test_primitive_gradients(rng, op):
    a = Param(rng.normal(size=(2, 3)), name="a")
    b = Param(rng.normal(size=(3, 2)), name="b")
    rep = check_gradients(lambda: op(a, b), [a, b])
    assert rep.passed, str(rep)


def test_broadcast_add_gradient(rng):
    x = Param(rng.normal(size=(4, 3)), name="x")
    bias = Param(rng.normal(size=(1, 3)), name="bias")
    assert check_gradients(lambda: ng.sum_all(ng.tanh(ng.add(x, bias))), [x, bias]).passed


def test_softmax_properties(rng):
    x = rng.normal(size=(1, 7)) * 5
    p = ng.softmax(Tensor(x)).data
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12
    assert np.allclose(ng.softmax(Tensor(x + 123.4)).data, p, atol=1e-15)
    assert np.allclose(ng.softmax(Tensor(np.zeros((1, 5))), 7.0).data, 0.2)


def test_softmax_doubling_gamma_squares(rng):
    x = rng.normal(size=(1, 6))
    p1 = ng.softmax(Tensor(x), 1.0).data
    p2 = ng.softmax(Tensor(x), 2.0).data
    assert np.allclose(p2, p1**2 / np.sum(p1**2), atol=1e-14)


def test_softmax_rejects_non_finite():
    with pytest.raises(ng.EvaluationError):
        ng.softmax(Tensor([[0.0, math.nan]]))


def test_no_grad_records_nothing(rng):
    a = Param(rng.normal(size=(2, 2)))
    with Tape() as tape:
        with ng.no_grad():
            ng.matmul(a, a)
        assert len(tape) == 0
        ng.matmul(a, a)
        assert len(tape) == 1


def test_zero_grads():
    p = Param(np.ones((2, 2)))
    p.grad += 3
    ng.zero_grads([p])
    assert not p.grad.any()
    assert p.grad.shape == p.data.shape


def test_tensor_rejects_3d():
    with pytest.raises(ng.DimensionError):
        Tensor(np.zeros((2, 2, 2)))
