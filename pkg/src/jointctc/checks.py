"""Self-check suites: CTC against brute force, forward-backward identity, FD gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import AttnConfig
from .ctc import augment_with_blanks, ctc_brute_force, ctc_forward_backward, ctc_loss, ctc_loss_from_logits, min_frames
from .data import Utterance
from .encoder import EncoderConfig
from .model import JointModel
from .numgrad import Param, check_gradients
from .train import utterance_loss

__all__ = ["CheckResult", "random_ctc_instance", "ctc_oracle_suite", "forward_backward_suite", "gradient_suite", "SUITES"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tol: float
    seconds: float
    cases: int = 1

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max error {self.max_error:.3e} (tol {self.tol:.0e}, {self.cases} cases, {self.seconds:.2f}s)"


def random_ctc_instance(rng: np.random.Generator, max_T: int = 8, max_K: int = 3):
    """Random normalised posteriors (T x K+1, blank last) and a feasible target."""
    T = int(rng.integers(1, max_T + 1))
    K = int(rng.integers(1, max_K + 1))
    q = rng.dirichlet(np.ones(K + 1), size=T)
    while True:
        U = int(rng.integers(0, T + 1))
        y = tuple(int(k) for k in rng.integers(0, K, size=U))
        if min_frames(y) <= T:
            return q, y


def ctc_oracle_suite(seed: int = 0, cases: int = 200, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        q, y = random_ctc_instance(rng)
        ref = -np.log(ctc_brute_force(q, y))
        got = ctc_loss(q, y)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    return CheckResult("ctc-oracle", worst <= tol, worst, tol, time.perf_counter() - t0, cases)


def forward_backward_suite(seed: int = 0, cases: int = 50, tol: float = 1e-9) -> CheckResult:
    """Spread of the per-frame log marginal over t."""
    rng = np.random.default_rng(seed + 1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        q, y = random_ctc_instance(rng, max_T=12, max_K=4)
        lat = ctc_forward_backward(q, augment_with_blanks(y, q.shape[1] - 1))
        totals = lat.frame_totals()
        worst = max(worst, float(totals.max() - totals.min()))
    return CheckResult("forward-backward", worst <= tol, worst, tol, time.perf_counter() - t0, cases)


def tiny_model(seed: int = 0, mechanism: str = "location") -> JointModel:
    """1-layer encoder with 8 cells per direction, for FD checks."""
    enc = EncoderConfig(input_dim=3, num_layers=1, cells_per_dir=8, proj_dim=4, subsample_layers=frozenset())
    att = AttnConfig(mechanism=mechanism, num_conv_filters=2, conv_width=3, attn_dim=4, decoder_cells=4, embed_dim=3)
    model = JointModel(enc, att, vocab_size=6, seed=seed)
    # wider than the default init so no gradient entry sits near zero by accident
    rng = np.random.default_rng(seed + 100)
    for p in model.params():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
    return model


def tiny_utterance(seed: int = 0, frames: int = 6, labels: int = 4) -> Utterance:
    rng = np.random.default_rng(seed + 200)
    y = tuple(int(k) for k in rng.integers(0, 4, size=labels))
    return Utterance("fd", rng.normal(size=(frames, 3)), y)


def gradient_suite(seed: int = 0, tol: float = 1e-4, eps: float = 1e-5) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(seed + 2)

    t0 = time.perf_counter()
    logits = Param(rng.normal(size=(3, 3)), name="logits")
    rep = check_gradients(lambda: ctc_loss_from_logits(logits, (0, 1)), [logits], eps=eps, tol=tol)
    results.append(CheckResult("grad ctc/logits", rep.passed, rep.worst, tol, time.perf_counter() - t0))

    model = tiny_model(seed)
    utt = tiny_utterance(seed)
    params = model.decoder.params() + model.encoder.params()
    t0 = time.perf_counter()
    rep = check_gradients(lambda: utterance_loss(model, utt, 0.0)[0], params, eps=eps, tol=tol)
    results.append(CheckResult("grad attention/all params", rep.passed, rep.worst, tol, time.perf_counter() - t0))

    for lam in (0.0, 0.2, 0.5, 0.8, 1.0):
        t0 = time.perf_counter()
        rep = check_gradients(lambda: utterance_loss(model, utt, lam)[0], model.params(), eps=eps, tol=tol)
        results.append(CheckResult(f"grad mtl lambda={lam}", rep.passed, rep.worst, tol, time.perf_counter() - t0))
    return results


SUITES: dict[str, Callable[[int], list[CheckResult]]] = {
    "ctc-oracle": lambda seed: [ctc_oracle_suite(seed)],
    "fb": lambda seed: [forward_backward_suite(seed)],
    "grad": gradient_suite,
}
