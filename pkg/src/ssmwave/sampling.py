"""Stateful autoregressive sampling with stability tracing, sequence
likelihood scoring, and the likelihood-based rejection filter.

Generation always begins from the start-of-stream token (the zero-amplitude
code), so a byte sequence of length L is scored over all L positions; the
prime is consumed by teacher-forced stepping and sampling proceeds at
temperature 1 directly from the model's distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import GenState, MultiScaleModel
from .tensor import Rng, categorical_sample
from .training import QuantSpec, nll_bits, shifted_inputs, start_token

__all__ = [
    "GenSession",
    "GenResult",
    "generate",
    "sequence_loglik",
    "rejection_filter",
    "REJECT_LOW_FRACTION",
    "REJECT_HIGH_FRACTION",
]

REJECT_LOW_FRACTION = 0.40
REJECT_HIGH_FRACTION = 0.05


@dataclass
class GenResult:
    tokens: np.ndarray                       # sampled bytes, length n
    trace: list[tuple[int, list[tuple[str, float]]]]
    state: GenState


class GenSession:
    """One stateful rollout: owns a GenState, an rng, and the norm trace.

    The trace samples per-layer max state norms every ``trace_every`` steps
    to bound memory on long rollouts. Divergence errors raised by the model
    carry the global step index and the offending layer id.
    """

    def __init__(self, model: MultiScaleModel, rng: Rng, start: int,
                 trace_every: int = 64):
        self.model = model
        self.rng = rng
        self.state = model.init_state()
        self.trace: list[tuple[int, list[tuple[str, float]]]] = []
        self.trace_every = trace_every
        self.steps = 0
        self._logits = self._step(start)

    def _step(self, token: int) -> np.ndarray:
        logits = self.model.step(self.state, token, step_index=self.steps)
        self.steps += 1
        if self.trace_every and self.steps % self.trace_every == 0:
            self.trace.append((self.steps, self.model.state_norms(self.state)))
        return logits

    def prime(self, tokens) -> None:
        for tok in np.asarray(tokens, dtype=np.int64).reshape(-1):
            self._logits = self._step(int(tok))

    def sample(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint8)
        for i in range(n):
            tok = categorical_sample(self._logits, self.rng)
            out[i] = tok
            self._logits = self._step(tok)
        return out


def generate(model: MultiScaleModel, prime, n: int, rng: Rng,
             quant: QuantSpec = QuantSpec(),
             trace_every: int = 64) -> GenResult:
    """Teacher-force the prime, then sample n bytes at temperature 1."""
    session = GenSession(model, rng, start_token(quant), trace_every=trace_every)
    session.prime(prime)
    tokens = session.sample(n)
    return GenResult(tokens=tokens, trace=session.trace, state=session.state)


def sequence_loglik(model: MultiScaleModel, data, quant: QuantSpec = QuantSpec()
                    ) -> float:
    """Total teacher-forced negative log likelihood in bits.

    Scores every position (the start token provides the first context);
    equal to the chunk-eval per-position NLL times the sequence length.
    """
    data = np.asarray(data).reshape(-1)
    logits = model.forward(shifted_inputs(data, start_token(quant))).data[0]
    return nll_bits(logits, data) * data.shape[0]


def rejection_filter(scores) -> list[int]:
    """Indices surviving the likelihood cut, in their original order.

    Scores are ranked ascending (ties broken by original index); the lowest
    floor(0.40 n) and highest floor(0.05 n) are dropped.
    """
    scores = list(scores)
    n = len(scores)
    if n == 0:
        raise ValueError("rejection_filter needs at least one score")
    order = sorted(range(n), key=lambda i: (scores[i], i))
    drop_low = math.floor(REJECT_LOW_FRACTION * n)
    drop_high = math.floor(REJECT_HIGH_FRACTION * n)
    kept = order[drop_low:n - drop_high]
    return sorted(kept)
