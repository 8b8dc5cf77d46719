"""Quantization codecs, synthetic signals, the bits-per-sample loss, and the
training / chunked-evaluation protocol.

Sequences are scored autoregressively: a fixed start token (the code of zero
amplitude) is prepended so every one of the T positions in a chunk gets a
prediction, and chunks are treated independently (no state carries across
chunk boundaries). Evaluation partitions data into non-overlapping chunks of
the training length and drops the ragged tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .model import MultiScaleModel, Param
from .tensor import NonFiniteError, Rng, Tape, Tensor, round_half_away

__all__ = [
    "QuantSpec",
    "TrainConfig",
    "Trainer",
    "mulaw_encode",
    "mulaw_decode",
    "linear_encode",
    "linear_decode",
    "encode_array",
    "decode_array",
    "start_token",
    "make_synthetic",
    "nll_bits",
    "loss_bits_tensor",
    "evaluate_nll",
    "grad_check",
]

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class QuantSpec:
    scheme: str = "mulaw"   # "mulaw" | "linear"
    bits: int = 8
    mu: int = 255

    def __post_init__(self):
        if self.scheme not in ("mulaw", "linear"):
            raise ValueError(f"unknown quantization scheme {self.scheme!r}")
        if self.bits != 8:
            raise ValueError("only 8-bit codes are supported")


def _check_range(x: np.ndarray):
    if np.any(np.abs(x) > 1.0):
        raise ValueError("amplitudes must lie in [-1, 1]")


def mulaw_encode(x, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Companding then 8-bit code: F(x) = sign(x) ln(1+mu|x|)/ln(1+mu)."""
    x = np.asarray(x, dtype=np.float64)
    _check_range(x)
    mu = float(spec.mu)
    f = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    return round_half_away((f + 1.0) / 2.0 * 255.0).astype(np.uint8)


def mulaw_decode(code, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Invert at the midpoint of the code's bin in the companded domain."""
    c = np.asarray(code, dtype=np.float64)
    mu = float(spec.mu)
    f = 2.0 * c / 255.0 - 1.0
    return np.sign(f) * np.expm1(np.abs(f) * np.log1p(mu)) / mu


def linear_encode(x, spec: QuantSpec = QuantSpec("linear")) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_range(x)
    return round_half_away((x + 1.0) / 2.0 * 255.0).astype(np.uint8)


def linear_decode(code, spec: QuantSpec = QuantSpec("linear")) -> np.ndarray:
    c = np.asarray(code, dtype=np.float64)
    return 2.0 * c / 255.0 - 1.0


def encode_array(x, spec: QuantSpec) -> np.ndarray:
    return mulaw_encode(x, spec) if spec.scheme == "mulaw" else linear_encode(x, spec)


def decode_array(code, spec: QuantSpec) -> np.ndarray:
    return mulaw_decode(code, spec) if spec.scheme == "mulaw" else linear_decode(code, spec)


def start_token(spec: QuantSpec) -> int:
    """Code of zero amplitude, prepended as the start-of-stream context."""
    return int(encode_array(np.zeros(1), spec)[0])


# ---------------------------------------------------------------------------
# synthetic signals (desk-scale stand-ins for audio corpora)


def make_synthetic(kind: str, length: int, rng: Rng, *, periods=(64,),
                   amps=(0.5,), phases=None, period: int = 64,
                   amplitude: float = 0.9, phi: float = 0.9,
                   scale: float = 0.04) -> np.ndarray:
    """Deterministic-given-seed signal in [-1, 1].

    kinds: ``sine_mix`` (sum of tones with sample periods/amplitudes),
    ``sawtooth`` (exact integer period), ``noise_ar1`` (AR(1) noise).
    """
    t = np.arange(length, dtype=np.float64)
    if kind == "sine_mix":
        if phases is None:
            phases = [0.0] * len(periods)
        x = np.zeros(length)
        for per, amp, ph in zip(periods, amps, phases):
            x = x + amp * np.sin(2.0 * np.pi * t / per + ph)
    elif kind == "sawtooth":
        x = amplitude * (2.0 * ((t.astype(np.int64) % period) / period) - 1.0)
    elif kind == "noise_ar1":
        x = np.empty(length)
        prev = 0.0
        for i in range(length):
            prev = phi * prev + scale * rng.normal()
            x[i] = prev
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return np.clip(x, -1.0, 1.0)


# ---------------------------------------------------------------------------
# loss


def nll_bits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean over positions of -log2 softmax(logits)[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets).reshape(-1)
    flat = logits.reshape(targets.size, logits.shape[-1])
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(targets.size), targets]
    return float(np.mean(lse - picked) / _LN2)


def loss_bits_tensor(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Differentiable version of nll_bits (max subtraction uses a constant)."""
    targets = np.asarray(targets)
    k = logits.shape[-1]
    m = logits.data.max(axis=-1, keepdims=True)  # constant shift, exact gradient
    z = tz.sub(logits, m)
    lse = tz.log(tz.tsum(tz.exp(z), axis=-1, keepdims=True))
    logp = tz.sub(z, lse)
    onehot = np.zeros(targets.shape + (k,))
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    picked = tz.tsum(tz.mul(logp, onehot), axis=-1)
    return tz.mul(tz.neg(tz.tmean(picked)), 1.0 / _LN2)


def shifted_inputs(batch: np.ndarray, start: int) -> np.ndarray:
    """Teacher-forcing inputs: start token followed by all but the last target."""
    batch = np.atleast_2d(np.asarray(batch))
    inputs = np.empty_like(batch)
    inputs[:, 0] = start
    inputs[:, 1:] = batch[:, :-1]
    return inputs


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 0.001
    optimizer: str = "adam"          # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    batch: int = 1
    seq_len: int = 256
    trainable: str = "all"           # "all" | "lambda_and_c_only"

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.trainable not in ("all", "lambda_and_c_only"):
            raise ValueError(f"unknown trainable set {self.trainable!r}")


def active_filter(cfg: TrainConfig):
    """Which declared-trainable tensors actually receive gradients.

    ``lambda_and_c_only`` mirrors training only the state-space diagonal and
    readout among SSM parameters (skip weights D are frozen too); network
    weights outside the SSMs always train.
    """
    if cfg.trainable == "all":
        return lambda p: True
    return lambda p: p.kind in ("lambda", "c", "net")


class Trainer:
    """Owns optimizer state; one instance drives one model mutably."""

    def __init__(self, model: MultiScaleModel, cfg: TrainConfig,
                 quant: QuantSpec = QuantSpec()):
        if cfg.seq_len % model.cfg.rate_divisor != 0:
            raise ValueError(
                f"seq_len {cfg.seq_len} not divisible by {model.cfg.rate_divisor}"
            )
        self.model = model
        self.cfg = cfg
        self.quant = quant
        self.start = start_token(quant)
        self._active = active_filter(cfg)
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._t = 0
        self.last_grads: dict[str, np.ndarray] = {}

    def active_params(self) -> list[Param]:
        return [p for p in self.model.params.values()
                if p.trainable and self._active(p)]

    def train_step(self, batch: np.ndarray, tape: Tape | None = None) -> float:
        """Forward in convolution mode, backprop, update the active set;
        returns the pre-update loss in bits."""
        batch = np.atleast_2d(np.asarray(batch))
        tape = tape or Tape()
        bind = self.model.bind(tape, active=lambda p: self._active(p))
        inputs = shifted_inputs(batch, self.start)
        logits = self.model.forward(inputs, tape=tape, bind=bind)
        loss_t = loss_bits_tensor(logits, batch)
        loss = float(loss_t.data)
        if not np.isfinite(loss):
            raise NonFiniteError("training loss is not finite")
        grads = tape.backward(loss_t)

        self.last_grads = {}
        for name, p in self.model.params.items():
            leaf = bind[name]
            if leaf.requires_grad:
                self.last_grads[name] = grads[leaf.node]
            else:
                self.last_grads[name] = np.zeros_like(p.data)

        self._t += 1
        for p in self.active_params():
            g = self.last_grads[p.name]
            if self.cfg.optimizer == "sgd":
                p.data -= self.cfg.lr * g
                continue
            m = self._adam_m.setdefault(p.name, np.zeros_like(p.data))
            v = self._adam_v.setdefault(p.name, np.zeros_like(p.data))
            m *= self.cfg.beta1
            m += (1.0 - self.cfg.beta1) * g
            v *= self.cfg.beta2
            v += (1.0 - self.cfg.beta2) * g * g
            m_hat = m / (1.0 - self.cfg.beta1 ** self._t)
            v_hat = v / (1.0 - self.cfg.beta2 ** self._t)
            p.data -= self.cfg.lr * m_hat / (np.sqrt(v_hat) + self.cfg.eps)
        return loss

    def sample_batch(self, data: np.ndarray, rng: Rng) -> np.ndarray:
        """Random non-overlapping training chunks drawn with replacement."""
        t_len = self.cfg.seq_len
        n_chunks = data.shape[0] // t_len
        if n_chunks < 1:
            raise ValueError("data shorter than one chunk")
        rows = []
        for _ in range(self.cfg.batch):
            i = rng.below(n_chunks)
            rows.append(data[i * t_len:(i + 1) * t_len])
        return np.stack(rows)


def fit(trainer: Trainer, data: np.ndarray, rng: Rng,
        log_every: int = 50, log=print) -> list[float]:
    losses = []
    for step_i in range(trainer.cfg.steps):
        batch = trainer.sample_batch(data, rng)
        loss = trainer.train_step(batch)
        losses.append(loss)
        if log is not None and (step_i % log_every == 0
                                or step_i == trainer.cfg.steps - 1):
            log(f"step {step_i} loss_bits {loss:.6f}")
    return losses


# ---------------------------------------------------------------------------
# evaluation


def evaluate_nll(model: MultiScaleModel, data: np.ndarray, chunk_len: int,
                 quant: QuantSpec = QuantSpec()) -> float:
    """Chunked NLL in bits: non-overlapping chunks, ragged tail dropped,
    fixed iteration order."""
    data = np.asarray(data)
    if chunk_len % model.cfg.rate_divisor != 0:
        raise ValueError(
            f"chunk length {chunk_len} not divisible by {model.cfg.rate_divisor}"
        )
    n_chunks = data.shape[0] // chunk_len
    if n_chunks < 1:
        raise ValueError("data shorter than one chunk")
    start = start_token(quant)
    total = 0.0
    for i in range(n_chunks):
        chunk = data[i * chunk_len:(i + 1) * chunk_len]
        logits = model.forward(shifted_inputs(chunk, start)).data[0]
        total += nll_bits(logits, chunk)
    return total / n_chunks


def grad_check(model: MultiScaleModel, batch: np.ndarray, cfg: TrainConfig,
               sample_size: int, rng: Rng, quant: QuantSpec = QuantSpec(),
               h: float = 1e-5) -> float:
    """Central finite differences on a random sample of trainable scalars
    against tape gradients; returns the max relative error."""
    batch = np.atleast_2d(np.asarray(batch))
    start = start_token(quant)
    inputs = shifted_inputs(batch, start)
    act = active_filter(cfg)

    tape = Tape()
    bind = model.bind(tape, active=lambda p: act(p))
    loss_t = loss_bits_tensor(model.forward(inputs, tape=tape, bind=bind), batch)
    grads = tape.backward(loss_t)

    def loss_np() -> float:
        logits = model.forward(inputs).data
        return nll_bits(logits, batch)

    params = [p for p in model.params.values() if p.trainable and act(p)]
    worst = 0.0
    for _ in range(sample_size):
        p = params[rng.below(len(params))]
        i = rng.below(p.data.size)
        flat = p.data.reshape(-1)
        keep = flat[i]
        flat[i] = keep + h
        up = loss_np()
        flat[i] = keep - h
        down = loss_np()
        flat[i] = keep
        fd = (up - down) / (2.0 * h)
        got = grads[bind[p.name].node].reshape(-1)[i]
        denom = max(abs(fd), abs(got), 1e-3)
        worst = max(worst, abs(fd - got) / denom)
    return worst
