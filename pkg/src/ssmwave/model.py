"""Multi-scale autoregressive sequence model built from S4-style blocks.

Tiers process the signal at progressively coarser rates: each tier runs a
stack of residual blocks, down-pools into the next tier, and on the way back
up combines up-pooled output with the saved tier input before the up-path
blocks. Causal up-pooling delays the low-rate signal by one full window
(zero-filled at the start), which is what keeps the whole map strictly
causal and makes token-by-token stepping reproduce the convolutional
forward exactly.

One block = a state-space sub-block followed by a feed-forward sub-block,
both pre-norm residual:

    y = x + W(phi(S4(LN(x))))        y = x + W2(phi(W1(LN(x))))

with phi = GELU, or a gated linear unit applied after a width-doubling
linear when configured.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from . import hippo, ssm
from . import tensor as tz
from .tensor import Rng, Tape, Tensor

__all__ = [
    "ModelConfig",
    "PoolConfig",
    "Param",
    "MultiScaleModel",
    "GenState",
    "build_model",
    "hippo_half_spectrum",
    "down_pool",
    "up_pool",
]

LN_EPS = 1e-5


@dataclass(frozen=True)
class PoolConfig:
    """Pooling factor p (window size) and expansion factor q (width growth)."""

    p: int = 4
    q: int = 2

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("pooling factor must be >= 2")
        if self.q < 1:
            raise ValueError("expansion factor must be >= 1")


def down_pool(x: np.ndarray, cfg: PoolConfig, weight: np.ndarray) -> np.ndarray:
    """(T, H) -> reshape (T/p, p*H) -> linear (T/p, q*H); T must divide by p."""
    x = np.asarray(x, dtype=np.float64)
    t_len, width = x.shape
    if t_len % cfg.p != 0:
        raise ValueError(f"length {t_len} not divisible by pooling factor {cfg.p}")
    if weight.shape != (cfg.p * width, cfg.q * width):
        raise ValueError("down-pool weight shape mismatch")
    return x.reshape(t_len // cfg.p, cfg.p * width) @ weight


def up_pool(x: np.ndarray, cfg: PoolConfig, weight: np.ndarray,
            causal: bool) -> np.ndarray:
    """(T/p, q*H) -> linear (T/p, p*H) -> reshape (T, H); when causal the
    high-rate output is delayed by one full window with zero fill."""
    x = np.asarray(x, dtype=np.float64)
    t_lo, w_lo = x.shape
    if weight.shape[0] != w_lo or weight.shape[1] % cfg.p != 0:
        raise ValueError("up-pool weight shape mismatch")
    w_hi = weight.shape[1] // cfg.p
    out = (x @ weight).reshape(t_lo * cfg.p, w_hi)
    if causal:
        out = np.concatenate([np.zeros((cfg.p, w_hi)), out[:-cfg.p]], axis=0)
    return out


@dataclass
class ModelConfig:
    width: int = 64
    n_tiers: int = 3
    n_blocks: int = 8
    state_size: int = 16
    pool_p: int = 4
    pool_q: int = 2
    ffn_expand: int = 2
    nonlinearity: str = "gelu"      # "gelu" | "glu"
    ssm_mode: str = "tied_exp"      # "untied" | "tied" | "tied_exp"
    conj_pairs: bool = True
    causal: bool = True
    lambda_tying: str = "layer"     # "layer" | "channel"
    init_family: str = "legs"
    vocab: int = 256

    def __post_init__(self):
        if self.n_tiers < 1:
            raise ValueError("need at least one tier")
        if self.n_tiers > 1 and self.pool_p < 2:
            raise ValueError("pooling factor must be >= 2")
        if self.pool_q < 1 or self.ffn_expand < 1 or self.width < 1:
            raise ValueError("width/expansion factors must be >= 1")
        if self.nonlinearity not in ("gelu", "glu"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.lambda_tying not in ("layer", "channel"):
            raise ValueError(f"unknown lambda tying {self.lambda_tying!r}")
        if self.ssm_mode not in ssm.MODES:
            raise ValueError(f"unknown ssm mode {self.ssm_mode!r}")

    def tier_width(self, i: int) -> int:
        return self.width * self.pool_q ** i

    @property
    def rate_divisor(self) -> int:
        return self.pool_p ** (self.n_tiers - 1)


@dataclass
class Param:
    name: str
    data: np.ndarray
    trainable: bool
    kind: str   # "lambda" | "c" | "d" | "ssm_frozen" | "net"


Bind = dict[str, Tensor]


class _Registry:
    def __init__(self):
        self.params: dict[str, Param] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool, kind: str) -> str:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        # always copy: registry tensors must never alias layer caches
        owned = np.array(data, dtype=np.float64, order="C", copy=True)
        self.params[name] = Param(name, owned, trainable, kind)
        return name


def _uniform_fan_in(rng: Rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform_array(shape, -bound, bound)


@lru_cache(maxsize=32)
def _half_spectrum_cached(family: str, n_state: int) -> tuple[np.ndarray, np.ndarray]:
    spec = hippo.HippoSpec(family, 2 * n_state,
                           beta=0.0 if family == "lagt" else None)
    t = hippo.dplr(spec)
    keep = np.argsort(t.lam.imag, kind="stable")[n_state:]
    return t.lam[keep], t.p_tilde[keep]


def hippo_half_spectrum(family: str, n_state: int) -> tuple[np.ndarray, np.ndarray]:
    """Initialization diagonal and low-rank vectors: the n_state eigenvalues
    of the size-2*n_state family matrix with the largest imaginary parts
    (the kept half of each conjugate pair), plus the matching rows of the
    transformed low-rank term."""
    lam, p_tilde = _half_spectrum_cached(family, n_state)
    return lam.copy(), p_tilde.copy()


# ---------------------------------------------------------------------------
# layers


class _Linear:
    def __init__(self, reg: _Registry, rng: Rng, name: str, d_in: int, d_out: int,
                 bias: bool = True):
        self.w = reg.add(f"{name}.w", _uniform_fan_in(rng, d_in, (d_in, d_out)),
                         True, "net")
        self.b = reg.add(f"{name}.b", np.zeros(d_out), True, "net") if bias else None

    def forward(self, bind: Bind, x: Tensor) -> Tensor:
        y = tz.matmul(x, bind[self.w])
        if self.b is not None:
            y = tz.add(y, bind[self.b])
        return y

    def apply_np(self, model: "MultiScaleModel", x: np.ndarray) -> np.ndarray:
        y = x @ model.params[self.w].data
        if self.b is not None:
            y = y + model.params[self.b].data
        return y


class _LayerNorm:
    """Normalization over channels per position; constant rows normalize to
    zero (the epsilon keeps that finite) and pass the bias through."""

    def __init__(self, reg: _Registry, name: str, width: int):
        self.g = reg.add(f"{name}.g", np.ones(width), True, "net")
        self.b = reg.add(f"{name}.b", np.zeros(width), True, "net")

    def forward(self, bind: Bind, x: Tensor) -> Tensor:
        m = tz.tmean(x, axis=-1, keepdims=True)
        cent = tz.sub(x, m)
        var = tz.tmean(tz.mul(cent, cent), axis=-1, keepdims=True)
        inv = tz.pow_const(tz.add(var, LN_EPS), -0.5)
        return tz.add(tz.mul(tz.mul(cent, inv), bind[self.g]), bind[self.b])

    def apply_np(self, model: "MultiScaleModel", x: np.ndarray) -> np.ndarray:
        m = x.mean(axis=-1, keepdims=True)
        cent = x - m
        var = (cent * cent).mean(axis=-1, keepdims=True)
        inv = (var + LN_EPS) ** -0.5
        return cent * inv * model.params[self.g].data + model.params[self.b].data


class _S4Layer:
    """A bank of per-channel SSMs sharing frozen p/B/delta layout.

    Lambda is shared across channels ("layer" tying) or per channel; C, D and
    the step size delta are always per channel. Convolution mode materializes
    kernels differentiably; step mode caches per-channel discretizations
    built from the very same solve routine.
    """

    def __init__(self, reg: _Registry, rng: Rng, name: str, cfg: ModelConfig,
                 width: int):
        self.name = name
        self.h = width
        self.n = cfg.state_size
        self.mode = cfg.ssm_mode
        self.conj_pairs = cfg.conj_pairs
        self.tying = cfg.lambda_tying

        lam, p_tilde = hippo_half_spectrum(cfg.init_family, self.n)
        re = lam.real.copy()
        if self.mode == "tied_exp":
            raw = np.log(np.maximum(-re, 1e-6))
        else:
            raw = re
        lam_shape = (self.n,) if self.tying == "layer" else (width, self.n)
        self.lam_re = reg.add(f"{name}.lambda_re_raw",
                              np.broadcast_to(raw, lam_shape).copy(), True, "lambda")
        self.lam_im = reg.add(f"{name}.lambda_im",
                              np.broadcast_to(lam.imag, lam_shape).copy(), True, "lambda")

        c0 = np.empty((width, self.n), dtype=np.complex128)
        for ch in range(width):
            c0[ch] = (rng.normal_array((self.n,))
                      + 1j * rng.normal_array((self.n,))) / np.sqrt(self.n)
        self.c = reg.add(f"{name}.c", ssm.complex_to_pair(c0), True, "c")
        self.d = reg.add(f"{name}.d", np.ones(width), True, "d")

        self.p_c = p_tilde                              # (N, r) complex, frozen
        self.q_c = -p_tilde if self.mode == "untied" else None
        self.b_c = np.ones(self.n, dtype=np.complex128)  # frozen, DPLR basis
        if width > 1:
            self.delta = np.geomspace(1e-3, 1e-1, width)
        else:
            self.delta = np.array([1e-2])
        self.p_name = reg.add(f"{name}.p", ssm.complex_to_pair(self.p_c),
                              False, "ssm_frozen")
        self.q_name = None
        if self.mode == "untied":
            self.q_name = reg.add(f"{name}.q", ssm.complex_to_pair(self.q_c),
                                  False, "ssm_frozen")
        self.b_name = reg.add(f"{name}.b", ssm.complex_to_pair(self.b_c),
                              False, "ssm_frozen")
        self.delta_name = reg.add(f"{name}.delta", self.delta.copy(),
                                  False, "ssm_frozen")
        self._rebuild_consts()

    def _rebuild_consts(self):
        if self.mode == "untied":
            low = self.p_c @ self.q_c.conj().T
        else:
            low = -(self.p_c @ self.p_c.conj().T)
        self._low_pair = ssm.complex_to_pair(low)        # (N, N, 2)
        self._rhs_b = ssm.complex_to_pair(
            self.delta[:, None] * self.b_c[None, :]
        ).reshape(self.h, self.n, 1, 2)                  # (H, N, 1, 2)

    def refresh_frozen(self, params: dict[str, "Param"]):
        """Re-read frozen tensors from the registry (after load or edits)."""
        self.p_c = ssm.pair_to_complex(params[self.p_name].data).copy()
        if self.q_name is not None:
            self.q_c = ssm.pair_to_complex(params[self.q_name].data).copy()
        self.b_c = ssm.pair_to_complex(params[self.b_name].data).copy()
        self.delta = params[self.delta_name].data.copy()
        self._rebuild_consts()

    # --- convolution mode (differentiable) ---

    def _assemble_pairs(self, bind: Bind) -> tuple[Tensor, Tensor]:
        n = self.n
        eye = np.eye(n)
        lam_re_t = bind[self.lam_re]
        if self.mode == "tied_exp":
            lam_re_t = tz.neg(tz.maximum_const(tz.exp(lam_re_t), 1e-6))
        lam_im_t = bind[self.lam_im]
        if self.tying == "layer":
            diag_shape = (n, 1)
            full = (1, n, n)
        else:
            diag_shape = (self.h, n, 1)
            full = (self.h, n, n)
        a_re = tz.add(tz.mul(tz.reshape(lam_re_t, diag_shape), eye),
                      self._low_pair[..., 0])
        a_im = tz.add(tz.mul(tz.reshape(lam_im_t, diag_shape), eye),
                      self._low_pair[..., 1])
        a_re = tz.reshape(a_re, full)
        a_im = tz.reshape(a_im, full)
        half = (0.5 * self.delta).reshape(self.h, 1, 1)
        m_re = tz.sub(eye, tz.mul(a_re, half))
        m_im = tz.neg(tz.mul(a_im, half))
        p_re = tz.add(eye, tz.mul(a_re, half))
        p_im = tz.mul(a_im, half)
        shp = (self.h, n, n, 1)
        m_pair = tz.concat([tz.reshape(m_re, shp), tz.reshape(m_im, shp)], axis=3)
        rhs_pair = tz.concat([tz.reshape(p_re, shp), tz.reshape(p_im, shp)], axis=3)
        rhs_pair = tz.concat([rhs_pair, Tensor(self._rhs_b)], axis=2)
        return m_pair, rhs_pair

    def kernel(self, bind: Bind, length: int) -> Tensor:
        m_pair, rhs_pair = self._assemble_pairs(bind)
        sol = ssm.csolve(m_pair, rhs_pair)
        n = self.n
        abar = tz.take(sol, (slice(None), slice(None), slice(0, n), slice(None)))
        bbar = tz.take(sol, (slice(None), slice(None), n, slice(None)))
        return ssm.dplr_kernel(abar, bbar, bind[self.c], length, self.conj_pairs)

    def forward(self, bind: Bind, x: Tensor) -> Tensor:
        taps = self.kernel(bind, x.shape[1])
        return ssm.causal_conv_op(x, taps, bind[self.d])

    # --- recurrent mode ---

    def channel_params(self, model: "MultiScaleModel", ch: int) -> ssm.SsmParams:
        raw = model.params[self.lam_re].data
        im = model.params[self.lam_im].data
        if self.tying == "channel":
            raw, im = raw[ch], im[ch]
        c_all = ssm.pair_to_complex(model.params[self.c].data)
        return ssm.SsmParams(
            mode=self.mode, lambda_re_raw=raw.copy(), lambda_im=im.copy(),
            p=self.p_c, q=self.q_c, b=self.b_c, c=c_all[ch],
            d=float(model.params[self.d].data[ch]), delta=float(self.delta[ch]),
            conj_pairs=self.conj_pairs,
        )

    def discretize_bank(self, model: "MultiScaleModel") -> dict:
        abar = np.empty((self.h, self.n, self.n), dtype=np.complex128)
        bbar = np.empty((self.h, self.n), dtype=np.complex128)
        for ch in range(self.h):
            ds = ssm.discretize(self.channel_params(model, ch))
            abar[ch] = ds.a_bar
            bbar[ch] = ds.b_bar
        return {
            "abar": abar,
            "bbar": bbar,
            "c": ssm.pair_to_complex(model.params[self.c].data).copy(),
            "d": model.params[self.d].data.copy(),
            "scale": 2.0 if self.conj_pairs else 1.0,
        }

    def step_np(self, bank: dict, h_state: np.ndarray, x: np.ndarray,
                step_index: int | None) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore"):
            h_next = (np.matmul(bank["abar"], h_state[..., None])[..., 0]
                      + bank["bbar"] * x[:, None])
        if not np.all(np.isfinite(h_next)):
            raise ssm.DivergenceError(
                f"state diverged in {self.name} at step {step_index}",
                step_index=step_index, layer=self.name,
            )
        y = bank["scale"] * np.einsum("hk,hk->h", bank["c"], h_next).real
        return h_next, y + bank["d"] * x


class _Block:
    """State-space sub-block plus feed-forward sub-block, both residual."""

    def __init__(self, reg: _Registry, rng: Rng, name: str, cfg: ModelConfig,
                 width: int):
        self.name = name
        self.width = width
        self.cfg = cfg
        self.ln1 = _LayerNorm(reg, f"{name}.ln1", width)
        self.s4 = _S4Layer(reg, rng, f"{name}.s4", cfg, width)
        self.bidirectional = not cfg.causal
        if self.bidirectional:
            self.s4_rev = _S4Layer(reg, rng, f"{name}.s4rev", cfg, width)
        inner = width * (2 if self.bidirectional else 1)
        if cfg.nonlinearity == "glu":
            self.w_out = _Linear(reg, rng, f"{name}.wout", inner, 2 * width)
        else:
            self.w_out = _Linear(reg, rng, f"{name}.wout", inner, width)
        self.ln2 = _LayerNorm(reg, f"{name}.ln2", width)
        e = cfg.ffn_expand
        if cfg.nonlinearity == "glu":
            self.w1 = _Linear(reg, rng, f"{name}.w1", width, 2 * e * width)
        else:
            self.w1 = _Linear(reg, rng, f"{name}.w1", width, e * width)
        self.w2 = _Linear(reg, rng, f"{name}.w2", e * width, width)

    # --- convolution mode ---

    def _glu_t(self, y: Tensor) -> Tensor:
        half = y.shape[-1] // 2
        lead = (slice(None),) * (len(y.shape) - 1)
        a = tz.take(y, lead + (slice(0, half),))
        g = tz.take(y, lead + (slice(half, None),))
        return tz.mul(a, tz.sigmoid(g))

    def forward(self, bind: Bind, x: Tensor) -> Tensor:
        y = self.ln1.forward(bind, x)
        if self.bidirectional:
            y_f = self.s4.forward(bind, y)
            y_b = tz.flip(self.s4_rev.forward(bind, tz.flip(y, axis=1)), axis=1)
            y = tz.concat([y_f, y_b], axis=2)
        else:
            y = self.s4.forward(bind, y)
        if self.cfg.nonlinearity == "glu":
            y = self._glu_t(self.w_out.forward(bind, y))
        else:
            y = self.w_out.forward(bind, tz.gelu(y))
        x = tz.add(x, y)

        y = self.ln2.forward(bind, x)
        y = self.w1.forward(bind, y)
        y = self._glu_t(y) if self.cfg.nonlinearity == "glu" else tz.gelu(y)
        y = self.w2.forward(bind, y)
        return tz.add(x, y)

    # --- recurrent mode ---

    def init_state(self, model: "MultiScaleModel") -> dict:
        if self.bidirectional:
            raise ValueError("cannot step a non-causal block")
        return {
            "bank": self.s4.discretize_bank(model),
            "h": np.zeros((self.width, self.s4.n), dtype=np.complex128),
        }

    def step_np(self, model: "MultiScaleModel", st: dict, x: np.ndarray,
                step_index: int | None) -> np.ndarray:
        y = self.ln1.apply_np(model, x)
        st["h"], y = self.s4.step_np(st["bank"], st["h"], y, step_index)
        if self.cfg.nonlinearity == "glu":
            y = self.w_out.apply_np(model, y)
            half = y.shape[-1] // 2
            y = y[..., :half] * tz.sigmoid_np(y[..., half:])
        else:
            y = self.w_out.apply_np(model, tz.gelu_np(y))
        x = x + y
        y = self.ln2.apply_np(model, x)
        y = self.w1.apply_np(model, y)
        if self.cfg.nonlinearity == "glu":
            half = y.shape[-1] // 2
            y = y[..., :half] * tz.sigmoid_np(y[..., half:])
        else:
            y = tz.gelu_np(y)
        y = self.w2.apply_np(model, y)
        return x + y


@dataclass
class GenState:
    """Recurrent-mode state: per-block SSM states plus per-boundary pooling
    buffers (pending down-pool inputs, the currently emitting up-pool window,
    and a phase counter in [0, p))."""

    down_blocks: list[list[dict]]
    center_blocks: list[dict]
    up_blocks: list[list[dict]]
    buffers: list[list[np.ndarray]]
    chunks: list[np.ndarray]
    phases: list[int]
    steps: int = 0


class MultiScaleModel:
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        reg = _Registry()
        self.embed = reg.add(
            "embed", rng.normal_array((cfg.vocab, cfg.width)) / np.sqrt(cfg.width),
            True, "net",
        )
        self.down_stacks: list[list[_Block]] = []
        self.down_pools: list[_Linear] = []
        self.up_pools: list[_Linear] = []
        self.up_stacks: list[list[_Block]] = []
        for i in range(cfg.n_tiers - 1):
            w_hi = cfg.tier_width(i)
            w_lo = cfg.tier_width(i + 1)
            self.down_stacks.append([
                _Block(reg, rng, f"tier{i}.down{j}", cfg, w_hi)
                for j in range(cfg.n_blocks)
            ])
            self.down_pools.append(
                _Linear(reg, rng, f"tier{i}.dpool", cfg.pool_p * w_hi, w_lo, bias=False)
            )
        w_bot = cfg.tier_width(cfg.n_tiers - 1)
        self.center = [
            _Block(reg, rng, f"center{j}", cfg, w_bot) for j in range(cfg.n_blocks)
        ]
        for i in range(cfg.n_tiers - 2, -1, -1):
            w_hi = cfg.tier_width(i)
            w_lo = cfg.tier_width(i + 1)
            self.up_pools.insert(0, _Linear(
                reg, rng, f"tier{i}.upool", w_lo, cfg.pool_p * w_hi, bias=False
            ))
            self.up_stacks.insert(0, [
                _Block(reg, rng, f"tier{i}.up{j}", cfg, w_hi)
                for j in range(cfg.n_blocks)
            ])
        self.head = _Linear(reg, rng, "head", cfg.width, cfg.vocab)
        self.params = reg.params

    # --- bookkeeping ---

    def num_params(self, trainable_only: bool = False) -> int:
        return sum(p.data.size for p in self.params.values()
                   if p.trainable or not trainable_only)

    def refresh_frozen(self):
        for layer in self.s4_layers():
            layer.refresh_frozen(self.params)

    def s4_layers(self) -> list[_S4Layer]:
        layers = []
        for stack in [*self.down_stacks, self.center, *self.up_stacks]:
            for blk in stack:
                layers.append(blk.s4)
                if blk.bidirectional:
                    layers.append(blk.s4_rev)
        return layers

    def bind(self, tape: Tape | None,
             active: Callable[[Param], bool] | None = None) -> Bind:
        out: Bind = {}
        for name, p in self.params.items():
            if tape is None:
                out[name] = Tensor(p.data)
            else:
                rg = p.trainable if active is None else (p.trainable and active(p))
                out[name] = tape.leaf(p.data, requires_grad=rg)
        return out

    # --- convolution-mode forward ---

    def forward(self, tokens: np.ndarray, tape: Tape | None = None,
                bind: Bind | None = None) -> Tensor:
        """Logits (B, T, vocab) for token ids (B, T) or (T,); logits[t]
        parameterizes the distribution of the next token when causal."""
        tokens = np.asarray(tokens)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None, :]
        t_len = tokens.shape[1]
        div = self.cfg.rate_divisor
        if t_len % div != 0:
            raise ValueError(f"sequence length {t_len} not divisible by {div}")
        if bind is None:
            bind = self.bind(tape)
        p = self.cfg.pool_p

        x = tz.gather_rows(bind[self.embed], tokens)
        saved: list[Tensor] = []
        for i, stack in enumerate(self.down_stacks):
            saved.append(x)
            for blk in stack:
                x = blk.forward(bind, x)
            b, t_cur, w = x.shape
            x = tz.reshape(x, (b, t_cur // p, p * w))
            x = self.down_pools[i].forward(bind, x)
        for blk in self.center:
            x = blk.forward(bind, x)
        for i in range(len(self.up_stacks) - 1, -1, -1):
            x = self.up_pools[i].forward(bind, x)
            b, t_lo, wide = x.shape
            w_hi = wide // p
            x = tz.reshape(x, (b, t_lo * p, w_hi))
            if self.cfg.causal:
                zeros = np.zeros((b, p, w_hi))
                x = tz.concat(
                    [Tensor(zeros),
                     tz.take(x, (slice(None), slice(0, t_lo * p - p), slice(None)))],
                    axis=1,
                )
            x = tz.add(x, saved[i])
            for blk in self.up_stacks[i]:
                x = blk.forward(bind, x)
        logits = self.head.forward(bind, x)
        if squeeze:
            logits = tz.take(logits, (0,))
        return logits

    # --- recurrent-mode stepping ---

    def init_state(self) -> GenState:
        if not self.cfg.causal:
            raise ValueError("cannot step a non-causal model")
        p = self.cfg.pool_p
        return GenState(
            down_blocks=[[blk.init_state(self) for blk in stack]
                         for stack in self.down_stacks],
            center_blocks=[blk.init_state(self) for blk in self.center],
            up_blocks=[[blk.init_state(self) for blk in stack]
                       for stack in self.up_stacks],
            buffers=[[] for _ in self.down_stacks],
            chunks=[np.zeros((p, self.cfg.tier_width(i)))
                    for i in range(self.cfg.n_tiers - 1)],
            phases=[0 for _ in self.down_stacks],
        )

    def _tier_step(self, gs: GenState, tier: int, u: np.ndarray,
                   step_index: int | None) -> np.ndarray:
        if tier == self.cfg.n_tiers - 1:
            x = u
            for blk, st in zip(self.center, gs.center_blocks):
                x = blk.step_np(self, st, x, step_index)
            return x
        a = u
        for blk, st in zip(self.down_stacks[tier], gs.down_blocks[tier]):
            a = blk.step_np(self, st, a, step_index)
        gs.buffers[tier].append(a)
        # up-pool emission for this position: one slot of the pending window
        # (zero window before the first low-rate step), plus the tier input
        v = gs.chunks[tier][gs.phases[tier]] + u
        b = v
        for blk, st in zip(self.up_stacks[tier], gs.up_blocks[tier]):
            b = blk.step_np(self, st, b, step_index)
        if gs.phases[tier] == self.cfg.pool_p - 1:
            window = np.concatenate(gs.buffers[tier])
            gs.buffers[tier].clear()
            z = self.down_pools[tier].apply_np(self, window)
            z_out = self._tier_step(gs, tier + 1, z, step_index)
            wide = self.up_pools[tier].apply_np(self, z_out)
            gs.chunks[tier] = wide.reshape(self.cfg.pool_p, -1)
        gs.phases[tier] = (gs.phases[tier] + 1) % self.cfg.pool_p
        return b

    def step(self, gs: GenState, token: int,
             step_index: int | None = None) -> np.ndarray:
        """Advance one position; returns next-token logits (vocab,).

        Overflow warnings are silenced here: the per-layer finite-state
        check is the divergence guard and raises with step and layer ids.
        """
        if step_index is None:
            step_index = gs.steps
        x = self.params[self.embed].data[int(token)]
        with np.errstate(over="ignore", invalid="ignore"):
            y = self._tier_step(gs, 0, x, step_index)
            gs.steps += 1
            return self.head.apply_np(self, y)

    def state_norms(self, gs: GenState) -> list[tuple[str, float]]:
        """Max per-channel state norm for every S4 layer, for rollout traces."""
        out = []
        stacks = [*gs.down_blocks, gs.center_blocks, *gs.up_blocks]
        names = [*self.down_stacks, self.center, *self.up_stacks]
        with np.errstate(over="ignore", invalid="ignore"):
            for blocks, sts in zip(names, stacks):
                for blk, st in zip(blocks, sts):
                    norms = np.linalg.norm(st["h"], axis=1)
                    out.append((blk.s4.name, float(np.max(norms))))
        return out


def build_model(cfg: ModelConfig, rng: Rng) -> MultiScaleModel:
    return MultiScaleModel(cfg, rng)
