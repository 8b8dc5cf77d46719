"""S4-style state-space layers: parameterizations, bilinear discretization,
recurrent stepping, kernel materialization, causal convolution, and
stability certification.

Three parameterizations of the state matrix are supported:

* ``untied``:   A = diag(Lambda) + p q*
* ``tied``:     A = diag(Lambda) - p p*      (q is never read)
* ``tied_exp``: tied, with Re(Lambda) = -exp(raw) floored at -1e-6 so the
  materialized real parts are strictly negative and the matrix is Hurwitz
  by construction.

The recurrent and convolutional execution modes are exact duals: ``scan``
must match ``causal_conv(materialize_kernel(...), ...)`` on any input, and
``materialize_kernel`` walks the very same matrix-vector products as
``step`` so the kernel equals the step-mode impulse response bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .tensor import Rng, Tensor, _finish

__all__ = [
    "DivergenceError",
    "SsmParams",
    "DiscreteSsm",
    "StabilityReport",
    "materialized_lambda",
    "state_matrix",
    "discretize",
    "step",
    "materialize_kernel",
    "causal_conv",
    "scan",
    "bidirectional_apply",
    "stability_report",
    "csolve",
    "dplr_kernel",
    "causal_conv_op",
    "pair_to_complex",
    "complex_to_pair",
]

MODES = ("untied", "tied", "tied_exp")
_EXP_FLOOR = 1e-6  # tied_exp keeps Re(Lambda) <= -1e-6, off the unit-circle boundary


class DivergenceError(ArithmeticError):
    """Recurrent state left the finite range (stability breach)."""

    def __init__(self, message: str, step_index: int | None = None,
                 layer: str | None = None):
        super().__init__(message)
        self.step_index = step_index
        self.layer = layer


@dataclass
class SsmParams:
    """Continuous-time single-channel SSM parameters.

    ``b`` and ``delta`` are frozen by contract; ``q`` is ignored unless
    ``mode == "untied"``. ``conj_pairs`` doubles the real readout to stand in
    for the implicit conjugate half of the spectrum and must be identical in
    both execution modes of a layer.
    """

    mode: str
    lambda_re_raw: np.ndarray   # (N,) real; tied_exp stores log(-Re)
    lambda_im: np.ndarray       # (N,) real
    p: np.ndarray               # (N, r) complex
    q: np.ndarray | None        # (N, r) complex, untied only
    b: np.ndarray               # (N,) complex, frozen
    c: np.ndarray               # (N,) complex, trainable
    d: float                    # skip weight
    delta: float                # step size > 0, frozen
    conj_pairs: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        self.lambda_re_raw = np.asarray(self.lambda_re_raw, dtype=np.float64)
        self.lambda_im = np.asarray(self.lambda_im, dtype=np.float64)
        self.p = np.atleast_2d(np.asarray(self.p, dtype=np.complex128))
        if self.p.shape[0] != self.n:
            self.p = self.p.T
        if self.q is not None:
            self.q = np.atleast_2d(np.asarray(self.q, dtype=np.complex128))
            if self.q.shape[0] != self.n:
                self.q = self.q.T
        self.b = np.asarray(self.b, dtype=np.complex128).reshape(self.n)
        self.c = np.asarray(self.c, dtype=np.complex128).reshape(self.n)

    @property
    def n(self) -> int:
        return self.lambda_re_raw.shape[0]

    @property
    def output_scale(self) -> float:
        return 2.0 if self.conj_pairs else 1.0


@dataclass
class DiscreteSsm:
    """Bilinear-discretized operator set, ready to step or to materialize."""

    a_bar: np.ndarray   # (N, N) complex
    b_bar: np.ndarray   # (N,) complex
    c_bar: np.ndarray   # (N,) complex
    d_bar: float
    conj_pairs: bool = False

    @property
    def n(self) -> int:
        return self.b_bar.shape[0]

    @property
    def output_scale(self) -> float:
        return 2.0 if self.conj_pairs else 1.0


def materialized_lambda(params: SsmParams) -> np.ndarray:
    """Complex diagonal after applying the mode's reparameterization."""
    if params.mode == "tied_exp":
        re = -np.maximum(np.exp(params.lambda_re_raw), _EXP_FLOOR)
    else:
        re = params.lambda_re_raw
    return re + 1j * params.lambda_im


def state_matrix(params: SsmParams) -> np.ndarray:
    """Dense A = diag(Lambda) +- low-rank, per the parameterization mode."""
    lam = materialized_lambda(params)
    a = np.diag(lam)
    if params.mode == "untied":
        if params.q is None:
            raise ValueError("untied mode requires q")
        return a + params.p @ params.q.conj().T
    return a - params.p @ params.p.conj().T


def discretize(params: SsmParams) -> DiscreteSsm:
    """Bilinear transform: A_bar = (I - D/2 A)^-1 (I + D/2 A), B_bar likewise.

    One LU solve covers both right-hand sides. The resolvent can only be
    singular for a non-Hurwitz untied A with delta * lambda = 2.
    """
    a = state_matrix(params)
    n = params.n
    eye = np.eye(n, dtype=np.complex128)
    half = 0.5 * params.delta
    m = eye - half * a
    rhs = np.concatenate([eye + half * a, (params.delta * params.b)[:, None]], axis=1)
    sol = linalg.lu_solve(m, rhs)
    return DiscreteSsm(
        a_bar=np.ascontiguousarray(sol[:, :n]),
        b_bar=np.ascontiguousarray(sol[:, n]),
        c_bar=params.c.copy(),
        d_bar=float(params.d),
        conj_pairs=params.conj_pairs,
    )


def step(ds: DiscreteSsm, h: np.ndarray, x_t: float,
         step_index: int | None = None) -> tuple[np.ndarray, float]:
    """One recurrence update: h' = A_bar h + B_bar x, y = Re(C_bar h') + D x."""
    with np.errstate(over="ignore", invalid="ignore"):
        h_next = ds.a_bar @ h + ds.b_bar * x_t
    if not np.all(np.isfinite(h_next)):
        raise DivergenceError(
            f"recurrent state diverged at step {step_index}", step_index=step_index
        )
    y = ds.output_scale * float((ds.c_bar @ h_next).real) + ds.d_bar * x_t
    return h_next, y


def zero_state(ds: DiscreteSsm) -> np.ndarray:
    return np.zeros(ds.n, dtype=np.complex128)


def materialize_kernel(ds: DiscreteSsm, length: int,
                       conj_pairs: bool | None = None) -> np.ndarray:
    """Impulse-response taps (C_bar B_bar, C_bar A_bar B_bar, ...).

    Computed by iterated vector propagation v_{i+1} = A_bar v_i, the same
    products the step mode performs, so taps equal the step-mode impulse
    response exactly.
    """
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    scale = ds.output_scale if conj_pairs is None else (2.0 if conj_pairs else 1.0)
    taps = np.empty(length, dtype=np.float64)
    v = ds.b_bar.copy()
    for i in range(length):
        taps[i] = scale * float((ds.c_bar @ v).real)
        if i + 1 < length:
            v = ds.a_bar @ v
    return taps


def causal_conv(taps: np.ndarray, d_skip: float, x: np.ndarray) -> np.ndarray:
    """y_t = sum_{i<=t} taps[i] x_{t-i} + d x_t, direct summation.

    The kernel must cover the full input length; taps beyond the input
    length cannot contribute and are ignored.
    """
    x = np.asarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    t_len = x.shape[0]
    if taps.shape[0] < t_len:
        raise ValueError(f"kernel length {taps.shape[0]} shorter than input {t_len}")
    return np.convolve(x, taps[:t_len])[:t_len] + d_skip * x


def scan(params: SsmParams, x: np.ndarray) -> np.ndarray:
    """Recurrent-mode full pass; exactly matches the convolutional mode."""
    x = np.asarray(x, dtype=np.float64)
    ds = discretize(params)
    h = zero_state(ds)
    y = np.empty_like(x)
    for t in range(x.shape[0]):
        h, y[t] = step(ds, h, float(x[t]), step_index=t)
    return y


def conv_apply(params: SsmParams, x: np.ndarray) -> np.ndarray:
    """Convolution-mode full pass (kernel materialized at the input length)."""
    x = np.asarray(x, dtype=np.float64)
    ds = discretize(params)
    taps = materialize_kernel(ds, x.shape[0])
    return causal_conv(taps, ds.d_bar, x)


def bidirectional_apply(fwd: Sequence[SsmParams], bwd: Sequence[SsmParams],
                        weight: np.ndarray, bias: np.ndarray,
                        x: np.ndarray) -> np.ndarray:
    """Positionwise combine of a forward pass and a reversed backward pass:
    y = Linear(Concat(S4(x), rev(S4(rev(x))))). Not causal."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    h = x.shape[1]
    if len(fwd) != h or len(bwd) != h:
        raise ValueError("need one forward and one backward SSM per channel")
    y_f = np.stack([conv_apply(fwd[j], x[:, j]) for j in range(h)], axis=1)
    x_rev = x[::-1]
    y_b = np.stack([conv_apply(bwd[j], x_rev[:, j]) for j in range(h)], axis=1)[::-1]
    out = np.concatenate([y_f, y_b], axis=1) @ np.asarray(weight, dtype=np.float64)
    out = out + np.asarray(bias, dtype=np.float64)
    return out[:, 0] if squeeze else out


@dataclass
class StabilityReport:
    hurwitz_by_construction: bool
    spectral_radius_abar: float
    max_re_lambda: float


def stability_report(params: SsmParams, iters: int = 1000) -> StabilityReport:
    """Certify stability: construction check plus a power-iteration radius.

    Power iteration uses a fixed internal seed so reports are reproducible.
    A singular resolvent (only reachable for pathological untied parameters)
    is reported as an infinite radius rather than raised.
    """
    lam = materialized_lambda(params)
    max_re = float(np.max(lam.real))
    by_construction = params.mode in ("tied", "tied_exp") and max_re < 0.0
    try:
        ds = discretize(params)
        est = linalg.spectral_radius(
            lambda v: ds.a_bar @ v, params.n, iters, Rng(0x5EED)
        )
        radius = est.value
    except linalg.SingularMatrixError:
        radius = float("inf")
    return StabilityReport(
        hurwitz_by_construction=by_construction,
        spectral_radius_abar=radius,
        max_re_lambda=max_re,
    )


# ---------------------------------------------------------------------------
# paired-real complex views and the differentiable execution path
#
# Complex tensors on the tape carry a trailing (re, im) axis. The two
# primitives below (batched bilinear solve, kernel recursion) run complex
# arithmetic internally but expose real-pair tensors, so the tape stays a
# single real-valued pathway.


def pair_to_complex(arr: np.ndarray) -> np.ndarray:
    """View a float64 (..., 2) array as complex128 (...)."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ValueError("expected a trailing (re, im) axis of size 2")
    return arr.view(np.complex128)[..., 0]


def complex_to_pair(arr: np.ndarray) -> np.ndarray:
    """View a complex128 array as float64 with a trailing (re, im) axis."""
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    return arr.view(np.float64).reshape(arr.shape + (2,))


def csolve(m: Tensor, rhs: Tensor) -> Tensor:
    """Differentiable batched complex solve X = M^-1 RHS on paired tensors.

    m: (..., N, N, 2), rhs: (..., N, K, 2). Forward and the adjoint solves
    share linalg.lu_solve, keeping one arithmetic path across modes.
    """
    a_c = pair_to_complex(m.data)
    b_c = pair_to_complex(rhs.data)
    batch = a_c.shape[:-2]
    n = a_c.shape[-1]
    k = b_c.shape[-1]
    a_flat = a_c.reshape(-1, n, n)
    b_flat = b_c.reshape(-1, n, k)
    x_flat = np.empty_like(b_flat)
    for i in range(a_flat.shape[0]):
        x_flat[i] = linalg.lu_solve(a_flat[i], b_flat[i])
    x_c = x_flat.reshape(batch + (n, k))

    def back(g, acc):
        g_c = pair_to_complex(g).reshape(-1, n, k)
        gb_flat = np.empty_like(g_c)
        for i in range(a_flat.shape[0]):
            gb_flat[i] = linalg.lu_solve(a_flat[i].conj().T, g_c[i])
        ga_flat = -np.matmul(gb_flat, x_flat.conj().swapaxes(-1, -2))
        acc(0, complex_to_pair(ga_flat.reshape(batch + (n, n))))
        acc(1, complex_to_pair(gb_flat.reshape(batch + (n, k))))

    return _finish("csolve", complex_to_pair(x_c), [m, rhs], back)


def dplr_kernel(abar: Tensor, bbar: Tensor, c: Tensor, length: int,
                conj_pairs: bool) -> Tensor:
    """Differentiable kernel taps for a bank of channels.

    abar: (H, N, N, 2), bbar: (H, N, 2), c: (H, N, 2) -> taps (H, L) with
    taps[h, i] = scale * Re(c_h . A_bar_h^i B_bar_h), computed by the same
    iterated propagation the recurrent mode uses. The backward pass replays
    the linear recursion in reverse.
    """
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    a_c = pair_to_complex(abar.data)      # (H, N, N)
    b_c = pair_to_complex(bbar.data)      # (H, N)
    c_c = pair_to_complex(c.data)         # (H, N)
    n_ch = a_c.shape[0]
    scale = 2.0 if conj_pairs else 1.0

    v_hist = np.empty((length,) + b_c.shape, dtype=np.complex128)
    v = b_c.copy()
    for i in range(length):
        v_hist[i] = v
        if i + 1 < length:
            v = np.matmul(a_c, v[..., None])[..., 0]
    taps = scale * np.einsum("hk,lhk->hl", c_c, v_hist).real

    def back(g, acc):
        # g: (H, L) real
        gc = scale * np.einsum("hl,lhk->hk", g, v_hist.conj())
        a_ct = a_c.conj().swapaxes(-1, -2)
        ga = np.zeros_like(a_c)
        delta = np.zeros_like(b_c)
        c_conj = c_c.conj()
        for i in range(length - 1, -1, -1):
            delta = delta + scale * g[:, i, None] * c_conj
            if i > 0:
                ga += delta[:, :, None] * v_hist[i - 1].conj()[:, None, :]
                delta = np.matmul(a_ct, delta[..., None])[..., 0]
        acc(0, complex_to_pair(ga))
        acc(1, complex_to_pair(delta))
        acc(2, complex_to_pair(gc))

    return _finish("dplr_kernel", np.ascontiguousarray(taps), [abar, bbar, c], back)


def causal_conv_op(x: Tensor, taps: Tensor, d_skip: Tensor) -> Tensor:
    """Differentiable per-channel causal convolution plus skip.

    x: (B, T, H), taps: (H, L) with L >= T, d_skip: (H,) -> (B, T, H).
    Direct summation (np.convolve) in a fixed index order.
    """
    xd = x.data
    kd = taps.data
    dd = d_skip.data
    if xd.ndim != 3:
        raise ValueError("x must be (batch, time, channels)")
    n_b, t_len, n_ch = xd.shape
    if kd.shape[0] != n_ch or dd.shape != (n_ch,):
        raise ValueError("taps/d channel mismatch")
    if kd.shape[1] < t_len:
        raise ValueError(f"kernel length {kd.shape[1]} shorter than input {t_len}")
    out = np.empty_like(xd)
    for b in range(n_b):
        for h in range(n_ch):
            out[b, :, h] = np.convolve(xd[b, :, h], kd[h, :t_len])[:t_len]
    out = out + dd * xd

    def back(g, acc):
        gx = np.empty_like(xd)
        gk = np.zeros_like(kd)
        for b in range(n_b):
            for h in range(n_ch):
                rev = np.convolve(g[b, ::-1, h], kd[h, :t_len])[:t_len]
                gx[b, :, h] = rev[::-1]
                gk[h, :t_len] += np.correlate(g[b, :, h], xd[b, :, h], "full")[t_len - 1:]
        gx = gx + dd * g
        acc(0, gx)
        acc(1, gk)
        acc(2, np.einsum("bth,bth->h", g, xd))

    return _finish("causal_conv", out, [x, taps, d_skip], back)
