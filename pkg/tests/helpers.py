"""Shared test scaffolding: random stable SSM parameter draws and FD oracles."""

import numpy as np

from ssmwave.ssm import SsmParams
from ssmwave.tensor import Rng


def central_diff(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)
    return float(np.max(np.abs(a - b) / denom))


def random_complex(rng: Rng, shape) -> np.ndarray:
    return rng.normal_array(shape) + 1j * rng.normal_array(shape)


def random_stable_params(rng: Rng, n: int | None = None, mode: str = "tied",
                         conj_pairs: bool = False, re_max: float = -1e-3,
                         rank: int = 1) -> SsmParams:
    """Random parameters whose materialized Re(Lambda) <= re_max < 0.

    untied draws get q = -p, which keeps Prop-2 stability while exercising
    the untied code path.
    """
    if n is None:
        n = 2 + rng.below(31)
    re = rng.uniform_array((n,), -2.0, re_max)
    im = rng.uniform_array((n,), -5.0, 5.0)
    p = 0.5 * random_complex(rng, (n, rank))
    q = -p if mode == "untied" else None
    b = random_complex(rng, (n,))
    c = random_complex(rng, (n,)) / np.sqrt(n)
    d = rng.normal()
    delta = 10.0 ** rng.uniform_array((), -3.0, -1.0).item()
    raw = np.log(-re) if mode == "tied_exp" else re
    return SsmParams(
        mode=mode, lambda_re_raw=raw, lambda_im=im, p=p, q=q, b=b, c=c,
        d=float(d), delta=float(delta), conj_pairs=conj_pairs,
    )
