"""HiPPO state matrices and their shift + skew + low-rank decomposition.

The three classic families (LagT, LegS, LegT) are built exactly from their
closed forms, split as ``A = c*I - S - P P^T`` with S real skew-symmetric and
P of rank 1 or 2, then diagonalized through the Hermitian matrix ``i*S`` into
``V* A V = diag(Lambda) - p~ p~*`` with Re(Lambda) constant. The B vector has
no closed form here; downstream state-space layers document their own B
initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import hermitian_eig

__all__ = [
    "FAMILIES",
    "HippoSpec",
    "NplrDecomposition",
    "DplrTransform",
    "build_hippo",
    "nplr_decompose",
    "dplr_from_nplr",
    "dplr",
    "verify_decomposition",
    "DecompositionReport",
]

FAMILIES = ("lagt", "legs", "legt")


@dataclass(frozen=True)
class HippoSpec:
    """Which family to build, at what state size (beta only for LagT)."""

    family: str
    n: int
    beta: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 1:
            raise ValueError("state size must be >= 1")
        if self.family == "lagt":
            if self.beta is None:
                object.__setattr__(self, "beta", 0.0)
            if not 0.0 <= float(self.beta) <= 0.5:
                raise ValueError("beta must lie in [0, 1/2]")
        elif self.beta is not None:
            raise ValueError("beta is only meaningful for the lagt family")


@dataclass
class NplrDecomposition:
    """A = shift*I - skew - low_rank @ low_rank.T with skew real skew-symmetric."""

    shift: float
    skew: np.ndarray        # (n, n) real
    low_rank: np.ndarray    # (n, r) real, r in {1, 2}

    @property
    def rank(self) -> int:
        return self.low_rank.shape[1]


@dataclass
class DplrTransform:
    """Unitary diagonalization: V* A V = diag(lam) - p_tilde @ p_tilde*."""

    lam: np.ndarray       # (n,) complex, Re constant
    p_tilde: np.ndarray   # (n, r) complex
    v: np.ndarray         # (n, n) unitary


def build_hippo(spec: HippoSpec) -> np.ndarray:
    """Dense n x n matrix from the family's closed form (real entries)."""
    n = spec.n
    idx = np.arange(n)
    if spec.family == "lagt":
        a = np.zeros((n, n))
        a[idx[:, None] > idx[None, :]] = -1.0
        np.fill_diagonal(a, -0.5 - float(spec.beta))
        return a
    if spec.family == "legs":
        root = np.sqrt(2.0 * idx + 1.0)
        a = -np.outer(root, root)
        a[idx[:, None] <= idx[None, :]] = 0.0
        np.fill_diagonal(a, -(idx + 1.0))
        return a
    # legt, unscaled +-1 form
    a = np.ones((n, n))
    upper = idx[None, :] > idx[:, None]
    signs = np.where((idx[None, :] - idx[:, None]) % 2 == 1, -1.0, 1.0)
    a = np.where(upper, signs, a)
    return -a


def nplr_decompose(spec: HippoSpec) -> NplrDecomposition:
    """Split the family matrix into shift + skew-symmetric + low-rank parts."""
    n = spec.n
    idx = np.arange(n)
    if spec.family == "lagt":
        shift = -float(spec.beta)
        skew = np.zeros((n, n))
        skew[idx[:, None] > idx[None, :]] = 0.5
        skew[idx[:, None] < idx[None, :]] = -0.5
        low_rank = np.full((n, 1), np.sqrt(0.5))
    elif spec.family == "legs":
        shift = -0.5
        root = np.sqrt(2.0 * idx + 1.0)
        skew = 0.5 * np.outer(root, root)
        skew[idx[:, None] < idx[None, :]] *= -1.0
        np.fill_diagonal(skew, 0.0)
        low_rank = np.sqrt(idx + 0.5).reshape(n, 1)
    else:  # legt
        shift = 0.0
        diff = idx[:, None] - idx[None, :]
        skew = np.where((diff > 0) & (diff % 2 == 1), 1.0, 0.0)
        skew = skew - skew.T
        low_rank = np.zeros((n, 2))
        low_rank[idx % 2 == 0, 0] = 1.0
        low_rank[idx % 2 == 1, 1] = 1.0
    return NplrDecomposition(shift=shift, skew=skew, low_rank=low_rank)


def dplr_from_nplr(d: NplrDecomposition) -> DplrTransform:
    """Diagonalize the skew part via the Hermitian matrix i*S.

    With i*S = V diag(omega) V*, the state matrix becomes
    V* A V = diag(shift + i*omega) - (V* P)(V* P)*. Eigenvalues are ordered
    by ascending imaginary part (the eigensolver's ascending omega order).
    """
    values, v = hermitian_eig(1j * d.skew)
    lam = d.shift + 1j * values
    p_tilde = v.conj().T @ d.low_rank.astype(np.complex128)
    return DplrTransform(lam=lam, p_tilde=p_tilde, v=v)


def dplr(spec: HippoSpec) -> DplrTransform:
    """Full pipeline: closed form -> NPLR split -> unitary diagonalization."""
    return dplr_from_nplr(nplr_decompose(spec))


@dataclass
class DecompositionReport:
    reconstruction_err: float
    unitarity_err: float
    re_lambda_err: float
    rank: int

    def ok(self, tol: float = 1e-8) -> bool:
        return (self.reconstruction_err < tol and self.unitarity_err < tol
                and self.re_lambda_err < tol)


def verify_decomposition(spec: HippoSpec) -> DecompositionReport:
    """Run the pipeline and report max residuals (errors become large residuals).

    ``reconstruction_err`` covers both identities: the elementwise NPLR
    rebuild ``shift*I - S - P P^T == A`` and the similarity
    ``V* A V == diag(lam) - p~ p~*``.
    """
    a = build_hippo(spec)
    d = nplr_decompose(spec)
    n = spec.n
    nplr_err = np.max(np.abs(
        d.shift * np.eye(n) - d.skew - d.low_rank @ d.low_rank.T - a
    ))
    t = dplr_from_nplr(d)
    similar = t.v.conj().T @ a.astype(np.complex128) @ t.v
    dplr_err = np.max(np.abs(similar - (np.diag(t.lam) - t.p_tilde @ t.p_tilde.conj().T)))
    unitarity = np.max(np.abs(t.v.conj().T @ t.v - np.eye(n)))
    re_err = np.max(np.abs(t.lam.real - d.shift))
    return DecompositionReport(
        reconstruction_err=float(max(nplr_err, dplr_err)),
        unitarity_err=float(unitarity),
        re_lambda_err=float(re_err),
        rank=d.rank,
    )
