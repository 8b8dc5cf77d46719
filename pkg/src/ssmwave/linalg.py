"""Complex dense linear algebra: LU solve, Hermitian Jacobi eigensolver,
and a power-iteration spectral-radius estimator.

All routines are hand-rolled rather than LAPACK-backed so that pivoting,
rotation order, and convergence thresholds are fully pinned: the same
arithmetic runs on every platform, and the discretization used by the
convolutional and recurrent execution modes shares one solve path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Rng

__all__ = [
    "SingularMatrixError",
    "NonHermitianError",
    "lu_solve",
    "hermitian_eig",
    "spectral_radius",
    "SpectralRadiusEstimate",
]

_PIVOT_FLOOR = 1e-300


class SingularMatrixError(ArithmeticError):
    """LU elimination hit a pivot with magnitude below 1e-300."""


class NonHermitianError(ValueError):
    """Input to the Hermitian eigensolver was not Hermitian."""


def _as_cmatrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def lu_solve(a, b) -> np.ndarray:
    """Solve A X = B by LU with partial pivoting (complex, in float64 pairs).

    A must be square and numerically nonsingular; B may have any number of
    right-hand-side columns (a 1-d B is treated as a single column).
    """
    a = _as_cmatrix(a).copy()
    b_in = np.asarray(b, dtype=np.complex128)
    vector_rhs = b_in.ndim == 1
    x = b_in.reshape(-1, 1).copy() if vector_rhs else b_in.copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("A must be square")
    if x.shape[0] != n:
        raise ValueError("B row count must match A")

    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if np.abs(a[piv, k]) < _PIVOT_FLOOR:
            raise SingularMatrixError(f"pivot {k} below {_PIVOT_FLOOR:g}")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            x[[k, piv]] = x[[piv, k]]
        factors = a[k + 1 :, k] / a[k, k]
        a[k + 1 :, k:] -= np.outer(factors, a[k, k:])
        x[k + 1 :] -= np.outer(factors, x[k])

    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1 :] @ x[k + 1 :]) / a[k, k]

    return x[:, 0] if vector_rhs else x


def _fix_phases(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real-positive."""
    for j in range(v.shape[1]):
        col = v[:, j]
        i = int(np.argmax(np.abs(col)))
        z = col[i]
        mag = np.abs(z)
        if mag > 0.0:
            v[:, j] = col * (np.conj(z) / mag)
    return v


def hermitian_eig(h, tol_scale: float = 1e-12, max_sweeps: int = 64
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi.

    Returns ``(values, vectors)`` with values real ascending (ties keep the
    original column order) and vectors unitary, column phases fixed so the
    largest-magnitude component of each eigenvector is real-positive.

    Sweeps run in fixed row-major (p, q) order and stop once the off-diagonal
    Frobenius norm drops below ``tol_scale * ||H||_F``; the off-diagonal norm
    decreases monotonically across rotations.
    """
    a = _as_cmatrix(h).copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("H must be square")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0), dtype=np.complex128)
    herm_err = np.max(np.abs(a - a.conj().T))
    if herm_err >= 1e-10:
        raise NonHermitianError(f"max |H - H*| = {herm_err:g}")
    # symmetrize so roundoff cannot push the iteration off the Hermitian manifold
    a = 0.5 * (a + a.conj().T)

    v = np.eye(n, dtype=np.complex128)
    norm_h = np.sqrt(np.sum(np.abs(a) ** 2))
    threshold = tol_scale * norm_h if norm_h > 0.0 else 0.0

    def offdiag_norm() -> float:
        off = a - np.diag(np.diag(a))
        return float(np.sqrt(np.sum(np.abs(off) ** 2)))

    for _ in range(max_sweeps):
        if offdiag_norm() <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = np.abs(apq)
                if r <= threshold / max(n, 1):
                    continue
                # phase that makes the 2x2 block real, then a real rotation
                phase = apq / r
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * r)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # J restricted to (p, q): [[c, s], [-s*conj(phase), c*conj(phase)]]
                jpp, jpq = c, s
                jqp, jqq = -s * np.conj(phase), c * np.conj(phase)
                # columns: A <- A J
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = jpp * col_p + jqp * col_q
                a[:, q] = jpq * col_p + jqq * col_q
                # rows: A <- J* A
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = np.conj(jpp) * row_p + np.conj(jqp) * row_q
                a[q, :] = np.conj(jpq) * row_p + np.conj(jqq) * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                # eigenvector accumulation: V <- V J
                vcol_p = v[:, p].copy()
                vcol_q = v[:, q].copy()
                v[:, p] = jpp * vcol_p + jqp * vcol_q
                v[:, q] = jpq * vcol_p + jqq * vcol_q

    values = np.real(np.diag(a)).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    v = v[:, order]
    return values, _fix_phases(v)


@dataclass
class SpectralRadiusEstimate:
    value: float
    converged: bool

    def __float__(self) -> float:
        return self.value


def spectral_radius(apply: Callable[[np.ndarray], np.ndarray], n: int,
                    iters: int, rng: Rng, restarts: int = 3
                    ) -> SpectralRadiusEstimate:
    """Largest |eigenvalue| of a black-box operator via power iteration.

    Runs ``restarts`` randomized starts (complex entries) to guard against
    unlucky orthogonal starts on rotation-like spectra, and reports the
    maximum final estimate. A start is converged once successive
    Rayleigh-quotient magnitudes differ by less than 1e-10; otherwise the
    last estimate is reported with ``converged=False``.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    best = 0.0
    best_converged = True
    for _ in range(max(restarts, 1)):
        v = (rng.uniform_array((n,), -1.0, 1.0)
             + 1j * rng.uniform_array((n,), -1.0, 1.0))
        nv = np.linalg.norm(v)
        if nv == 0.0:
            v = np.ones(n, dtype=np.complex128)
            nv = np.linalg.norm(v)
        v = v / nv
        est = 0.0
        converged = False
        prev_rayleigh = None
        for _ in range(max(iters, 1)):
            w = apply(v)
            norm_w = np.linalg.norm(w)
            if norm_w < 1e-300:
                est = 0.0
                converged = True
                break
            est = float(norm_w)  # ||M v|| for unit v
            rayleigh = abs(np.vdot(v, w))
            if prev_rayleigh is not None and abs(rayleigh - prev_rayleigh) < 1e-10:
                converged = True
                v = w / norm_w
                break
            prev_rayleigh = rayleigh
            v = w / norm_w
        if est > best or (est == best and converged):
            best = est
            best_converged = converged
    return SpectralRadiusEstimate(value=best, converged=best_converged)
