import numpy as np
import pytest

from ssmwave import linalg
from ssmwave.tensor import Rng


def random_complex(rng: Rng, shape) -> np.ndarray:
    return rng.normal_array(shape) + 1j * rng.normal_array(shape)


class TestLuSolve:
    def test_identity(self):
        b = np.array([[1.0 + 2j, 3.0], [4.0, 5.0 - 1j], [0.5, 0.5j]])
        x = linalg.lu_solve(np.eye(3), b)
        np.testing.assert_allclose(x, b)

    def test_diagonal(self):
        a = np.diag([2.0, 4.0])
        b = np.array([[2.0], [4.0]])
        x = linalg.lu_solve(a, b)
        np.testing.assert_allclose(x, [[1.0], [1.0]])

    def test_construct_then_solve(self):
        # known X, build B = A X, recover X
        rng = Rng(20)
        a = random_complex(rng, (8, 8)) + 8.0 * np.eye(8)  # well conditioned
        x_true = random_complex(rng, (8, 3))
        b = a @ x_true
        x = linalg.lu_solve(a, b)
        rel = np.max(np.abs(x - x_true)) / np.max(np.abs(x_true))
        assert rel < 1e-10

    def test_residual_property(self):
        # 100 random well-conditioned systems, n <= 32
        rng = Rng(77)
        for trial in range(100):
            n = 2 + rng.below(31)
            a = random_complex(rng, (n, n)) + (2.0 * n) * np.eye(n)
            b = random_complex(rng, (n, 2))
            x = linalg.lu_solve(a, b)
            res = np.max(np.abs(a @ x - b))
            assert res <= 1e-10 * max(np.max(np.abs(b)), 1.0)

    def test_singular_raises(self):
        a = np.zeros((2, 2), dtype=np.complex128)
        with pytest.raises(linalg.SingularMatrixError):
            linalg.lu_solve(a, np.ones((2, 1)))

    def test_vector_rhs(self):
        a = np.diag([2.0, 5.0])
        x = linalg.lu_solve(a, np.array([4.0, 10.0]))
        np.testing.assert_allclose(x, [2.0, 2.0])


class TestHermitianEig:
    def test_diagonal(self):
        vals, vecs = linalg.hermitian_eig(np.diag([2.0, 3.0]))
        np.testing.assert_allclose(vals, [2.0, 3.0])
        # identity up to column phase; phase fixing makes it exactly identity
        np.testing.assert_allclose(vecs, np.eye(2), atol=1e-12)

    def test_pauli_x(self):
        # [[0,1],[1,0]]: characteristic polynomial l^2 - 1 -> values (-1, 1)
        vals, vecs = linalg.hermitian_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(vals, [-1.0, 1.0], atol=1e-12)
        h = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(h @ vecs, vecs @ np.diag(vals), atol=1e-10)

    def test_skew_times_i(self):
        # i*S for the 2x2 skew part with entries +-sqrt(3)/2: hand eigensolve
        s = np.array([[0.0, -np.sqrt(3) / 2], [np.sqrt(3) / 2, 0.0]])
        vals, vecs = linalg.hermitian_eig(1j * s)
        np.testing.assert_allclose(vals, [-np.sqrt(3) / 2, np.sqrt(3) / 2], atol=1e-12)
        np.testing.assert_allclose(
            vecs.conj().T @ vecs, np.eye(2), atol=1e-12
        )

    def test_non_hermitian_rejected(self):
        with pytest.raises(linalg.NonHermitianError):
            linalg.hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @pytest.mark.parametrize("n", [3, 8, 17, 32])
    def test_random_reconstruction(self, n):
        rng = Rng(n)
        m = rng.normal_array((n, n)) + 1j * rng.normal_array((n, n))
        h = 0.5 * (m + m.conj().T)
        vals, vecs = linalg.hermitian_eig(h)
        assert np.all(np.diff(vals) >= -1e-12)
        np.testing.assert_allclose(h @ vecs, vecs @ np.diag(vals), atol=1e-8)
        np.testing.assert_allclose(vecs.conj().T @ vecs, np.eye(n), atol=1e-8)

    def test_offdiagonal_norm_decreases_across_sweeps(self):
        # rerun with increasing sweep budgets: the residual off-diagonal
        # Frobenius norm must fall monotonically (within roundoff) and end
        # below the 1e-12 * ||H||_F termination threshold
        rng = Rng(4)
        m = rng.normal_array((12, 12)) + 1j * rng.normal_array((12, 12))
        h = 0.5 * (m + m.conj().T)

        def offnorm(a):
            off = a - np.diag(np.diag(a))
            return np.sqrt(np.sum(np.abs(off) ** 2))

        norms = [offnorm(h)]
        for sweeps in (1, 2, 3, 4, 64):
            _, vecs = linalg.hermitian_eig(h, max_sweeps=sweeps)
            norms.append(offnorm(vecs.conj().T @ h @ vecs))
        for a, b in zip(norms, norms[1:]):
            assert b <= a + 1e-12
        assert norms[-1] <= 1e-10 * np.sqrt(np.sum(np.abs(h) ** 2))


class TestSpectralRadius:
    def test_diagonal_dominant(self):
        m = np.diag([0.9, 0.5])
        est = linalg.spectral_radius(lambda v: m @ v, 2, 200, Rng(1))
        assert abs(est.value - 0.9) < 1e-8
        assert est.converged

    def test_zero_operator(self):
        est = linalg.spectral_radius(lambda v: 0.0 * v, 3, 50, Rng(2))
        assert est.value == 0.0
        assert est.converged

    def test_rotation(self):
        # eigenvalues +-i share modulus 1; randomized restarts take the max
        m = np.array([[0.0, 1.0], [-1.0, 0.0]])
        est = linalg.spectral_radius(lambda v: m @ v, 2, 500, Rng(3))
        assert abs(est.value - 1.0) < 1e-6

    def test_known_spectra_property(self):
        # diagonal matrices conjugated by random well-conditioned similarity
        rng = Rng(9)
        for trial in range(20):
            n = 2 + rng.below(7)
            lam = rng.uniform_array((n,), -1.5, 1.5)
            lam[rng.below(n)] = 2.0  # enforce a dominant-eigenvalue gap
            target = 2.0
            q = rng.normal_array((n, n)) + 3.0 * np.eye(n)
            m = q @ np.diag(lam) @ np.linalg.inv(q)
            est = linalg.spectral_radius(lambda v: m @ v, n, 3000, Rng(trial))
            assert abs(est.value - target) < 1e-6
