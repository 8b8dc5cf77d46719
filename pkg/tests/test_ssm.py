import numpy as np
import pytest

from ssmwave import ssm
from ssmwave import tensor as T
from ssmwave.tensor import Rng

from helpers import central_diff, max_rel_err, random_complex, random_stable_params


def scalar_params(mode="tied", lam_re=-0.5, lam_im=0.0, p=0.0, q=None, b=1.0,
                  c=1.0, d=0.0, delta=1.0, conj_pairs=False) -> ssm.SsmParams:
    return ssm.SsmParams(
        mode=mode,
        lambda_re_raw=np.array([lam_re]),
        lambda_im=np.array([lam_im]),
        p=np.array([[p]], dtype=np.complex128),
        q=None if q is None else np.array([[q]], dtype=np.complex128),
        b=np.array([b], dtype=np.complex128),
        c=np.array([c], dtype=np.complex128),
        d=d,
        delta=delta,
        conj_pairs=conj_pairs,
    )


class TestStateMatrix:
    def test_tied_zero_lowrank(self):
        a = ssm.state_matrix(scalar_params(lam_re=-0.5, p=0.0))
        np.testing.assert_allclose(a, [[-0.5]])

    def test_tied_unit_lowrank(self):
        a = ssm.state_matrix(scalar_params(lam_re=-0.5, p=1.0))
        np.testing.assert_allclose(a, [[-1.5]])

    def test_tied_exp_reparameterization(self):
        a = ssm.state_matrix(scalar_params(mode="tied_exp", lam_re=0.0, lam_im=2.0))
        np.testing.assert_allclose(a, [[-1.0 + 2.0j]])

    def test_tied_exp_floor_keeps_negative(self):
        prm = scalar_params(mode="tied_exp", lam_re=-100.0)
        lam = ssm.materialized_lambda(prm)
        assert lam.real[0] == -1e-6

    def test_untied_needs_q(self):
        prm = scalar_params(mode="untied", q=None)
        with pytest.raises(ValueError):
            ssm.state_matrix(prm)


class TestDiscretize:
    def test_zero_a_maps_to_identity(self):
        ds = ssm.discretize(scalar_params(mode="untied", lam_re=0.0, p=0.0, q=0.0,
                                          delta=0.37))
        np.testing.assert_allclose(ds.a_bar, [[1.0]])

    def test_scalar_bilinear_by_hand(self):
        # a=-1, b=1, delta=2: (1-1)/(1+1)=0 and (1/2)*2*1=1
        ds = ssm.discretize(scalar_params(lam_re=-1.0, b=1.0, delta=2.0))
        np.testing.assert_allclose(ds.a_bar, [[0.0]], atol=1e-15)
        np.testing.assert_allclose(ds.b_bar, [1.0])

    def test_scalar_small_delta(self):
        ds = ssm.discretize(scalar_params(lam_re=-0.5, delta=0.01))
        want = (1.0 - 0.0025) / (1.0 + 0.0025)
        np.testing.assert_allclose(ds.a_bar, [[want]], rtol=1e-12)


class TestStep:
    def test_one_step_unroll(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[0.0 + 0j]]), b_bar=np.array([1.0 + 0j]),
            c_bar=np.array([2.0 + 0j]), d_bar=0.0,
        )
        h, y = ssm.step(ds, ssm.zero_state(ds), 1.0)
        np.testing.assert_allclose(h, [1.0])
        assert y == pytest.approx(2.0)

    def test_zero_input_stays_zero(self):
        ds = ssm.discretize(scalar_params())
        h = ssm.zero_state(ds)
        for t in range(16):
            h, y = ssm.step(ds, h, 0.0, step_index=t)
            assert y == 0.0
        np.testing.assert_array_equal(h, np.zeros(1, dtype=np.complex128))

    def test_hand_recurrence(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[0.5 + 0j]]), b_bar=np.array([1.0 + 0j]),
            c_bar=np.array([1.0 + 0j]), d_bar=0.0,
        )
        h = ssm.zero_state(ds)
        ys = []
        for x in (1.0, 0.0, 0.0):
            h, y = ssm.step(ds, h, x)
            ys.append(y)
        np.testing.assert_allclose(ys, [1.0, 0.5, 0.25])

    def test_divergence_error_carries_step(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[1e308 + 0j]]), b_bar=np.array([1e308 + 0j]),
            c_bar=np.array([1.0 + 0j]), d_bar=0.0,
        )
        h, _ = ssm.step(ds, ssm.zero_state(ds), 1.0, step_index=0)
        with pytest.raises(ssm.DivergenceError) as exc:
            ssm.step(ds, h, 1.0, step_index=1)
        assert exc.value.step_index == 1


class TestKernel:
    def test_scalar_taps(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[0.5 + 0j]]), b_bar=np.array([1.0 + 0j]),
            c_bar=np.array([2.0 + 0j]), d_bar=0.0,
        )
        np.testing.assert_allclose(ssm.materialize_kernel(ds, 3), [2.0, 1.0, 0.5])

    def test_zero_readout(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[0.5 + 0j]]), b_bar=np.array([1.0 + 0j]),
            c_bar=np.array([0.0 + 0j]), d_bar=0.0,
        )
        np.testing.assert_array_equal(ssm.materialize_kernel(ds, 5), np.zeros(5))

    def test_matches_step_impulse_exactly(self):
        rng = Rng(8)
        prm = random_stable_params(rng, n=8, mode="tied")
        ds = ssm.discretize(prm)
        taps = ssm.materialize_kernel(ds, 64)
        ds_noskip = ssm.DiscreteSsm(ds.a_bar, ds.b_bar, ds.c_bar, 0.0, ds.conj_pairs)
        h = ssm.zero_state(ds)
        impulse = []
        for t in range(64):
            h, y = ssm.step(ds_noskip, h, 1.0 if t == 0 else 0.0)
            impulse.append(y)
        np.testing.assert_allclose(taps, impulse, atol=1e-12)

    def test_conj_pairs_doubles(self):
        rng = Rng(9)
        prm = random_stable_params(rng, n=4, mode="tied", conj_pairs=True)
        ds = ssm.discretize(prm)
        doubled = ssm.materialize_kernel(ds, 8)
        single = ssm.materialize_kernel(ds, 8, conj_pairs=False)
        np.testing.assert_allclose(doubled, 2.0 * single)


class TestCausalConv:
    def test_identity_kernel(self):
        x = np.array([1.0, -2.0, 3.0, 0.5])
        taps = np.array([1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(ssm.causal_conv(taps, 0.0, x), x)

    def test_pure_skip(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(ssm.causal_conv(np.zeros(3), 1.0, x), x)

    def test_matches_kernel_example(self):
        y = ssm.causal_conv(np.array([2.0, 1.0, 0.5]), 0.0, np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(y, [2.0, 1.0, 0.5])

    def test_short_kernel_rejected(self):
        with pytest.raises(ValueError):
            ssm.causal_conv(np.ones(2), 0.0, np.ones(4))

    def test_prefix_causality_is_exact(self):
        rng = Rng(10)
        prm = random_stable_params(rng, n=6)
        x = rng.normal_array((48,))
        y = ssm.conv_apply(prm, x)
        x2 = x.copy()
        x2[30] += 1.0
        y2 = ssm.conv_apply(prm, x2)
        assert np.array_equal(y[:30], y2[:30])
        assert not np.array_equal(y[30:], y2[30:])


class TestScanConvDuality:
    def test_zero_input(self):
        prm = scalar_params()
        np.testing.assert_array_equal(ssm.scan(prm, np.zeros(10)), np.zeros(10))

    def test_scalar_case(self):
        ds = ssm.DiscreteSsm(
            a_bar=np.array([[0.5 + 0j]]), b_bar=np.array([1.0 + 0j]),
            c_bar=np.array([2.0 + 0j]), d_bar=0.0,
        )
        h = ssm.zero_state(ds)
        got = []
        for x in (1.0, 0.0, 0.0):
            h, y = ssm.step(ds, h, x)
            got.append(y)
        np.testing.assert_allclose(got, [2.0, 1.0, 0.5])

    def test_random_duality(self):
        rng = Rng(100)
        prm = random_stable_params(rng, n=16, mode="tied")
        x = rng.normal_array((256,))
        err = np.max(np.abs(ssm.scan(prm, x) - ssm.conv_apply(prm, x)))
        assert err < 1e-8

    @pytest.mark.parametrize("mode", ["tied", "tied_exp", "untied"])
    def test_duality_across_modes(self, mode):
        rng = Rng(hash(mode) % 2**32)
        for trial in range(5):
            prm = random_stable_params(rng, mode=mode, conj_pairs=bool(trial % 2))
            t_len = 32 + rng.below(200)
            x = rng.normal_array((t_len,))
            err = np.max(np.abs(ssm.scan(prm, x) - ssm.conv_apply(prm, x)))
            assert err < 1e-8


class TestBidirectional:
    def _bank(self, rng, h, n=4):
        return [random_stable_params(rng, n=n) for _ in range(h)]

    def test_zero_input_zero_bias(self):
        rng = Rng(1)
        fwd = self._bank(rng, 2)
        bwd = self._bank(rng, 2)
        w = rng.normal_array((4, 2))
        out = ssm.bidirectional_apply(fwd, bwd, w, np.zeros(2), np.zeros((12, 2)))
        np.testing.assert_array_equal(out, np.zeros((12, 2)))

    def test_palindrome_symmetry(self):
        rng = Rng(2)
        fwd = self._bank(rng, 1)
        w = np.array([[0.5], [0.5]])
        x = np.array([1.0, 2.0, 3.0, 2.0, 1.0])
        out = ssm.bidirectional_apply(fwd, fwd, w, np.zeros(1), x)
        np.testing.assert_array_equal(out, out[::-1])

    def test_noncausality_witness(self):
        rng = Rng(3)
        fwd = self._bank(rng, 1)
        bwd = self._bank(rng, 1)
        w = rng.normal_array((2, 1))
        x = rng.normal_array((16,))
        out = ssm.bidirectional_apply(fwd, bwd, w, np.zeros(1), x)
        x2 = x.copy()
        x2[-1] += 1.0
        out2 = ssm.bidirectional_apply(fwd, bwd, w, np.zeros(1), x2)
        assert out2[0] != out[0]


class TestStability:
    def test_tied_is_hurwitz_by_construction(self):
        rng = Rng(40)
        prm = random_stable_params(rng, n=8, mode="tied", re_max=-0.5)
        rep = ssm.stability_report(prm)
        assert rep.hurwitz_by_construction
        assert rep.spectral_radius_abar < 1.0
        assert rep.max_re_lambda < 0.0

    def test_untied_positive_real_part(self):
        prm = scalar_params(mode="untied", lam_re=0.1, p=0.0, q=0.0, delta=0.1)
        rep = ssm.stability_report(prm)
        assert not rep.hurwitz_by_construction
        want = (1.0 + 0.005) / (1.0 - 0.005)
        assert rep.spectral_radius_abar == pytest.approx(want, abs=1e-9)
        assert rep.spectral_radius_abar > 1.0

    def test_zero_a_boundary(self):
        prm = scalar_params(mode="untied", lam_re=0.0, p=0.0, q=0.0, delta=0.3)
        rep = ssm.stability_report(prm)
        assert rep.spectral_radius_abar == pytest.approx(1.0, abs=1e-12)

    def test_tied_rollouts_stay_bounded(self):
        # smaller stand-in for the acceptance-scale run
        rng = Rng(41)
        for trial in range(10):
            prm = random_stable_params(rng, n=4 + rng.below(8), mode="tied")
            ds = ssm.discretize(prm)
            h0 = random_complex(rng, (prm.n,))
            h = h0.copy()
            for t in range(10_000):
                h = ds.a_bar @ h
            assert np.linalg.norm(h) <= np.linalg.norm(h0) * 1.01

    def test_instability_witness_norm_blowup(self):
        prm = scalar_params(mode="untied", lam_re=0.1, p=0.0, q=0.0, delta=0.1)
        ds = ssm.discretize(prm)
        h = ssm.zero_state(ds)
        h, _ = ssm.step(ds, h, 1.0, step_index=0)
        blew_up = False
        for t in range(1, 100_000):
            h = ds.a_bar @ h
            if np.linalg.norm(h) > 1e6:
                blew_up = True
                break
        assert blew_up


class TestDifferentiablePrimitives:
    def test_csolve_matches_finite_differences(self):
        rng = Rng(50)
        n, k = 3, 2
        a0 = random_complex(rng, (2, n, n)) + 4.0 * np.eye(n)
        b0 = random_complex(rng, (2, n, k))
        w = rng.normal_array((2, n, k, 2))

        def f(theta):
            sa = 2 * n * n * 2
            ap = theta[:sa].reshape(2, n, n, 2)
            bp = theta[sa:].reshape(2, n, k, 2)
            ac = ssm.pair_to_complex(ap)
            bc = ssm.pair_to_complex(bp)
            out = np.stack([np.linalg.solve(ac[i], bc[i]) for i in range(2)])
            return float(np.sum(w * ssm.complex_to_pair(out)))

        theta0 = np.concatenate([
            ssm.complex_to_pair(a0).ravel(), ssm.complex_to_pair(b0).ravel()
        ])
        want = central_diff(f, theta0)

        tape = T.Tape()
        ta = tape.leaf(ssm.complex_to_pair(a0), requires_grad=True)
        tb = tape.leaf(ssm.complex_to_pair(b0), requires_grad=True)
        x = ssm.csolve(ta, tb)
        loss = T.tsum(T.mul(x, w))
        grads = tape.backward(loss)
        got = np.concatenate([grads[ta.node].ravel(), grads[tb.node].ravel()])
        assert max_rel_err(got, want) < 1e-4

    def test_dplr_kernel_matches_finite_differences(self):
        rng = Rng(51)
        h, n, length = 2, 3, 6
        a0 = 0.5 * random_complex(rng, (h, n, n))
        b0 = random_complex(rng, (h, n))
        c0 = random_complex(rng, (h, n))
        w = rng.normal_array((h, length))

        def f(theta):
            sa = h * n * n * 2
            sb = h * n * 2
            ap = ssm.pair_to_complex(theta[:sa].reshape(h, n, n, 2))
            bp = ssm.pair_to_complex(theta[sa:sa + sb].reshape(h, n, 2))
            cp = ssm.pair_to_complex(theta[sa + sb:].reshape(h, n, 2))
            v = bp.copy()
            total = 0.0
            for i in range(length):
                taps_i = 2.0 * np.einsum("hk,hk->h", cp, v).real
                total += float(np.sum(w[:, i] * taps_i))
                v = np.matmul(ap, v[..., None])[..., 0]
            return total

        theta0 = np.concatenate([
            ssm.complex_to_pair(a0).ravel(),
            ssm.complex_to_pair(b0).ravel(),
            ssm.complex_to_pair(c0).ravel(),
        ])
        want = central_diff(f, theta0)

        tape = T.Tape()
        ta = tape.leaf(ssm.complex_to_pair(a0), requires_grad=True)
        tb = tape.leaf(ssm.complex_to_pair(b0), requires_grad=True)
        tc = tape.leaf(ssm.complex_to_pair(c0), requires_grad=True)
        taps = ssm.dplr_kernel(ta, tb, tc, length, conj_pairs=True)
        loss = T.tsum(T.mul(taps, w))
        grads = tape.backward(loss)
        got = np.concatenate([
            grads[ta.node].ravel(), grads[tb.node].ravel(), grads[tc.node].ravel()
        ])
        assert max_rel_err(got, want) < 1e-4

    def test_causal_conv_op_matches_finite_differences(self):
        rng = Rng(52)
        n_b, t_len, n_ch = 2, 5, 3
        x0 = rng.normal_array((n_b, t_len, n_ch))
        k0 = rng.normal_array((n_ch, t_len))
        d0 = rng.normal_array((n_ch,))
        w = rng.normal_array((n_b, t_len, n_ch))

        def f(theta):
            sx = x0.size
            sk = k0.size
            xd = theta[:sx].reshape(x0.shape)
            kd = theta[sx:sx + sk].reshape(k0.shape)
            dd = theta[sx + sk:]
            out = np.empty_like(xd)
            for b in range(n_b):
                for ch in range(n_ch):
                    out[b, :, ch] = np.convolve(xd[b, :, ch], kd[ch])[:t_len]
            out = out + dd * xd
            return float(np.sum(w * out))

        theta0 = np.concatenate([x0.ravel(), k0.ravel(), d0.ravel()])
        want = central_diff(f, theta0)

        tape = T.Tape()
        tx = tape.leaf(x0, requires_grad=True)
        tk = tape.leaf(k0, requires_grad=True)
        td = tape.leaf(d0, requires_grad=True)
        out = ssm.causal_conv_op(tx, tk, td)
        loss = T.tsum(T.mul(out, w))
        grads = tape.backward(loss)
        got = np.concatenate([
            grads[tx.node].ravel(), grads[tk.node].ravel(), grads[td.node].ravel()
        ])
        assert max_rel_err(got, want) < 1e-4
