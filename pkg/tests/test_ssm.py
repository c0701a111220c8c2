"""State-space scan oracles.

The recurrence is checked three independent ways: hand-computed impulse
responses, the LTI kernel-convolution route (valid whenever parameters are
time-constant), and finite differences through the fused adjoint.
"""

import numpy as np
import pytest
from conftest import RNG, scalarize, sweep, t64

from hymir import ops, ssm
from hymir.tensor import Tensor, grad_check

LN2 = np.log(2.0)


def const_seq(value, b, l, trailing):
    """Tile a constant parameter along (B, L, ...)."""
    base = np.asarray(value, dtype=np.float64)
    return t64(np.broadcast_to(base, (b, l) + trailing).copy())


# ---------------------------------------------------------------------------
# Reorderings


class TestReorder:
    def grid(self):
        # [[a,b],[c,d]] with distinguishable values
        return t64(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))

    def test_two_by_two_orders(self):
        x = self.grid()
        expect = {
            "hf": [1.0, 2.0, 3.0, 4.0],
            "hb": [4.0, 3.0, 2.0, 1.0],
            "vf": [1.0, 3.0, 2.0, 4.0],
            "vb": [4.0, 2.0, 3.0, 1.0],
        }
        for d, seq in expect.items():
            np.testing.assert_array_equal(ssm.reorder(x, d).data[0, :, 0], seq)

    def test_round_trip_identity(self):
        x = t64(RNG(0).standard_normal((2, 3, 5, 7)))
        for d in ssm.SCAN_DIRECTIONS:
            back = ssm.inverse_reorder(ssm.reorder(x, d), d, 5, 7)
            np.testing.assert_array_equal(back.data, x.data)

    def test_is_permutation(self):
        x = t64(RNG(1).standard_normal((1, 2, 4, 6)))
        for d in ssm.SCAN_DIRECTIONS:
            seq = ssm.reorder(x, d)
            assert seq.shape == (1, 24, 2)
            np.testing.assert_array_equal(np.sort(seq.data.ravel()), np.sort(x.data.ravel()))

    def test_unknown_direction_rejected(self):
        with pytest.raises(ValueError, match="direction"):
            ssm.reorder(self.grid(), "diagonal")

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            ssm.inverse_reorder(t64(np.zeros((1, 6, 2))), "hf", 2, 2)

    def test_gradients_flow_through(self, f64):
        for d in ssm.SCAN_DIRECTIONS:
            sweep(
                lambda rng: [t64(rng.standard_normal((1, 2, 3, 4)))],
                lambda x, _d=d: ssm.reorder(x, _d),
                n=2,
                seed=hash(d) % 1000,
            )


# ---------------------------------------------------------------------------
# Discretization


class TestDiscretizeZoh:
    def test_closed_form_case(self):
        delta = const_seq(LN2, 1, 1, (1,))
        abar, bbar = ssm.discretize_zoh(delta, t64([[-1.0]]), const_seq(1.0, 1, 1, (1,)))
        assert abs(abar.data[0, 0, 0, 0] - 0.5) < 1e-15
        assert abs(bbar.data[0, 0, 0, 0] - LN2) < 1e-15

    def test_zero_a_forbidden_and_limit(self):
        delta = const_seq(1.0, 1, 1, (1,))
        b = const_seq(1.0, 1, 1, (1,))
        with pytest.raises(ValueError, match="A < 0"):
            ssm.discretize_zoh(delta, t64([[0.0]]), b)
        abar, _ = ssm.discretize_zoh(delta, t64([[-1e-9]]), b)
        assert abs(abar.data[0, 0, 0, 0] - (1.0 - 1e-9)) < 1e-12

    def test_nonpositive_delta_rejected(self):
        b = const_seq(1.0, 1, 1, (1,))
        for bad in (0.0, -0.3):
            with pytest.raises(ValueError, match="Delta > 0"):
                ssm.discretize_zoh(const_seq(bad, 1, 1, (1,)), t64([[-1.0]]), b)

    def test_abar_strictly_inside_unit_interval(self):
        rng = RNG(3)
        n = 10_000
        delta = t64(rng.uniform(1e-6, 1.0, size=(1, n, 1)))
        a = t64(rng.uniform(-2.0, -0.1, size=(1, 1)))
        abar, _ = ssm.discretize_zoh(delta, a, t64(np.ones((1, n, 1))))
        assert np.all(abar.data > 0.0)
        assert np.all(abar.data < 1.0)

    def test_gradients(self, f64):
        def make(rng):
            return [
                t64(rng.uniform(0.05, 1.0, size=(2, 3, 4))),
                t64(rng.uniform(-2.0, -0.1, size=(4, 2))),
                t64(rng.standard_normal((2, 3, 2))),
            ]

        sweep(make, lambda d, a, b: ops.add(*ssm.discretize_zoh(d, a, b)), n=5)


# ---------------------------------------------------------------------------
# The recurrence


class TestScanRecurrence:
    def test_impulse_decays_geometrically(self):
        # Delta=ln2, A=-1, B=1, C=1, D=0, x=[1,0,0]: Abar=0.5, Bbar=ln2
        x = t64(np.array([1.0, 0.0, 0.0]).reshape(1, 3, 1))
        y = ssm.run_scan(
            x,
            const_seq(LN2, 1, 3, (1,)),
            t64([[-1.0]]),
            const_seq(1.0, 1, 3, (1,)),
            const_seq(1.0, 1, 3, (1,)),
        )
        np.testing.assert_allclose(y.data[0, :, 0], [LN2, 0.5 * LN2, 0.25 * LN2], atol=1e-15)

    def test_zero_input_zero_output(self):
        rng = RNG(5)
        x = t64(np.zeros((2, 6, 3)))
        y = ssm.run_scan(
            x,
            t64(rng.uniform(0.1, 1.0, size=(2, 6, 3))),
            t64(rng.uniform(-2.0, -0.5, size=(3, 4))),
            t64(rng.standard_normal((2, 6, 4))),
            t64(rng.standard_normal((2, 6, 4))),
            t64(rng.standard_normal(3)),
        )
        assert np.all(y.data == 0.0)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="B,L,N"):
            ssm.scan_recurrence(t64(np.ones((1, 2, 3, 4))), t64(np.ones((1, 2, 3, 4))), t64(np.ones((1, 3, 4))))

    def test_stability_over_long_sequences(self):
        # N=1 with C=1 reads the state out directly, so the bound on |h|
        # is checked verbatim: |h_t| <= max|Bx| / (1 - max Abar).
        rng = RNG(7)
        length = 4096
        x = t64(rng.uniform(-1.0, 1.0, size=(1, length, 1)))
        delta = const_seq(1.0, 1, length, (1,))
        y = ssm.run_scan(x, delta, t64([[-0.5]]), const_seq(1.0, 1, length, (1,)), const_seq(1.0, 1, length, (1,)))
        abar_max = np.exp(-0.5)
        bound = np.abs(x.data).max() / (1.0 - abar_max)
        assert np.isfinite(y.data).all()
        assert np.abs(y.data).max() <= bound + 1e-12

    def test_causality_bit_identical(self):
        rng = RNG(9)
        x1 = rng.standard_normal((1, 12, 3))
        x2 = x1.copy()
        x2[:, 8:] += rng.standard_normal((1, 4, 3))
        m = ssm.SelectiveScan(3, 4, RNG(0))
        y1 = m(t64(x1))
        y2 = m(t64(x2))
        assert np.array_equal(y1.data[:, :8], y2.data[:, :8])
        assert not np.array_equal(y1.data[:, 8:], y2.data[:, 8:])

    def test_fused_adjoint_matches_finite_differences(self, f64):
        def make(rng):
            return [
                t64(rng.uniform(0.1, 0.9, size=(2, 5, 3, 2))),
                t64(rng.standard_normal((2, 5, 3, 2))),
                t64(rng.standard_normal((2, 5, 2))),
            ]

        sweep(make, ssm.scan_recurrence, n=5)

    def test_selective_scan_gradient(self, f64):
        # the whole input-dependent path: L=8, C=2, N=2
        m = ssm.SelectiveScan(2, 2, RNG(11))
        x = t64(RNG(12).standard_normal((1, 8, 2)))
        tensors = [x] + list(m.parameters())
        report = grad_check(scalarize(lambda *ts: m(ts[0]), tensors, 55), tensors, tol=1e-3)
        assert report.passed, str(report)


# ---------------------------------------------------------------------------
# LTI oracle


class TestLtiKernel:
    def test_closed_form(self):
        k = ssm.lti_kernel(np.array([[0.5]]), np.array([[1.0]]), np.array([1.0]), length=3)
        np.testing.assert_allclose(k[:, 0], [1.0, 0.5, 0.25], atol=1e-15)

    def test_memoryless_degenerate(self):
        k = ssm.lti_kernel(np.array([[0.0]]), np.array([[2.0]]), np.array([3.0]), length=4)
        np.testing.assert_allclose(k[:, 0], [6.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_time_varying_rejected(self):
        abar = np.ones((4, 2, 3)) * 0.5
        abar[2, 0, 0] = 0.4
        with pytest.raises(ValueError, match="time-constant"):
            ssm.lti_kernel(abar, np.ones((4, 2, 3)), np.ones((4, 3)))

    def test_recurrence_equals_kernel_convolution(self, f64):
        # L=16, N=4 frozen system, plus the L<=64, N<=8 corners
        for seed, length, ch, n in [(0, 16, 3, 4), (1, 64, 2, 8), (2, 7, 1, 1)]:
            rng = RNG(seed)
            x = rng.standard_normal((2, length, ch))
            delta_c = rng.uniform(0.1, 1.0, size=ch)
            a = rng.uniform(-2.0, -0.1, size=(ch, n))
            b_c = rng.standard_normal(n)
            c_c = rng.standard_normal(n)

            delta = const_seq(delta_c, 2, length, (ch,))
            bmat = const_seq(b_c, 2, length, (n,))
            cmat = const_seq(c_c, 2, length, (n,))
            y = ssm.run_scan(t64(x), delta, t64(a), bmat, cmat)

            abar, bbar = ssm.discretize_zoh(delta, t64(a), bmat)
            kernel = ssm.lti_kernel(abar.data[0], bbar.data[0], cmat.data[0])
            y_conv = ssm.apply_lti_kernel(x, kernel)
            np.testing.assert_allclose(y.data, y_conv, atol=1e-9)

    def test_apply_kernel_shape_checked(self):
        with pytest.raises(ValueError, match="does not match"):
            ssm.apply_lti_kernel(np.zeros((2, 5, 3)), np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# Gated unit


class TestGatedScanUnit:
    def test_shape_preserved(self):
        m = ssm.GatedScanUnit(4, 2, RNG(0))
        x = Tensor(RNG(1).standard_normal((2, 9, 4)).astype(np.float32))
        assert m(x).shape == (2, 9, 4)

    def test_zero_weights_zero_output(self):
        m = ssm.GatedScanUnit(3, 2, RNG(2))
        for p in m.parameters():
            p.data[...] = 0.0
        x = Tensor(RNG(3).standard_normal((1, 5, 3)).astype(np.float32))
        assert np.all(m(x).data == 0.0)

    def test_gradient(self, f64):
        m = ssm.GatedScanUnit(2, 2, RNG(4))
        x = t64(RNG(5).standard_normal((1, 6, 2)))
        tensors = [x] + list(m.parameters())
        report = grad_check(scalarize(lambda *ts: m(ts[0]), tensors, 77), tensors, tol=1e-3)
        assert report.passed, str(report)
