"""Residual conv block oracles: zero-weight collapse, closed-form parameter
count, receptive-field locality, finite-difference gradients."""

import numpy as np
import pytest
from conftest import RNG, scalarize, t64

from hymir.convblock import ResidualConvBlock
from hymir.tensor import Tensor, grad_check


def zeroed_eval_block(channels, rng):
    blk = ResidualConvBlock(channels, rng)
    for p in blk.parameters():
        p.data[...] = 0.0
    blk.bn1.mark_populated()
    blk.bn2.mark_populated()
    blk.eval()
    return blk


def gelu_table(x):
    # independent scalar evaluation of the tanh-form GELU
    k = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(k * (x + 0.044715 * x**3)))


class TestResidualConvBlock:
    def test_zero_weights_reduce_to_gelu_of_input(self):
        blk = zeroed_eval_block(3, RNG(0))
        # zero convs feed zeros through both BNs, so only GELU(x) survives
        blk.bn1.gamma.data[...] = 1.0
        blk.bn2.gamma.data[...] = 1.0
        x = RNG(1).standard_normal((2, 3, 5, 5))
        y = blk(t64(x))
        np.testing.assert_allclose(y.data, gelu_table(x), atol=1e-12)

    def test_zero_input_zero_output(self):
        blk = zeroed_eval_block(4, RNG(2))
        y = blk(t64(np.zeros((1, 4, 6, 6))))
        assert np.all(y.data == 0.0)

    def test_parameter_count_closed_form(self):
        for c in (3, 8, 32):
            blk = ResidualConvBlock(c, RNG(0))
            expect = (9 * c * c + c) + 9 * c + (c * c + c) + 4 * c
            assert blk.param_count() == expect

    def test_shape_preserved(self):
        blk = ResidualConvBlock(2, RNG(3))
        for h, w in [(1, 1), (3, 5), (8, 8)]:
            x = Tensor(RNG(4).standard_normal((1, 2, h, w)).astype(np.float32))
            assert blk(x).shape == (1, 2, h, w)

    def test_channel_mismatch_rejected(self):
        blk = ResidualConvBlock(3, RNG(5))
        with pytest.raises(ValueError, match="C_in"):
            blk(Tensor(np.zeros((1, 4, 5, 5), dtype=np.float32)))

    def test_receptive_field_is_5x5(self):
        blk = ResidualConvBlock(2, RNG(6))
        blk.bn1.mark_populated()
        blk.bn2.mark_populated()
        blk.eval()
        x = RNG(7).standard_normal((1, 2, 9, 9))
        base = blk(t64(x)).data
        bumped = x.copy()
        bumped[0, 0, 4, 4] += 1.0
        diff = blk(t64(bumped)).data - base
        changed = np.abs(diff).sum(axis=(0, 1)) != 0.0
        rows, cols = np.nonzero(changed)
        assert changed[4, 4]
        assert np.abs(rows - 4).max() <= 2
        assert np.abs(cols - 4).max() <= 2

    def test_gradients(self, f64):
        blk = ResidualConvBlock(8, RNG(8))
        blk.bn1.mark_populated()
        blk.bn2.mark_populated()
        blk.eval()
        x = t64(RNG(9).standard_normal((1, 8, 8, 8)))
        tensors = [x] + list(blk.parameters())
        report = grad_check(scalarize(lambda *ts: blk(ts[0]), tensors, 31), tensors, tol=1e-3)
        assert report.passed, str(report)

    def test_train_mode_updates_statistics(self):
        blk = ResidualConvBlock(3, RNG(10))
        x = Tensor(RNG(11).standard_normal((2, 3, 4, 4)).astype(np.float32))
        blk(x)
        blk(x)
        assert int(blk.bn1.num_batches) == 2
        assert int(blk.bn2.num_batches) == 2
