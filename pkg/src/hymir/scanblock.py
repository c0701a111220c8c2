"""Multi-directional state-space mixing block.

One gated scan runs over the full-resolution map in horizontal-forward
order; the remaining three directions (horizontal-backward, vertical
forward/backward) run on a 2x average-pooled copy and are bilinearly
upsampled back, which cuts their sequence length 4x. The four direction
outputs are summed, then two scaled residual stages follow: a per-channel
gamma1 on the input, and a gamma2-weighted residual around a pointwise MLP.
"""

import numpy as np

from . import ops
from .nn import LayerNorm, Mlp, Module, Parameter
from .ssm import GatedScanUnit, inverse_reorder, reorder
from .tensor import default_dtype

LOW_RES_DIRECTIONS = ("hb", "vf", "vb")


class DirectionalScanBlock(Module):
    """Four directional gated scans with learned residual scalings.

    full_res_scans=True runs every direction at full resolution (the
    ablation that removes the internal pooling); share_scan_params=True
    reuses one parameter set for all four directions.
    """

    def __init__(
        self,
        channels,
        state_size,
        rng,
        mlp_ratio=2.0,
        full_res_scans=False,
        share_scan_params=False,
    ):
        super().__init__()
        self.channels = channels
        self.full_res_scans = full_res_scans
        self.norm1 = LayerNorm(channels, axis=1)
        units = {"hf": GatedScanUnit(channels, state_size, rng)}
        for d in LOW_RES_DIRECTIONS:
            units[d] = units["hf"] if share_scan_params else GatedScanUnit(channels, state_size, rng)
        self.scan_hf = units["hf"]
        if not share_scan_params:
            self.scan_hb = units["hb"]
            self.scan_vf = units["vf"]
            self.scan_vb = units["vb"]
        self._units = units
        dt = default_dtype()
        self.gamma1 = Parameter(np.ones(channels, dtype=dt))
        self.gamma2 = Parameter(np.ones(channels, dtype=dt))
        self.norm2 = LayerNorm(channels, axis=1)
        self.mlp = Mlp(channels, mlp_ratio, rng)

    def _scan(self, x, direction, height, width):
        seq = self._units[direction](reorder(x, direction))
        return inverse_reorder(seq, direction, height, width)

    def forward(self, x):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"scan block needs H and W divisible by 2, got {h}x{w}")
        normed = self.norm1(x)
        y = self._scan(normed, "hf", h, w)
        if self.full_res_scans:
            for d in LOW_RES_DIRECTIONS:
                y = ops.add(y, self._scan(normed, d, h, w))
        else:
            pooled = ops.downsample2(normed)
            hh, hw = h // 2, w // 2
            low = self._scan(pooled, LOW_RES_DIRECTIONS[0], hh, hw)
            for d in LOW_RES_DIRECTIONS[1:]:
                low = ops.add(low, self._scan(pooled, d, hh, hw))
            y = ops.add(y, ops.upsample2(low))
        z = ops.add(ops.mul(x, ops.reshape(self.gamma1, (1, c, 1, 1))), y)
        tok = reorder(self.norm2(z), "hf")
        refined = inverse_reorder(self.mlp(tok), "hf", h, w)
        return ops.add(ops.mul(z, ops.reshape(self.gamma2, (1, c, 1, 1))), refined)
