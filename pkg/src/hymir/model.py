"""Three-stage encoder-decoder assembly.

Layout, full resolution left to right:

    input -> stem(3x3) -> [stage 1] ----------------------------> (+) -> [stage 1'] -> head1 -> +input
                |             |                                    ^
                |           conv+pool -> concat/1x1 -> [stage 2] -(+)-> [stage 2'] -> head2 -> +input/2
                |pool         |                           |        ^
                +-------------+                         conv+pool  |1x1(up)
                |pool                                     v        |
                +------------------------> concat/1x1 -> [stage 3 -> stage 3'] -> head3 -> +input/4

Stage 1 holds residual conv blocks; stages 2 and 3 alternate directional
scan blocks with windowed attention.  Decoder stages mirror the encoder
widths and fuse skip connections by addition.  Every head starts near zero
so the untrained model is the identity restorer.
"""

import math

import numpy as np

from . import ops
from .config import ModelConfig
from .convblock import ResidualConvBlock
from .nn import Conv2d, Module, ModuleList
from .scanblock import DirectionalScanBlock
from .tensor import NonFiniteError
from .winattn import WindowAttentionBlock, window_schedule

HEAD_INIT_STD = 1e-3


def padding_multiple(cfg: ModelConfig) -> int:
    """Tile size the input is reflect-padded up to before the encoder runs.

    16 covers the two stage downsamplings and the scan-block pooling with
    room to spare; attention additionally needs each stage's window size to
    divide its map, i.e. full-res divisibility by stage_scale * window.
    """
    m = 16
    if not cfg.no_mwsa:
        for stage_scale in (2, 4):
            for i in range(cfg.blocks_per_stage // 2):
                ws = window_schedule(i, cfg.window_base, cfg.window_step)
                m = math.lcm(m, stage_scale * ws)
    return m


class RestorationModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        c = cfg.base_channels
        self.cfg = cfg

        self.stem = Conv2d(3, c, 3, rng, padding=1)
        self.enc1 = self._conv_stage(c, rng)
        self.down1 = Conv2d(c, 2 * c, 3, rng, padding=1)
        self.inject2 = Conv2d(3 * c, 2 * c, 1, rng)
        self.enc2 = self._mixed_stage(2 * c, rng)
        self.down2 = Conv2d(2 * c, 4 * c, 3, rng, padding=1)
        self.inject3 = Conv2d(5 * c, 4 * c, 1, rng)
        self.enc3 = self._mixed_stage(4 * c, rng)

        self.dec3 = self._mixed_stage(4 * c, rng)
        self.up2 = Conv2d(4 * c, 2 * c, 1, rng)
        self.dec2 = self._mixed_stage(2 * c, rng)
        self.up1 = Conv2d(2 * c, c, 1, rng)
        self.dec1 = self._conv_stage(c, rng)

        if cfg.task == "super_resolution":
            r = cfg.sr_scale
            self.sr_tail = Conv2d(c, 3 * r * r, 3, rng, padding=1, std=HEAD_INIT_STD)
        else:
            self.head1 = Conv2d(c, 3, 3, rng, padding=1, std=HEAD_INIT_STD)
            self.head2 = Conv2d(2 * c, 3, 3, rng, padding=1, std=HEAD_INIT_STD)
            self.head3 = Conv2d(4 * c, 3, 3, rng, padding=1, std=HEAD_INIT_STD)

    def _conv_stage(self, channels, rng):
        if self.cfg.no_rdcnn:
            return self._mixed_stage(channels, rng)
        return ModuleList(ResidualConvBlock(channels, rng) for _ in range(self.cfg.blocks_per_stage))

    def _mixed_stage(self, channels, rng):
        cfg = self.cfg
        blocks = ModuleList()
        attn_index = 0
        for j in range(cfg.blocks_per_stage):
            if cfg.no_mwsa or j % 2 == 0:
                blocks.append(
                    DirectionalScanBlock(
                        channels,
                        cfg.ssm_state,
                        rng,
                        mlp_ratio=cfg.mlp_ratio,
                        full_res_scans=cfg.no_dsm,
                        share_scan_params=cfg.share_scan_params,
                    )
                )
            else:
                ws = window_schedule(attn_index, cfg.window_base, cfg.window_step)
                attn_index += 1
                blocks.append(WindowAttentionBlock(channels, ws, rng, mlp_ratio=cfg.mlp_ratio))
        return blocks

    def _pad_to_multiple(self, x):
        m = padding_multiple(self.cfg)
        _, _, h, w = x.shape
        need_h, need_w = (-h) % m, (-w) % m
        # Reflect padding can at most double-minus-one an extent per step, so
        # grow in chunks; a single chunk in practice (inputs smaller than half
        # the tile are rare and still handled).
        while need_h or need_w:
            _, _, ch, cw = x.shape
            dh, dw = min(need_h, ch - 1), min(need_w, cw - 1)
            if dh == 0 and dw == 0:
                raise ValueError(f"input {h}x{w} too small to reflect-pad to a multiple of {m}")
            x = ops.pad_reflect(x, (0, dh, 0, dw))
            need_h -= dh
            need_w -= dw
        return x

    def _run(self, name, fn, *args):
        try:
            return fn(*args)
        except NonFiniteError as e:
            raise NonFiniteError(f"{name}: {e}") from None

    def _run_stage(self, name, blocks, x):
        for i, block in enumerate(blocks):
            x = self._run(f"{name}[{i}]", block, x)
        return x

    def _backbone(self, x):
        s = self._run("stem", self.stem, x)
        e1 = self._run_stage("enc1", self.enc1, s)

        s2 = ops.downsample2(s)
        t = ops.downsample2(self._run("down1", self.down1, e1))
        x2 = self._run("inject2", self.inject2, ops.concat([t, s2], axis=1))
        e2 = self._run_stage("enc2", self.enc2, x2)

        s4 = ops.downsample2(s2)
        t = ops.downsample2(self._run("down2", self.down2, e2))
        x3 = self._run("inject3", self.inject3, ops.concat([t, s4], axis=1))
        e3 = self._run_stage("enc3", self.enc3, x3)

        d3 = self._run_stage("dec3", self.dec3, e3)
        u2 = self._run("up2", self.up2, ops.upsample2(d3))
        d2 = self._run_stage("dec2", self.dec2, ops.add(u2, e2))
        u1 = self._run("up1", self.up1, ops.upsample2(d2))
        d1 = self._run_stage("dec1", self.dec1, ops.add(u1, e1))
        return d1, d2, d3

    def forward(self, image):
        """Restore an (N, 3, H, W) image.

        Restoration mode returns the prediction pyramid (P1, P2, P3) at full,
        half and quarter resolution, each a conv head plus the resampled input.
        Super-resolution mode returns the single upscaled output.  Arbitrary
        extents are reflect-padded up to the tile size and cropped back.
        """
        image = ops.as_tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(image.shape)}")
        _, _, h, w = image.shape
        x = self._pad_to_multiple(image)
        d1, d2, d3 = self._backbone(x)

        if self.cfg.task == "super_resolution":
            r = self.cfg.sr_scale
            y = ops.pixel_shuffle(self._run("sr_tail", self.sr_tail, d1), r)
            y = ops.crop2d(y, 0, h * r, 0, w * r)
            # Residual from the original input, not the padded one, so the
            # pad seam never leaks into the interpolation.
            return ops.add(y, ops.upsample_bilinear(image, r))

        x_half = ops.downsample2(x)
        x_quarter = ops.downsample2(x_half)
        p1 = ops.add(self._run("head1", self.head1, d1), x)
        p2 = ops.add(self._run("head2", self.head2, d2), x_half)
        p3 = ops.add(self._run("head3", self.head3, d3), x_quarter)
        p1 = ops.crop2d(p1, 0, h, 0, w)
        p2 = ops.crop2d(p2, 0, (h + 1) // 2, 0, (w + 1) // 2)
        p3 = ops.crop2d(p3, 0, (h + 3) // 4, 0, (w + 3) // 4)
        return p1, p2, p3

    def restore(self, image):
        """Full-resolution restored output only."""
        out = self.forward(image)
        return out if self.cfg.task == "super_resolution" else out[0]


def build(cfg: ModelConfig, seed: int = 0) -> RestorationModel:
    return RestorationModel(cfg, np.random.default_rng(seed))
