"""Residual separable-convolution block for the full-resolution stages."""

from . import ops
from .nn import BatchNorm2d, Conv2d, DepthwiseConv2d, Module


class ResidualConvBlock(Module):
    """conv3 -> BN -> GELU -> depthwise -> pointwise -> BN, residual, GELU.

    The depthwise conv carries no bias: it would be absorbed by the pointwise
    bias immediately after. Padding 1 everywhere keeps the extent, so the
    residual addition is always well-defined; the receptive field of one
    block is 5x5 (two stacked 3x3 stages).
    """

    def __init__(self, channels, rng):
        super().__init__()
        self.channels = channels
        self.conv3 = Conv2d(channels, channels, 3, rng, padding=1, bias=True)
        self.bn1 = BatchNorm2d(channels)
        self.dw = DepthwiseConv2d(channels, 3, rng, padding=1, bias=False)
        self.pw = Conv2d(channels, channels, 1, rng, bias=True)
        self.bn2 = BatchNorm2d(channels)

    def forward(self, x):
        y = ops.gelu(self.bn1(self.conv3(x)))
        y = self.pw(self.dw(y))
        return ops.gelu(ops.add(self.bn2(y), x))
