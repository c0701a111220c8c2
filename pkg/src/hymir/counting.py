"""Parameter and FLOP accounting, itemized per model component.

FLOPs are multiply-accumulates by default (1 MAC = 1 FLOP, the convention
restoration papers use for sizes like these); pass flops_per_mac=2 for the
strict multiply-plus-add count.  Normalizations, activations, poolings,
residual additions and the per-channel scan scalings are excluded; at the
default size they are well under one percent of the total.
"""

from dataclasses import dataclass, field

from .convblock import ResidualConvBlock
from .model import RestorationModel, padding_multiple
from .scanblock import DirectionalScanBlock
from .winattn import WindowAttentionBlock


@dataclass
class CountReport:
    title: str
    unit: str
    items: list = field(default_factory=list)
    note: str = ""

    @property
    def total(self):
        return sum(v for _, v in self.items)

    def format_lines(self):
        width = max(len(name) for name, _ in self.items)
        total = self.total
        lines = [f"{self.title} ({self.unit})"]
        for name, value in self.items:
            share = 100.0 * value / total if total else 0.0
            lines.append(f"  {name:<{width}}  {value:>14,}  {share:5.1f}%")
        lines.append(f"  {'total':<{width}}  {total:>14,}")
        if self.note:
            lines.append(f"  note: {self.note}")
        return lines

    def __str__(self):
        return "\n".join(self.format_lines())


def count_params(model: RestorationModel) -> CountReport:
    report = CountReport("parameters", "count")
    for name, sub in model._modules.items():
        report.items.append((name, sub.param_count()))
    return report


def _conv_macs(c_in, c_out, k, h, w):
    return h * w * c_out * c_in * k * k


def _upsample_macs(c, h_out, w_out):
    # Separable bilinear: at most two taps per axis.
    return 4 * c * h_out * w_out


def _scan_unit_macs(unit, length):
    c = unit.scan.channels
    n = unit.scan.state_size
    macs = length * c * 2 * c          # in_proj
    macs += length * c * c             # delta projection
    macs += 2 * length * c * n         # B and C projections
    macs += 6 * length * c * n         # discretize, recurrence, readout
    macs += 3 * length * c             # gate product, SiLU, D path
    macs += length * c * c             # out_proj
    return macs


def _mlp_macs(mlp, tokens):
    c_in, hidden = mlp.fc1.weight.shape
    return tokens * hidden * (c_in + mlp.fc2.weight.shape[1])


def _block_macs(block, h, w):
    if isinstance(block, ResidualConvBlock):
        c = block.channels
        return _conv_macs(c, c, 3, h, w) + 9 * c * h * w + _conv_macs(c, c, 1, h, w)
    if isinstance(block, DirectionalScanBlock):
        length = h * w
        macs = _scan_unit_macs(block._units["hf"], length)
        for d in ("hb", "vf", "vb"):
            macs += _scan_unit_macs(block._units[d], length if block.full_res_scans else length // 4)
        if not block.full_res_scans:
            macs += _upsample_macs(block.channels, h, w)
        return macs + _mlp_macs(block.mlp, length)
    if isinstance(block, WindowAttentionBlock):
        c = block.channels
        length = h * w
        t = min(block.window_size, h, w) ** 2
        macs = 4 * length * c * c          # QKV and output projections
        macs += 2 * length * t * c         # scores and attention-weighted sum
        return macs + _mlp_macs(block.mlp, length)
    raise TypeError(f"no FLOP model for block type {type(block).__name__}")


def _stage_macs(blocks, h, w):
    return sum(_block_macs(b, h, w) for b in blocks)


def count_flops(model: RestorationModel, height, width, flops_per_mac=1) -> CountReport:
    """FLOPs of one forward pass on a (1, 3, height, width) input.

    Counted at the internally padded extent, exactly what forward executes.
    """
    cfg = model.cfg
    m = padding_multiple(cfg)
    h1, w1 = height + (-height) % m, width + (-width) % m
    h2, w2 = h1 // 2, w1 // 2
    h4, w4 = h2 // 2, w2 // 2
    c = cfg.base_channels

    items = [
        ("stem", _conv_macs(3, c, 3, h1, w1)),
        ("enc1", _stage_macs(model.enc1, h1, w1)),
        ("down1", _conv_macs(c, 2 * c, 3, h1, w1)),
        ("inject2", _conv_macs(3 * c, 2 * c, 1, h2, w2)),
        ("enc2", _stage_macs(model.enc2, h2, w2)),
        ("down2", _conv_macs(2 * c, 4 * c, 3, h2, w2)),
        ("inject3", _conv_macs(5 * c, 4 * c, 1, h4, w4)),
        ("enc3", _stage_macs(model.enc3, h4, w4)),
        ("dec3", _stage_macs(model.dec3, h4, w4)),
        ("up2", _upsample_macs(4 * c, h2, w2) + _conv_macs(4 * c, 2 * c, 1, h2, w2)),
        ("dec2", _stage_macs(model.dec2, h2, w2)),
        ("up1", _upsample_macs(2 * c, h1, w1) + _conv_macs(2 * c, c, 1, h1, w1)),
        ("dec1", _stage_macs(model.dec1, h1, w1)),
    ]
    if cfg.task == "super_resolution":
        r = cfg.sr_scale
        items.append(("sr_tail", _conv_macs(c, 3 * r * r, 3, h1, w1) + _upsample_macs(3, h1 * r, w1 * r)))
    else:
        items.append(("head1", _conv_macs(c, 3, 3, h1, w1)))
        items.append(("head2", _conv_macs(2 * c, 3, 3, h2, w2)))
        items.append(("head3", _conv_macs(4 * c, 3, 3, h4, w4)))

    convention = "1 FLOP per multiply-accumulate" if flops_per_mac == 1 else f"{flops_per_mac} FLOPs per multiply-accumulate"
    report = CountReport(
        f"forward FLOPs at {height}x{width}" + (f" (padded to {h1}x{w1})" if (h1, w1) != (height, width) else ""),
        "FLOPs",
        [(name, value * flops_per_mac) for name, value in items],
        note=f"{convention}; norms, activations, poolings and residual adds excluded",
    )
    return report
