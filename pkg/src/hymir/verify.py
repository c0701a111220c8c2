"""Built-in self checks: finite-difference gradient sweeps and exact
structural or analytic anchors, runnable wherever the package is installed.

Two suites.  "grads" re-derives every block's backward pass from central
differences in 64-bit; "oracles" checks the identities that hold exactly
(round trips, zero-weight collapses) and the closed-form anchors (the LTI
kernel equivalence, metric values, the optimizer trace).  The CLI `verify`
subcommand is a thin printer over run_suite.
"""

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops, ssm
from .checkpoint import load_checkpoint, load_state, save_checkpoint
from .config import ModelConfig
from .convblock import ResidualConvBlock
from .losses import total_loss
from .metrics import psnr, ssim
from .model import build
from .nn import BatchNorm2d, Parameter
from .scanblock import DirectionalScanBlock
from .tensor import Tensor, grad_check, using_dtype
from .trainer import Adam
from .winattn import WindowAttentionBlock, window_merge, window_partition

GRAD_TOL = 1e-3
LTI_TOL = 1e-9
SUITES = ("grads", "oracles", "all")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def format_line(self):
        mark = " ok " if self.passed else "FAIL"
        tail = f": {self.detail}" if self.detail else ""
        return f"[{mark}] {self.name} ({self.seconds:.1f}s){tail}"


def _rng(seed):
    return np.random.default_rng(seed)


def _t64(arr, req=True):
    t = Tensor(np.asarray(arr, dtype=np.float64))
    t.requires_grad = req
    return t


def _sweep(name, make_inputs, fn, n=3, sample=None):
    """n seeded finite-difference passes; any failure aborts with the report."""
    worst = 0.0
    checked = 0
    for seed in range(n):
        tensors = make_inputs(seed)
        report = grad_check(lambda: fn(*tensors), tensors, tol=GRAD_TOL, sample=sample, rng=_rng(seed))
        if not report.passed:
            raise AssertionError(f"{name} seed {seed}: {report}")
        worst = max(worst, report.max_rel_err)
        checked += report.num_checked
    return f"max_rel_err {worst:.2e} over {checked} coords, tol {GRAD_TOL:.0e}"


def _populate_bn(module):
    for _, m in module.named_modules():
        if isinstance(m, BatchNorm2d):
            m.mark_populated()


# ---------------------------------------------------------------------------
# Gradient checks (64-bit, tol 1e-3)


def check_conv_block_grads():
    with using_dtype(np.float64):
        block = ResidualConvBlock(3, _rng(7))
    block.eval()
    _populate_bn(block)

    def make(seed):
        params = [p for _, p in block.named_parameters()]
        return [_t64(_rng(seed).standard_normal((2, 3, 6, 6)))] + params

    return _sweep("conv block", make, lambda x, *_: ops.sum(block(x)), n=3, sample=6)


def check_scan_block_grads():
    with using_dtype(np.float64):
        block = DirectionalScanBlock(4, 3, _rng(3))

    def make(seed):
        params = [p for _, p in block.named_parameters()]
        return [_t64(_rng(seed).standard_normal((1, 4, 6, 6)))] + params

    return _sweep("scan block", make, lambda x, *_: ops.sum(block(x)), n=2, sample=5)


def check_attention_block_grads():
    with using_dtype(np.float64):
        block = WindowAttentionBlock(4, 2, _rng(5))

    def make(seed):
        params = [p for _, p in block.named_parameters()]
        return [_t64(_rng(seed).standard_normal((1, 4, 4, 4)))] + params

    return _sweep("attention block", make, lambda x, *_: ops.sum(block(x)), n=2, sample=6)


def check_model_grads():
    cfg = ModelConfig(base_channels=4, blocks_per_stage=2, window_base=4, window_step=4, ssm_state=2)
    with using_dtype(np.float64):
        model = build(cfg, seed=0)
    model.train()

    def forward(x, *_):
        p1, p2, p3 = model(x)
        return ops.add(ops.sum(p1), ops.add(ops.sum(p2), ops.sum(p3)))

    def make(seed):
        params = [p for _, p in model.named_parameters()]
        return [_t64(_rng(seed).standard_normal((1, 3, 16, 16)) * 0.2)] + params

    return _sweep("full model", make, forward, n=1, sample=2)


def check_loss_grads():
    def make(seed):
        rng = _rng(seed)
        out = []
        for h, w in ((8, 6), (4, 3), (2, 2)):
            out.append(_t64(rng.uniform(0.2, 0.8, (1, 3, h, w))))
            out.append(_t64(rng.uniform(0.2, 0.8, (1, 3, h, w)), req=False))
        return out

    def fn(p1, t1, p2, t2, p3, t3):
        return total_loss([p1, p2, p3], [t1, t2, t3], 0.1)

    return _sweep("training loss", make, fn, n=3)


# ---------------------------------------------------------------------------
# Exact and analytic oracles


def check_lti_kernel_identity():
    worst = 0.0
    start = time.monotonic()
    for seed in range(50):
        rng = _rng(seed)
        length = int(rng.integers(2, 65))
        ch = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        x = rng.standard_normal((2, length, ch))
        delta = np.tile(rng.uniform(0.1, 1.0, ch), (2, length, 1))
        a = rng.uniform(-2.0, -0.1, (ch, n))
        b = np.tile(rng.standard_normal(n), (2, length, 1))
        c = np.tile(rng.standard_normal(n), (2, length, 1))

        y = ssm.run_scan(_t64(x, req=False), _t64(delta, req=False), _t64(a, req=False), _t64(b, req=False), _t64(c, req=False))
        abar, bbar = ssm.discretize_zoh(_t64(delta, req=False), _t64(a, req=False), _t64(b, req=False))
        kernel = ssm.lti_kernel(abar.data[0], bbar.data[0], c[0])
        err = float(np.max(np.abs(y.data - ssm.apply_lti_kernel(x, kernel))))
        if err > LTI_TOL:
            raise AssertionError(f"system {seed} (L={length}, C={ch}, N={n}): recurrence vs kernel error {err:.3e}")
        worst = max(worst, err)
    return f"50 systems, worst |recurrence - kernel| {worst:.2e} in {time.monotonic() - start:.1f}s"


def check_window_round_trip():
    x = _rng(0).standard_normal((2, 3, 8, 12))
    back = window_merge(window_partition(Tensor(x), 4), 4, 2, 8, 12)
    if not np.array_equal(back.data, x):
        raise AssertionError("partition -> merge altered values")
    return "bit-exact on (2,3,8,12), window 4"


def check_reorder_round_trips():
    x = _rng(1).standard_normal((2, 3, 5, 7))
    for d in ssm.SCAN_DIRECTIONS:
        back = ssm.inverse_reorder(ssm.reorder(Tensor(x), d), d, 5, 7)
        if not np.array_equal(back.data, x):
            raise AssertionError(f"direction {d!r} round trip altered values")
    return "bit-exact for hf/hb/vf/vb"


def check_zero_attention_identity():
    with using_dtype(np.float64):
        block = WindowAttentionBlock(4, 2, _rng(0))
    for sub in (block.attn, block.mlp):
        for p in sub.parameters():
            p.data[...] = 0.0
    x = _rng(2).standard_normal((2, 4, 6, 6))
    if not np.array_equal(block(Tensor(x)).data, x):
        raise AssertionError("zeroed attention block is not the identity")
    return "zeroed block returns its input bit-exactly"


def check_zero_head_identity():
    cfg = ModelConfig(base_channels=8, blocks_per_stage=2, window_base=4, window_step=4)
    model = build(cfg, seed=0)
    _populate_bn(model)
    for head in (model.head1, model.head2, model.head3):
        for p in head.parameters():
            p.data[...] = 0.0
    model.eval()
    x = _rng(3).uniform(0, 1, (1, 3, 20, 20)).astype(np.float32)
    p1, p2, p3 = model(x)
    half = ops.downsample2(Tensor(x))
    quarter = ops.downsample2(half)
    if not np.array_equal(p1.data, x):
        raise AssertionError("full-resolution output differs from the input")
    if not np.array_equal(p2.data, half.data) or not np.array_equal(p3.data, quarter.data):
        raise AssertionError("pooled outputs differ from the pooled input")
    return "restored pyramid equals the input pyramid bit-exactly"


def check_psnr_anchor():
    x = _rng(4).uniform(0.0, 0.9, (3, 32, 32))
    value = psnr(x, x + 0.1)
    if abs(value - 20.0) > 0.01:
        raise AssertionError(f"PSNR of a 0.1 offset is {value:.6f}, expected 20.00 +- 0.01")
    return f"0.1 offset scores {value:.4f} dB"


def check_ssim_anchor():
    x = _rng(5).uniform(0.0, 1.0, (3, 16, 16))
    value = ssim(x, x)
    if abs(value - 1.0) > 1e-6:
        raise AssertionError(f"SSIM of identical images is {value!r}, expected 1.0 +- 1e-6")
    return f"identical images score {value}"


def check_zero_loss_anchor():
    rng = _rng(6)
    preds = [Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float64)) for _ in range(3)]
    value = float(total_loss(preds, [Tensor(p.data.copy()) for p in preds], 0.1).item())
    if value != 0.0:
        raise AssertionError(f"loss of a perfect prediction is {value!r}, expected exactly 0.0")
    return "perfect prediction scores exactly 0.0"


def check_frequency_term_direct():
    rng = _rng(7)
    diff = rng.standard_normal((1, 1, 4, 6))
    re, im = ops.dft2(Tensor(diff))
    h, w = 4, 6
    # Direct O((HW)^2) transform, summed without the fast path.
    direct = 0.0
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for a in range(h):
                for b in range(w):
                    acc += diff[0, 0, a, b] * np.exp(-2j * np.pi * (u * a / h + v * b / w))
            direct += abs(acc.real) + abs(acc.imag)
    fast = float(np.sum(np.abs(re.data)) + np.sum(np.abs(im.data)))
    if abs(fast - direct) > 1e-9:
        raise AssertionError(f"transform magnitude sum {fast!r} != direct summation {direct!r}")
    return f"|sum difference| {abs(fast - direct):.2e} on a 4x6 plane"


def check_adam_trace():
    p = Parameter(np.asarray(0.5), dtype=np.float64)
    opt = Adam([("p", p)])
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    ref_p, ref_m, ref_v = 0.5, 0.0, 0.0
    for t, g in enumerate([0.3, -0.2, 0.1], start=1):
        p.grad = np.asarray(g, dtype=np.float64)
        opt.step(lr)
        ref_m = b1 * ref_m + (1 - b1) * g
        ref_v = b2 * ref_v + (1 - b2) * g * g
        ref_p -= lr * (ref_m / (1 - b1**t)) / ((ref_v / (1 - b2**t)) ** 0.5 + eps)
        if abs(float(p.data) - ref_p) > 1e-12:
            raise AssertionError(f"step {t}: parameter {float(p.data)!r} vs hand trace {ref_p!r}")
    return f"3-step scalar trace within 1e-12 (end value {float(p.data):.12f})"


def check_checkpoint_round_trip():
    cfg = ModelConfig(base_channels=8, blocks_per_stage=2, window_base=4, window_step=4)
    model = build(cfg, seed=9)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "probe.ckpt"
        save_checkpoint(path, model, "base_channels = 8\n")
        clone = build(cfg, seed=1)
        _, records = load_checkpoint(path)
        load_state(clone, records)
    for (name, p), (_, q) in zip(model.named_parameters(), clone.named_parameters()):
        if not np.array_equal(p.data, q.data):
            raise AssertionError(f"parameter {name} not restored bit-exactly")
    return "save/load restores every tensor bit-exactly"


# ---------------------------------------------------------------------------
# Runner

GRAD_CHECKS = [
    ("grads: residual conv block", check_conv_block_grads),
    ("grads: directional scan block", check_scan_block_grads),
    ("grads: window attention block", check_attention_block_grads),
    ("grads: full model", check_model_grads),
    ("grads: training loss", check_loss_grads),
]

ORACLE_CHECKS = [
    ("oracle: scan recurrence equals kernel convolution", check_lti_kernel_identity),
    ("oracle: window partition round trip", check_window_round_trip),
    ("oracle: directional reorder round trips", check_reorder_round_trips),
    ("oracle: zero-weight attention identity", check_zero_attention_identity),
    ("oracle: zero-head restorer identity", check_zero_head_identity),
    ("oracle: PSNR offset anchor", check_psnr_anchor),
    ("oracle: SSIM identity anchor", check_ssim_anchor),
    ("oracle: zero loss on perfect prediction", check_zero_loss_anchor),
    ("oracle: frequency term vs direct transform", check_frequency_term_direct),
    ("oracle: optimizer hand trace", check_adam_trace),
    ("oracle: checkpoint round trip", check_checkpoint_round_trip),
]


def run_suite(suite="all", echo=None):
    """Run one suite ("grads", "oracles") or both ("all"); returns CheckResults."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}, expected one of {SUITES}")
    checks = []
    if suite in ("grads", "all"):
        checks += GRAD_CHECKS
    if suite in ("oracles", "all"):
        checks += ORACLE_CHECKS
    results = []
    for name, fn in checks:
        start = time.monotonic()
        try:
            detail = fn()
            result = CheckResult(name, True, detail, time.monotonic() - start)
        except AssertionError as err:
            result = CheckResult(name, False, str(err), time.monotonic() - start)
        results.append(result)
        if echo is not None:
            echo(result.format_line())
    return results
