"""Training objectives: the dual-domain pyramid loss and the plain SR L1.

The pyramid loss sums, over the three prediction scales, an L1 pixel term
and an L1 frequency term over the real and imaginary DFT planes taken
separately, each normalized by that scale's per-image element count
H_i * W_i * 3 (and averaged over the batch).
"""

from . import ops


def target_pyramid(clean):
    """Half- and quarter-scale references by 2x2 area averaging."""
    i1 = ops.as_tensor(clean)
    i2 = ops.downsample2(i1)
    return [i1, i2, ops.downsample2(i2)]


def total_loss(preds, targets, loss_lambda=0.1):
    if loss_lambda < 0:
        raise ValueError(f"loss_lambda must be >= 0, got {loss_lambda}")
    preds = [ops.as_tensor(p) for p in preds]
    targets = [ops.as_tensor(t) for t in targets]
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions vs {len(targets)} targets")
    total = None
    for i, (p, t) in enumerate(zip(preds, targets)):
        if p.shape != t.shape:
            raise ValueError(f"scale {i}: prediction shape {tuple(p.shape)} != target shape {tuple(t.shape)}")
        diff = ops.sub(p, t)
        term = ops.sum(ops.absolute(diff))
        if loss_lambda:
            # F(P) - F(I) = F(P - I); the transform is linear.
            re, im = ops.dft2(diff)
            freq = ops.add(ops.sum(ops.absolute(re)), ops.sum(ops.absolute(im)))
            term = ops.add(term, ops.mul(freq, loss_lambda))
        term = ops.mul(term, 1.0 / p.size)
        total = term if total is None else ops.add(total, term)
    return total


def sr_loss(pred, gt):
    """Single-scale mean absolute error."""
    pred, gt = ops.as_tensor(pred), ops.as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(gt.shape)}")
    return ops.mean(ops.absolute(ops.sub(pred, gt)))
