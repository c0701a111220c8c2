"""Training loop: Adam under a cosine schedule, multi-scale supervision,
periodic held-out evaluation, best-checkpoint retention.

Everything here is replayable.  Batch composition at step k depends only on
(config seed, k), never on loop history, so a run resumed from a checkpoint
at step k produces the same remaining loss curve as an unbroken run, bit for
bit in 64-bit mode.  The optimizer moments, step counters and bookkeeping
scalars ride inside the checkpoint under the `opt.` prefix.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_state, save_checkpoint
from .config import TrainConfig, format_configs
from .data import augment
from .losses import sr_loss, target_pyramid, total_loss
from .metrics import luma, psnr, ssim
from .ops import Tensor, upsample_bilinear
from .tensor import Tape

_BATCH_SEED = 0x7B3

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss, initial):
        super().__init__(
            f"aborting at step {step}: loss {loss:.6g} has stayed above "
            f"{DIVERGENCE_FACTOR:g}x the initial loss {initial:.6g} for "
            f"{DIVERGENCE_PATIENCE} consecutive steps"
        )
        self.step = step
        self.loss = loss


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Half-cosine decay from lr_init at step 0 to lr_min at total_steps."""
    if step < 0 or step > cfg.total_steps:
        warnings.warn(f"schedule step {step} outside [0, {cfg.total_steps}], clamping", stacklevel=2)
        step = min(max(step, 0), cfg.total_steps)
    span = cfg.lr_init - cfg.lr_min
    return cfg.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * step / cfg.total_steps))


class Adam(object):
    """Bias-corrected Adam over (name, parameter) pairs.

    Updates read each parameter's .grad in place; epsilon sits outside the
    square root, so a parameter whose gradient has always been zero is an
    exact fixed point.
    """

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.named:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_records(self):
        recs = {"opt.step": np.asarray(self.t, dtype=np.int64)}
        for name in self.m:
            recs[f"opt.m.{name}"] = self.m[name]
            recs[f"opt.v.{name}"] = self.v[name]
        return recs

    def load_records(self, records):
        self.t = int(records["opt.step"])
        for kind, store in (("m", self.m), ("v", self.v)):
            for name, arr in store.items():
                key = f"opt.{kind}.{name}"
                if key not in records:
                    raise ValueError(f"checkpoint has no optimizer moment {key!r}")
                src = records[key]
                if src.shape != arr.shape or src.dtype != arr.dtype:
                    raise ValueError(f"optimizer moment {key!r} does not match parameter layout")
                arr[...] = src


def global_grad_norm(named_params) -> float:
    """L2 norm over all gradients jointly; nan/inf anywhere poisons it."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            g = p.grad.ravel().astype(np.float64)
            total += float(np.dot(g, g))
    return math.sqrt(total)


def clip_gradients(named_params, clip_norm: float) -> float:
    """Scale gradients so the global norm is at most clip_norm.

    Returns the pre-clip norm. clip_norm <= 0 disables scaling but the norm
    is still computed (the caller uses it as the finiteness probe).
    """
    norm = global_grad_norm(named_params)
    if clip_norm > 0 and norm > clip_norm and math.isfinite(norm):
        scale = clip_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalRow:
    name: str
    psnr_in: float
    psnr_out: float
    ssim_out: float


@dataclass
class EvalReport:
    rows: list
    luma_only: bool = False

    def _mean(self, key):
        return float(np.mean([getattr(r, key) for r in self.rows]))

    @property
    def mean_psnr_in(self):
        return self._mean("psnr_in")

    @property
    def mean_psnr(self):
        return self._mean("psnr_out")

    @property
    def mean_ssim(self):
        return self._mean("ssim_out")

    def format_lines(self):
        mode = " (luma)" if self.luma_only else ""
        width = max(len(r.name) for r in self.rows)
        width = max(width, len("mean"))
        lines = [f"{'image':<{width}}  {'psnr_in':>8}  {'psnr':>8}  {'ssim':>7}{mode}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.psnr_in:8.2f}  {r.psnr_out:8.2f}  {r.ssim_out:7.4f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr_in:8.2f}  {self.mean_psnr:8.2f}  {self.mean_ssim:7.4f}")
        return lines


def _scored_planes(img, luma_only):
    return luma(img) if luma_only else img


def evaluate(model, dataset, indices=None, luma_only=False) -> EvalReport:
    """Restore every requested pair and score against the clean reference.

    Outputs are clipped to [0, 1] before scoring, matching what a written
    PNG would contain.  psnr_in scores the degraded input itself (bilinear
    upsampled first when the model is a super-resolver) as the no-op
    baseline.  luma_only scores the Y channel of YCbCr instead of RGB.
    """
    was_training = model.training
    model.eval()
    try:
        names = getattr(dataset, "names", None)
        dtype = next(iter(model.parameters())).dtype
        rows = []
        for i in indices if indices is not None else range(len(dataset)):
            pair = dataset.pair(i)
            out = model.restore(pair.degraded[None].astype(dtype, copy=False))
            pred = np.clip(out.data[0].astype(np.float64), 0.0, 1.0)
            clean = pair.clean.astype(np.float64)
            if pair.degraded.shape == pair.clean.shape:
                baseline = pair.degraded.astype(np.float64)
            else:
                scale = pair.clean.shape[-1] // pair.degraded.shape[-1]
                baseline = upsample_bilinear(pair.degraded[None].astype(np.float64), scale).data[0]
                baseline = np.clip(baseline, 0.0, 1.0)
            name = names[i] if names else f"{pair.tag}-{i:04d}"
            rows.append(
                EvalRow(
                    name=name,
                    psnr_in=psnr(_scored_planes(baseline, luma_only), _scored_planes(clean, luma_only)),
                    psnr_out=psnr(_scored_planes(pred, luma_only), _scored_planes(clean, luma_only)),
                    ssim_out=ssim(_scored_planes(pred, luma_only), _scored_planes(clean, luma_only)),
                )
            )
        return EvalReport(rows=rows, luma_only=luma_only)
    finally:
        model.train(was_training)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    steps: int
    initial_loss: float
    final_loss: float
    best_psnr: float
    best_step: int
    skipped: int
    history: list = field(repr=False, default_factory=list)

    @property
    def losses(self):
        return [rec["loss"] for rec in self.history if "loss" in rec]


def _split_indices(count: int):
    """Carve a held-out tail of roughly 10%; a single pair scores itself."""
    if count < 2:
        return [0], [0]
    held = max(1, count // 10)
    return list(range(count - held)), list(range(count - held, count))


def _load_batch(dataset, train_idx, cfg: TrainConfig, step: int, dtype):
    rng = np.random.default_rng(np.random.SeedSequence((_BATCH_SEED, cfg.seed, step)))
    picks = rng.integers(0, len(train_idx), size=cfg.batch)
    crop_seeds = rng.integers(0, 2**63 - 1, size=cfg.batch)
    xs, ys = [], []
    for pick, crop_seed in zip(picks, crop_seeds):
        pair = augment(dataset.pair(train_idx[int(pick)]), cfg.crop, int(crop_seed))
        xs.append(pair.degraded)
        ys.append(pair.clean)
    return np.stack(xs).astype(dtype, copy=False), np.stack(ys).astype(dtype, copy=False)


def train(model, dataset, cfg: TrainConfig, out_dir=None, resume=None, stop_after=None, echo=None) -> TrainResult:
    """Optimize model on dataset for cfg.total_steps steps.

    The last ~10% of the dataset is held out; every cfg.eval_every steps
    (and at the end) it is scored and the best mean-PSNR weights are kept.
    With out_dir set, metrics.log (one JSON record per line), best.ckpt and
    last.ckpt are written there.  resume continues from a last.ckpt saved by
    an earlier run with the same configuration.  stop_after ends the loop
    early after that many total steps, leaving a resumable last.ckpt; echo,
    if given, receives each log record as it is emitted.
    """
    cfg.validate()
    if len(dataset) < 1:
        raise ValueError("training needs a non-empty dataset")
    named = list(model.named_parameters())
    dtype = named[0][1].dtype
    opt = Adam(named, cfg.beta1, cfg.beta2, cfg.eps)
    train_idx, eval_idx = _split_indices(len(dataset))
    sr = model.cfg.task == "super_resolution"

    start = 0
    best_psnr = -math.inf
    best_step = -1
    initial = math.nan
    bad_run = 0
    skipped = 0
    if resume is not None:
        _, records = load_checkpoint(resume)
        leftovers = load_state(model, records)
        if "opt.global_step" not in leftovers:
            raise ValueError(f"{resume}: checkpoint carries no optimizer state, cannot resume")
        opt.load_records(leftovers)
        start = int(leftovers["opt.global_step"])
        best_psnr = float(leftovers["opt.best_psnr"])
        best_step = int(leftovers["opt.best_step"])
        initial = float(leftovers["opt.initial_loss"])
        bad_run = int(leftovers["opt.bad_run"])
        skipped = int(leftovers["opt.skipped"])

    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "metrics.log", "a" if resume else "w")

    def emit(record):
        history.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        if echo is not None:
            echo(record)

    def save(path):
        extra = opt.state_records()
        extra["opt.global_step"] = np.asarray(step + 1, dtype=np.int64)
        extra["opt.best_psnr"] = np.asarray(best_psnr, dtype=np.float64)
        extra["opt.best_step"] = np.asarray(best_step, dtype=np.int64)
        extra["opt.initial_loss"] = np.asarray(initial, dtype=np.float64)
        extra["opt.bad_run"] = np.asarray(bad_run, dtype=np.int64)
        extra["opt.skipped"] = np.asarray(skipped, dtype=np.int64)
        save_checkpoint(path, model, format_configs(model.cfg, cfg), extra=extra)

    history = []
    loss = math.nan
    step = start - 1
    model.train()
    try:
        for step in range(start, cfg.total_steps):
            lr = cosine_lr(step, cfg)
            x, y = _load_batch(dataset, train_idx, cfg, step, dtype)
            model.zero_grad()
            with Tape() as tape:
                if sr:
                    loss_t = sr_loss(model(Tensor(x)), Tensor(y))
                else:
                    loss_t = total_loss(model(Tensor(x)), target_pyramid(Tensor(y)), cfg.loss_lambda)
            loss = float(loss_t.item())
            tape.backward(loss_t)
            if math.isnan(initial):
                initial = loss

            record = {"step": step, "lr": lr, "loss": loss}
            norm = clip_gradients(named, cfg.clip_norm)
            if math.isfinite(norm):
                opt.step(lr)
            else:
                skipped += 1
                record["skipped"] = "non-finite gradient"

            if not math.isfinite(loss) or loss > DIVERGENCE_FACTOR * initial:
                bad_run += 1
                if bad_run >= DIVERGENCE_PATIENCE:
                    emit(record)
                    raise TrainingDiverged(step, loss, initial)
            else:
                bad_run = 0

            last_step = step + 1 == cfg.total_steps or (stop_after is not None and step + 1 >= stop_after)
            if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.total_steps:
                report = evaluate(model, dataset, indices=eval_idx)
                record["psnr"] = report.mean_psnr
                record["ssim"] = report.mean_ssim
                record["psnr_in"] = report.mean_psnr_in
                if report.mean_psnr > best_psnr:
                    best_psnr = report.mean_psnr
                    best_step = step + 1
                    if out_dir is not None:
                        save(out_dir / "best.ckpt")
            emit(record)
            if out_dir is not None and (last_step or (step + 1) % cfg.eval_every == 0):
                save(out_dir / "last.ckpt")
            if stop_after is not None and step + 1 >= stop_after:
                break
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        steps=step + 1,
        initial_loss=initial,
        final_loss=loss,
        best_psnr=best_psnr,
        best_step=best_step,
        skipped=skipped,
        history=history,
    )
