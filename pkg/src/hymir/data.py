"""Paired-image data: synthetic degradations, directory ingestion, augmentation.

Everything is deterministic under explicit seeds. Per-index streams are
derived with SeedSequence((seed, index, stream)) so iteration order, worker
count, or resumption cannot change which bytes a given index yields.
Images are (3, H, W) float32 in [0, 1] throughout.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

RAIN_KERNEL_LEN = 13
RAIN_DENSITY = 0.02


@dataclass
class DegradedPair:
    degraded: np.ndarray
    clean: np.ndarray
    tag: str
    seed: int
    clamped: bool = False


def _clip01(x):
    clamped = bool(np.any(x < 0.0) or np.any(x > 1.0))
    return np.clip(x, 0.0, 1.0), clamped


def _line_kernel(length, theta, rng_unused=None):
    """Oriented line kernel, bilinearly splatted, normalized to sum=length.

    Unit kernel sum would dim streaks as they lengthen; sum=length keeps the
    field mean at seed_rate * length * intensity by construction.
    """
    k = np.zeros((length, length), dtype=np.float64)
    c = (length - 1) / 2.0
    dx, dy = np.cos(theta), np.sin(theta)
    for t in np.linspace(-c, c, 4 * length):
        y, x = c + t * dy, c + t * dx
        i0, j0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - i0, x - j0
        for di, wy in ((0, 1 - fy), (1, fy)):
            for dj, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= i0 + di < length and 0 <= j0 + dj < length:
                    k[i0 + di, j0 + dj] += wy * wx
    return k * (length / k.sum())


def _rain(clean, rng, density=RAIN_DENSITY, intensity=None):
    _, h, w = clean.shape
    if h < RAIN_KERNEL_LEN or w < RAIN_KERNEL_LEN:
        raise ValueError(f"rain streaks need extents >= {RAIN_KERNEL_LEN}, got {h}x{w}")
    theta = rng.uniform(np.deg2rad(70.0), np.deg2rad(110.0))
    if intensity is None:
        intensity = rng.uniform(0.2, 0.6)
    seeds = (rng.random((h, w)) < density / RAIN_KERNEL_LEN).astype(np.float64)
    kernel = np.zeros((h, w), dtype=np.float64)
    small = _line_kernel(RAIN_KERNEL_LEN, theta)
    kernel[:RAIN_KERNEL_LEN, :RAIN_KERNEL_LEN] = small
    # Wrap-around convolution; the sum is preserved exactly, so the field
    # mean is intensity * density in expectation.
    field = np.fft.irfft2(np.fft.rfft2(seeds) * np.fft.rfft2(kernel), s=(h, w))
    field = np.maximum(field, 0.0) * intensity
    return clean + field[None, :, :]


def _noise(clean, rng, sigma=None):
    if sigma is None:
        sigma = rng.uniform(0.02, 0.1)
    return clean + rng.normal(0.0, sigma, clean.shape) if sigma > 0 else clean


def _lowlight(clean, rng, gamma=None, gain=None):
    if gamma is None:
        gamma = rng.uniform(2.0, 3.0)
    if gain is None:
        gain = rng.uniform(0.3, 0.6)
    return np.power(np.clip(clean, 0.0, 1.0), gamma) * gain


def _snow(clean, rng, coverage=0.03):
    _, h, w = clean.shape
    canvas = np.zeros((h, w), dtype=np.float64)
    count = max(1, int(coverage * h * w / (np.pi * 2.0 ** 2)))
    yy, xx = np.ogrid[:h, :w]
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(1.0, 3.0)
        bright = rng.uniform(0.6, 1.0)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
        canvas[mask] = np.maximum(canvas[mask], bright)
    return np.maximum(clean, canvas[None, :, :])


def _downsample(clean, r):
    _, h, w = clean.shape
    if h % r or w % r:
        raise ValueError(f"downsample x{r} needs extents divisible by {r}, got {h}x{w}")
    return clean.reshape(clean.shape[0], h // r, r, w // r, r).mean(axis=(2, 4))


def parse_tag(tag):
    """Split 'rain+noise' style tags; validate each step."""
    steps = []
    for part in str(tag).split("+"):
        part = part.strip()
        if part in ("rain", "noise", "lowlight", "snow"):
            steps.append((part, None))
        elif part.startswith("downsample") and part[len("downsample") :].isdigit():
            steps.append(("downsample", int(part[len("downsample") :])))
        else:
            raise ValueError(
                f"unknown degradation tag {part!r}; expected rain, noise, lowlight, snow, downsampleN, or + combinations"
            )
    return steps


def synth_degrade(clean, tag, seed, **overrides):
    """Apply the named degradation(s) in listed order, deterministically.

    overrides pin sampled parameters (sigma=, intensity=, gamma=, gain=,
    density=) for the steps that use them; anything else is drawn from the
    seeded stream.
    """
    clean = np.asarray(clean, dtype=np.float32)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {clean.shape}")
    steps = parse_tag(tag)
    rng = np.random.default_rng(np.random.SeedSequence((0x9A1, seed)))
    x = clean.astype(np.float64)
    known = {"sigma", "intensity", "gamma", "gain", "density", "coverage"}
    stray = set(overrides) - known
    if stray:
        raise ValueError(f"unknown override(s) {sorted(stray)}; known: {sorted(known)}")
    for name, arg in steps:
        if name == "rain":
            kw = {k: overrides[k] for k in ("density", "intensity") if k in overrides}
            x = _rain(x, rng, **kw)
        elif name == "noise":
            kw = {k: overrides[k] for k in ("sigma",) if k in overrides}
            x = _noise(x, rng, **kw)
        elif name == "lowlight":
            kw = {k: overrides[k] for k in ("gamma", "gain") if k in overrides}
            x = _lowlight(x, rng, **kw)
        elif name == "snow":
            kw = {k: overrides[k] for k in ("coverage",) if k in overrides}
            x = _snow(x, rng, **kw)
        else:
            x = _downsample(x, arg)
    degraded, clamped = _clip01(x)
    return DegradedPair(degraded.astype(np.float32), clean, str(tag), seed, clamped)


def synth_clean(seed, height, width):
    """Procedural clean image: smooth coarse-grid fields with shared structure.

    Bilinear upsampling of random low-resolution grids gives piecewise-smooth
    content with edges and gradients, enough structure for restoration to be
    learnable, without any external data.
    """
    rng = np.random.default_rng(np.random.SeedSequence((0x5C1, seed)))
    nodes = int(rng.integers(3, 7))
    shared = _bilinear_field(rng.uniform(0.0, 1.0, (nodes, nodes)), height, width)
    img = np.zeros((3, height, width), dtype=np.float64)
    for ch in range(3):
        own = _bilinear_field(rng.uniform(0.0, 1.0, (nodes, nodes)), height, width)
        img[ch] = 0.65 * shared + 0.35 * own
    img = 0.1 + 0.8 * img
    return img.astype(np.float32)


def _bilinear_field(grid, height, width):
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, height)
    xs = np.linspace(0, gw - 1, width)
    y0 = np.minimum(ys.astype(int), gh - 2)
    x0 = np.minimum(xs.astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def augment(pair: DegradedPair, crop_size, seed):
    """Same random crop window and flip decision for both members.

    When the pair spans two scales (super-resolution), the window is chosen
    on the degraded image and scaled up for the clean one.
    """
    rng = np.random.default_rng(np.random.SeedSequence((0xA06, seed)))
    _, dh, dw = pair.degraded.shape
    _, ch, cw = pair.clean.shape
    if ch % dh or cw % dw:
        raise ValueError(f"pair extents {dh}x{dw} vs {ch}x{cw} are not an integer scale apart")
    r = ch // dh
    if crop_size > dh or crop_size > dw:
        raise ValueError(f"crop {crop_size} exceeds degraded extent {dh}x{dw}")
    top = int(rng.integers(0, dh - crop_size + 1))
    left = int(rng.integers(0, dw - crop_size + 1))
    flip = bool(rng.random() < 0.5)

    deg = pair.degraded[:, top : top + crop_size, left : left + crop_size]
    cln = pair.clean[:, r * top : r * (top + crop_size), r * left : r * (left + crop_size)]
    if flip:
        deg = deg[:, :, ::-1]
        cln = cln[:, :, ::-1]
    return DegradedPair(np.ascontiguousarray(deg), np.ascontiguousarray(cln), pair.tag, pair.seed, pair.clamped)


def load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as e:
        raise ValueError(f"cannot read image {path}: {e}") from None
    return np.ascontiguousarray(arr.transpose(2, 0, 1)) / np.float32(255.0)


def save_image(img, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {img.shape}")
    # Round half up; np.round would round half to even.
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


class SyntheticPairs:
    """Deterministic stream of (degraded, clean) pairs from procedural cleans."""

    def __init__(self, count, size, tag, seed=0):
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        self.count = count
        self.size = size
        self.tag = tag
        self.seed = seed

    def __len__(self):
        return self.count

    def pair(self, index) -> DegradedPair:
        if not 0 <= index < self.count:
            raise IndexError(f"index {index} out of range for {self.count} pairs")
        base = (self.seed << 20) + index
        clean = synth_clean(base, self.size, self.size)
        return synth_degrade(clean, self.tag, base + 1)


class DirectoryPairs:
    """`root/degraded/*.png` matched with `root/clean/*.png` by filename.

    A manifest file (one relative filename per line, # comments allowed)
    restricts and orders the set.
    """

    def __init__(self, root, manifest=None):
        droot = os.path.join(root, "degraded")
        croot = os.path.join(root, "clean")
        for d in (droot, croot):
            if not os.path.isdir(d):
                raise ValueError(f"dataset directory missing: {d}")
        names = sorted(n for n in os.listdir(droot) if n.lower().endswith(".png"))
        if manifest is not None:
            with open(manifest) as f:
                wanted = [ln.strip() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]
            missing = [n for n in wanted if n not in set(names)]
            if missing:
                raise ValueError(f"manifest entries not found under {droot}: {missing[:5]}")
            names = wanted
        self.names = names
        self.droot, self.croot = droot, croot
        for n in names:
            if not os.path.isfile(os.path.join(croot, n)):
                raise ValueError(f"no clean counterpart for {os.path.join(droot, n)}")
        if not names:
            raise ValueError(f"no .png pairs under {root}")

    def __len__(self):
        return len(self.names)

    def pair(self, index) -> DegradedPair:
        name = self.names[index]
        return DegradedPair(
            load_image(os.path.join(self.droot, name)),
            load_image(os.path.join(self.croot, name)),
            "paired",
            index,
        )
