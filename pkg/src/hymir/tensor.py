"""Dense tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wraps a numpy array, and a Tape
records every primitive applied while it is active. Backward replays the tape
once, in reverse, accumulating vector-Jacobian products. Nothing here knows
about networks; layers live in nn.py and the primitives in ops.py.

Storage is float32 by default (training); gradient checks require float64 and
refuse to run otherwise, since finite differences are meaningless at single
precision.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf anywhere in its output."""


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape():
    """The innermost recording tape of the current thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


_DEFAULT_DTYPE = [np.float32]


def default_dtype():
    return _DEFAULT_DTYPE[0]


def set_default_dtype(dtype):
    """Set the dtype newly created tensors use. Returns the previous one."""
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dt}, use float32 or float64")
    prev = _DEFAULT_DTYPE[0]
    _DEFAULT_DTYPE[0] = dt.type
    return prev


class using_dtype:
    """Context manager form of set_default_dtype."""

    def __init__(self, dtype):
        self.dtype = dtype
        self.prev = None

    def __enter__(self):
        self.prev = set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.prev)
        return False


_FINITE_CHECKS = [True]


def finite_checks_enabled():
    return _FINITE_CHECKS[0]


def set_finite_checks(on: bool):
    prev = _FINITE_CHECKS[0]
    _FINITE_CHECKS[0] = bool(on)
    return prev


class Tensor:
    """A numpy array plus autodiff bookkeeping.

    data is whatever dtype it was created with; requires_grad marks leaves the
    user wants gradients for (parameters, or inputs under a gradient check).
    grad is populated by Tape.backward for leaf tensors only.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        # np.generic covers numpy scalars: a 0-d op result must keep its
        # dtype rather than fall back to the ambient default.
        if dtype is None and not (
            isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64)
        ):
            dtype = default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    # Arithmetic sugar is attached by ops.py at import time so the primitive
    # definitions stay in one place.


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class Record:
    """One recorded primitive: outputs, inputs, and a backward rule.

    vjp takes the gradient(s) of the outputs (a tuple, zeros filled in for
    outputs nothing depended on) and returns per-input gradients, None for
    inputs that need none.
    """

    __slots__ = ("name", "outputs", "inputs", "vjp")

    def __init__(self, name, outputs, inputs, vjp):
        self.name = name
        self.outputs = outputs
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitives, replayed exactly once by backward().

    Execution order is a topological order by construction, so backward is a
    single reverse sweep. A consumed tape refuses both further recording and a
    second backward.
    """

    def __init__(self):
        self._records: list[Record] = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()
        return False

    def record(self, record: Record):
        if self._consumed:
            raise RuntimeError("cannot record onto a consumed tape; build a new Tape per forward pass")
        self._records.append(record)

    def __len__(self):
        return len(self._records)

    def backward(self, root: Tensor, seed: Optional[np.ndarray] = None):
        """Accumulate d(root)/d(leaf) into .grad of every requires_grad leaf.

        root must be a scalar unless an explicit seed gradient is given.
        One backward per tape: the records are released afterwards.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed: one backward pass per forward pass")
        self._consumed = True
        if seed is None:
            if root.size != 1:
                raise ValueError(f"backward root must be scalar, got shape {root.shape}; pass seed= otherwise")
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise ValueError(f"seed shape {seed.shape} does not match root shape {root.shape}")

        produced = set()
        for rec in self._records:
            for out in rec.outputs:
                produced.add(id(out))

        grads: dict[int, np.ndarray] = {id(root): seed}
        if id(root) not in produced:
            # Root was never recorded: either no tape was active during the
            # forward pass or nothing required grad. Leaves still get seeded
            # if the root IS a leaf; anything else is a usage error.
            if not self._records:
                if root.requires_grad:
                    _accumulate_leaf(root, seed)
                    return
                raise RuntimeError("backward on a tensor with no recorded operations")

        for rec in reversed(self._records):
            out_grads = []
            any_grad = False
            for out in rec.outputs:
                g = grads.pop(id(out), None)
                if g is not None:
                    any_grad = True
                out_grads.append(g)
            if not any_grad:
                continue
            for i, out in enumerate(rec.outputs):
                if out_grads[i] is None:
                    out_grads[i] = np.zeros_like(out.data)
            in_grads = rec.vjp(tuple(out_grads))
            if len(in_grads) != len(rec.inputs):
                raise RuntimeError(f"{rec.name}: vjp returned {len(in_grads)} grads for {len(rec.inputs)} inputs")
            for inp, g in zip(rec.inputs, in_grads):
                if g is None:
                    continue
                if g.shape != inp.data.shape:
                    raise RuntimeError(
                        f"{rec.name}: gradient shape {g.shape} does not match input shape {inp.data.shape}"
                    )
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        # Commit leaf gradients. grads now holds entries only for tensors with
        # no producing record in this tape, i.e. leaves (or unused branches).
        for rec in self._records:
            for inp in rec.inputs:
                key = id(inp)
                if inp.requires_grad and key not in produced and key in grads:
                    _accumulate_leaf(inp, grads.pop(key))
        self._records = []


def _accumulate_leaf(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy()
    else:
        if t.grad.shape != t.data.shape:
            raise RuntimeError("existing grad has wrong shape")
        t.grad = t.grad + g


def backward(root: Tensor, tape: Tape, seed: Optional[np.ndarray] = None):
    tape.backward(root, seed)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tolerance: float
    num_checked: int
    worst: Optional[tuple] = None  # (wrt index, coordinate, analytic, numeric)
    failures: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        s = f"grad_check {status}: max_rel_err={self.max_rel_err:.3e} tol={self.tolerance:.1e} ({self.num_checked} coords)"
        if self.worst is not None and not self.passed:
            i, coord, a, n = self.worst
            s += f"; worst at wrt[{i}]{list(coord)}: analytic={a:.6e} numeric={n:.6e}"
        for f in self.failures:
            s += f"\n  {f}"
        return s


def grad_check(
    f: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-6,
    sample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    f must be a pure zero-argument callable returning a scalar Tensor; it is
    re-evaluated with the wrt tensors perturbed in place, so anything f closes
    over (a model holding those parameters, say) sees the perturbation.

    The error metric is max_i |a_i - n_i| / max(||a||_inf, ||n||_inf, 1e-12)
    with the norms taken over ALL checked tensors together: one global
    gradient scale, so a benign 1e-11 absolute wobble on a structurally-zero
    gradient cannot fail the check while real errors against O(1) gradients
    still register at full strength.

    64-bit only. sample limits the checked coordinates per tensor (seeded)
    which keeps large-input checks affordable; analytic gradients are always
    computed in full.
    """
    wrt = list(wrt)
    for i, t in enumerate(wrt):
        if t.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 tensors, wrt[{i}] is {t.data.dtype}")
        t.requires_grad = True
        t.grad = None

    failures = []
    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise ValueError(f"grad_check function must be scalar-valued, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return GradCheckReport(False, np.inf, tol, 0, failures=["non-finite function value at base point"])
    if tape._records or out.requires_grad:
        tape.backward(out)
    # else: no op touched a differentiable tensor; every wrt ends up flagged below

    analytic = []
    for i, t in enumerate(wrt):
        if t.grad is None:
            failures.append(f"wrt[{i}]: no gradient reached this tensor")
            analytic.append(np.zeros_like(t.data))
        else:
            analytic.append(t.grad.copy())
        t.grad = None

    if rng is None:
        rng = np.random.default_rng(0)

    per_tensor = []
    checked = 0
    scale = 1e-12
    for i, t in enumerate(wrt):
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if sample is not None and sample < n_coords:
            coords = rng.choice(n_coords, size=sample, replace=False)
        else:
            coords = np.arange(n_coords)
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            fp = f().item()
            flat[c] = orig - eps
            fm = f().item()
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                failures.append(f"wrt[{i}] coord {np.unravel_index(c, t.shape)}: non-finite perturbed value")
                numeric[j] = np.nan
                continue
            numeric[j] = (fp - fm) / (2.0 * eps)
        a = analytic[i].reshape(-1)[coords]
        finite = numeric[np.isfinite(numeric)]
        scale = max(scale, np.abs(analytic[i]).max(initial=0.0), np.abs(finite).max(initial=0.0))
        per_tensor.append((i, t.shape, coords, a, numeric))
        checked += len(coords)

    # One shared denominator across all tensors: a parameter whose true
    # gradient is structurally zero (softmax shift invariance, say) must not
    # turn central-difference noise into a unit relative error.
    max_rel = 0.0
    worst = None
    for i, shape, coords, a, numeric in per_tensor:
        rel = np.abs(a - numeric) / scale
        rel = np.where(np.isfinite(rel), rel, np.inf)
        if len(rel) and rel.max() > max_rel:
            max_rel = float(rel.max())
            k = int(np.argmax(rel))
            worst = (i, np.unravel_index(int(coords[k]), shape), float(a[k]), float(numeric[k]))

    passed = (max_rel < tol) and not failures
    return GradCheckReport(passed, max_rel, tol, checked, worst, failures)
