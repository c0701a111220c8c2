import numpy as np
import pytest

from hymir import ops
from hymir.tensor import Tensor, grad_check, set_default_dtype

RNG = np.random.default_rng


@pytest.fixture
def f64():
    """Run a test in 64-bit default dtype (required for gradient checks)."""
    prev = set_default_dtype(np.float64)
    yield np.float64
    set_default_dtype(prev)


def t64(arr, req=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=req)


def scalarize(fn, tensors, wseed):
    """Build a zero-arg closure reducing fn's output with frozen random weights.

    The weights must not change between calls: grad_check re-evaluates the
    closure once per perturbed coordinate.
    """
    probe = fn(*tensors)
    w = RNG(wseed).standard_normal(probe.shape)

    def f():
        return ops.sum(ops.mul(fn(*tensors), Tensor(w)))

    return f


def sweep(make_inputs, fn, n=5, tol=1e-6, seed=0):
    """Run grad_check over n random instantiations."""
    for trial in range(n):
        rng = RNG(seed + trial)
        tensors = make_inputs(rng)
        report = grad_check(scalarize(fn, tensors, 1000 + trial), tensors, tol=tol)
        assert report.passed, f"trial {trial}: {report}"
