"""Central finite-difference gradient oracle used across the test suite.

The oracle perturbs raw float64 numpy buffers directly and re-runs the
forward function, so it is independent of the backward implementation it
checks.
"""

from __future__ import annotations

import numpy as np

from poselab.autodiff import Tensor


def numeric_gradient(fn, arrays, index, h=1e-6):
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    flat = base[index].reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*base)
        flat[i] = orig - h
        fm = fn(*base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(build, arrays, rtol=1e-5, h=1e-6, atol=1e-10):
    """Compare autodiff gradients of ``build`` against finite differences.

    ``build`` maps Tensor arguments to a scalar Tensor; ``arrays`` are the
    float64 numpy inputs. Every input is treated as differentiable.
    Relative error uses a small absolute floor so exactly-zero gradients
    compare cleanly.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = build(*tensors)
    assert out.data.size == 1, "gradient check target must be scalar"
    out.backward()

    def forward(*raw):
        return float(build(*[Tensor(r) for r in raw]).data)

    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(forward, arrays, i, h=h)
        denom = np.maximum(np.abs(numeric), np.abs(analytic))
        err = np.abs(analytic - numeric)
        rel = err / np.maximum(denom, 1.0)
        bad = (err > atol + rtol * np.maximum(denom, 1.0))
        assert not bad.any(), (
            f"input {i}: max rel err {rel.max():.3e} exceeds {rtol:.1e} "
            f"(worst abs err {err.max():.3e})"
        )
