import numpy as np
import pytest

from mfgsolver.streams import substream


@pytest.fixture
def rng():
    return substream(12345, "tests")


def finite_diff_param_grads(loss_fn, net, eps=1e-5):
    """Central finite differences of loss_fn(net) w.r.t. every parameter."""
    grads = {}
    for name in ("W1", "b1", "W2", "b2", "Wskip"):
        arr = getattr(net, name)
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + eps
            up = loss_fn(net)
            arr[idx] = old - eps
            down = loss_fn(net)
            arr[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_rel_err(got, want, floor=1e-8):
    scale = max(np.abs(want).max(), floor)
    return np.abs(got - want).max() / scale
