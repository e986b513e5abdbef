import numpy as np
import pytest

from vservo import autodiff as ad


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-7) -> float:
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float(np.max(np.abs(got - want) / denom))


def check_grad(f, x: np.ndarray, tol: float = 1e-5, h: float = 1e-5) -> None:
    """Compare engine gradient of f against central finite differences."""
    leaf = ad.Tensor(x, requires_grad=True)
    (g,) = ad.grad(f(leaf), [leaf])
    fd = fd_gradient(lambda arr: f(ad.Tensor(arr)).item(), x, h)
    err = max_rel_err(g.data, fd)
    assert err < tol, f"gradient mismatch: rel err {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
