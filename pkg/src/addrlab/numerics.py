"""Seeded randomness, Adam, and a central-difference gradient oracle.

The random stream is SplitMix64: ``state`` advances by the golden-ratio
increment ``0x9E3779B97F4A7C15`` and every output is the mix of the new
state::

    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

all arithmetic modulo 2**64. Derived draws:

* uniform in [0, 1): ``(z >> 11) * 2**-53``
* standard normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; one normal per pair
* permutation of ``n``: stable argsort of ``n`` uniforms
* independent stream ``i`` of seed ``s``: seed ``s + i * 0x632BE59BD9B4E019``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
STREAM_STRIDE = 0x632BE59BD9B4E019
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator with vectorized draws."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    @classmethod
    def stream(cls, seed: int, index: int) -> "Rng":
        return cls((int(seed) + int(index) * STREAM_STRIDE) & _MASK64)

    def next_u64(self, size: int) -> np.ndarray:
        steps = np.arange(1, size + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix(z)
        self.state = (self.state + size * GOLDEN_GAMMA) & _MASK64
        return out

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(shape)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * count).reshape(count, 2) if count else np.zeros((0, 2))
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high: int, size=None):
        """Uniform integers in ``[0, high)``."""
        u = self.uniform(1 if size is None else size)
        out = np.minimum((u * high).astype(np.int64), high - 1)
        return int(out[0]) if size is None else out


@dataclass
class AdamState:
    """Moment buffers for one parameter block."""

    shape: tuple
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)


def adam_step(state: AdamState, param, grad, lr: float):
    """Return ``param`` after one bias-corrected Adam step; ``state`` is mutated."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != state.shape or grad.shape != state.shape:
        raise ValueError(
            f"shape mismatch: state {state.shape}, param {param.shape}, grad {grad.shape}"
        )
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def fd_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        out[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(a, b, floor: float = 1e-10) -> float:
    """Relative error ``|a - b| / max(|a|, |b|)`` in the Euclidean norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
