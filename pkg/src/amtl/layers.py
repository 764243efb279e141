"""Forward and backward passes for dense, TDNN, ReLU and gradient-reversal layers.

All functions are pure: callers keep whatever inputs the backward pass needs.
A TDNN layer taps frames at fixed offsets and only emits output where every
tapped frame exists, so each layer shortens the utterance by its delay span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

PAPER_DELAYS: tuple[tuple[int, ...], ...] = (
    (-2, -1, 0, 1, 2),
    (-1, 2),
    (-3, 3),
    (-3, 3),
    (-7, 2),
)


@dataclass(frozen=True)
class TdnnSpec:
    delays: tuple[int, ...]
    in_dim: int
    out_dim: int

    def __post_init__(self):
        d = tuple(int(v) for v in self.delays)
        if not d:
            raise ValueError("TDNN delays must be non-empty")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"TDNN delays must be strictly increasing, got {d}")
        object.__setattr__(self, "delays", d)

    @property
    def context(self) -> tuple[int, int]:
        """(left, right) frames consumed at the utterance edges."""
        return -min(self.delays), max(self.delays)

    @property
    def span(self) -> int:
        return self.delays[-1] - self.delays[0]

    @property
    def splice_dim(self) -> int:
        return len(self.delays) * self.in_dim


@dataclass
class GrlSpec:
    alpha: float = 0.0


def receptive_field(delay_sets) -> tuple[int, int]:
    """Total (left, right) context of a stack of TDNN layers."""
    left = sum(-min(d) for d in delay_sets)
    right = sum(max(d) for d in delay_sets)
    return left, right


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _check_dense(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {W.shape}")
    if b.size != W.shape[1]:
        raise ShapeError(f"dense: bias of size {b.size} for {W.shape[1]} outputs")


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_dense(x, W, b)
    return x @ W + b.reshape(1, -1)


def dense_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Returns ``(dx, dW, db)`` for ``y = xW + b``; ``db`` has shape (1, out)."""
    if dy.shape != (x.shape[0], W.shape[1]):
        raise ShapeError(f"dense_backward: dy {dy.shape} vs expected {(x.shape[0], W.shape[1])}")
    return dy @ W.T, x.T @ dy, dy.sum(axis=0, keepdims=True)


def min_frames(spec: TdnnSpec) -> int:
    return spec.span + 1


def splice(x: np.ndarray, spec: TdnnSpec) -> np.ndarray:
    """Stack the tapped frames side by side: row t' holds x[t'+d] for each delay d."""
    T = x.shape[0]
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"tdnn: input {x.shape} but in_dim={spec.in_dim}")
    if T < min_frames(spec):
        raise ShapeError(
            f"tdnn: utterance of {T} frames is too short for delays {spec.delays}; "
            f"need at least {min_frames(spec)}"
        )
    left = -spec.delays[0]
    n_out = T - spec.span
    return np.concatenate([x[left + d : left + d + n_out] for d in spec.delays], axis=1)


def unsplice(dspliced: np.ndarray, spec: TdnnSpec, n_frames: int) -> np.ndarray:
    """Adjoint of :func:`splice`: scatter-add tap gradients back onto input frames."""
    dx = np.zeros((n_frames, spec.in_dim))
    left = -spec.delays[0]
    n_out = dspliced.shape[0]
    for j, d in enumerate(spec.delays):
        dx[left + d : left + d + n_out] += dspliced[:, j * spec.in_dim : (j + 1) * spec.in_dim]
    return dx


def tdnn_forward(x: np.ndarray, spec: TdnnSpec, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid-frame TDNN layer. ``W`` has shape (len(delays) * in_dim, out_dim),
    with the blocks ordered like ``spec.delays``."""
    if W.shape != (spec.splice_dim, spec.out_dim):
        raise ShapeError(f"tdnn: weight {W.shape} but spec needs {(spec.splice_dim, spec.out_dim)}")
    return dense_forward(splice(x, spec), W, b)


def tdnn_backward(dy: np.ndarray, x: np.ndarray, spec: TdnnSpec, W: np.ndarray):
    s = splice(x, spec)
    ds, dW, db = dense_backward(dy, s, W)
    return unsplice(ds, spec, x.shape[0]), dW, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, 0.0)


def grl_forward(x: np.ndarray, spec: GrlSpec) -> np.ndarray:
    return x


def grl_backward(dy: np.ndarray, spec: GrlSpec) -> np.ndarray:
    return -spec.alpha * dy
