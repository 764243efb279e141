"""Dense float64 matrices, parameter storage, SGD and a finite-difference checker.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; the helpers
here only add shape checking and the handful of operations the layers need.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, NumericalError, ShapeError

DTYPE = np.float64


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Summed softmax cross-entropy and its gradient w.r.t. the logits.

    Returns ``(loss, dlogits)`` with ``loss = -sum_t log softmax(logits_t)[labels_t]``
    and ``dlogits = softmax(logits) - onehot(labels)``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"softmax_xent: {n} logit rows but {labels.shape[0]} labels")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        t = int(bad[0])
        raise LabelError(f"label {int(labels[t])} at frame {t} outside [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(logp[rows, labels].sum())
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    frozen: bool = False

    def __post_init__(self):
        self.value = as_matrix(self.value, self.name)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(f"{self.name}: grad {self.grad.shape} != value {self.value.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class ParameterSet:
    """Insertion-ordered collection of uniquely named parameters."""

    def __init__(self, params=()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._params[p.name] = p
        return p

    def new(self, name: str, value) -> Parameter:
        return self.add(Parameter(name, value))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def set_frozen(self, frozen: bool) -> None:
        for p in self:
            p.frozen = frozen

    def n_scalars(self) -> int:
        return sum(p.value.size for p in self)

    def checksum(self) -> str:
        """SHA-256 over names and raw value bytes; equal iff bit-identical."""
        h = hashlib.sha256()
        for p in self:
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            Parameter(p.name, p.value.copy(), p.grad.copy(), p.frozen) for p in self
        )


def apply_sgd_step(params: ParameterSet, lr: float) -> None:
    """``value -= lr * grad`` on every non-frozen parameter, then zero all grads."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for p in params:
        if not p.frozen and lr != 0.0:
            p.value -= lr * p.grad
        p.zero_grad()


def finite_diff_check(
    loss_fn: Callable[[ParameterSet], float],
    params: ParameterSet,
    epsilon: float = 1e-6,
    max_scalars: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return the scalar loss and accumulate its analytic
    gradient into each parameter's ``grad``. The step for scalar ``theta`` is
    ``epsilon * max(1, |theta|)``. When ``max_scalars`` is given and the set is
    larger, a seeded random subsample of that many scalars is checked.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params.zero_grad()
    f0 = loss_fn(params)
    if not np.isfinite(f0):
        raise NumericalError(f"non-finite loss {f0}")
    analytic = {p.name: p.grad.copy() for p in params}
    params.zero_grad()

    index = [(p, i) for p in params for i in range(p.value.size)]
    if max_scalars is not None and len(index) > max_scalars:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(index), size=max_scalars, replace=False)
        index = [index[j] for j in sorted(pick)]

    worst = 0.0
    for p, i in index:
        flat = p.value.reshape(-1)
        theta = flat[i]
        h = epsilon * max(1.0, abs(theta))
        flat[i] = theta + h
        fp = loss_fn(params)
        flat[i] = theta - h
        fm = loss_fn(params)
        flat[i] = theta
        params.zero_grad()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite loss while perturbing {p.name}[{i}]")
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[p.name].reshape(-1)[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
