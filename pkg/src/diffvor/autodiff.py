"""Scalar reverse-mode automatic differentiation on an append-only tape.

Every arithmetic operation appends one node holding its value, the indices
of its inputs and the local partial derivatives evaluated at record time.
``Tape.backward`` is then a single multiply-accumulate sweep in reverse
order.

    >>> tape = Tape()
    >>> x, y = tape.leaf(3.0), tape.leaf(4.0)
    >>> f = x * y
    >>> f.value
    12.0
    >>> tape.backward(f).tolist()
    [4.0, 3.0]
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "DIV_EPS",
    "AutodiffError",
    "TapeMismatchError",
    "NonFiniteError",
    "NearZeroDivisionError",
    "DomainError",
    "Tape",
    "Var",
    "new_tape",
    "add",
    "sub",
    "mul",
    "div",
    "sqrt",
    "sin",
    "cos",
    "square",
    "vsum",
    "value_of",
]

DIV_EPS = 1e-12

_isfinite = math.isfinite

Scalar = Union["Var", float, int]


class AutodiffError(ValueError):
    """Base class for tape errors."""


class TapeMismatchError(AutodiffError):
    """A handle was used with a tape that did not issue it."""


class NonFiniteError(AutodiffError, ArithmeticError):
    pass


class NearZeroDivisionError(AutodiffError, ArithmeticError):
    pass


class DomainError(AutodiffError, ArithmeticError):
    pass


class Var:
    """Handle to one scalar node of a :class:`Tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape._values[self.index]

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Var(#{self.index}, {self.value!r})"

    def _same(self, other: "Var") -> None:
        if other.tape is not self.tape:
            raise TapeMismatchError("handles belong to different tapes")

    def __add__(self, other: Scalar) -> "Var":
        if isinstance(other, Var):
            self._same(other)
            return self.tape._push(self.value + other.value, (self.index, other.index), (1.0, 1.0))
        return self.tape._push(self.value + other, (self.index,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other: Scalar) -> "Var":
        if isinstance(other, Var):
            self._same(other)
            return self.tape._push(self.value - other.value, (self.index, other.index), (1.0, -1.0))
        return self.tape._push(self.value - other, (self.index,), (1.0,))

    def __rsub__(self, other: Scalar) -> "Var":
        return self.tape._push(other - self.value, (self.index,), (-1.0,))

    def __mul__(self, other: Scalar) -> "Var":
        if isinstance(other, Var):
            self._same(other)
            a, b = self.value, other.value
            return self.tape._push(a * b, (self.index, other.index), (b, a))
        return self.tape._push(self.value * other, (self.index,), (float(other),))

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "Var":
        if isinstance(other, Var):
            self._same(other)
            b = other.value
            if abs(b) < DIV_EPS:
                raise NearZeroDivisionError(f"denominator {b!r} below {DIV_EPS}")
            q = self.value / b
            return self.tape._push(q, (self.index, other.index), (1.0 / b, -q / b))
        if abs(other) < DIV_EPS:
            raise NearZeroDivisionError(f"denominator {other!r} below {DIV_EPS}")
        return self.tape._push(self.value / other, (self.index,), (1.0 / other,))

    def __rtruediv__(self, other: Scalar) -> "Var":
        b = self.value
        if abs(b) < DIV_EPS:
            raise NearZeroDivisionError(f"denominator {b!r} below {DIV_EPS}")
        q = other / b
        return self.tape._push(q, (self.index,), (-q / b,))

    def __neg__(self) -> "Var":
        return self.tape._push(-self.value, (self.index,), (-1.0,))


class Tape:
    """Append-only record of scalar operations.

    Leaves are registered with :meth:`leaf`; the gradient vector returned by
    :meth:`backward` is indexed by leaf registration order.
    """

    __slots__ = ("_values", "_inputs", "_partials", "_leaves")

    def __init__(self) -> None:
        self._values: list[float] = []
        self._inputs: list[tuple] = []
        self._partials: list[tuple] = []
        self._leaves: list[int] = []

    def __len__(self) -> int:
        return len(self._values)

    @property
    def leaf_count(self) -> int:
        return len(self._leaves)

    def _push(self, value: float, inputs: tuple, partials: tuple) -> Var:
        if not _isfinite(value):
            raise NonFiniteError(f"operation produced non-finite value {value!r}")
        vals = self._values
        idx = len(vals)
        vals.append(value)
        self._inputs.append(inputs)
        self._partials.append(partials)
        return Var(self, idx)

    def record(self, value: float, inputs: Sequence[Var], partials: Sequence[float]) -> Var:
        """Append a node with caller-supplied local partials.

        Used for primitives whose Jacobian has a closed form (circumcentre,
        polygon area); ``partials[k]`` is d(value)/d(inputs[k]).
        """
        if len(inputs) != len(partials):
            raise AutodiffError("inputs and partials differ in length")
        for h in inputs:
            if h.tape is not self:
                raise TapeMismatchError("handle belongs to a different tape")
        for d in partials:
            if not math.isfinite(d):
                raise NonFiniteError(f"non-finite local partial {d!r}")
        return self._push(float(value), tuple(h.index for h in inputs), tuple(float(d) for d in partials))

    def leaf(self, value: float) -> Var:
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteError(f"leaf value must be finite, got {value!r}")
        self._leaves.append(len(self._values))
        return self._push(value, (), ())

    def leaves(self, values: Iterable[float]) -> list[Var]:
        return [self.leaf(v) for v in values]

    def leaf_values(self) -> np.ndarray:
        vals = self._values
        return np.array([vals[i] for i in self._leaves], dtype=float)

    def backward(self, output: Var) -> np.ndarray:
        """Gradient of ``output`` with respect to every leaf, in leaf order."""
        if output.tape is not self:
            raise TapeMismatchError("output handle belongs to a different tape")
        adj = [0.0] * (output.index + 1)
        adj[output.index] = 1.0
        inputs, partials = self._inputs, self._partials
        for i in range(output.index, -1, -1):
            g = adj[i]
            if g == 0.0:
                continue
            ins = inputs[i]
            if not ins:
                continue
            ds = partials[i]
            if len(ins) == 1:
                adj[ins[0]] += g * ds[0]
            else:
                for j, d in zip(ins, ds):
                    adj[j] += g * d
        n = len(adj)
        return np.array([adj[i] if i < n else 0.0 for i in self._leaves], dtype=float)

    def reset(self, leaf_values: Sequence[float]) -> "Tape":
        """Fresh tape holding only the leaves, re-seeded with ``leaf_values``.

        Handles issued by this tape are not valid on the returned one.
        """
        if len(leaf_values) != self.leaf_count:
            raise AutodiffError(
                f"expected {self.leaf_count} leaf values, got {len(leaf_values)}"
            )
        fresh = Tape()
        for v in leaf_values:
            fresh.leaf(v)
        return fresh


def new_tape() -> Tape:
    return Tape()


def value_of(x: Scalar) -> float:
    return x.value if isinstance(x, Var) else float(x)


def add(a: Scalar, b: Scalar) -> Scalar:
    return a + b


def sub(a: Scalar, b: Scalar) -> Scalar:
    return a - b


def mul(a: Scalar, b: Scalar) -> Scalar:
    return a * b


def div(a: Scalar, b: Scalar) -> Scalar:
    if not isinstance(a, Var) and not isinstance(b, Var):
        if abs(b) < DIV_EPS:
            raise NearZeroDivisionError(f"denominator {b!r} below {DIV_EPS}")
        return a / b
    return a / b


def square(a: Scalar) -> Scalar:
    if isinstance(a, Var):
        v = a.value
        return a.tape._push(v * v, (a.index,), (2.0 * v,))
    return float(a) * float(a)


def sqrt(a: Scalar) -> Scalar:
    v = value_of(a)
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v!r}")
    r = math.sqrt(v)
    if not isinstance(a, Var):
        return r
    # the local partial 1/(2r) is a division by r
    if r < DIV_EPS:
        raise NearZeroDivisionError(f"sqrt derivative singular at {v!r}")
    return a.tape._push(r, (a.index,), (0.5 / r,))


def sin(a: Scalar) -> Scalar:
    if isinstance(a, Var):
        v = a.value
        return a.tape._push(math.sin(v), (a.index,), (math.cos(v),))
    return math.sin(a)


def cos(a: Scalar) -> Scalar:
    if isinstance(a, Var):
        v = a.value
        return a.tape._push(math.cos(v), (a.index,), (-math.sin(v),))
    return math.cos(a)


def vsum(terms: Sequence[Scalar]) -> Scalar:
    """Sum of many terms as a single n-ary node."""
    handles = [t for t in terms if isinstance(t, Var)]
    const = math.fsum(float(t) for t in terms if not isinstance(t, Var))
    if not handles:
        return const
    tape = handles[0].tape
    for h in handles:
        if h.tape is not tape:
            raise TapeMismatchError("handles belong to different tapes")
    vals = tape._values
    total = math.fsum([vals[h.index] for h in handles]) + const
    return tape._push(
        total, tuple(h.index for h in handles), (1.0,) * len(handles)
    )
