"""Closed-form fields used for initial data and delay history.

Scenario files refer to these through short tags::

    zero
    const 0.5
    poly 0 0 1          # c0 + c1 x + c2 x^2
    sin 3.0             # sin(3 x)
    sin 1.5 2.0 4.0 -1  # 2 sin(1.5 x) - sin(4 x)  (frequency, amplitude pairs)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P


class Field:
    def value(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def tag(self) -> str:
        raise NotImplementedError

    def scaled(self, c: float) -> "Field":
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(Field):
    def value(self, x):
        return np.zeros_like(np.asarray(x, float))

    def deriv(self, x):
        return np.zeros_like(np.asarray(x, float))

    def tag(self):
        return "zero"

    def scaled(self, c):
        return self


@dataclass(frozen=True)
class Const(Field):
    c: float

    def value(self, x):
        return np.full_like(np.asarray(x, float), self.c)

    def deriv(self, x):
        return np.zeros_like(np.asarray(x, float))

    def tag(self):
        return f"const {self.c!r}"

    def scaled(self, c):
        return Const(self.c * c)


@dataclass(frozen=True)
class Poly(Field):
    coeffs: tuple[float, ...]

    def value(self, x):
        return P.polyval(np.asarray(x, float), self.coeffs)

    def deriv(self, x):
        return P.polyval(np.asarray(x, float), P.polyder(self.coeffs)) if len(self.coeffs) > 1 else np.zeros_like(np.asarray(x, float))

    def tag(self):
        return "poly " + " ".join(repr(float(c)) for c in self.coeffs)

    def scaled(self, c):
        return Poly(tuple(float(a) * c for a in self.coeffs))


@dataclass(frozen=True)
class Sin(Field):
    modes: tuple[tuple[float, float], ...]  # (frequency, amplitude)

    def value(self, x):
        x = np.asarray(x, float)
        return sum((a * np.sin(w * x) for w, a in self.modes), np.zeros_like(x))

    def deriv(self, x):
        x = np.asarray(x, float)
        return sum((a * w * np.cos(w * x) for w, a in self.modes), np.zeros_like(x))

    def tag(self):
        if len(self.modes) == 1 and self.modes[0][1] == 1.0:
            return f"sin {self.modes[0][0]!r}"
        return "sin " + " ".join(f"{w!r} {a!r}" for w, a in self.modes)

    def scaled(self, c):
        return Sin(tuple((w, a * c) for w, a in self.modes))


def parse_field(tag: str) -> Field:
    """Parse an expression tag; raises ValueError on anything else."""
    if not isinstance(tag, str):
        raise ValueError(f"expression tag must be a string, got {tag!r}")
    parts = tag.split()
    if not parts:
        raise ValueError("empty expression tag")
    head, args = parts[0], parts[1:]
    try:
        nums = [float(a) for a in args]
    except ValueError:
        raise ValueError(f"non-numeric argument in tag {tag!r}") from None
    if not all(np.isfinite(nums)):
        raise ValueError(f"non-finite argument in tag {tag!r}")
    if head == "zero" and not nums:
        return Zero()
    if head == "const" and len(nums) == 1:
        return Const(nums[0])
    if head == "poly" and nums:
        return Poly(tuple(nums))
    if head == "sin" and len(nums) == 1:
        return Sin(((nums[0], 1.0),))
    if head == "sin" and nums and len(nums) % 2 == 0:
        return Sin(tuple(zip(nums[0::2], nums[1::2])))
    raise ValueError(f"unrecognised expression tag {tag!r}")
