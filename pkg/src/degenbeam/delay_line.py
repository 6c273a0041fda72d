"""Transport representation of the delayed boundary velocity.

The delay line stores w(s, t) = u_t(1, t - s tau) at s_j = j/M_d and evolves
tau w_t + w_s = 0 with the inflow w(0, t) supplied by the beam.

Three schemes are provided:

``box``     cell-centred (Preissmann) box scheme, second order, and the one
            the closed-loop system uses; it satisfies the exact discrete
            energy balance d/dt E_w = (gamma/2)(w_0^2 - w_M^2) for the
            cell-midpoint energy.
``upwind``  implicit first-order upwind, strictly dissipative.
``ring``    exact shift register, valid only for dt = tau / M_d.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .expressions import Field

SCHEMES = ("box", "upwind", "ring")


@dataclass(frozen=True)
class DelayLine:
    samples: np.ndarray
    tau: float
    gamma: float
    scheme: str = "box"

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("delay line needs at least two samples")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown delay scheme {self.scheme!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def M_d(self) -> int:
        return self.samples.size - 1

    @property
    def ds(self) -> float:
        return 1.0 / self.M_d

    @property
    def s(self) -> np.ndarray:
        return np.arange(self.M_d + 1) / self.M_d


def init_from_history(
    g0: Field, M_d: int, tau: float, gamma: float, inflow: float | None = None, scheme: str = "box"
) -> DelayLine:
    """Sample the history at the lags s_j tau; ``inflow`` (the initial boundary
    velocity, if given) overwrites the lag-zero sample."""
    if M_d < 1:
        raise ValueError("M_d must be >= 1")
    s = np.arange(M_d + 1) / M_d
    w = np.asarray(g0.value(s * tau), float).copy()
    if inflow is not None:
        w[0] = float(inflow)
    return DelayLine(w, float(tau), float(gamma), scheme)


def advance(line: DelayLine, inflow: float, dt: float) -> DelayLine:
    """One implicit step with w_0 set to ``inflow`` at the new time level."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    old = line.samples
    new = np.empty_like(old)
    new[0] = inflow
    c = dt / (line.tau * line.ds)
    if line.scheme == "box":
        r = (1.0 - c) / (1.0 + c)
        for j in range(1, old.size):
            new[j] = old[j - 1] + r * (old[j] - new[j - 1])
    elif line.scheme == "upwind":
        for j in range(1, old.size):
            new[j] = (old[j] + c * new[j - 1]) / (1.0 + c)
    else:
        if abs(c - 1.0) > 1e-9:
            raise ValueError(f"ring scheme needs dt = tau/M_d = {line.tau * line.ds!r}, got {dt!r}")
        new[1:] = old[:-1]
    return replace(line, samples=new)


def read_outflow(line: DelayLine) -> float:
    """w(1, t), i.e. the boundary velocity one delay ago."""
    return float(line.samples[-1])


def delay_energy(line: DelayLine, rule: str = "trapezoid") -> float:
    """(gamma tau / 2) int_0^1 w^2 ds.

    ``trapezoid`` is exact for piecewise-linear w. ``midpoint`` squares the
    cell averages and is the quadrature under which the box scheme has an exact
    energy balance.
    """
    w = line.samples
    k = 0.5 * line.gamma * line.tau * line.ds
    if rule == "trapezoid":
        return float(k * (w @ w - 0.5 * (w[0] ** 2 + w[-1] ** 2)))
    if rule == "midpoint":
        p = 0.5 * (w[1:] + w[:-1])
        return float(k * (p @ p))
    raise ValueError(f"unknown quadrature rule {rule!r}")
