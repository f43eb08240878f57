"""Named analytic presets for initial data, forcing and manufactured fields.

All shapes are built from the one-dimensional profile (4 s (1-s))^p on
[0, 1] (zero outside), scaled to the rectangle S.  The profile vanishes at
the boundary together with its first p-1 derivatives, so the presets are
compatible with clamping for p >= 2 and smooth enough for manufactured
densities at larger p.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import PlaneForcing


def _profile(p: int):
    """f(s) = (4 s (1-s))^p on [0,1] with two derivatives (zero outside)."""

    def parts(s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0.0) & (s < 1.0)
        core = np.where(inside, s * (1.0 - s), 0.0)
        return inside, core

    def f(s):
        inside, core = parts(s)
        return (4.0 * core) ** p

    def df(s):
        s = np.asarray(s, dtype=float)
        inside, core = parts(s)
        return np.where(inside,
                        4.0**p * p * core ** (p - 1) * (1.0 - 2.0 * s), 0.0)

    def d2f(s):
        s = np.asarray(s, dtype=float)
        inside, core = parts(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 4.0**p * p * ((p - 1) * core ** (p - 2) * (1.0 - 2.0 * s) ** 2
                                - 2.0 * core ** (p - 1))
        return np.where(inside, val, 0.0)

    return f, df, d2f


@dataclass
class ScalarShape:
    """Separable bump a * f((x-x0)/Lx) f((y-y0)/Ly) with two derivatives."""

    bounds: tuple
    amplitude: float = 1.0
    p: int = 3

    def __post_init__(self):
        self._f, self._df, self._d2f = _profile(self.p)

    def _coords(self, X):
        x0, x1, y0, y1 = self.bounds
        sx = (X[..., 0] - x0) / (x1 - x0)
        sy = (X[..., 1] - y0) / (y1 - y0)
        return sx, sy, (x1 - x0), (y1 - y0)

    def __call__(self, X):
        sx, sy, _, _ = self._coords(np.asarray(X, dtype=float))
        return self.amplitude * self._f(sx) * self._f(sy)

    def grad(self, X):
        sx, sy, lx, ly = self._coords(np.asarray(X, dtype=float))
        gx = self.amplitude * self._df(sx) * self._f(sy) / lx
        gy = self.amplitude * self._f(sx) * self._df(sy) / ly
        return np.stack([gx, gy], axis=-1)

    def hess(self, X):
        sx, sy, lx, ly = self._coords(np.asarray(X, dtype=float))
        H = np.empty(np.asarray(X).shape[:-1] + (2, 2))
        H[..., 0, 0] = self.amplitude * self._d2f(sx) * self._f(sy) / lx**2
        H[..., 1, 1] = self.amplitude * self._f(sx) * self._d2f(sy) / ly**2
        H[..., 0, 1] = H[..., 1, 0] = (
            self.amplitude * self._df(sx) * self._df(sy) / (lx * ly))
        return H


def _zero_scalar(X):
    return np.zeros(np.asarray(X).shape[:-1])


def _zero_vec(X):
    return np.zeros(np.asarray(X).shape[:-1] + (2,))


@dataclass
class InitialData:
    """Analytic (u0, v0, v1) triple with the gradient of v0."""

    u0: Callable
    v0: Callable
    grad_v0: Callable
    v1: Callable


def initial_data_preset(bounds, u0: str = "zero", v0: str = "zero",
                        v0_amplitude: float = 0.0, v1: str = "zero",
                        v1_amplitude: float = 0.0, u0_amplitude: float = 0.0,
                        p: int = 3) -> InitialData:
    """Build an InitialData from named presets ("zero" or "bump")."""
    if v0 == "bump":
        shape_v0 = ScalarShape(bounds, v0_amplitude, p)
        v0_f, v0_grad = shape_v0.__call__, shape_v0.grad
    elif v0 == "zero":
        v0_f, v0_grad = _zero_scalar, _zero_vec
    else:
        raise ValueError(f"unknown v0 preset {v0!r}")

    if v1 == "bump":
        shape_v1 = ScalarShape(bounds, v1_amplitude, p)
        v1_f = shape_v1.__call__
    elif v1 == "zero":
        v1_f = _zero_scalar
    else:
        raise ValueError(f"unknown v1 preset {v1!r}")

    if u0 == "bump":
        su = ScalarShape(bounds, u0_amplitude, p)

        def u0_f(X):
            val = su(X)
            return np.stack([val, -val], axis=-1)
    elif u0 == "zero":
        u0_f = _zero_vec
    else:
        raise ValueError(f"unknown u0 preset {u0!r}")

    return InitialData(u0=u0_f, v0=v0_f, grad_v0=v0_grad, v1=v1_f)


def forcing_preset(bounds, preset: str = "zero", amplitude: float = 0.0,
                   p: int = 3, time_profile: str = "constant") -> Optional[PlaneForcing]:
    """Named transverse load; None for the zero preset."""
    if preset == "zero" or amplitude == 0.0:
        return None
    if preset == "bump":
        shape = ScalarShape(bounds, amplitude, p)

        def space(X):
            return shape(X)
    elif preset == "constant":
        x0, x1, y0, y1 = bounds

        def space(X):
            X = np.asarray(X, dtype=float)
            inside = ((X[..., 0] >= x0) & (X[..., 0] <= x1)
                      & (X[..., 1] >= y0) & (X[..., 1] <= y1))
            return amplitude * inside
    else:
        raise ValueError(f"unknown forcing preset {preset!r}")

    if time_profile == "constant":
        def fn(t, X):
            return space(X)
    elif time_profile == "ramp":
        def fn(t, X):
            return min(t, 1.0) * space(X)
    else:
        raise ValueError(f"unknown time profile {time_profile!r}")

    return PlaneForcing(fn=fn)
