"""Limiting plate operators and weak-form residuals.

The limiting equations pair membrane and bending strains of the scaled
displacements (u, v) with derivatives of the relaxed cell form and, for a
fixed finite layer count, of the surface form.  With

    G1 = sym grad u + 1/2 grad v x grad v,      G2 = -hess v,

and the fixed 3x8 matrices CORNERS (unit-cube corner offsets Z),
CORNERS_LOWER_NEG (lower-face columns negated) and CHECKER_E3
(e3 x alternating signs / 2), the integrand of the transverse weak equation
is, writing DQ for the gradient of a quadratic form, q = 1/(2(nu-1)) and
hats for trivial 2x2 -> 3x3 extension:

  nu = infinity:
      B1(u,v,phi) = 1/2 DQ_rel(G1^ Z) : (grad v x grad phi)^ Z
                  - 1/24 DQ_rel(G2^ Z) : (hess phi)^ Z
  nu finite, with  Gt  = G1^ Z + q (G2^ Z- + d12 v * M)
              and  Gts = G1^ Z1 + q d12 v * M1   (Z1, M1 = first 4 columns):
      B1(u,v,phi) = (nu-1)/nu * [
            1/2 DQ_rel(Gt) : ((grad v x grad phi)^ Z - q (hess phi)^ Z- + q d12 phi * M)
          - nu(nu-2)/(24(nu-1)^2) DQ_rel(G2^ Z) : (hess phi)^ Z
          + 1/(nu-1) DQ_surf(Gts) : ((grad v x grad phi)^ Z1 + q d12 phi * M1)
          - 1/(4(nu-1)) DQ_surf(G2^ Z1) : (hess phi)^ Z1 ]

and analogously the in-plane integrand

  B2(u,v,Psi) = 1/2 DQ_rel(G1^ Z) : (grad Psi)^ Z                  (nu = inf)
  B2(u,v,Psi) = (nu-1)/nu * [ 1/2 DQ_rel(Gt) : (grad Psi)^ Z
                + 1/(nu-1) DQ_surf(Gts) : (grad Psi)^ Z1 ]         (nu finite)

The dynamic weak residuals are then

  R1(phi) = int int ( dv/dt * dphi/dt - B1(u,v,phi) + g phi ) dx' dt
  R2(Psi) = int int B2(u,v,Psi) dx' dt

and the static ones drop the time integral and the velocity term.  The
(nu-1)/nu factor and the signs of the bending and mixed-derivative terms
are fixed so that these residuals vanish on solutions of the lattice
equations of motion: the finite-layer plate carries areal mass nu/(nu-1)
in rescaled units, and the mixed-derivative test term has the same
orientation in the bulk and surface parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .fields import PlaneField
from .lattice import CORNERS
from .quadratic_forms import QuadForm, RelaxedForm, vec

# Corner matrix with the lower-face columns negated.
CORNERS_LOWER_NEG = np.concatenate([-CORNERS[:, :4], CORNERS[:, 4:]], axis=1)

# e3 x (+1,-1,+1,-1,+1,-1,+1,-1) / 2: the vertical checkerboard direction
# excited by mixed in-plane second derivatives.
CHECKER_E3 = np.zeros((3, 8))
CHECKER_E3[2, :] = 0.5 * np.array([1, -1, 1, -1, 1, -1, 1, -1], dtype=float)


class ConfigurationError(ValueError):
    pass


def hat2(G: np.ndarray) -> np.ndarray:
    """Trivial extension of (..., 2, 2) matrices to (..., 3, 3)."""
    G = np.asarray(G, dtype=float)
    out = np.zeros(G.shape[:-2] + (3, 3))
    out[..., :2, :2] = G
    return out


def _hat_times(G: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """hat(G) @ mat for a field of 2x2 matrices and a fixed 3xN matrix."""
    return np.einsum("...ab,bn->...an", hat2(G), mat)


@dataclass
class VkConstants:
    """Layer count and the quadratic forms entering the limit operators.

    nu is a layer count >= 2 or math.inf for the classical (thin) limit;
    the surface form is required only for finite nu and is ignored
    otherwise.
    """

    nu: float
    relaxed: RelaxedForm
    q_surf: Optional[QuadForm] = None

    def __post_init__(self):
        if not (self.nu == math.inf or (float(self.nu).is_integer() and self.nu >= 2)):
            raise ConfigurationError("nu must be an integer >= 2 or inf")
        if not self.nu_is_infinite and self.q_surf is None:
            raise ConfigurationError("finite nu requires the surface form")

    @property
    def nu_is_infinite(self) -> bool:
        return self.nu == math.inf


def strain_terms(u: PlaneField, v: PlaneField) -> tuple:
    """Membrane strain, bending strain, and the mixed second derivative of v.

    Returns (G1sym, G2, d12v) with G1sym = sym grad u + 1/2 grad v x grad v
    and G2 = -hess v, as (nx, ny, 2, 2) / (nx, ny) arrays.
    """
    gu = u.grad()                     # (nx, ny, 2, 2), [a, b] = d_b u_a
    gv = v.grad()                     # (nx, ny, 2)
    hv = v.hess()                     # (nx, ny, 2, 2)
    sym_gu = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    g1 = sym_gu + 0.5 * gv[..., :, None] * gv[..., None, :]
    g2 = -hv
    return g1, g2, hv[..., 0, 1]


def _pair(matrix: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Bilinear pairing of two stacked matrix fields under a flat form."""
    return np.einsum("...a,ab,...b->...", vec(X), matrix, vec(Y))


def _finite_nu_arguments(consts: VkConstants, g1, g2, d12v):
    """Gt (bulk) and Gts (surface) strain arguments for finite nu."""
    q = 1.0 / (2.0 * (consts.nu - 1.0))
    gt = _hat_times(g1, CORNERS) + q * (
        _hat_times(g2, CORNERS_LOWER_NEG) + d12v[..., None, None] * CHECKER_E3)
    gts = _hat_times(g1, CORNERS[:, :4]) + q * d12v[..., None, None] * CHECKER_E3[:, :4]
    return gt, gts


def bvk1(consts: VkConstants, u: PlaneField, v: PlaneField,
         phi: np.ndarray, dphi: np.ndarray, d2phi: np.ndarray) -> np.ndarray:
    """Integrand of the transverse weak equation, pointwise over the grid.

    phi, dphi, d2phi are the test function and its first/second in-plane
    derivatives sampled on the grid of u and v.
    """
    g1, g2, d12v = strain_terms(u, v)
    gv = v.grad()
    mem = gv[..., :, None] * dphi[..., None, :]       # grad v x grad phi
    Mrel = consts.relaxed.rel_matrix
    if consts.nu_is_infinite:
        t_mem = _hat_times(mem, CORNERS)
        t_bend = _hat_times(d2phi, CORNERS)
        out = _pair(Mrel, _hat_times(g1, CORNERS), t_mem)
        out -= (1.0 / 12.0) * _pair(Mrel, _hat_times(g2, CORNERS), t_bend)
        return out
    nu = consts.nu
    q = 1.0 / (2.0 * (nu - 1.0))
    Msurf = consts.q_surf.matrix
    gt, gts = _finite_nu_arguments(consts, g1, g2, d12v)
    d12phi = d2phi[..., 0, 1]
    t_bulk = (_hat_times(mem, CORNERS)
              - q * _hat_times(d2phi, CORNERS_LOWER_NEG)
              + q * d12phi[..., None, None] * CHECKER_E3)
    t_surf = (_hat_times(mem, CORNERS[:, :4])
              + q * d12phi[..., None, None] * CHECKER_E3[:, :4])
    out = _pair(Mrel, gt, t_bulk)
    out -= (nu * (nu - 2.0) / (12.0 * (nu - 1.0) ** 2)) * _pair(
        Mrel, _hat_times(g2, CORNERS), _hat_times(d2phi, CORNERS))
    out += (2.0 / (nu - 1.0)) * _pair(Msurf, gts, t_surf)
    out -= (1.0 / (2.0 * (nu - 1.0))) * _pair(
        Msurf, _hat_times(g2, CORNERS[:, :4]), _hat_times(d2phi, CORNERS[:, :4]))
    return (nu - 1.0) / nu * out


def bvk2(consts: VkConstants, u: PlaneField, v: PlaneField,
         dpsi: np.ndarray) -> np.ndarray:
    """Integrand of the in-plane weak equation; dpsi[a, b] = d_b Psi_a."""
    g1, g2, d12v = strain_terms(u, v)
    Mrel = consts.relaxed.rel_matrix
    if consts.nu_is_infinite:
        return _pair(Mrel, _hat_times(g1, CORNERS), _hat_times(dpsi, CORNERS))
    nu = consts.nu
    Msurf = consts.q_surf.matrix
    gt, gts = _finite_nu_arguments(consts, g1, g2, d12v)
    out = _pair(Mrel, gt, _hat_times(dpsi, CORNERS))
    out += (2.0 / (nu - 1.0)) * _pair(Msurf, gts, _hat_times(dpsi, CORNERS[:, :4]))
    return (nu - 1.0) / nu * out


def limit_stress_moments(consts: VkConstants, g1, g2, d12v) -> dict:
    """Plate-limit values of the vertical stress average and first moment.

    Returns 3x8 (bulk) and 3x4 (surface) matrix fields: the right-hand
    sides the lattice stress averages converge to.
    """
    Mrel = consts.relaxed.rel_matrix

    def dq_rel_field(X):
        return _apply_form(Mrel, X, 8)

    if consts.nu_is_infinite:
        return {
            "avg": dq_rel_field(_hat_times(g1, CORNERS)),
            "moment": (1.0 / 12.0) * dq_rel_field(_hat_times(g2, CORNERS)),
        }
    nu = consts.nu
    Msurf = consts.q_surf.matrix
    gt, gts = _finite_nu_arguments(consts, g1, g2, d12v)
    return {
        "avg": dq_rel_field(gt),
        "moment": (nu * (nu - 2.0) / (12.0 * (nu - 1.0) ** 2))
        * dq_rel_field(_hat_times(g2, CORNERS)),
        "surf_avg": (2.0 / (nu - 1.0)) * _apply_form(Msurf, gts, 4),
        "surf_moment": (1.0 / (2.0 * (nu - 1.0)))
        * _apply_form(Msurf, _hat_times(g2, CORNERS[:, :4]), 4),
    }


def _apply_form(matrix: np.ndarray, X: np.ndarray, ncols: int) -> np.ndarray:
    """(1/2) DQ(X) = M vec(X), unflattened back to matrix fields."""
    flat = np.einsum("ab,...b->...a", matrix, vec(X))
    out = flat.reshape(flat.shape[:-1] + (ncols, 3))
    return np.swapaxes(out, -1, -2)


# -- test functions -----------------------------------------------------------

def _bump_profile(p: int):
    """(1 - s^2)^p on |s| < 1 with first and second derivatives."""

    def f(s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < 1.0
        core = np.where(inside, 1.0 - s * s, 0.0)
        return core ** p

    def df(s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < 1.0
        core = np.where(inside, 1.0 - s * s, 0.0)
        return -2.0 * p * s * core ** (p - 1) * inside

    def d2f(s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < 1.0
        core = np.where(inside, 1.0 - s * s, 0.0)
        val = (-2.0 * p * core ** (p - 1)
               + 4.0 * p * (p - 1) * s * s * core ** (p - 2))
        return val * inside

    return f, df, d2f


@dataclass
class TestFunction:
    """A compactly supported C^2 test function with analytic derivatives.

    Scalar kind carries phi with gradient and Hessian; vector kind carries
    Psi with its Jacobian.  The optional time factor mu multiplies the
    function in time-dependent pairings (mu = None means constant 1).
    """

    kind: str                       # "scalar" | "vector"
    label: str
    f: Callable                     # X (...,2) -> (...) or (...,2)
    grad: Callable                  # X -> (...,2) or (...,2,2)
    hess: Optional[Callable] = None  # scalar kind: X -> (...,2,2)
    mu: Optional[Callable] = None
    mu_dot: Optional[Callable] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def sample(self, ref: PlaneField) -> tuple:
        key = (ref.origin, ref.eps, ref.shape)
        if key not in self._cache:
            X = ref.points()
            if self.kind == "scalar":
                self._cache[key] = (self.f(X), self.grad(X), self.hess(X))
            else:
                self._cache[key] = (self.f(X), self.grad(X))
        return self._cache[key]

    def mu_at(self, t):
        return 1.0 if self.mu is None else self.mu(t)

    def mu_dot_at(self, t):
        return 0.0 if self.mu is None else self.mu_dot(t)


def scalar_bump(center, radius, amplitude: float = 1.0, p: int = 3,
                label: str = "phi") -> TestFunction:
    f1, df1, d2f1 = _bump_profile(p)
    cx, cy = center
    r = float(radius)

    def f(X):
        return amplitude * f1((X[..., 0] - cx) / r) * f1((X[..., 1] - cy) / r)

    def grad(X):
        sx = (X[..., 0] - cx) / r
        sy = (X[..., 1] - cy) / r
        gx = amplitude * df1(sx) * f1(sy) / r
        gy = amplitude * f1(sx) * df1(sy) / r
        return np.stack([gx, gy], axis=-1)

    def hess(X):
        sx = (X[..., 0] - cx) / r
        sy = (X[..., 1] - cy) / r
        hxx = amplitude * d2f1(sx) * f1(sy) / r**2
        hyy = amplitude * f1(sx) * d2f1(sy) / r**2
        hxy = amplitude * df1(sx) * df1(sy) / r**2
        H = np.empty(X.shape[:-1] + (2, 2))
        H[..., 0, 0] = hxx
        H[..., 1, 1] = hyy
        H[..., 0, 1] = H[..., 1, 0] = hxy
        return H

    return TestFunction(kind="scalar", label=label, f=f, grad=grad, hess=hess)


def vector_bump(center, radius, direction, amplitude: float = 1.0, p: int = 3,
                label: str = "psi") -> TestFunction:
    base = scalar_bump(center, radius, amplitude, p, label)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def f(X):
        return base.f(X)[..., None] * d

    def grad(X):
        # [a, b] = d_b Psi_a
        return d[:, None] * base.grad(X)[..., None, :]

    return TestFunction(kind="vector", label=label, f=f, grad=grad)


def test_basis(bounds, k: int, margin: float, p: int = 3) -> List[TestFunction]:
    """k scalar and k vector bumps on a sqrt(k) x sqrt(k) interior array.

    bounds = (x0, x1, y0, y1) of the rectangular S; supports stay a
    `margin` strip away from the boundary.  Bumps that cannot fit are
    dropped (the returned list is then shorter).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x0, x1, y0, y1 = bounds
    m = int(math.ceil(math.sqrt(k)))
    wx = (x1 - x0) / m
    wy = (y1 - y0) / m
    out: List[TestFunction] = []
    count = 0
    for a in range(m):
        for b in range(m):
            if count >= k:
                break
            cx = x0 + (a + 0.5) * wx
            cy = y0 + (b + 0.5) * wy
            r = min(wx, wy) / 2.0 - margin
            if r <= 0:
                continue
            direction = (1.0, 0.0) if count % 2 == 0 else (0.0, 1.0)
            out.append(scalar_bump((cx, cy), r, 1.0, p, label=f"phi{count}"))
            out.append(vector_bump((cx, cy), r, direction, 1.0, p,
                                   label=f"psi{count}"))
            count += 1
    return out


# -- residuals ----------------------------------------------------------------

def _quad_weight(ref: PlaneField) -> float:
    return ref.eps ** 2


def static_residuals(consts: VkConstants, u: PlaneField, v: PlaneField,
                     g, basis: List[TestFunction]) -> list:
    """Midpoint-quadrature residuals of the stationary weak equations.

    For scalar phi the residual is int (-B1 + g phi); for vector Psi it is
    int B2.  Each record carries the raw residual and a relative value
    normalized by the gross (absolute) integrand mass.
    """
    w = _quad_weight(u)
    X = u.points()
    gvals = g(0.0, X) if g is not None else 0.0
    out = []
    for tf in basis:
        if tf.kind == "scalar":
            phi, dphi, d2phi = tf.sample(u)
            b1 = bvk1(consts, u, v, phi, dphi, d2phi)
            res = float(((-b1 + gvals * phi)).sum() * w)
            gross = float((np.abs(b1) + np.abs(gvals * phi)).sum() * w)
        else:
            psi, dpsi = tf.sample(u)
            b2 = bvk2(consts, u, v, dpsi)
            res = float(b2.sum() * w)
            gross = float(np.abs(b2).sum() * w)
        out.append({
            "basis_id": tf.label,
            "kind": tf.kind,
            "residual": res,
            "gross": gross,
            "relative": abs(res) / max(gross, 1e-300),
        })
    return out


def dynamic_residuals(consts: VkConstants, times, us, vs, g,
                      basis: List[TestFunction]) -> list:
    """Space-time residuals of the dynamic weak equations on a trajectory.

    Snapshots must be uniformly spaced; the velocity of v is recovered by
    central differences in time, so at least 3 snapshots are required.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least 3 uniformly spaced snapshots")
    dts = np.diff(times)
    if np.abs(dts - dts[0]).max() > 1e-9 * max(dts[0], 1e-300):
        raise ValueError("snapshots must be uniformly spaced")
    dt = float(dts[0])
    w = _quad_weight(us[0])
    X = us[0].points()

    interior = range(1, len(times) - 1)
    t_int = times[1:-1]
    # trapezoid weights on the interior time range
    tw = np.full(len(t_int), dt)
    tw[0] = tw[-1] = 0.5 * dt

    out = []
    for tf in basis:
        vals = np.zeros(len(t_int))
        gross = np.zeros(len(t_int))
        if tf.kind == "scalar":
            phi, dphi, d2phi = tf.sample(us[0])
            for n, i in enumerate(interior):
                t = times[i]
                dv = (vs[i + 1].values - vs[i - 1].values) / (2.0 * dt)
                b1 = bvk1(consts, us[i], vs[i], phi, dphi, d2phi)
                gv = g(t, X) if g is not None else 0.0
                mu = tf.mu_at(t)
                mud = tf.mu_dot_at(t)
                integrand = dv * mud * phi + (-b1 + gv * phi) * mu
                vals[n] = integrand.sum() * w
                gross[n] = (np.abs(dv * mud * phi) + np.abs(b1 * mu)
                            + np.abs(gv * phi * mu)).sum() * w
        else:
            psi, dpsi = tf.sample(us[0])
            for n, i in enumerate(interior):
                b2 = bvk2(consts, us[i], vs[i], dpsi)
                mu = tf.mu_at(times[i])
                vals[n] = (b2 * mu).sum() * w
                gross[n] = np.abs(b2 * mu).sum() * w
        res = float((tw * vals).sum())
        gr = float((tw * gross).sum())
        out.append({
            "basis_id": tf.label,
            "kind": tf.kind,
            "residual": res,
            "gross": gr,
            "relative": abs(res) / max(gr, 1e-300),
        })
    return out
