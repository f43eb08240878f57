"""Time integration of the lattice equations of motion and static relaxation.

The equations of motion are, at interior nodes and in rescaled variables,

    h^2 d^2y/dt^2 = -adj( DW(., grad y) ) + h^3 g(t, x') e3,

with exterior nodes pinned to the reference plate.  Velocity Verlet keeps
the discrete energy

    KE + PE = (h^2/2)(eps^3/h) sum |dy/dt|^2 + (eps^3/h) sum W

balanced against the accumulated forcing work.  The stable step is
estimated from the largest eigenvalue of the linearized acceleration map by
power iteration; a plain safety factor of one half on the Verlet stability
limit 2/omega_max gives dt = 1/omega_max, and dt_scale tightens it further
when high accuracy (not just stability) is needed.

The static solver finds stationary points of the same force field by
Barzilai-Borwein gradient descent with a nonmonotone backtracking line
search, stopping when the force residual drops below tol * h^3 (1 + |g|).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .lattice import LatticeGrid, NodeField, clamp, reference_deformation
from .potentials import CellModel, bond_engine


class BlowUpError(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"non-finite state at t = {t:.6g}")
        self.t = t


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, history):
        super().__init__(msg)
        self.history = history


@dataclass
class PlaneForcing:
    """Transverse load density g(t, x'), supported in S.

    fn maps (t, X) with X (..., 2) to (...); regularity is a bookkeeping
    tag (the theory wants an essentially bounded in-plane gradient).
    """

    fn: Callable
    regularity: str = "W1inf"

    def __call__(self, t, X):
        return np.asarray(self.fn(t, np.asarray(X, dtype=float)), dtype=float)


@dataclass
class SimState:
    t: float
    y: NodeField
    v: NodeField

    def copy(self) -> "SimState":
        return SimState(self.t, self.y.copy(), self.v.copy())


def kirchhoff_ansatz(grid: LatticeGrid, u0, grad_v0, v0) -> NodeField:
    """Deformation (x' + h^2 u0 - h^2 (x3-1/2) grad v0, h(x3-1/2) + h v0)."""
    h = grid.h
    X = grid.node_xyz[:, :2]
    z = grid.node_xyz[:, 2] - 0.5
    vals = np.empty((grid.n_nodes, 3))
    vals[:, :2] = X + h**2 * np.asarray(u0(X)) - h**2 * z[:, None] * np.asarray(grad_v0(X))
    vals[:, 2] = h * z + h * np.asarray(v0(X))
    return NodeField(grid, vals)


def make_initial_data(u0, v0, grad_v0, v1, grid: LatticeGrid,
                      boundary_tol: float = 1e-8) -> tuple:
    """Initial deformation and velocity-scale fields for the plate ODE.

    y0 is the Kirchhoff-type bending ansatz of (u0, v0); y1 = h^2 v1 e3 is
    the field whose h^-1 rescaling is the initial velocity.  The data must
    vanish (with grad v0) at the clamped exterior nodes to the given
    tolerance, otherwise they are rejected as incompatible with clamping.
    """
    ext = ~grid.interior_mask
    Xext = grid.node_xyz[ext, :2]
    if Xext.size:
        worst = max(
            float(np.abs(np.asarray(u0(Xext))).max()),
            float(np.abs(np.asarray(v0(Xext))).max()),
            float(np.abs(np.asarray(grad_v0(Xext))).max()),
            float(np.abs(np.asarray(v1(Xext))).max()),
        )
        if worst > boundary_tol:
            raise ValueError(
                f"initial data does not vanish on the clamped exterior "
                f"(max {worst:.3e} > {boundary_tol:.1e})"
            )
    y0 = clamp(kirchhoff_ansatz(grid, u0, grad_v0, v0), grid)
    y1_vals = np.zeros((grid.n_nodes, 3))
    y1_vals[:, 2] = grid.h**2 * np.asarray(v1(grid.node_xyz[:, :2]))
    y1_vals[ext] = 0.0
    return y0, NodeField(grid, y1_vals)


def stable_dt(model: CellModel, grid: LatticeGrid, y: NodeField,
              n_iter: int = 50, seed: int = 0, fd_step: float = 1e-6) -> float:
    """Half the Verlet stability limit of the linearized dynamics.

    Power iteration on the map d -> -(a(y + s d) - a(y - s d)) / 2s
    estimates omega_max^2; returns 0.5 * (2 / omega_max).  Falls back to
    0.1 * eps * h if the iteration degenerates.
    """
    rng = np.random.default_rng(seed)
    fallback = 0.1 * grid.eps * grid.h
    mask = grid.interior_mask
    engine = bond_engine(grid, model)
    d = rng.standard_normal((grid.n_nodes, 3))
    d[~mask] = 0.0
    norm = np.abs(d).max()
    if norm == 0.0:
        return fallback
    d /= norm
    lam = 0.0
    for _ in range(n_iter):
        s = fd_step
        ap = engine.acceleration(y.values + s * d)
        am = engine.acceleration(y.values - s * d)
        w = -(ap - am) / (2.0 * s)
        w[~mask] = 0.0
        denom = float((d * d).sum())
        lam = float((d * w).sum()) / denom
        wnorm = np.abs(w).max()
        if not np.isfinite(wnorm) or wnorm <= 0.0:
            return fallback
        d = w / wnorm
    if not np.isfinite(lam) or lam <= 0.0:
        return fallback
    return 1.0 / np.sqrt(lam)


def _pin(grid: LatticeGrid, y_vals: np.ndarray, v_vals: np.ndarray, ref: np.ndarray):
    ext = ~grid.interior_mask
    y_vals[ext] = ref[ext]
    v_vals[ext] = 0.0


def step(state: SimState, dt: float, model: CellModel, g=None) -> SimState:
    """One velocity-Verlet step with clamped nodes pinned."""
    grid = state.y.grid
    ref = reference_deformation(grid).values
    engine = bond_engine(grid, model)
    a0 = engine.acceleration(state.y.values, g, state.t)
    vh = state.v.values + 0.5 * dt * a0
    y1 = state.y.values + dt * vh
    v1 = vh.copy()
    _pin(grid, y1, v1, ref)
    ynew = NodeField(grid, y1)
    a1 = engine.acceleration(y1, g, state.t + dt)
    v1 = v1 + 0.5 * dt * a1
    _pin(grid, y1, v1, ref)
    if not np.isfinite(y1).all() or not np.isfinite(v1).all():
        raise BlowUpError(state.t + dt)
    return SimState(state.t + dt, ynew, NodeField(grid, v1))


@dataclass
class Trajectory:
    grid: LatticeGrid
    times: List[float]
    states: List[SimState]
    ledger: List[dict]
    dt_history: List[float] = field(default_factory=list)

    def displacement_series(self):
        from .fields import extract_displacements

        us, vs = [], []
        for s in self.states:
            u, v = extract_displacements(s.y, self.grid)
            us.append(u)
            vs.append(v)
        return np.asarray(self.times), us, vs


def _energies(engine, grid: LatticeGrid, yv: np.ndarray, vv: np.ndarray):
    scale = grid.eps**3 / grid.h
    ke = 0.5 * grid.h**2 * scale * float((vv**2).sum())
    pe = scale * engine.energy(yv)
    return ke, pe


def _power_in(grid: LatticeGrid, g, t: float, vv: np.ndarray) -> float:
    if g is None:
        return 0.0
    mask = grid.interior_mask
    gv = g(t, grid.node_xyz[mask, :2])
    return grid.eps**3 / grid.h * grid.h**3 * float(np.dot(gv, vv[mask, 2]))


def simulate(model: CellModel, grid: LatticeGrid, y0: NodeField, y1: NodeField,
             g=None, T: float = 1.0, snapshot_every: float = 0.05,
             dt_scale: float = 1.0, reestimate_every: int = 100,
             seed: int = 0) -> Trajectory:
    """Integrate the plate ODE to time T, recording snapshots and energies.

    Initial velocity is h^-1 y1.  The step is dt_scale times the stability
    estimate, re-estimated every `reestimate_every` steps, and locally
    adjusted to land exactly on snapshot times.  The ledger tracks kinetic
    and elastic energy plus the trapezoid work integral of the forcing.
    """
    ref = reference_deformation(grid).values
    engine = bond_engine(grid, model)
    yv = y0.values.copy()
    vv = y1.values / grid.h
    _pin(grid, yv, vv, ref)

    n_snap = max(1, int(round(T / snapshot_every)))
    snap_times = np.linspace(0.0, T, n_snap + 1)

    ke, pe = _energies(engine, grid, yv, vv)
    e0 = ke + pe
    work = 0.0
    traj = Trajectory(grid=grid, times=[0.0],
                      states=[SimState(0.0, NodeField(grid, yv.copy()),
                                       NodeField(grid, vv.copy()))],
                      ledger=[{"t": 0.0, "kinetic": ke, "elastic": pe, "work": 0.0,
                               "balance": 0.0}])

    dt_nominal = dt_scale * stable_dt(model, grid, NodeField(grid, yv), seed=seed)
    traj.dt_history.append(dt_nominal)
    steps_since_estimate = 0
    t = 0.0
    a = engine.acceleration(yv, g, t)
    for target in snap_times[1:]:
        seg = target - t
        nsteps = max(1, int(np.ceil(seg / dt_nominal - 1e-12)))
        dt = seg / nsteps
        for _ in range(nsteps):
            if steps_since_estimate >= reestimate_every:
                dt_nominal = dt_scale * stable_dt(model, grid, NodeField(grid, yv),
                                                  seed=seed)
                traj.dt_history.append(dt_nominal)
                steps_since_estimate = 0
                nsteps_left = max(1, int(np.ceil((target - t) / dt_nominal - 1e-12)))
                dt = (target - t) / nsteps_left
            p_before = _power_in(grid, g, t, vv)
            vv = vv + 0.5 * dt * a
            yv = yv + dt * vv
            _pin(grid, yv, vv, ref)
            t += dt
            a = engine.acceleration(yv, g, t)
            vv = vv + 0.5 * dt * a
            vv[~grid.interior_mask] = 0.0
            work += 0.5 * dt * (p_before + _power_in(grid, g, t, vv))
            steps_since_estimate += 1
            if not np.isfinite(yv.sum()):
                if not (np.isfinite(yv).all() and np.isfinite(vv).all()):
                    raise BlowUpError(t)
        t = float(target)
        ke, pe = _energies(engine, grid, yv, vv)
        traj.times.append(t)
        traj.states.append(SimState(t, NodeField(grid, yv.copy()),
                                    NodeField(grid, vv.copy())))
        traj.ledger.append({
            "t": t, "kinetic": ke, "elastic": pe, "work": work,
            "balance": ke + pe - e0 - work,
        })
    return traj


def relax_static(model: CellModel, grid: LatticeGrid, y_init: NodeField,
                 g=None, tol: float = 1e-6, max_iter: int = 1_000_000,
                 seed: int = 0) -> NodeField:
    """Stationary point of the plate energy under clamping.

    Barzilai-Borwein gradient descent with a nonmonotone (10-step memory)
    backtracking safeguard on the energy sum W - h^3 sum g y_3; the descent
    direction is the nodal force.  Stops when the force residual max-norm
    is at most tol * h^3 * (1 + |g|_inf); raises ConvergenceError with the
    residual history if the iteration cap is hit.
    """
    mask = grid.interior_mask
    ref = reference_deformation(grid).values
    h3 = grid.h**3
    engine = bond_engine(grid, model)
    gnodes = g(0.0, grid.node_xyz[mask, :2]) if g is not None else None

    def energy(yv):
        e = engine.energy(yv)
        if gnodes is not None:
            e -= h3 * float(np.dot(gnodes, yv[mask, 2]))
        return e

    def gradient(yv):
        f = engine.force(yv, g, 0.0)
        f[~mask] = 0.0
        return -f  # gradient of the energy = minus force

    if g is not None:
        gref = np.abs(g(0.0, grid.node_xyz[mask, :2])).max() if mask.any() else 0.0
    else:
        gref = 0.0
    target = tol * h3 * (1.0 + float(gref))

    yv = y_init.values.copy()
    yv[~mask] = ref[~mask]

    omega = 1.0 / stable_dt(model, grid, NodeField(grid, yv), seed=seed)
    alpha0 = 1.0 / (grid.h**2 * omega**2)
    # wide anti-degeneracy guards only: soft plate modes want steps many
    # orders above 1/lambda_max, and BB supplies them
    alpha_lo, alpha_hi = 1e-6 * alpha0, 1e12 * alpha0

    grad = gradient(yv)
    fnorm = np.abs(grad).max()
    history = [fnorm]
    recent = [energy(yv)]
    alpha = alpha0
    prev_y = None
    prev_grad = None
    for it in range(int(max_iter)):
        if fnorm <= target:
            return NodeField(grid, yv)
        if prev_y is not None:
            s = (yv - prev_y)[mask].ravel()
            dg = (grad - prev_grad)[mask].ravel()
            sy = float(np.dot(s, dg))
            if sy > 0:
                alpha = float(np.clip(np.dot(s, s) / sy, alpha_lo, alpha_hi))
            else:
                alpha = min(alpha * 2.0, alpha_hi)
        e_ref = max(recent)
        gnorm2 = float((grad[mask] ** 2).sum())
        trial = alpha
        for _ in range(40):
            ytrial = yv - trial * grad
            ytrial[~mask] = ref[~mask]
            e_trial = energy(ytrial)
            if e_trial <= e_ref - 1e-4 * trial * gnorm2:
                break
            trial *= 0.5
        prev_y, prev_grad = yv, grad
        yv = ytrial
        grad = gradient(yv)
        fnorm = np.abs(grad).max()
        history.append(fnorm)
        recent.append(e_trial)
        if len(recent) > 10:
            recent.pop(0)
    raise ConvergenceError(
        f"static relaxation did not reach residual {target:.3e} in {max_iter} "
        f"iterations (last {fnorm:.3e})", history)
