"""Phase-grid solvers for the kinetic Fokker-Planck problems on an interval.

One spatial dimension, one velocity dimension. Strang splitting: a half step
of semi-Lagrangian x-transport, a full velocity substep (explicit upwind
drift advection followed by Crank-Nicolson diffusion with homogeneous
Dirichlet truncation at |u| = V_max), and a second transport half step.

Two wall treatments share the transport core. The specular solver folds
characteristics back by unfolding each +-u row pair onto a periodic circle
of twice the interval, which realizes the reflection exactly, conserves
mass to round-off, and makes the wall traces even in u by construction.
The inflow solver runs the backward-oriented transport whose characteristic
feet leave through the outgoing walls, where the prescribed boundary data
fills the ghost values; its in/out mass ledger is exact by bookkeeping.

The nonlinear solver iterates frozen-drift specular solves, re-estimating
the drift from the previous iterate's velocity averages, and stops when
consecutive iterates are close in the discrete weighted V1 distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import CFLViolated, NegativeDensity, NotConverged
from .maxwellian import MaxwellianParams, maxwellian_eval
from .mckean import KineticModel
from .weights import WeightParams, weight_eval

__all__ = [
    "PhaseGrid",
    "DensityField",
    "TraceField",
    "PicardReport",
    "WeightedNorms",
    "auto_vmax",
    "solve_specular_linear",
    "solve_linear_inflow",
    "drift_from_density",
    "picard_nonlinear",
    "weighted_norms",
    "trace_extract",
]

NEGATIVE_TOL = 1e-12  # clamp threshold; anything below signals a scheme bug


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform cell-centered grid on (0, L) x (-V_max, V_max) with steps.

    The velocity nodes are symmetric under index reversal, u[N_u-1-j] ==
    -u[j] exactly, which is what the specular fold-back relies on.
    """

    length: float
    n_x: int
    v_max: float
    n_u: int
    dt: float
    horizon: float

    def __post_init__(self):
        if self.n_x < 8 or self.n_u < 8:
            raise ValueError("need at least 8 nodes per axis")
        if self.n_u % 2:
            raise ValueError("n_u must be even so the grid pairs +-u nodes")
        if not (self.length > 0 and self.v_max > 0):
            raise ValueError("length and v_max must be positive")
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")
        if self.v_max * self.dt > self.dx * (1 + 1e-12):
            raise CFLViolated(
                f"transport: v_max*dt = {self.v_max * self.dt:.3e} exceeds "
                f"dx = {self.dx:.3e}"
            )

    @property
    def dx(self) -> float:
        return self.length / self.n_x

    @property
    def du(self) -> float:
        return 2.0 * self.v_max / self.n_u

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) * self.dx

    @property
    def u(self) -> np.ndarray:
        return (np.arange(self.n_u) - (self.n_u - 1) / 2.0) * self.du

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.horizon / self.dt - 1e-12))

    @property
    def times(self) -> np.ndarray:
        return np.minimum(np.arange(self.n_steps + 1) * self.dt, self.horizon)

    def check_diffusion(self, sigma: float):
        lam = sigma**2 * self.dt / (2.0 * self.du**2)
        if lam > 1.0 + 1e-12:
            raise CFLViolated(
                f"diffusion positivity: sigma^2*dt/(2*du^2) = {lam:.3e} > 1"
            )

    def check_drift(self, b_norm: float):
        if b_norm * self.dt > self.du * (1 + 1e-12):
            raise CFLViolated(
                f"drift upwind: b_norm*dt = {b_norm * self.dt:.3e} exceeds "
                f"du = {self.du:.3e}"
            )

    def cell_mass(self, values: np.ndarray) -> float:
        return float(values.sum()) * self.dx * self.du


@dataclass
class DensityField:
    """Grid density snapshot: values[i, j] at (x_i, u_j)."""

    values: np.ndarray
    time: float


@dataclass
class TraceField:
    """Wall traces over the velocity nodes at one time.

    Row 0 is the wall at x=0 (outward normal -1), row 1 the wall at x=L
    (outward normal +1). gamma holds the full velocity profile; incoming and
    outgoing halves are views selected by the wall's normal.
    """

    gamma: np.ndarray  # (2, n_u)
    time: float

    def outgoing(self, grid: PhaseGrid, wall: int) -> np.ndarray:
        u = grid.u
        mask = u < 0 if wall == 0 else u > 0
        return np.where(mask, self.gamma[wall], 0.0)

    def incoming(self, grid: PhaseGrid, wall: int) -> np.ndarray:
        u = grid.u
        mask = u > 0 if wall == 0 else u < 0
        return np.where(mask, self.gamma[wall], 0.0)


def auto_vmax(upper: MaxwellianParams, horizon: float, rel: float = 1e-10,
              time_points: int = 33) -> float:
    """Smallest velocity cutoff V with max_t P(t, V) below rel * max P.

    P is the radial upper envelope; since it is decreasing in |u| the cutoff
    certifies that everything the envelope allows outside (-V, V) is
    negligible at the rel level.
    """
    ts = np.linspace(0.0, horizon, time_points)
    peak = float(np.max(maxwellian_eval(upper, ts, np.zeros_like(ts))))
    target = rel * peak

    def worst(v):
        return float(np.max(maxwellian_eval(upper, ts, np.full_like(ts, v))))

    lo, hi = 0.0, 1.0
    while worst(hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ValueError("upper envelope does not decay; check parameters")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if worst(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


# ------------------------------------------------------------ substeps


def _diffusion_matrix(grid: PhaseGrid, sigma: float, dt: float):
    """Banded LHS and RHS stencils of the Crank-Nicolson u-diffusion."""
    lam = sigma**2 * dt / (2.0 * grid.du**2)
    n = grid.n_u
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * lam
    ab[1, :] = 1.0 + lam
    ab[2, :-1] = -0.5 * lam
    return lam, ab


def _diffuse(values: np.ndarray, lam: float, ab: np.ndarray) -> np.ndarray:
    # homogeneous Dirichlet ghosts just outside +-V_max
    rhs = (1.0 - lam) * values
    rhs[:, 1:] += 0.5 * lam * values[:, :-1]
    rhs[:, :-1] += 0.5 * lam * values[:, 1:]
    return solve_banded((1, 1), ab, rhs.T).T


def _advect_u(values: np.ndarray, drift: np.ndarray, grid: PhaseGrid,
              dt: float) -> np.ndarray:
    """First-order upwind step of B(x) d/du with zero-inflow u-ghosts."""
    c = drift[:, None] * (dt / grid.du)
    up = np.zeros_like(values)
    up[:, 1:] = values[:, 1:] - values[:, :-1]
    up[:, 0] = values[:, 0]
    down = np.zeros_like(values)
    down[:, :-1] = values[:, 1:] - values[:, :-1]
    down[:, -1] = -values[:, -1]
    return values - np.where(c > 0, c * up, c * down)


def _unfold(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Circle fields of the +-u row pairs; pair k carries u[half + k] > 0."""
    half = grid.n_u // 2
    pos = values[:, half:]  # (n_x, half), u > 0
    neg = values[:, half - 1 :: -1]  # (n_x, half), matching -u rows
    return np.concatenate([pos.T, neg.T[:, ::-1]], axis=1)  # (half, 2 n_x)


def _fold(circles: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    half = grid.n_u // 2
    n_x = grid.n_x
    values = np.empty((n_x, grid.n_u))
    values[:, half:] = circles[:, :n_x].T
    values[:, half - 1 :: -1] = circles[:, n_x:][:, ::-1].T
    return values


def _rotate_interp(circles: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Periodic semi-Lagrangian advection by `shifts` cells per row."""
    m = circles.shape[1]
    n = np.floor(shifts).astype(int)
    theta = shifts - n
    cols = np.arange(m)[None, :]
    i0 = (cols - n[:, None]) % m
    i1 = (i0 - 1) % m
    rows = np.arange(circles.shape[0])[:, None]
    return (1.0 - theta[:, None]) * circles[rows, i0] + theta[:, None] * circles[rows, i1]


def _transport_specular(values: np.ndarray, grid: PhaseGrid, dt: float) -> np.ndarray:
    half = grid.n_u // 2
    shifts = grid.u[half:] * (dt / grid.dx)
    return _fold(_rotate_interp(_unfold(values, grid), shifts), grid)


def _clamp(values: np.ndarray, scale: float, log: list):
    low = float(values.min())
    if low < -NEGATIVE_TOL * max(scale, 1.0):
        raise NegativeDensity(f"density reached {low:.3e}")
    if low < 0.0:
        log.append(-low)
        np.clip(values, 0.0, None, out=values)
    return values


def _as_values(rho0) -> np.ndarray:
    if isinstance(rho0, DensityField):
        return np.array(rho0.values, dtype=float)
    return np.array(rho0, dtype=float)


# --------------------------------------------------- specular solver


@dataclass
class SpecularResult:
    """History of the specular solve plus its conservation diagnostics."""

    grid: PhaseGrid
    times: np.ndarray
    fields: np.ndarray  # (n_steps + 1, n_x, n_u)
    traces: np.ndarray  # (n_steps + 1, 2, n_u), even in u by construction
    mass: np.ndarray  # (n_steps + 1,)
    grad_sq_weighted: np.ndarray  # per-step sum of |D_u field|^2 w quadrature
    bracket_sq_weighted: np.ndarray  # per-step (s^2/2 Lap w + B . grad w) f^2
    clamped: list
    weight: WeightParams | None

    def field(self, k: int) -> DensityField:
        return DensityField(self.fields[k], float(self.times[k]))

    def trace(self, k: int) -> TraceField:
        return TraceField(self.traces[k], float(self.times[k]))

    def energy_residual(self, sigma: float) -> float:
        """Relative defect of the weighted energy balance at the horizon.

        With specular walls the trace terms cancel, leaving
        ||f(T)||^2 + sigma^2 int ||grad_u f||^2 = ||f(0)||^2 + bracket term,
        all in L2(w). Time integrals use the per-step field quadrature.
        """
        w = _weight_values(self.grid, self.weight)
        quad = self.grid.dx * self.grid.du
        e0 = float((self.fields[0] ** 2 * w).sum()) * quad
        eT = float((self.fields[-1] ** 2 * w).sum()) * quad
        grad = sigma**2 * float(self.grad_sq_weighted.sum())
        bracket = float(self.bracket_sq_weighted.sum())
        return abs(eT + grad - e0 - bracket) / e0


def _weight_values(grid: PhaseGrid, weight: WeightParams | None) -> np.ndarray:
    if weight is None:
        return np.ones(grid.n_u)
    return weight_eval(weight, grid.u).value


def _face_weights(grid: PhaseGrid, weight: WeightParams | None) -> np.ndarray:
    """Weight at the n_u + 1 velocity faces (both Dirichlet faces included)."""
    if weight is None:
        return np.ones(grid.n_u + 1)
    faces = (np.arange(grid.n_u + 1) - grid.n_u / 2.0) * grid.du
    return weight_eval(weight, faces).value


def _face_grad_sq(mid: np.ndarray, grid: PhaseGrid, w_face: np.ndarray) -> float:
    """Face-difference gradient energy with zero ghosts beyond +-V_max.

    Pairing the Crank-Nicolson update with the midpoint field makes
    E_after - E_before = -sigma^2 * dt * (this sum) hold exactly when the
    weight is 1, mirroring the continuum energy computation.
    """
    d = np.empty((mid.shape[0], mid.shape[1] + 1))
    d[:, 0] = mid[:, 0]
    d[:, 1:-1] = mid[:, 1:] - mid[:, :-1]
    d[:, -1] = -mid[:, -1]
    return float(((d / grid.du) ** 2 * w_face).sum()) * grid.dx * grid.du


def _grad_u(values: np.ndarray, du: float) -> np.ndarray:
    g = np.gradient(values, du, axis=1)
    return g


def _resolve_drift(B, grid: PhaseGrid):
    """Normalize drift input to a callable (t, x-array) -> array."""
    if B is None:
        return lambda t, x: np.zeros_like(x)
    if callable(B):
        return B
    arr = np.asarray(B, dtype=float)
    if arr.ndim == 0:
        return lambda t, x: np.full_like(x, float(arr))
    if arr.shape == (grid.n_x,):
        return lambda t, x: arr
    raise ValueError("drift must be None, scalar, callable, or (n_x,) array")


def solve_specular_linear(
    grid: PhaseGrid,
    rho0,
    B,
    sigma: float,
    weight: WeightParams | None = None,
    trace_order: int = 2,
) -> SpecularResult:
    """March the specular problem with frozen drift B(t, x) to the horizon.

    B may be None, a scalar, an (n_x,) array, or a callable (t, x) -> array;
    it is evaluated at the start of each step. The returned traces are the
    unfolded-field wall values, identical for u and -u by construction.
    """
    grid.check_diffusion(sigma)
    f = _as_values(rho0)
    if f.shape != (grid.n_x, grid.n_u):
        raise ValueError(f"rho0 must have shape {(grid.n_x, grid.n_u)}")
    if float(f.min()) < 0:
        raise NegativeDensity("initial density has negative entries")
    drift_fn = _resolve_drift(B, grid)
    n_steps = grid.n_steps
    fields = np.empty((n_steps + 1, grid.n_x, grid.n_u))
    traces = np.empty((n_steps + 1, 2, grid.n_u))
    mass = np.empty(n_steps + 1)
    grad_sq = np.zeros(n_steps)
    bracket_sq = np.zeros(n_steps)
    clamped: list = []
    w_face = _face_weights(grid, weight)
    wgrad, wlap = _weight_derivatives(grid, weight)
    quad = grid.dx * grid.du

    fields[0] = f
    traces[0] = _specular_trace(f, grid, trace_order)
    mass[0] = grid.cell_mass(f)
    t = 0.0
    for k in range(n_steps):
        dt = min(grid.dt, grid.horizon - t)
        drift = np.asarray(drift_fn(t, grid.x), dtype=float)
        grid.check_drift(float(np.abs(drift).max()) if drift.size else 0.0)
        lam, ab = _diffusion_matrix(grid, sigma, dt)
        f = _transport_specular(f, grid, 0.5 * dt)
        f = _advect_u(f, drift, grid, dt)
        pre = f
        f = _diffuse(f, lam, ab)
        grad_sq[k] = dt * _face_grad_sq(0.5 * (pre + f), grid, w_face)
        f = _transport_specular(f, grid, 0.5 * dt)
        f = _clamp(f, float(fields[0].max()), clamped)
        t += dt
        fields[k + 1] = f
        traces[k + 1] = _specular_trace(f, grid, trace_order)
        mass[k + 1] = grid.cell_mass(f)
        bracket = 0.5 * sigma**2 * wlap[None, :] + drift[:, None] * wgrad[None, :]
        bracket_sq[k] = dt * float((bracket * f**2).sum()) * quad
    return SpecularResult(
        grid=grid,
        times=grid.times,
        fields=fields,
        traces=traces,
        mass=mass,
        grad_sq_weighted=grad_sq,
        bracket_sq_weighted=bracket_sq,
        clamped=clamped,
        weight=weight,
    )


def _weight_derivatives(grid: PhaseGrid, weight: WeightParams | None):
    if weight is None:
        n = grid.n_u
        return np.zeros(n), np.zeros(n)
    ev = weight_eval(weight, grid.u)
    return ev.gradient, ev.laplacian


def _specular_trace(values: np.ndarray, grid: PhaseGrid, order: int) -> np.ndarray:
    """Wall traces from the unfolded field; even in u by construction."""
    half = grid.n_u // 2
    out = np.empty((2, grid.n_u))
    for wall, (c0, c1) in ((0, (0, 1)), (1, (grid.n_x - 1, grid.n_x - 2))):
        a = values[c0, half:]
        b = values[c0, half - 1 :: -1]
        if order == 1:
            g = 0.5 * (a + b)
        else:
            a2 = values[c1, half:]
            b2 = values[c1, half - 1 :: -1]
            g = 0.5 * ((1.5 * a - 0.5 * a2) + (1.5 * b - 0.5 * b2))
            np.clip(g, 0.0, None, out=g)
        out[wall, half:] = g
        out[wall, half - 1 :: -1] = g
    return out


# ----------------------------------------------------- inflow solver


@dataclass
class InflowResult:
    """History of the backward inflow solve with its energy/mass ledgers."""

    grid: PhaseGrid
    times: np.ndarray
    fields: np.ndarray
    gamma_minus: np.ndarray  # (n_steps + 1, 2, n_u), populated on Sigma^-
    mass: np.ndarray
    mass_in: np.ndarray  # per step, injected through Sigma^+ by the scheme
    mass_out: np.ndarray  # per step, balance: before + in - after
    grad_sq: np.ndarray  # per step, unweighted grad-u square quadrature
    trace_sq: np.ndarray  # per step, |u| gamma^-(t)^2 wall quadrature
    data_sq: np.ndarray  # per step, |u| q(t)^2 wall quadrature on Sigma^+
    clamped: list

    def field(self, k: int) -> DensityField:
        return DensityField(self.fields[k], float(self.times[k]))

    def energy_residual(self) -> tuple:
        """(residual history, relative residual at horizon) of the balance
        ||f(t)||^2 + int_0^t ||gamma^-||^2 + s^2 int ||grad_u f||^2
        = ||f0||^2 + int_0^t ||q||^2."""
        quad = self.grid.dx * self.grid.du
        sq = (self.fields**2).sum(axis=(1, 2)) * quad
        lhs = sq + np.concatenate([[0.0], np.cumsum(self.trace_sq + self.grad_sq)])
        rhs = sq[0] + np.concatenate([[0.0], np.cumsum(self.data_sq)])
        res = lhs - rhs
        return res, float(abs(res[-1]) / sq[0])

    def l1_balance_defect(self) -> float:
        """Bookkeeping defect of mass_after + out_cum - mass0 - in_cum."""
        lhs = self.mass[-1] + float(self.mass_out.sum())
        rhs = self.mass[0] + float(self.mass_in.sum())
        return abs(lhs - rhs) / max(self.mass[0] + float(self.mass_in.sum()), 1e-300)


def _transport_inflow(values, grid: PhaseGrid, dt: float, q_at, t_eval):
    """Backward-oriented transport: feet at x + u dt, q fills wall ghosts.

    Returns the updated field and the q-mass injected (scheme bookkeeping).
    """
    x = grid.x
    u = grid.u
    dx = grid.dx
    n_x = grid.n_x
    out = np.empty_like(values)
    injected = 0.0
    q0 = q_at(t_eval, 0)  # wall x=0, used by u < 0 rows
    qL = q_at(t_eval, 1)  # wall x=L, used by u > 0 rows
    for j, uj in enumerate(u):
        feet = x + uj * dt
        col = values[:, j]
        if uj > 0:
            inside = np.interp(feet, x, col)
            # between the last center and the wall, blend with q at the wall
            upper = x[-1]
            theta = np.clip((feet - upper) / (0.5 * dx), 0.0, 1.0)
            vals = np.where(feet <= upper, inside, (1 - theta) * col[-1] + theta * qL[j])
            vals = np.where(feet >= grid.length, qL[j], vals)
            injected += float((theta * qL[j]).sum()) * dx * grid.du
        else:
            inside = np.interp(feet, x, col)
            lower = x[0]
            theta = np.clip((lower - feet) / (0.5 * dx), 0.0, 1.0)
            vals = np.where(feet >= lower, inside, (1 - theta) * col[0] + theta * q0[j])
            vals = np.where(feet <= 0.0, q0[j], vals)
            injected += float((theta * q0[j]).sum()) * dx * grid.du
        out[:, j] = vals
    return out, injected


def _inflow_trace(values: np.ndarray, grid: PhaseGrid, order: int) -> np.ndarray:
    """One-sided extrapolated trace on the incoming-set rows (Sigma^-)."""
    u = grid.u
    out = np.zeros((2, grid.n_u))
    if order == 1:
        at0 = values[0]
        atL = values[-1]
    else:
        at0 = 1.5 * values[0] - 0.5 * values[1]
        atL = 1.5 * values[-1] - 0.5 * values[-2]
    out[0] = np.where(u > 0, at0, 0.0)  # wall 0, normal -1: u.n < 0
    out[1] = np.where(u < 0, atL, 0.0)
    return np.clip(out, 0.0, None)


def solve_linear_inflow(
    grid: PhaseGrid,
    f0,
    q,
    sigma: float,
    trace_order: int = 2,
) -> InflowResult:
    """March the backward-oriented wall-data problem to the horizon.

    q is a callable (t, wall) -> (n_u,) array of boundary values, consumed
    only on each wall's outgoing velocity half. The solution's incoming
    trace, the energy pieces of the balance identity, and the exact in/out
    mass ledger are recorded every step.
    """
    grid.check_diffusion(sigma)
    f = _as_values(f0)
    if f.shape != (grid.n_x, grid.n_u):
        raise ValueError(f"f0 must have shape {(grid.n_x, grid.n_u)}")
    if float(f.min()) < 0:
        raise NegativeDensity("initial data has negative entries")

    def q_at(t, wall):
        vals = np.asarray(q(t, wall), dtype=float)
        if vals.shape != (grid.n_u,):
            raise ValueError("q(t, wall) must return one value per u node")
        u = grid.u
        keep = u < 0 if wall == 0 else u > 0
        return np.where(keep, vals, 0.0)

    n_steps = grid.n_steps
    fields = np.empty((n_steps + 1, grid.n_x, grid.n_u))
    gamma = np.empty((n_steps + 1, 2, grid.n_u))
    mass = np.empty(n_steps + 1)
    mass_in = np.zeros(n_steps)
    mass_out = np.zeros(n_steps)
    grad_sq = np.zeros(n_steps)
    trace_sq = np.zeros(n_steps)
    data_sq = np.zeros(n_steps)
    clamped: list = []
    quad = grid.dx * grid.du
    abs_u = np.abs(grid.u)

    fields[0] = f
    gamma[0] = _inflow_trace(f, grid, trace_order)
    mass[0] = grid.cell_mass(f)
    t = 0.0

    def grad_quad(values):
        g = _grad_u(values, grid.du)
        return sigma**2 * float((g**2).sum()) * quad

    def wall_quad(pair):
        return float((abs_u * pair**2).sum()) * grid.du

    for k in range(n_steps):
        dt = min(grid.dt, grid.horizon - t)
        lam, ab = _diffusion_matrix(grid, sigma, dt)
        before = grid.cell_mass(f)
        g_prev = grad_quad(f)
        q_prev = wall_quad(np.stack([q_at(t, 0), q_at(t, 1)]))
        f, in1 = _transport_inflow(f, grid, 0.5 * dt, q_at, t + 0.25 * dt)
        f = _diffuse(f, lam, ab)
        f, in2 = _transport_inflow(f, grid, 0.5 * dt, q_at, t + 0.75 * dt)
        f = _clamp(f, float(fields[0].max()) + 1.0, clamped)
        t += dt
        fields[k + 1] = f
        gamma[k + 1] = _inflow_trace(f, grid, trace_order)
        mass[k + 1] = grid.cell_mass(f)
        mass_in[k] = in1 + in2
        mass_out[k] = before + mass_in[k] - mass[k + 1]
        # trapezoid in time for every energy accumulator
        grad_sq[k] = 0.5 * dt * (g_prev + grad_quad(f))
        trace_sq[k] = 0.5 * dt * (wall_quad(gamma[k]) + wall_quad(gamma[k + 1]))
        q_next = wall_quad(np.stack([q_at(t, 0), q_at(t, 1)]))
        data_sq[k] = 0.5 * dt * (q_prev + q_next)
    return InflowResult(
        grid=grid,
        times=grid.times,
        fields=fields,
        gamma_minus=gamma,
        mass=mass,
        mass_in=mass_in,
        mass_out=mass_out,
        grad_sq=grad_sq,
        trace_sq=trace_sq,
        data_sq=data_sq,
        clamped=clamped,
    )


# ------------------------------------------------- drift and norms


def drift_from_density(field, grid: PhaseGrid, model: KineticModel,
                       mass_floor: float | None = None) -> np.ndarray:
    """Velocity average of b against the density columns.

    B(x_i) = sum_j b(u_j) rho[i, j] / sum_j rho[i, j]; zero where the column
    mass falls below the floor. A convex combination of b values, so it
    never exceeds the componentwise bound of b.
    """
    values = _as_values(field)
    if mass_floor is None:
        mass_floor = 1e-14 / (grid.du * grid.n_u)
    bu = model.drift(grid.u)
    col = values.sum(axis=1)
    num = (values * bu[None, :]).sum(axis=1)
    ok = col * grid.du >= mass_floor
    return np.where(ok, num / np.where(ok, col, 1.0), 0.0)


@dataclass
class WeightedNorms:
    """Discrete weighted space-time norms of a field history."""

    sup_l2w_sq: float
    grad_l2w_sq: float

    @property
    def v1_sq(self) -> float:
        return self.sup_l2w_sq + self.grad_l2w_sq

    @property
    def v1(self) -> float:
        return math.sqrt(self.v1_sq)


def weighted_norms(fields: np.ndarray, grid: PhaseGrid,
                   weight: WeightParams, dt: float | None = None) -> WeightedNorms:
    """sup_t L2(w) square and time-integrated L2(w) square of u-gradients.

    fields has shape (n_t, n_x, n_u); a single snapshot may be passed as
    (n_x, n_u). Centered differences for the gradient, step-sum in time.
    """
    arr = np.asarray(fields, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    w = weight_eval(weight, grid.u).value
    quad = grid.dx * grid.du
    sq = (arr**2 * w).sum(axis=(1, 2)) * quad
    g = np.gradient(arr, grid.du, axis=2)
    gsq = (g**2 * w).sum(axis=(1, 2)) * quad
    step = grid.dt if dt is None else dt
    return WeightedNorms(
        sup_l2w_sq=float(sq.max()),
        grad_l2w_sq=float(gsq[1:].sum()) * step if len(gsq) > 1 else float(gsq[0]) * step,
    )


def trace_extract(field, grid: PhaseGrid, order: int = 2,
                  specular: bool = True) -> TraceField:
    """Wall traces of one snapshot, with the Definition functionals attached.

    specular=True symmetrizes across each +-u pair (the fold-back
    convention); otherwise plain one-sided extrapolation per row.
    """
    df = field if isinstance(field, DensityField) else DensityField(_as_values(field), 0.0)
    if specular:
        gamma = _specular_trace(df.values, grid, order)
    else:
        if order == 1:
            at0, atL = df.values[0], df.values[-1]
        else:
            at0 = 1.5 * df.values[0] - 0.5 * df.values[1]
            atL = 1.5 * df.values[-1] - 0.5 * df.values[-2]
        gamma = np.stack([at0, atL])
    return TraceField(np.clip(gamma, 0.0, None), df.time)


def trace_functionals(trace: TraceField, grid: PhaseGrid) -> dict:
    """Definition functionals per wall: speed-weighted mass and plain mass."""
    absu = np.abs(grid.u)
    return {
        "speed_mass": (trace.gamma * absu).sum(axis=1) * grid.du,
        "mass": trace.gamma.sum(axis=1) * grid.du,
    }


# ------------------------------------------------------ Picard loop


@dataclass
class PicardReport:
    """Iteration record of the nonlinear solve."""

    iterates: int
    distances: list = field(default_factory=list)
    converged: bool = False
    lower_violation: list = field(default_factory=list)
    upper_violation: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterates": self.iterates,
            "distances": [float(d) for d in self.distances],
            "converged": bool(self.converged),
            "lower_violation": [float(v) for v in self.lower_violation],
            "upper_violation": [float(v) for v in self.upper_violation],
        }


@dataclass
class PicardResult:
    solution: SpecularResult
    report: PicardReport
    drift_history: np.ndarray  # (n_steps, n_x) of the final frozen drift


def _v1_distance(a: np.ndarray, b: np.ndarray, grid: PhaseGrid,
                 weight: WeightParams) -> float:
    diff = a - b
    norms = weighted_norms(diff, grid, weight)
    return norms.v1


def _envelope_violations(fields: np.ndarray, times: np.ndarray,
                         grid: PhaseGrid, lower, upper):
    lo_viol = 0.0
    up_viol = 0.0
    for k, t in enumerate(times):
        if lower is not None:
            p_lo = maxwellian_eval(lower, float(t), grid.u)
            lo_viol = max(lo_viol, float((p_lo[None, :] - fields[k]).max()))
        if upper is not None:
            p_up = maxwellian_eval(upper, float(t), grid.u)
            up_viol = max(up_viol, float((fields[k] - p_up[None, :]).max()))
    return max(lo_viol, 0.0), max(up_viol, 0.0)


def picard_nonlinear(
    grid: PhaseGrid,
    rho0,
    model: KineticModel,
    tol: float = 1e-6,
    max_iter: int = 20,
    weight: WeightParams | None = None,
    lower: MaxwellianParams | None = None,
    upper: MaxwellianParams | None = None,
    mass_floor: float | None = None,
) -> PicardResult:
    """Fixed-point iteration on the frozen-drift specular solves.

    Iterate 0 is the initial density held constant in time; each subsequent
    iterate solves the specular problem with the drift estimated from the
    previous iterate's history, step by step. Stops when the discrete
    weighted V1 distance between consecutive histories drops below tol.
    """
    if weight is None:
        weight = WeightParams(alpha=3.0, dimension=1)
    rho_init = _as_values(rho0)
    n_steps = grid.n_steps
    prev = np.broadcast_to(rho_init, (n_steps + 1, grid.n_x, grid.n_u)).copy()
    report = PicardReport(iterates=0)
    result = None
    drifts = None
    for n in range(1, max_iter + 1):
        drifts = np.stack(
            [drift_from_density(prev[k], grid, model, mass_floor) for k in range(n_steps)]
        )

        def frozen(t, x, _table=drifts):
            k = min(int(round(t / grid.dt)), n_steps - 1)
            return _table[k]

        result = solve_specular_linear(grid, rho_init, frozen, model.sigma, weight=weight)
        dist = _v1_distance(result.fields, prev, grid, weight)
        report.iterates = n
        report.distances.append(dist)
        lo_v, up_v = _envelope_violations(result.fields, result.times, grid, lower, upper)
        report.lower_violation.append(lo_v)
        report.upper_violation.append(up_v)
        prev = result.fields
        if dist < tol:
            report.converged = True
            break
    if not report.converged:
        raise NotConverged(
            f"Picard did not reach tol={tol} in {max_iter} iterations",
            report=report,
            history=result,
        )
    return PicardResult(solution=result, report=report, drift_history=drifts)
