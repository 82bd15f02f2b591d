"""Confined second-order Langevin dynamics with specular wall reflection.

Position integrates velocity, velocity diffuses, and the pair (x, u) between
wall contacts is jointly Gaussian, so free flight over any step length is
sampled exactly rather than by substepping.  Wall hits are located by
recursively inserting exact conditional midpoints (the law of the integrated
pair pinned at both endpoints) until segments are short enough that the
frozen-noise straight path locates the contact time by bisection; the contact
point is then projected onto the wall and the velocity reflected specularly.

Every random draw is addressed by (seed, stream id, counter), so a path is a
pure function of its stream and the ensemble driver reproduces the sequential
per-path results bit for bit regardless of batching.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidStart, WatchdogExceeded
from .geometry import (
    Domain,
    outward_normal,
    project,
    reflect,
    signed_distance,
)
from .rng import PrefetchedStream, RngStream, normals_at

EPS_TAN = 1e-12  # |u.n| <= EPS_TAN*|u| counts as a tangential graze
STEP_COUNTER_STRIDE = 1 << 16  # per-(path, macro-step) noise budget
PREFETCH_NORMALS = 48  # per component, covers free flight + typical bridges


@dataclass(frozen=True)
class PhaseState:
    """Position/velocity pair; scalars in d=1, length-d arrays otherwise."""

    x: object
    u: object


@dataclass(frozen=True)
class HitEvent:
    """One wall contact: time, location, velocities just before and after."""

    time: float
    location: object
    pre_velocity: object
    post_velocity: object


@dataclass(frozen=True)
class StepParams:
    """Macro step h, refinement floor h_min, and hit-detection knobs.

    delta_near = None lets each segment use its own free-flight reach
    max(|u_a|, |u_b|)*dt + 3*sigma*dt^1.5 as the near-wall trigger.
    """

    h: float
    h_min: float | None = None
    eps_hit: float = 1e-10
    delta_near: float | None = None
    max_hits: int = 10_000

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if self.h_min is None:
            object.__setattr__(self, "h_min", self.h / 256.0)
        if not 0 < self.h_min <= self.h:
            raise ValueError(f"need 0 < h_min <= h, got h_min={self.h_min}")
        if self.eps_hit <= 0 or (self.delta_near is not None and self.delta_near <= 0):
            raise ValueError("eps_hit and delta_near must be positive")
        if self.max_hits < 1:
            raise ValueError(f"max_hits must be >= 1, got {self.max_hits}")


@dataclass(frozen=True)
class ConfinedStepResult:
    state: PhaseState
    hits: tuple


@dataclass(frozen=True)
class PathResult:
    times: np.ndarray
    states: tuple
    events: tuple


@dataclass(frozen=True)
class SemigroupEstimate:
    mean: float
    std_error: float


def _speed(u):
    u = np.asarray(u, dtype=float)
    return float(np.abs(u)) if u.ndim == 0 else float(np.linalg.norm(u))


def _free_update(x, u, h, sigma, xi1, xi2):
    """Shared exact-flow arithmetic; identical expression for scalars and batches."""
    root_h = math.sqrt(h)
    u_new = u + (sigma * root_h) * xi1
    x_new = x + h * u + (sigma * h * root_h) * (0.5 * xi1 + (0.5 / math.sqrt(3.0)) * xi2)
    return x_new, u_new


def free_step(state: PhaseState, h: float, sigma: float, rng: RngStream) -> PhaseState:
    """Exact unconfined step: per component the increment pair is Gaussian with
    mean (h*u, 0) and covariance [[s^2 h^3/3, s^2 h^2/2], [s^2 h^2/2, s^2 h]]."""
    if h < 0:
        raise ValueError(f"h must be nonnegative, got {h}")
    if h == 0:
        return state
    u = np.asarray(state.u, dtype=float)
    d = 1 if u.ndim == 0 else u.shape[-1]
    z = rng.normals(2 * d)
    if u.ndim == 0:
        x_new, u_new = _free_update(float(state.x), float(u), h, sigma, z[0], z[1])
        return PhaseState(float(x_new), float(u_new))
    x_new, u_new = _free_update(np.asarray(state.x, float), u, h, sigma, z[0::2], z[1::2])
    return PhaseState(x_new, u_new)


def bridge_midpoint(
    a: PhaseState, b: PhaseState, h: float, sigma: float, rng: RngStream
) -> PhaseState:
    """Sample the mid-time state given both endpoints of a free-flight step.

    Conditioning the per-component 4-vector (x_mid, u_mid, x_b, u_b) of the
    exact flow on the endpoint leaves independent Gaussians:
      E[x_mid] = (x_a + x_b)/2 - h (u_b - u_a)/8,   Var = sigma^2 h^3 / 192,
      E[u_mid] = 3 (x_b - x_a)/(2h) - (u_a + u_b)/4, Var = sigma^2 h / 16.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    ua = np.asarray(a.u, dtype=float)
    d = 1 if ua.ndim == 0 else ua.shape[-1]
    z = rng.normals(2 * d)
    xi1, xi2 = (z[0], z[1]) if ua.ndim == 0 else (z[0::2], z[1::2])
    xa, xb = np.asarray(a.x, float), np.asarray(b.x, float)
    ub = np.asarray(b.u, dtype=float)
    mean_x = 0.5 * (xa + xb) - (h / 8.0) * (ub - ua)
    mean_u = 1.5 * (xb - xa) / h - 0.25 * (ua + ub)
    x_mid = mean_x + (sigma * math.sqrt(h**3 / 192.0)) * xi1
    u_mid = mean_u + (sigma * math.sqrt(h / 16.0)) * xi2
    if ua.ndim == 0:
        return PhaseState(float(x_mid), float(u_mid))
    return PhaseState(x_mid, u_mid)


def _near_trigger(params: StepParams, speed: float, dt: float, sigma: float) -> float:
    if params.delta_near is not None:
        return params.delta_near
    return speed * dt + 3.0 * sigma * dt * math.sqrt(dt)


def _interp(a, b, s):
    return a + s * (b - a)


def _locate_on_segment(domain, a: PhaseState, b: PhaseState, params: StepParams):
    """Bisect the straight segment a -> b for the first wall crossing.

    Requires sd(a.x) <= 0 < sd(b.x).  Returns (fraction, location, u_pre).
    Convergence is judged by bracket width, not |sd| alone: a segment that
    starts on the wall and dives back inside before exiting elsewhere must
    not report the start point as the contact.
    """
    chord = np.asarray(b.x, dtype=float) - np.asarray(a.x, dtype=float)
    chord_len = float(np.abs(chord)) if chord.ndim == 0 else float(np.linalg.norm(chord))
    s_lo, s_hi = 0.0, 1.0
    for _ in range(80):
        if (s_hi - s_lo) * chord_len <= params.eps_hit:
            break
        s_mid = 0.5 * (s_lo + s_hi)
        if float(signed_distance(domain, _interp(a.x, b.x, s_mid))) > 0.0:
            s_hi = s_mid
        else:
            s_lo = s_mid
    location = project(domain, _interp(a.x, b.x, s_lo))
    return s_lo, location, _interp(a.u, b.u, s_lo)


def _first_hit(domain, a, b, dt, params, sigma, rng):
    """First wall contact on (0, dt] given endpoint states, or None.

    Returns (time_in_segment, location, u_pre, tangential).  Consumes bridge
    draws from rng while refining; a pruned or hit-free call leaves the free
    endpoint b as the step result.
    """
    sd_a = float(signed_distance(domain, a.x))
    sd_b = float(signed_distance(domain, b.x))
    delta = _near_trigger(params, max(_speed(a.u), _speed(b.u)), dt, sigma)
    if sd_a <= -delta and sd_b <= -delta:
        return None
    if dt <= params.h_min:
        if sd_b <= 0.0:
            return None
        frac, location, u_pre = _locate_on_segment(domain, a, b, params)
        return frac * dt, location, u_pre
    mid = bridge_midpoint(a, b, dt, sigma, rng)
    found = _first_hit(domain, a, mid, 0.5 * dt, params, sigma, rng)
    if found is not None:
        return found
    found = _first_hit(domain, mid, b, 0.5 * dt, params, sigma, rng)
    if found is None:
        return None
    t_rel, location, u_pre = found
    return 0.5 * dt + t_rel, location, u_pre


def confined_step(
    domain: Domain,
    state: PhaseState,
    params: StepParams,
    sigma: float,
    rng: RngStream,
    h: float | None = None,
) -> ConfinedStepResult:
    """Advance one macro step inside the domain, reflecting at every wall hit.

    Hit times in the returned events are relative to the start of this step.
    Far from the wall this is exactly free_step on the same draws.
    """
    if float(signed_distance(domain, state.x)) > params.eps_hit:
        raise InvalidStart(f"state outside the domain: sd={signed_distance(domain, state.x)}")
    h_left = params.h if h is None else float(h)
    t_done = 0.0
    cur = state
    hits = []
    for _ in range(params.max_hits + 1):
        if h_left <= 0.0:
            return ConfinedStepResult(cur, tuple(hits))
        end = free_step(cur, h_left, sigma, rng)
        found = _first_hit(domain, cur, end, h_left, params, sigma, rng)
        if found is None:
            return ConfinedStepResult(end, tuple(hits))
        t_rel, location, u_pre = found
        n = outward_normal(domain, location)
        dot = float(np.dot(np.atleast_1d(u_pre), np.atleast_1d(n)))
        if dot <= EPS_TAN * max(_speed(u_pre), 1e-300):
            # tangential graze, or an interpolated velocity pointing back
            # inside at the located crossing: continue without a jump
            cur = PhaseState(location, u_pre)
        else:
            u_post = reflect(u_pre, n)
            hits.append(
                HitEvent(
                    time=t_done + t_rel,
                    location=location,
                    pre_velocity=u_pre,
                    post_velocity=u_post,
                )
            )
            if len(hits) > params.max_hits:
                raise WatchdogExceeded(
                    f"more than max_hits={params.max_hits} reflections in one step"
                )
            cur = PhaseState(location, u_post)
        t_done += t_rel
        h_left -= t_rel
    raise WatchdogExceeded(
        f"more than max_hits={params.max_hits} wall interactions in one step"
    )


def _check_start(domain: Domain, initial: PhaseState, eps_hit: float):
    sd = float(signed_distance(domain, initial.x))
    if sd > eps_hit:
        raise InvalidStart(f"initial position outside the domain: sd={sd}")
    if sd >= -eps_hit:
        n = outward_normal(domain, project(domain, initial.x))
        dot = float(np.dot(np.atleast_1d(initial.u), np.atleast_1d(n)))
        if dot >= 0.0:
            raise InvalidStart(
                "boundary start must have strictly incoming velocity; "
                "reflect it before calling"
            )


def simulate_path(
    domain: Domain,
    initial: PhaseState,
    T: float,
    params: StepParams,
    sigma: float,
    rng: RngStream,
) -> PathResult:
    """Simulate one confined path on [0, T], sampled at the macro grid.

    Each macro step k consumes draws addressed from counter k * 2^16 of the
    path's stream, so the realized path depends only on (seed, stream_id).
    """
    _check_start(domain, initial, params.eps_hit)
    n_steps = max(1, math.ceil(T / params.h - 1e-12)) if T > 0 else 0
    times = [0.0]
    states = [initial]
    events = []
    cur = initial
    for k in range(n_steps):
        t0 = k * params.h
        dt = min(params.h, T - t0)
        rng.jump_to(k * STEP_COUNTER_STRIDE)
        res = confined_step(domain, cur, params, sigma, rng, h=dt)
        if rng.counter - k * STEP_COUNTER_STRIDE > STEP_COUNTER_STRIDE:
            raise WatchdogExceeded("per-step noise budget exhausted")
        cur = res.state
        events.extend(replace(ev, time=t0 + ev.time) for ev in res.hits)
        times.append(t0 + dt)
        states.append(cur)
    return PathResult(times=np.array(times), states=tuple(states), events=tuple(events))


@dataclass(frozen=True)
class HitRecord:
    """Flattened hit log entry for ensemble runs."""

    path_id: int
    time: float
    location: object
    pre_velocity: object
    post_velocity: object


def ensemble_free_flight(X, U, h, sigma, Z):
    """Vectorized exact flow; Z holds 2 standard normals per component."""
    if X.ndim == 1:
        return _free_update(X, U, h, sigma, Z[:, 0], Z[:, 1])
    return _free_update(X, U, h, sigma, Z[:, 0::2], Z[:, 1::2])


def ensemble_confined_step(
    domain: Domain,
    X: np.ndarray,
    U: np.ndarray,
    step_index: int,
    params: StepParams,
    sigma: float,
    seed: int,
    h: float | None = None,
    time_offset: float = 0.0,
    hit_sink: list | None = None,
    stream_ids: np.ndarray | None = None,
    threads: int = 1,
):
    """One macro step for N independent paths, path i on stream stream_ids[i].

    Free flight is evaluated in one batch; only paths whose endpoints fall
    within the near-wall trigger re-run the sequential confined step on their
    own stream, reproducing the per-path results bit for bit.  stream_ids
    defaults to the array index; explicit ids let callers shard the ensemble
    (or permute it) without changing any path.  threads > 1 shards the step
    into contiguous chunks on a thread pool; chunk results and hit events are
    merged back in index order, so the output is bitwise independent of the
    worker count.
    """
    dt = params.h if h is None else float(h)
    n = X.shape[0]
    d = 1 if X.ndim == 1 else X.shape[1]
    base = step_index * STEP_COUNTER_STRIDE
    if stream_ids is None:
        stream_ids = np.arange(n, dtype=np.uint64)
    else:
        stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    if threads > 1 and n > 1:
        return _sharded_confined_step(
            domain, X, U, step_index, params, sigma, seed,
            dt, time_offset, hit_sink, stream_ids, threads,
        )
    Z = normals_at(seed, stream_ids, base, 2 * d)
    Xf, Uf = ensemble_free_flight(X, U, dt, sigma, Z)

    sd0 = np.asarray(signed_distance(domain, X), dtype=float)
    sd1 = np.asarray(signed_distance(domain, Xf), dtype=float)
    if X.ndim == 1:
        speed = np.maximum(np.abs(U), np.abs(Uf))
    else:
        speed = np.maximum(np.linalg.norm(U, axis=1), np.linalg.norm(Uf, axis=1))
    if params.delta_near is not None:
        delta = params.delta_near
    else:
        delta = speed * dt + 3.0 * sigma * dt * math.sqrt(dt)
    near = ~((sd0 <= -delta) & (sd1 <= -delta))

    near_ids = np.nonzero(near)[0]
    if near_ids.size:
        # one vectorized fetch covers the free redraw plus the usual bridge
        # cascade; rare deep recursions fall back to direct addressing
        blocks = normals_at(seed, stream_ids[near_ids], base, PREFETCH_NORMALS * d)
    for row, i in enumerate(near_ids):
        rng = PrefetchedStream(
            seed=seed,
            stream_id=int(stream_ids[i]),
            counter=base,
            window=blocks[row],
            window_start=base,
            refill=PREFETCH_NORMALS * d,
        )
        state = PhaseState(X[i] if X.ndim == 1 else X[i].copy(), U[i] if U.ndim == 1 else U[i].copy())
        res = confined_step(domain, state, params, sigma, rng, h=dt)
        if rng.counter - base > STEP_COUNTER_STRIDE:
            raise WatchdogExceeded("per-step noise budget exhausted")
        Xf[i], Uf[i] = res.state.x, res.state.u
        if hit_sink is not None:
            hit_sink.extend(
                HitRecord(
                    path_id=int(stream_ids[i]),
                    time=time_offset + ev.time,
                    location=ev.location,
                    pre_velocity=ev.pre_velocity,
                    post_velocity=ev.post_velocity,
                )
                for ev in res.hits
            )
    return Xf, Uf


def _sharded_confined_step(
    domain, X, U, step_index, params, sigma, seed,
    dt, time_offset, hit_sink, stream_ids, threads,
):
    """Run one macro step as contiguous chunks on a thread pool.

    Each chunk replays the single-thread path on its slice of streams; hit
    events within a chunk come out in ascending particle order, so stitching
    chunks in index order reproduces the sequential log exactly.
    """
    n = X.shape[0]
    k = min(int(threads), n)
    bounds = [(n * c) // k for c in range(k + 1)]

    def _one(c):
        lo, hi = bounds[c], bounds[c + 1]
        sink = [] if hit_sink is not None else None
        Xc, Uc = ensemble_confined_step(
            domain, X[lo:hi], U[lo:hi], step_index, params, sigma, seed,
            h=dt, time_offset=time_offset, hit_sink=sink,
            stream_ids=stream_ids[lo:hi], threads=1,
        )
        return Xc, Uc, sink

    with ThreadPoolExecutor(max_workers=k) as pool:
        parts = list(pool.map(_one, range(k)))
    Xf = np.concatenate([p[0] for p in parts])
    Uf = np.concatenate([p[1] for p in parts])
    if hit_sink is not None:
        for p in parts:
            hit_sink.extend(p[2])
    return Xf, Uf


def run_ensemble(
    domain: Domain,
    X0: np.ndarray,
    U0: np.ndarray,
    T: float,
    params: StepParams,
    sigma: float,
    seed: int,
    hit_sink: list | None = None,
    snapshot_times: tuple = (),
    stream_ids: np.ndarray | None = None,
    threads: int = 1,
):
    """March N independent confined paths to time T; optional phase snapshots.

    Returns (X, U, snapshots) where snapshots maps requested grid times to
    (X, U) copies.  Ordering and values are independent of how callers batch
    the work because every draw is counter-addressed.
    """
    X = np.array(X0, dtype=float)
    U = np.array(U0, dtype=float)
    n_steps = max(1, math.ceil(T / params.h - 1e-12)) if T > 0 else 0
    wanted = {round(t / params.h): t for t in snapshot_times}
    snapshots = {}
    if 0 in wanted:
        snapshots[wanted[0]] = (X.copy(), U.copy())
    for k in range(n_steps):
        t0 = k * params.h
        dt = min(params.h, T - t0)
        X, U = ensemble_confined_step(
            domain,
            X,
            U,
            k,
            params,
            sigma,
            seed,
            h=dt,
            time_offset=t0,
            hit_sink=hit_sink,
            stream_ids=stream_ids,
            threads=threads,
        )
        if (k + 1) in wanted:
            snapshots[wanted[k + 1]] = (X.copy(), U.copy())
    return X, U, snapshots


def semigroup_estimate(
    domain: Domain,
    psi,
    t: float,
    initial: PhaseState,
    N: int,
    params: StepParams,
    sigma: float,
    seed: int,
) -> SemigroupEstimate:
    """Monte Carlo value of E[psi(X_t, U_t)] from N paths started at `initial`.

    psi takes (x, u) arrays batched along the first axis and returns a batch
    of scalars.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    _check_start(domain, initial, params.eps_hit)
    u0 = np.asarray(initial.u, dtype=float)
    if u0.ndim == 0:
        X0 = np.full(N, float(initial.x))
        U0 = np.full(N, float(u0))
    else:
        X0 = np.tile(np.asarray(initial.x, float), (N, 1))
        U0 = np.tile(u0, (N, 1))
    if t == 0:
        vals = np.asarray(psi(X0, U0), dtype=float)
    else:
        X, U, _ = run_ensemble(domain, X0, U0, t, params, sigma, seed)
        vals = np.asarray(psi(X, U), dtype=float)
    mean = float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return SemigroupEstimate(mean=mean, std_error=std_error)
