"""Interacting particle system with an estimated conditional drift.

N confined paths share one empirical measure; each macro step evaluates the
conditional expectation of b(U) given X = x by Nadaraya-Watson regression on
a frozen snapshot, kicks every velocity by h times that field, and then runs
the exact confined step. The estimate is a convex combination of b values,
so the kick respects the componentwise bound of b no matter how degenerate
the data are; where the local kernel mass is negligible the drift is zero.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInitial
from .geometry import Domain, Interval, signed_distance
from .langevin import StepParams, ensemble_confined_step

__all__ = [
    "KineticModel",
    "Ensemble",
    "DriftEstimatorConfig",
    "McKeanRun",
    "drift_from_name",
    "silverman_bandwidth",
    "conditional_drift",
    "mckean_step",
    "run_mckean",
]

_NAME_RE = re.compile(r"^([a-z_]+)\s*(?:\(([^()]*)\))?$")


def _parse_args(text):
    if text is None or text.strip() == "":
        return ()
    return tuple(float(part) for part in text.split(","))


@lru_cache(maxsize=None)
def drift_from_name(name: str):
    """Resolve a catalog drift name to (componentwise function, sup bound).

    Catalog: "zero", "constant(c)", "tanh(scale)", "sign",
    "clipped_linear(slope, cap)". All members act componentwise on the
    velocity and are bounded; the returned bound is the componentwise sup.
    """
    m = _NAME_RE.match(name.strip())
    if m is None:
        raise ValueError(f"malformed drift name: {name!r}")
    head, args = m.group(1), _parse_args(m.group(2))
    if head == "zero" and not args:
        return (lambda u: np.zeros_like(np.asarray(u, dtype=float)), 0.0)
    if head == "constant" and len(args) == 1:
        c = args[0]
        return (lambda u: np.full_like(np.asarray(u, dtype=float), c), abs(c))
    if head == "tanh" and len(args) == 1:
        scale = args[0]
        return (lambda u: np.tanh(scale * np.asarray(u, dtype=float)), 1.0)
    if head == "sign" and not args:
        return (lambda u: np.sign(np.asarray(u, dtype=float)), 1.0)
    if head == "clipped_linear" and len(args) == 2:
        slope, cap = args
        if not cap > 0:
            raise ValueError("clipped_linear cap must be positive")
        return (
            lambda u: np.clip(slope * np.asarray(u, dtype=float), -cap, cap),
            cap,
        )
    raise ValueError(f"unknown drift in catalog: {name!r}")


@dataclass(frozen=True)
class KineticModel:
    """Noise level and bounded velocity drift of the interacting system.

    b names a catalog member; b_norm is the componentwise sup of |b|, so the
    euclidean magnitude of any drift value is at most b_norm * sqrt(d).
    """

    sigma: float
    b: str = "zero"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        drift_from_name(self.b)  # fail fast on typos

    @property
    def drift(self):
        return drift_from_name(self.b)[0]

    @property
    def b_norm(self) -> float:
        return drift_from_name(self.b)[1]


@dataclass
class Ensemble:
    """Particle cloud at one time: positions (N,) or (N, d), velocities alike."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must share a shape")
        if len(self) < 1:
            raise ValueError("ensemble needs at least one particle")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def dimension(self):
        return 1 if self.positions.ndim == 1 else self.positions.shape[1]


@dataclass(frozen=True)
class DriftEstimatorConfig:
    """Knobs of the Nadaraya-Watson conditional-drift estimate.

    bandwidth None means the Silverman rule per spatial dimension at
    evaluation time. min_mass is the fraction of the maximal kernel mass
    (N at peak 1) below which the estimate returns the zero vector.
    probes > 0 evaluates the field on that many grid points and linearly
    interpolates during stepping (one-dimensional intervals only);
    probes = 0 forces exact per-particle evaluation.
    """

    bandwidth: float | None = None
    kernel: str = "gaussian"
    min_mass: float = 1e-6
    probes: int = 257

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel: {self.kernel!r}")
        if not self.min_mass >= 0:
            raise ValueError(f"min_mass must be nonnegative, got {self.min_mass}")
        if self.probes < 0:
            raise ValueError(f"probes must be nonnegative, got {self.probes}")


def _kernel_of_sq(name, q):
    # q = squared scaled distance; both profiles peak at 1
    if name == "gaussian":
        return np.exp(-0.5 * q)
    return np.maximum(0.0, 1.0 - q)


def silverman_bandwidth(positions: np.ndarray):
    """1.06 * std * N^(-1/5) per spatial dimension, floored against collapse."""
    X = np.asarray(positions, dtype=float)
    n = X.shape[0]
    std = X.std(axis=0)
    bw = 1.06 * std * n ** (-0.2)
    return np.where(bw > 0, bw, 1.0) if X.ndim > 1 else (bw if bw > 0 else 1.0)


def _resolve_bandwidth(cfg, positions):
    if cfg.bandwidth is not None:
        return cfg.bandwidth
    return silverman_bandwidth(positions)


def conditional_drift(
    ensemble: Ensemble,
    model: KineticModel,
    cfg: DriftEstimatorConfig,
    x,
):
    """Kernel regression estimate of E[b(U) | X = x] on the ensemble.

    x may be a single point or a batch along the first axis; the output
    matches. Wherever the summed kernel mass falls below
    min_mass * N * peak, the zero vector is returned.
    """
    X = ensemble.positions
    BU = model.drift(ensemble.velocities)
    n = len(ensemble)
    bw = _resolve_bandwidth(cfg, X)
    pts = np.asarray(x, dtype=float)
    if X.ndim == 1:
        single = pts.ndim == 0
        probes = np.atleast_1d(pts)
    else:
        single = pts.ndim == 1
        probes = pts[None, :] if single else pts

    out = np.zeros(probes.shape, dtype=float)
    threshold = cfg.min_mass * n
    chunk = max(1, (1 << 22) // max(n, 1))
    for lo in range(0, probes.shape[0], chunk):
        block = probes[lo : lo + chunk]
        if X.ndim == 1:
            q = ((block[:, None] - X[None, :]) / bw) ** 2
        else:
            diff = (block[:, None, :] - X[None, :, :]) / bw
            q = np.einsum("mnd,mnd->mn", diff, diff)
        w = _kernel_of_sq(cfg.kernel, q)
        denom = w.sum(axis=1)
        ok = denom >= threshold
        safe = np.where(ok, denom, 1.0)
        # row-wise reductions keep results independent of the chunking
        if X.ndim == 1:
            numer = (w * BU[None, :]).sum(axis=1)
            out[lo : lo + chunk] = np.where(ok, numer / safe, 0.0)
        else:
            numer = (w[:, :, None] * BU[None, :, :]).sum(axis=1)
            out[lo : lo + chunk] = np.where(ok[:, None], numer / safe[:, None], 0.0)
    return out[0] if single else out


def _drift_at_particles(domain, ensemble, model, cfg):
    """Drift field values at every particle of the frozen snapshot."""
    if model.b_norm == 0.0:
        return np.zeros_like(ensemble.velocities)
    if (
        ensemble.dimension == 1
        and isinstance(domain, Interval)
        and cfg.probes >= 2
    ):
        grid = np.linspace(0.0, domain.length, cfg.probes)
        values = conditional_drift(ensemble, model, cfg, grid)
        return np.interp(ensemble.positions, grid, values)
    return conditional_drift(ensemble, model, cfg, ensemble.positions)


def mckean_step(
    domain: Domain,
    ensemble: Ensemble,
    model: KineticModel,
    cfg: DriftEstimatorConfig,
    params: StepParams,
    seed: int,
    step_index: int,
    h: float | None = None,
    hit_sink: list | None = None,
    stream_ids: np.ndarray | None = None,
    threads: int = 1,
) -> Ensemble:
    """One synchronous macro step of the interacting system.

    Every particle sees the same frozen snapshot: the drift field is
    evaluated once at step start, each velocity is kicked by h times the
    local field value, and the kicked states run the exact confined step on
    their own noise streams.  The drift estimate always sees the whole
    ensemble; threads only shards the confined transport, so worker count
    never changes the results.
    """
    dt = params.h if h is None else float(h)
    kick = _drift_at_particles(domain, ensemble, model, cfg)
    X1, U1 = ensemble_confined_step(
        domain,
        ensemble.positions,
        ensemble.velocities + dt * kick,
        step_index,
        params,
        model.sigma,
        seed,
        h=dt,
        time_offset=ensemble.time,
        hit_sink=hit_sink,
        stream_ids=stream_ids,
        threads=threads,
    )
    return Ensemble(X1, U1, ensemble.time + dt)


@dataclass
class McKeanRun:
    """Bundle of outputs from run_mckean."""

    final: Ensemble
    snapshots: dict = field(default_factory=dict)
    drift_fields: dict = field(default_factory=dict)
    hits: list = field(default_factory=list)


def _field_snapshot(domain, ensemble, model, cfg):
    if ensemble.dimension == 1 and isinstance(domain, Interval) and cfg.probes >= 2:
        grid = np.linspace(0.0, domain.length, cfg.probes)
        return grid, conditional_drift(ensemble, model, cfg, grid)
    return None


def run_mckean(
    domain: Domain,
    initial,
    model: KineticModel,
    cfg: DriftEstimatorConfig,
    T: float,
    params: StepParams,
    N: int,
    seed: int,
    snapshot_times: tuple = (),
    stream_ids: np.ndarray | None = None,
    threads: int = 1,
) -> McKeanRun:
    """March the N-particle system to time T.

    initial is either a pair of arrays (X0, U0) or a callable (n, seed) ->
    (X0, U0); every sampled position must lie in the closed domain. The run
    is a pure function of (initial, seed): snapshots land on the step grid
    at the requested times, hit events carry absolute times and path ids.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    X0, U0 = initial(N, seed) if callable(initial) else initial
    X0 = np.array(X0, dtype=float)
    U0 = np.array(U0, dtype=float)
    if X0.shape[0] != N:
        raise InvalidInitial(f"sampler returned {X0.shape[0]} states, wanted {N}")
    sd = np.asarray(signed_distance(domain, X0), dtype=float)
    if np.any(sd > params.eps_hit):
        worst = float(sd.max())
        raise InvalidInitial(f"initial positions leave the domain by {worst:.3e}")

    ens = Ensemble(X0, U0, 0.0)
    hits: list = []
    snapshots: dict = {}
    drift_fields: dict = {}
    wanted = {round(t / params.h): t for t in snapshot_times}
    if 0 in wanted:
        snapshots[wanted[0]] = Ensemble(X0.copy(), U0.copy(), 0.0)
        fs = _field_snapshot(domain, ens, model, cfg)
        if fs is not None:
            drift_fields[wanted[0]] = fs
    n_steps = max(1, math.ceil(T / params.h - 1e-12)) if T > 0 else 0
    for k in range(n_steps):
        dt = min(params.h, T - k * params.h)
        ens = mckean_step(
            domain,
            ens,
            model,
            cfg,
            params,
            seed,
            k,
            h=dt,
            hit_sink=hits,
            stream_ids=stream_ids,
            threads=threads,
        )
        if (k + 1) in wanted:
            t_snap = wanted[k + 1]
            snapshots[t_snap] = Ensemble(
                ens.positions.copy(), ens.velocities.copy(), ens.time
            )
            fs = _field_snapshot(domain, ens, model, cfg)
            if fs is not None:
                drift_fields[t_snap] = fs
    return McKeanRun(final=ens, snapshots=snapshots, drift_fields=drift_fields, hits=hits)
