"""Confinement domains: signed distance, outward normal, projection, reflection.

Every supported domain has a closed-form signed distance (negative inside,
zero on the wall, positive outside), so hit detection and wall projection
introduce no geometric approximation error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguousProjection, NotUnitNormal

__all__ = [
    "Domain",
    "Interval",
    "Ball",
    "Annulus",
    "BoundaryClass",
    "signed_distance",
    "outward_normal",
    "project",
    "reflect",
    "classify",
    "domain_from_config",
]

EPS_TAN_DEFAULT = 1e-12


class BoundaryClass(enum.Enum):
    INTERIOR = "interior"
    INCOMING = "incoming"    # (u . n) < 0
    OUTGOING = "outgoing"    # (u . n) > 0
    TANGENTIAL = "tangential"


@dataclass(frozen=True)
class Domain:
    """Base type; use Interval, Ball or Annulus."""

    dimension: int = 0

    def signed_distance(self, x):
        raise NotImplementedError

    def outward_normal(self, x, band_width=None):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def volume(self):
        raise NotImplementedError

    def sample_uniform(self, n, rng):
        """n positions uniform over the domain, rng a numpy Generator."""
        raise NotImplementedError


@dataclass(frozen=True)
class Interval(Domain):
    """D = (0, L) in one dimension."""

    length: float = 1.0
    dimension: int = field(default=1, init=False)

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("interval length must be positive")

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.maximum(-x, x - self.length)

    def outward_normal(self, x, band_width=None):
        band = 0.5 * self.length if band_width is None else band_width
        x = float(np.asarray(x).reshape(()))
        if abs(self.signed_distance(x)) >= band:
            raise AmbiguousProjection(
                f"x={x} outside the band |sd| < {band} around the walls"
            )
        return -1.0 if x < 0.5 * self.length else 1.0

    def project(self, x):
        x = float(np.asarray(x).reshape(()))
        if x == 0.5 * self.length:
            raise AmbiguousProjection("midpoint is equidistant from both walls")
        return 0.0 if x < 0.5 * self.length else self.length

    def volume(self):
        return self.length

    def sample_uniform(self, n, rng):
        return self.length * rng.uniform(size=n)


@dataclass(frozen=True)
class Ball(Domain):
    """D = open ball of given center and radius, d >= 2."""

    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    dimension: int = field(default=0, init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        if len(center) < 2:
            raise ValueError("ball requires dimension >= 2")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dimension", len(center))

    def _radial(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1)

    def signed_distance(self, x):
        return self._radial(x) - self.radius

    def outward_normal(self, x, band_width=None):
        band = 0.5 * self.radius if band_width is None else band_width
        x = np.asarray(x, dtype=float)
        rho = float(self._radial(x))
        if abs(rho - self.radius) >= band:
            raise AmbiguousProjection(
                f"|sd|={abs(rho - self.radius)} outside the band < {band}"
            )
        return (x - np.asarray(self.center)) / rho

    def project(self, x):
        x = np.asarray(x, dtype=float)
        rho = float(self._radial(x))
        if rho == 0.0:
            raise AmbiguousProjection("ball center projects to every wall point")
        c = np.asarray(self.center)
        return c + (self.radius / rho) * (x - c)

    def volume(self):
        d, r = self.dimension, self.radius
        if d == 2:
            return np.pi * r**2
        if d == 3:
            return 4.0 / 3.0 * np.pi * r**3
        from scipy.special import gamma

        return np.pi ** (d / 2) / gamma(d / 2 + 1) * r**d

    def sample_uniform(self, n, rng):
        d = self.dimension
        z = rng.standard_normal(size=(n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
        return np.asarray(self.center) + r * z


@dataclass(frozen=True)
class Annulus(Domain):
    """D = {r < |x - c| < R}, d >= 2."""

    center: tuple = (0.0, 0.0)
    inner_radius: float = 1.0
    radius: float = 2.0
    dimension: int = field(default=0, init=False)

    def __post_init__(self):
        if not (0 < self.inner_radius < self.radius):
            raise ValueError("annulus requires 0 < inner_radius < radius")
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        if len(center) < 2:
            raise ValueError("annulus requires dimension >= 2")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dimension", len(center))

    def _radial(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1)

    def signed_distance(self, x):
        rho = self._radial(x)
        return np.maximum(self.inner_radius - rho, rho - self.radius)

    def outward_normal(self, x, band_width=None):
        band = 0.5 * (self.radius - self.inner_radius) if band_width is None else band_width
        x = np.asarray(x, dtype=float)
        rho = float(self._radial(x))
        if abs(float(self.signed_distance(x))) >= band:
            raise AmbiguousProjection(
                f"point at radius {rho} outside the band < {band} around a wall"
            )
        radial = (x - np.asarray(self.center)) / rho
        # outward from D: toward the center at the inner wall
        if rho < 0.5 * (self.inner_radius + self.radius):
            return -radial
        return radial

    def project(self, x):
        x = np.asarray(x, dtype=float)
        rho = float(self._radial(x))
        if rho == 0.0:
            raise AmbiguousProjection("annulus center projects to every inner point")
        mid = 0.5 * (self.inner_radius + self.radius)
        if rho == mid:
            raise AmbiguousProjection("mid-shell point is equidistant from both walls")
        target = self.inner_radius if rho < mid else self.radius
        c = np.asarray(self.center)
        return c + (target / rho) * (x - c)

    def volume(self):
        d = self.dimension
        outer = Ball(self.center, self.radius).volume()
        inner = Ball(self.center, self.inner_radius).volume()
        return outer - inner

    def sample_uniform(self, n, rng):
        d = self.dimension
        z = rng.standard_normal(size=(n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        lo, hi = self.inner_radius**d, self.radius**d
        r = (lo + (hi - lo) * rng.uniform(size=(n, 1))) ** (1.0 / d)
        return np.asarray(self.center) + r * z


def signed_distance(domain, x):
    """Closed-form signed distance; negative inside, positive outside."""
    return domain.signed_distance(x)


def outward_normal(domain, x, band_width=None):
    """Unit outward normal at the wall point nearest x.

    Raises AmbiguousProjection when x sits outside the uniqueness band
    (default band: L/2, R/2, (R-r)/2 per domain kind).
    """
    return domain.outward_normal(x, band_width)


def project(domain, x):
    """Closed-form projection onto the nearest wall; sd(project(x)) = 0."""
    return domain.project(x)


def reflect(u, n):
    """Specular reflection u - 2(u.n)n; in d=1 the exact sign flip -u."""
    if np.ndim(n) == 0:
        if abs(abs(float(n)) - 1.0) > 1e-12:
            raise NotUnitNormal(f"|n|={abs(float(n))} deviates from 1")
        return -u if np.ndim(u) == 0 else -np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-12:
        raise NotUnitNormal(f"|n|={norm} deviates from 1")
    return u - 2.0 * float(np.dot(u, n)) * n


def classify(domain, x, u, eps_bd, eps_tan=EPS_TAN_DEFAULT):
    """Interior / incoming / outgoing / tangential at (x, u).

    Interior whenever sd(x) < -eps_bd; otherwise classified by the sign of
    (u . n) at the projected wall point, with a relative tangential band.
    """
    sd = float(np.asarray(domain.signed_distance(x)).reshape(()))
    if sd < -eps_bd:
        return BoundaryClass.INTERIOR
    n = domain.outward_normal(x)
    if np.ndim(n) == 0:
        un = float(n) * float(np.asarray(u).reshape(()))
        speed = abs(float(np.asarray(u).reshape(())))
    else:
        un = float(np.dot(np.asarray(u, dtype=float), n))
        speed = float(np.linalg.norm(u))
    if abs(un) <= eps_tan * speed:
        return BoundaryClass.TANGENTIAL
    return BoundaryClass.OUTGOING if un > 0 else BoundaryClass.INCOMING


def domain_from_config(spec):
    """Build a Domain from its config mapping (see README for the schema)."""
    kind = spec.get("kind")
    if kind == "interval":
        return Interval(length=float(spec["length"]))
    if kind == "ball":
        return Ball(center=tuple(spec["center"]), radius=float(spec["radius"]))
    if kind == "annulus":
        return Annulus(
            center=tuple(spec["center"]),
            inner_radius=float(spec["inner_radius"]),
            radius=float(spec["radius"]),
        )
    raise ValueError(f"unknown domain kind: {kind!r}")
