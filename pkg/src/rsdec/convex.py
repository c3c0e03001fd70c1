"""Closed convex constraint sets with exact Euclidean projection.

Supported set types: the whole space, boxes, balls, strictly convex 2-D
polygons, and products of the above. Projection is always with respect
to the standard Euclidean inner product.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch

__all__ = [
    "ConvexSet",
    "WholeSpace",
    "Box",
    "Ball",
    "Polygon2D",
    "Product",
    "set_from_config",
]


class ConvexSet:
    """Base interface; concrete sets implement project_many and diameter."""

    dim: int

    def _check_dim(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"point has dim {y.shape[-1]}, set has dim {self.dim}"
            )
        return y

    def project(self, y):
        y = self._check_dim(y)
        return self.project_many(y[None, :])[0]

    def project_many(self, Y):
        raise NotImplementedError

    def contains(self, x, tol=0.0):
        x = self._check_dim(x)
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def contains_many(self, X, tol=0.0):
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - self.project_many(X), axis=1) <= tol

    def diameter(self):
        raise NotImplementedError


@dataclass(frozen=True)
class WholeSpace(ConvexSet):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def project_many(self, Y):
        return np.array(self._check_dim(Y), dtype=float)

    def diameter(self):
        return math.inf


@dataclass(frozen=True)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("lower and upper must be 1-D with equal length")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "dim", lo.size)

    def project_many(self, Y):
        Y = self._check_dim(Y)
        return np.clip(Y, self.lower, self.upper)

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))


@dataclass(frozen=True)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float
    dim: int = field(init=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dim", c.size)

    def project_many(self, Y):
        Y = self._check_dim(Y)
        diff = Y - self.center
        dist = np.linalg.norm(diff, axis=1)
        scale = np.ones_like(dist)
        outside = dist > self.radius
        scale[outside] = self.radius / dist[outside]
        return self.center + diff * scale[:, None]

    def diameter(self):
        return 2.0 * self.radius


@dataclass(frozen=True)
class Polygon2D(ConvexSet):
    """Convex polygon in the plane, vertices in counterclockwise order."""

    vertices: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or V.shape[0] < 3:
            raise ValueError("polygon needs at least 3 two-dimensional vertices")
        nxt = np.roll(V, -1, axis=0)
        edges = nxt - V
        if np.any(np.linalg.norm(edges, axis=1) == 0.0):
            raise ValueError("polygon has repeated vertices")
        nxt_e = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt_e[:, 1] - edges[:, 1] * nxt_e[:, 0]
        if np.any(cross <= -1e-12):
            raise ValueError("polygon vertices are not in convex CCW order")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "dim", 2)

    def _inside_many(self, Y):
        V = self.vertices
        E = np.roll(V, -1, axis=0) - V  # (m, 2)
        rel = Y[:, None, :] - V[None, :, :]  # (k, m, 2)
        cross = E[None, :, 0] * rel[:, :, 1] - E[None, :, 1] * rel[:, :, 0]
        return np.all(cross >= -1e-12, axis=1)

    def project_many(self, Y):
        Y = self._check_dim(Y)
        out = np.array(Y, dtype=float)
        inside = self._inside_many(Y)
        if np.all(inside):
            return out
        P = Y[~inside]
        A = self.vertices
        B = np.roll(A, -1, axis=0)
        AB = B - A  # (m, 2)
        len2 = np.sum(AB * AB, axis=1)  # (m,)
        rel = P[:, None, :] - A[None, :, :]  # (j, m, 2)
        t = np.clip(np.sum(rel * AB[None, :, :], axis=2) / len2[None, :], 0.0, 1.0)
        cand = A[None, :, :] + t[:, :, None] * AB[None, :, :]  # (j, m, 2)
        d2 = np.sum((cand - P[:, None, :]) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        out[~inside] = cand[np.arange(P.shape[0]), best]
        return out

    def diameter(self):
        V = self.vertices
        d = V[:, None, :] - V[None, :, :]
        return float(np.sqrt(np.max(np.sum(d * d, axis=2))))


@dataclass(frozen=True)
class Product(ConvexSet):
    """Cartesian product of convex factors; projection factorizes."""

    factors: tuple
    dim: int = field(init=False)

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise ValueError("product needs at least one factor")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "dim", sum(f.dim for f in factors))

    def _slices(self):
        start = 0
        for f in self.factors:
            yield f, slice(start, start + f.dim)
            start += f.dim

    def project_many(self, Y):
        Y = self._check_dim(Y)
        out = np.empty_like(Y, dtype=float)
        for f, sl in self._slices():
            out[:, sl] = f.project_many(Y[:, sl])
        return out

    def diameter(self):
        total = 0.0
        for f in self.factors:
            d = f.diameter()
            if math.isinf(d):
                return math.inf
            total += d * d
        return math.sqrt(total)


def set_from_config(cfg):
    """Build a ConvexSet from a tagged record, e.g. parsed from TOML.

    Recognized tags: wholespace, box, ball, polygon2d, product.
    """
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigError("convex set config must be a table with a 'type' key")
    kind = cfg["type"]
    try:
        if kind == "wholespace":
            return WholeSpace(dim=int(cfg["dim"]))
        if kind == "box":
            return Box(lower=cfg["lower"], upper=cfg["upper"])
        if kind == "ball":
            return Ball(center=cfg["center"], radius=float(cfg["radius"]))
        if kind == "polygon2d":
            return Polygon2D(vertices=cfg["vertices"])
        if kind == "product":
            return Product(tuple(set_from_config(f) for f in cfg["factors"]))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc} in '{kind}' set config") from exc
    except (ValueError, DimensionMismatch) as exc:
        raise ConfigError(f"invalid '{kind}' set config: {exc}") from exc
    raise ConfigError(f"unknown convex set type '{kind}'")
