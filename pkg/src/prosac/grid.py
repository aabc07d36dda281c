"""Finite attacker hyperparameter grids.

A grid is a named Cartesian product of finite real axes.  Points are
indexed lexicographically with the first axis varying slowest, and that
index order is the canonical row order everywhere (risk tables, verdict
evidence, acquisition tie-breaking).
"""

from __future__ import annotations

import itertools
from collections.abc import Sequence

import numpy as np


class UnknownPointError(KeyError):
    """A queried point is not a member of the grid."""


class HyperGrid:
    """Cartesian product of named, finite, ordered real axes.

    Parameters
    ----------
    axes : sequence of (name, values) pairs
        Axis values are kept in the given order; each axis must be
        non-empty and all values finite.
    """

    def __init__(self, axes: Sequence[tuple[str, Sequence[float]]]):
        if not axes:
            raise ValueError("grid needs at least one axis")
        names = []
        values = []
        for name, vals in axes:
            vals = tuple(float(v) for v in vals)
            if not vals:
                raise ValueError(f"axis {name!r} is empty")
            if not all(np.isfinite(vals)):
                raise ValueError(f"axis {name!r} contains non-finite values")
            if len(set(vals)) != len(vals):
                raise ValueError(f"axis {name!r} contains duplicate values")
            names.append(str(name))
            values.append(vals)
        if len(set(names)) != len(names):
            raise ValueError("axis names must be unique")
        self._names = tuple(names)
        self._values = tuple(values)
        # Lexicographic product: first axis slowest.
        self._points = np.array(list(itertools.product(*values)), dtype=np.float64)
        self._index = {tuple(p): i for i, p in enumerate(self._points.tolist())}

    @property
    def axis_names(self) -> tuple[str, ...]:
        return self._names

    @property
    def axis_values(self) -> tuple[tuple[float, ...], ...]:
        return self._values

    @property
    def dim(self) -> int:
        return len(self._names)

    @property
    def points(self) -> np.ndarray:
        """All grid points, shape (size, dim), lexicographic order."""
        return self._points

    def __len__(self) -> int:
        return self._points.shape[0]

    def index_of(self, point, atol: float = 1e-12) -> int:
        """Lexicographic index of a point; UnknownPointError if absent."""
        key = tuple(float(v) for v in point)
        if len(key) != self.dim:
            raise UnknownPointError(f"point has dimension {len(key)}, grid has {self.dim}")
        hit = self._index.get(key)
        if hit is not None:
            return hit
        # Tolerant fallback for values that went through text round-trips.
        diffs = np.max(np.abs(self._points - np.asarray(key)), axis=1)
        nearest = int(np.argmin(diffs))
        if diffs[nearest] <= atol:
            return nearest
        raise UnknownPointError(f"point {key} not in grid")

    def normalized_points(self) -> np.ndarray:
        """Points min-max scaled per axis to [0, 1] (constant axes map to 0).

        Kernel evaluation always happens in this normalized space so one
        default length scale works across heterogeneous axis units.
        """
        return self._normalize(self._points)

    def normalize(self, point) -> np.ndarray:
        return self._normalize(np.asarray(point, dtype=np.float64).reshape(1, -1))[0]

    def _normalize(self, pts: np.ndarray) -> np.ndarray:
        lo = self._points.min(axis=0)
        span = self._points.max(axis=0) - lo
        out = np.zeros_like(pts)
        nz = span > 0
        out[:, nz] = (pts[:, nz] - lo[nz]) / span[nz]
        return out

    def to_jsonable(self) -> dict:
        return {
            "axes": [
                {"name": n, "values": list(v)}
                for n, v in zip(self._names, self._values)
            ]
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "HyperGrid":
        return cls([(ax["name"], ax["values"]) for ax in obj["axes"]])

    def __repr__(self) -> str:
        axes = ", ".join(f"{n}[{len(v)}]" for n, v in zip(self._names, self._values))
        return f"HyperGrid({axes}, size={len(self)})"
