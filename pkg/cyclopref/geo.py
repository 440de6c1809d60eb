"""Geodesy helpers: haversine lengths and a local metric projection."""

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

Coordinate = Tuple[float, float]


def haversine(a: Coordinate, b: Coordinate) -> float:
    """Great-circle distance in meters between two (lon, lat) pairs."""
    lon1, lat1 = map(math.radians, a)
    lon2, lat2 = map(math.radians, b)
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def polyline_length(coords: Sequence[Coordinate]) -> float:
    return sum(haversine(coords[i], coords[i + 1]) for i in range(len(coords) - 1))


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection around a reference point, in meters.

    Accurate to well below GPS noise over a city-sized area.
    """

    lon0: float
    lat0: float

    @classmethod
    def around(cls, coords: Iterable[Coordinate]) -> "LocalProjection":
        arr = np.asarray(list(coords), dtype=float)
        if arr.size == 0:
            return cls(0.0, 0.0)
        lo = arr.min(axis=0)
        hi = arr.max(axis=0)
        return cls(float((lo[0] + hi[0]) / 2), float((lo[1] + hi[1]) / 2))

    @property
    def _kx(self) -> float:
        return EARTH_RADIUS_M * math.cos(math.radians(self.lat0)) * math.pi / 180.0

    @property
    def _ky(self) -> float:
        return EARTH_RADIUS_M * math.pi / 180.0

    def forward(self, lon: float, lat: float) -> Tuple[float, float]:
        return ((lon - self.lon0) * self._kx, (lat - self.lat0) * self._ky)

    def inverse(self, x: float, y: float) -> Tuple[float, float]:
        return (self.lon0 + x / self._kx, self.lat0 + y / self._ky)

    def forward_many(self, coords: Sequence[Coordinate]) -> List[Tuple[float, float]]:
        return [self.forward(lon, lat) for lon, lat in coords]
