"""Four-hot encoding: concatenated one-hot bins of lat, lon, SOG and COG."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ais_ingest import Roi, ResampledTrack, USHANT
from .errors import InvalidFourHot, OutOfRoi

NUDGE = 1e-9


def n_bins(extent: float, res: float) -> int:
    return int(math.ceil(extent / res - NUDGE))


@dataclass(frozen=True)
class FourHotSpec:
    roi: Roi = USHANT
    res_lat: float = 0.01
    res_lon: float = 0.01
    res_sog: float = 1.0
    res_cog: float = 5.0
    sog_max: float = 30.0

    def __post_init__(self):
        for name in ("res_lat", "res_lon", "res_sog", "res_cog", "sog_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_lat(self):
        return n_bins(self.roi.lat_max - self.roi.lat_min, self.res_lat)

    @property
    def n_lon(self):
        return n_bins(self.roi.lon_max - self.roi.lon_min, self.res_lon)

    @property
    def n_sog(self):
        return n_bins(self.sog_max, self.res_sog)

    @property
    def n_cog(self):
        return n_bins(360.0, self.res_cog)

    @property
    def sizes(self):
        return (self.n_lat, self.n_lon, self.n_sog, self.n_cog)

    @property
    def offsets(self):
        s = self.sizes
        return (0, s[0], s[0] + s[1], s[0] + s[1] + s[2])

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def to_dict(self):
        return {"roi": self.roi.to_dict(), "res_lat": self.res_lat, "res_lon": self.res_lon,
                "res_sog": self.res_sog, "res_cog": self.res_cog, "sog_max": self.sog_max}

    @classmethod
    def from_dict(cls, d):
        return cls(Roi.from_dict(d["roi"]), float(d["res_lat"]), float(d["res_lon"]),
                   float(d["res_sog"]), float(d["res_cog"]), float(d["sog_max"]))


class FourHotVector(NamedTuple):
    i_lat: int
    i_lon: int
    i_sog: int
    i_cog: int

    def active(self, spec: FourHotSpec):
        """Global indices of the four active entries."""
        return tuple(o + i for o, i in zip(spec.offsets, self))

    def dense(self, spec: FourHotSpec) -> np.ndarray:
        v = np.zeros(spec.dim)
        v[list(self.active(spec))] = 1.0
        return v


def _bin_indices(states, spec: FourHotSpec):
    """Vectorized binning of an (N, 4) state array to (N, 4) int indices."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    roi = spec.roi
    lows = np.array([roi.lat_min, roi.lon_min, 0.0, 0.0])
    res = np.array([spec.res_lat, spec.res_lon, spec.res_sog, spec.res_cog])
    idx = np.floor((s - lows) / res + NUDGE).astype(np.int64)
    top = np.array(spec.sizes) - 1
    return np.clip(idx, 0, top)


def _outside(states, spec):
    s = np.atleast_2d(states)
    roi = spec.roi
    return ((s[:, 0] < roi.lat_min) | (s[:, 0] > roi.lat_max)
            | (s[:, 1] < roi.lon_min) | (s[:, 1] > roi.lon_max)
            | ~np.isfinite(s).all(axis=1))


def encode_state(state, spec: FourHotSpec) -> FourHotVector:
    if _outside(np.asarray(state, dtype=np.float64), spec)[0]:
        raise OutOfRoi(f"state {tuple(state)} outside {spec.roi}")
    return FourHotVector(*(int(i) for i in _bin_indices(state, spec)[0]))


def decode_indices(indices, spec: FourHotSpec) -> np.ndarray:
    """Bin centres for an (N, 4) index array."""
    idx = np.atleast_2d(indices)
    roi = spec.roi
    lows = np.array([roi.lat_min, roi.lon_min, 0.0, 0.0])
    res = np.array([spec.res_lat, spec.res_lon, spec.res_sog, spec.res_cog])
    return lows + (idx + 0.5) * res


def decode_vector(v, spec: FourHotSpec):
    """Decode a :class:`FourHotVector` or a dense binary vector to bin centres."""
    if isinstance(v, FourHotVector):
        idx = v
        for i, n in zip(idx, spec.sizes):
            if not 0 <= i < n:
                raise InvalidFourHot(f"index {i} outside block of size {n}")
    else:
        v = np.asarray(v)
        if v.shape != (spec.dim,):
            raise InvalidFourHot(f"expected length {spec.dim}, got {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise InvalidFourHot("entries must be 0 or 1")
        idx = []
        for off, n in zip(spec.offsets, spec.sizes):
            hot = np.flatnonzero(v[off:off + n])
            if len(hot) != 1:
                raise InvalidFourHot(f"block at offset {off} has {len(hot)} active entries")
            idx.append(int(hot[0]))
    return tuple(float(x) for x in decode_indices(idx, spec)[0])


@dataclass
class EncodedTrack:
    """Encoded sequence x_1..x_T stored as an (T, 4) array of bin indices."""

    spec: FourHotSpec
    indices: np.ndarray
    mmsi: int = 0
    t0: float = 0.0
    dt: float = 600.0
    track_id: str = ""

    def __len__(self):
        return len(self.indices)

    @property
    def T(self):
        return len(self.indices)

    def active(self) -> np.ndarray:
        """(T, 4) global indices of the active entries."""
        return self.indices + np.array(self.spec.offsets)

    def dense(self) -> np.ndarray:
        x = np.zeros((self.T, self.spec.dim))
        np.put_along_axis(x, self.active(), 1.0, axis=1)
        return x

    def vectors(self):
        return [FourHotVector(*map(int, row)) for row in self.indices]

    def positions(self) -> np.ndarray:
        """Decoded (lat, lon) bin centres, shape (T, 2)."""
        return decode_indices(self.indices, self.spec)[:, :2]


def encode_track(track: ResampledTrack, spec: FourHotSpec, track_id: str = "") -> EncodedTrack:
    states = np.asarray(track.states, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("cannot encode an empty track")
    bad = np.flatnonzero(_outside(states, spec))
    if len(bad):
        raise OutOfRoi(f"state {int(bad[0])} of MMSI {track.mmsi} outside ROI", index=int(bad[0]))
    return EncodedTrack(spec, _bin_indices(states, spec), track.mmsi, track.t0, track.dt,
                        track_id or f"{track.mmsi}-{int(track.t0)}")
