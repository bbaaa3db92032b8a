"""AIS CSV parsing, cleaning, track assembly, resampling and voyage splitting."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby

import numpy as np

from .errors import SchemaError, TrackTooShort

GAP_MAX = 7200.0
DT = 600.0
DUR_MIN = 4 * 3600.0
DUR_MAX = 24 * 3600.0
SOG_MAX = 30.0

DEFAULT_SCHEMA = {
    "mmsi": "mmsi",
    "t": "timestamp",
    "lat": "lat",
    "lon": "lon",
    "sog": "sog",
    "cog": "cog",
}


@dataclass(frozen=True)
class AisMessage:
    mmsi: int
    t: float
    lat: float
    lon: float
    sog: float
    cog: float


@dataclass(frozen=True)
class Roi:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"degenerate ROI {self}")

    def contains(self, lat, lon) -> bool:
        return (self.lat_min <= lat <= self.lat_max) and (self.lon_min <= lon <= self.lon_max)

    def to_dict(self):
        return {"lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lat_min"]), float(d["lat_max"]), float(d["lon_min"]), float(d["lon_max"]))


USHANT = Roi(47.5, 49.5, -7.0, -4.0)


@dataclass(frozen=True)
class ParseError:
    row: int
    reason: str


@dataclass
class RawTrack:
    mmsi: int
    messages: list

    def __len__(self):
        return len(self.messages)


@dataclass
class ResampledTrack:
    """Fixed-rate voyage; ``states`` is an (N, 4) array of lat, lon, sog, cog."""

    mmsi: int
    t0: float
    dt: float
    states: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def duration(self) -> float:
        """Sample count times ``dt`` (each state stands for one period)."""
        return len(self.states) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))


# ------------------------------------------------------------------- parsing

def _check_row(fields):
    mmsi, t, lat, lon, sog, cog = fields
    if not math.isfinite(t):
        return "non-finite timestamp"
    if not -90.0 <= lat <= 90.0:
        return "out-of-range latitude"
    if not -180.0 <= lon <= 180.0:
        return "out-of-range longitude"
    if not (sog >= 0.0 and math.isfinite(sog)):
        return "out-of-range speed"
    if not 0.0 <= cog <= 360.0:
        return "out-of-range course"
    return None


def parse_ais_csv(stream, schema=None):
    """Parse AIS position reports from a CSV stream with a header row.

    ``stream`` may be binary (decoded as UTF-8) or text.  ``schema`` maps the
    field names of :data:`DEFAULT_SCHEMA` to column names.  Returns
    ``(messages, errors)``; errors carry the 1-based data row number.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    if isinstance(stream, io.BufferedIOBase) or hasattr(stream, "mode") and "b" in stream.mode:
        stream = io.TextIOWrapper(stream, encoding="utf-8-sig", newline="")
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise SchemaError("missing header row")
    header = [h.strip() for h in header]
    missing = [col for col in schema.values() if col not in header]
    if missing:
        raise SchemaError(f"missing mandatory column(s): {', '.join(missing)}")
    cols = [header.index(schema[k]) for k in ("mmsi", "t", "lat", "lon", "sog", "cog")]

    messages, errors = [], []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            raw = [row[c] for c in cols]
        except IndexError:
            errors.append(ParseError(row_no, "missing field"))
            continue
        try:
            mmsi = int(raw[0])
            values = [float(x) for x in raw[1:]]
        except ValueError:
            errors.append(ParseError(row_no, "unparseable number"))
            continue
        fields = (mmsi, *values)
        reason = _check_row(fields)
        if reason:
            errors.append(ParseError(row_no, reason))
            continue
        messages.append(AisMessage(*fields))
    return messages, errors


def write_messages_csv(messages, path, schema=None):
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    keys = ("mmsi", "t", "lat", "lon", "sog", "cog")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema[k] for k in keys])
        for m in messages:
            t = int(m.t) if float(m.t).is_integer() else repr(m.t)
            w.writerow([m.mmsi, t, repr(m.lat), repr(m.lon), repr(m.sog), repr(m.cog)])


def write_parse_errors(errors, path):
    """Write the ``row,reason`` sidecar file."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "reason"])
        for e in errors:
            w.writerow([e.row, e.reason])


# ------------------------------------------------------------------ cleaning

def clean_messages(msgs, roi: Roi, sog_max: float = SOG_MAX):
    out = []
    for m in msgs:
        if not roi.contains(m.lat, m.lon):
            continue
        sog = min(m.sog, sog_max)
        cog = m.cog % 360.0
        if sog != m.sog or cog != m.cog:
            m = AisMessage(m.mmsi, m.t, m.lat, m.lon, sog, cog)
        out.append(m)
    return out


def assemble_tracks(msgs, gap_max: float = GAP_MAX):
    """Group by MMSI, sort by time, drop duplicate timestamps, split on gaps > gap_max."""
    tracks = []
    ordered = sorted(msgs, key=lambda m: (m.mmsi, m.t))  # stable: first duplicate wins
    for mmsi, group in groupby(ordered, key=lambda m: m.mmsi):
        current = []
        for m in group:
            if current and m.t == current[-1].t:
                continue
            if current and m.t - current[-1].t > gap_max:
                tracks.append(RawTrack(mmsi, current))
                current = []
            current.append(m)
        if current:
            tracks.append(RawTrack(mmsi, current))
    return tracks


def resample_track(track: RawTrack, dt: float = DT) -> ResampledTrack:
    """Linear resampling on the grid t0, t0+dt, ... up to the last timestamp.

    Course is interpolated along the shorter arc.
    """
    if len(track.messages) < 2:
        raise TrackTooShort(f"MMSI {track.mmsi}: {len(track.messages)} message(s), need 2")
    arr = np.array([(m.t, m.lat, m.lon, m.sog, m.cog) for m in track.messages])
    t = arr[:, 0]
    t0 = t[0]
    n = int(math.floor((t[-1] - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(n)
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 2)
    w = (grid - t[idx]) / (t[idx + 1] - t[idx])
    w = np.clip(w, 0.0, 1.0)[:, None]
    lo, hi = arr[idx, 1:4], arr[idx + 1, 1:4]
    lin = (1.0 - w) * lo + w * hi
    c0, c1 = arr[idx, 4], arr[idx + 1, 4]
    arc = (c1 - c0 + 180.0) % 360.0 - 180.0
    cog = (c0 + w[:, 0] * arc) % 360.0
    cog = np.where(cog >= 360.0, 0.0, cog)
    states = np.column_stack([lin, cog])
    return ResampledTrack(track.mmsi, float(t0), float(dt), states)


def _chunk_size(dur_max, dt):
    return max(int(math.floor(dur_max / dt + 1e-9)), 1)


def split_voyage(track: ResampledTrack, dur_min: float = DUR_MIN, dur_max: float = DUR_MAX):
    """Greedy left-to-right cut into chunks of at most ``dur_max``.

    Chunk duration is ``N * dt``; chunks shorter than ``dur_min`` are dropped.
    """
    size = _chunk_size(dur_max, track.dt)
    out = []
    for start in range(0, len(track), size):
        states = track.states[start:start + size]
        if len(states) * track.dt + 1e-9 < dur_min:
            continue
        out.append(ResampledTrack(track.mmsi, track.t0 + start * track.dt, track.dt, states.copy()))
    return out


@dataclass
class PrepSummary:
    messages_in: int = 0
    messages_kept: int = 0
    raw_tracks: int = 0
    voyages: int = 0
    drops: Counter = field(default_factory=Counter)

    def to_dict(self):
        return {"messages_in": self.messages_in, "messages_kept": self.messages_kept,
                "raw_tracks": self.raw_tracks, "voyages": self.voyages,
                "drops": dict(sorted(self.drops.items()))}


def prepare_voyages(msgs, roi: Roi, sog_max=SOG_MAX, gap_max=GAP_MAX, dt=DT,
                    dur_min=DUR_MIN, dur_max=DUR_MAX):
    """clean -> assemble -> resample -> split; returns (voyages, summary)."""
    summary = PrepSummary(messages_in=len(msgs))
    cleaned = clean_messages(msgs, roi, sog_max)
    summary.messages_kept = len(cleaned)
    summary.drops["outside_roi"] = len(msgs) - len(cleaned)
    raw = assemble_tracks(cleaned, gap_max)
    summary.raw_tracks = len(raw)
    voyages = []
    for track in raw:
        if len(track) < 2:
            summary.drops["single_message_track"] += 1
            continue
        res = resample_track(track, dt)
        chunks = split_voyage(res, dur_min, dur_max)
        n_possible = math.ceil(len(res) / _chunk_size(dur_max, dt))
        summary.drops["short_chunk"] += n_possible - len(chunks)
        voyages.extend(chunks)
    summary.voyages = len(voyages)
    return voyages, summary
