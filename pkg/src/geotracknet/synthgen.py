"""Seeded synthetic AIS traffic with labelled injected anomalies.

Geometry is planar in degrees (no great-circle correction); one knot is
1/60 degree per hour along the path.  A normal track follows a route
polyline with a slowly varying AR(1) cross-track offset, a per-track speed
drawn around the route's nominal speed, and small SOG/COG measurement noise,
reported at irregular 60-300 s intervals.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ais_ingest import AisMessage, Roi, write_messages_csv
from .errors import ConfigError

DEG_PER_KNOT_SECOND = 1.0 / 60.0 / 3600.0
KINDS = ("route_deviation", "u_turn", "speed_drop", "off_route_path")
OFFSET_TAU = 7200.0
SOG_NOISE = 0.3
COG_NOISE = 2.0
DAY = 86400.0


@dataclass
class RouteTemplate:
    waypoints: list
    speed: float = 12.0
    speed_std: float = 0.5
    cross_std: float = 0.005
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ConfigError("a route needs at least two waypoints")
        if not self.speed > 0:
            raise ConfigError("route speed must be positive")


@dataclass
class AnomalySpec:
    """``magnitude`` is degrees for route_deviation / u_turn, a factor in (0, 1)
    for speed_drop, and unused for off_route_path."""

    kind: str
    magnitude: float = 0.1
    onset: float = 0.4
    duration: float = 7200.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        if not self.magnitude > 0:
            raise ConfigError("anomaly magnitude must be positive")
        if not 0.0 < self.onset < 1.0:
            raise ConfigError("onset must lie in (0, 1)")
        if self.kind == "speed_drop" and not self.magnitude < 1.0:
            raise ConfigError("speed_drop factor must lie in (0, 1)")


@dataclass
class SyntheticTrack:
    """One vessel voyage before rendering to messages.

    Arrays are indexed by message; ``times`` are seconds after ``t_start``.
    """

    mmsi: int
    t_start: float
    times: np.ndarray
    path: np.ndarray            # (P, 2) polyline, lat/lon
    speed: float                # nominal, knots
    speed_mult: np.ndarray
    offset: np.ndarray          # deterministic cross-track offset, degrees
    jitter: np.ndarray          # AR(1) cross-track noise, degrees
    sog_noise: np.ndarray
    cog_noise: np.ndarray
    roi: Roi
    template: int = -1
    anomaly: dict = None

    @property
    def duration(self):
        return float(self.times[-1])

    def arc(self):
        """Along-path distance (degrees) at each message time, clipped to the path."""
        v = self.speed * self.speed_mult * DEG_PER_KNOT_SECOND
        steps = np.diff(self.times) * 0.5 * (v[1:] + v[:-1])
        a = np.concatenate([[0.0], np.cumsum(steps)])
        return np.clip(a, 0.0, _path_length(self.path))

    def centerline(self):
        """Positions without the random jitter, shape (N, 2)."""
        pts, normals = _along(self.path, self.arc())
        return pts + self.offset[:, None] * normals

    def positions(self):
        pts, normals = _along(self.path, self.arc())
        return pts + (self.offset + self.jitter)[:, None] * normals

    def messages(self):
        pos = self.positions()
        roi = self.roi
        lat = np.clip(pos[:, 0], roi.lat_min, roi.lat_max)
        lon = np.clip(pos[:, 1], roi.lon_min, roi.lon_max)
        smooth = self.centerline()
        dlat = np.gradient(smooth[:, 0], self.times)
        dlon = np.gradient(smooth[:, 1], self.times)
        heading = np.degrees(np.arctan2(dlon, dlat))
        cog = (heading + self.cog_noise) % 360.0
        sog = np.clip(self.speed * np.abs(self.speed_mult) + self.sog_noise, 0.0, None)
        t = np.round(self.t_start + self.times)
        return [AisMessage(self.mmsi, float(t[i]), float(lat[i]), float(lon[i]), float(sog[i]),
                           float(cog[i])) for i in range(len(t))]

    def label(self):
        info = {"track_id": str(self.mmsi), "anomalous": self.anomaly is not None,
                "kind": None, "window": None}
        if self.anomaly is not None:
            info["kind"] = self.anomaly["kind"]
            info["window"] = [self.t_start + self.anomaly["window"][0],
                              self.t_start + self.anomaly["window"][1]]
        return info


@dataclass
class LabeledDataset:
    roi: Roi
    train: list
    validation: list
    test: list
    labels: list
    tracks: dict = field(default_factory=dict)

    def write(self, directory):
        """Write train/validation/test CSVs and labels.jsonl; returns the paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name in ("train", "validation", "test"):
            paths[name] = d / f"{name}.csv"
            write_messages_csv(getattr(self, name), paths[name])
        paths["labels"] = d / "labels.jsonl"
        with open(paths["labels"], "w", encoding="utf-8") as fh:
            for lab in self.labels:
                fh.write(json.dumps(lab, sort_keys=True) + "\n")
        return paths


# ----------------------------------------------------------------- geometry

def _path_length(path):
    return float(np.sum(np.hypot(*np.diff(path, axis=0).T)))


def _along(path, arc):
    """Points and left unit normals at arc-length positions along a polyline."""
    seg = np.diff(path, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    i = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(seg) - 1)
    frac = ((arc - cum[i]) / lens[i])[:, None]
    pts = path[i] + frac * seg[i]
    tangent = seg[i] / lens[i][:, None]
    normals = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    return pts, normals


def distance_to_polyline(points, path):
    """Planar distance (degrees) from each point to the polyline."""
    points = np.atleast_2d(points)
    best = np.full(len(points), np.inf)
    for a, b in zip(path[:-1], path[1:]):
        ab = b - a
        t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        best = np.minimum(best, np.hypot(*(points - proj).T))
    return best


def _plateau(s, ramp=0.25):
    """Raised-cosine window on s in [0, 1]: 0 -> 1 over ``ramp``, flat, 1 -> 0."""
    s = np.clip(s, 0.0, 1.0)
    up = 0.5 - 0.5 * np.cos(np.pi * np.clip(s / ramp, 0.0, 1.0))
    down = 0.5 - 0.5 * np.cos(np.pi * np.clip((1.0 - s) / ramp, 0.0, 1.0))
    return np.minimum(up, down)


# --------------------------------------------------------------- generation

def _check_template(tpl: RouteTemplate, roi: Roi):
    for lat, lon in tpl.waypoints:
        if not roi.contains(lat, lon):
            raise ConfigError(f"route {tpl.name or tpl.waypoints} leaves the ROI at ({lat}, {lon})")


def _normal_track(rng, tpl: RouteTemplate, index: int, mmsi: int, t_start: float, roi: Roi):
    path = np.asarray(tpl.waypoints, dtype=np.float64)
    speed = max(tpl.speed + tpl.speed_std * rng.standard_normal(), 0.25 * tpl.speed)
    total = _path_length(path) / (speed * DEG_PER_KNOT_SECOND)
    gaps = rng.uniform(60.0, 300.0, size=int(total / 60.0) + 2)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    times = times[times <= total]
    n = len(times)
    jitter = np.empty(n)
    jitter[0] = tpl.cross_std * rng.standard_normal()
    for i in range(1, n):
        rho = math.exp(-(times[i] - times[i - 1]) / OFFSET_TAU)
        jitter[i] = rho * jitter[i - 1] + math.sqrt(1.0 - rho * rho) * tpl.cross_std * rng.standard_normal()
    return SyntheticTrack(
        mmsi=mmsi, t_start=t_start, times=times, path=path, speed=speed,
        speed_mult=np.ones(n), offset=np.zeros(n), jitter=jitter,
        sog_noise=SOG_NOISE * rng.standard_normal(n), cog_noise=COG_NOISE * rng.standard_normal(n),
        roi=roi, template=index)


def inject_anomaly(track: SyntheticTrack, spec: AnomalySpec, seed=None) -> SyntheticTrack:
    """Return a copy of ``track`` carrying the anomaly described by ``spec``."""
    rng = np.random.default_rng(seed)
    t = track.times
    start = spec.onset * track.duration
    end = start + spec.duration
    if spec.kind != "off_route_path" and end > track.duration:
        raise ConfigError(f"track of {track.duration:.0f} s too short for a window ending at {end:.0f} s")
    s = (t - start) / spec.duration
    inside = (t >= start) & (t <= end)
    out = replace(track, speed_mult=track.speed_mult.copy(), offset=track.offset.copy())

    if spec.kind == "route_deviation":
        side = 1.0 if rng.random() < 0.5 else -1.0
        out.offset += side * spec.magnitude * _plateau(s)
    elif spec.kind == "speed_drop":
        out.speed_mult[inside] *= spec.magnitude
    elif spec.kind == "u_turn":
        # forward -> reverse -> forward, with a lateral loop so legs do not overlap
        out.speed_mult[inside] *= np.cos(2.0 * np.pi * s[inside])
        side = 1.0 if rng.random() < 0.5 else -1.0
        out.offset += side * spec.magnitude * np.where(inside, np.sin(np.pi * np.clip(s, 0, 1)), 0.0)
    elif spec.kind == "off_route_path":
        travel = track.speed * DEG_PER_KNOT_SECOND * track.duration
        out.path = _random_path(rng, track.roi, min(travel, 5.0 * 3600.0 * track.speed * DEG_PER_KNOT_SECOND),
                                travel)
        keep = track.times * track.speed * DEG_PER_KNOT_SECOND <= _path_length(out.path)
        for name in ("times", "speed_mult", "offset", "jitter", "sog_noise", "cog_noise"):
            setattr(out, name, getattr(out, name)[keep])
        start, end = 0.0, out.duration
    out.anomaly = {"kind": spec.kind, "window": [float(start), float(end)],
                   "magnitude": spec.magnitude}
    return out


def _random_path(rng, roi: Roi, min_length: float, max_length: float, margin: float = 0.05,
                 tries: int = 1000):
    """Random quadratic Bezier inside the ROI with length in [min_length, max_length]."""
    lo = np.array([roi.lat_min + margin, roi.lon_min + margin])
    hi = np.array([roi.lat_max - margin, roi.lon_max - margin])
    for _ in range(tries):
        a = rng.uniform(lo, hi)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        chord = rng.uniform(0.7, 1.0) * max_length
        b = a + chord * np.array([math.cos(ang), math.sin(ang)])
        bend = rng.uniform(-0.3, 0.3) * chord
        mid = 0.5 * (a + b) + bend * np.array([-math.sin(ang), math.cos(ang)])
        u = np.linspace(0.0, 1.0, 33)[:, None]
        path = (1 - u) ** 2 * a + 2 * (1 - u) * u * mid + u ** 2 * b
        if np.all(path >= lo) and np.all(path <= hi) and _path_length(path) >= min_length:
            return path
    raise ConfigError("could not fit a random path of the requested length inside the ROI")


def generate_scenario(templates, counts, roi: Roi, seed: int, anomalies=(), anomaly_templates=None):
    """Build train/validation/test partitions of normal traffic plus labelled anomalies.

    ``counts`` gives the number of normal tracks per partition.  Each entry of
    ``anomalies`` adds one anomalous test track built from a fresh normal
    track; ``anomaly_templates`` optionally restricts which routes those are
    drawn from.
    """
    templates = list(templates)
    if not templates:
        raise ConfigError("no route templates")
    if len(counts) != 3 or any(c < 0 for c in counts) or counts[0] < 1:
        raise ConfigError(f"bad partition counts {counts}")
    for tpl in templates:
        _check_template(tpl, roi)
    rng = np.random.default_rng(seed)
    w = np.array([t.weight for t in templates], dtype=np.float64)
    w = w / w.sum()
    periods = {"train": (0.0, 20 * DAY), "validation": (21 * DAY, 25 * DAY), "test": (26 * DAY, 30 * DAY)}
    base = {"train": 200_000_000, "validation": 300_000_000, "test": 400_000_000}
    t_epoch = 1_483_228_800.0

    tracks = {}
    for (name, n) in zip(("train", "validation", "test"), counts):
        lo, hi = periods[name]
        out = []
        for i in range(n):
            k = int(rng.choice(len(templates), p=w))
            out.append(_normal_track(rng, templates[k], k, base[name] + i, t_epoch + rng.uniform(lo, hi), roi))
        tracks[name] = out

    pool = list(range(len(templates))) if anomaly_templates is None else list(anomaly_templates)
    pw = w[pool] / w[pool].sum()
    lo, hi = periods["test"]
    for j, spec in enumerate(anomalies):
        k = pool[int(rng.choice(len(pool), p=pw))]
        normal = _normal_track(rng, templates[k], k, base["test"] + counts[2] + j,
                               t_epoch + rng.uniform(lo, hi), roi)
        tracks["test"].append(inject_anomaly(normal, spec, int(rng.integers(2**63 - 1))))
    order = rng.permutation(len(tracks["test"]))
    tracks["test"] = [tracks["test"][i] for i in order]

    msgs = {name: [m for tr in trs for m in tr.messages()] for name, trs in tracks.items()}
    labels = [tr.label() for tr in tracks["test"]]
    return LabeledDataset(roi, msgs["train"], msgs["validation"], msgs["test"], labels, tracks)


# ------------------------------------------------------------------ presets

TWO_ROUTE_ROI = Roi(47.5, 49.0, -6.5, -4.5)


def two_route_templates():
    return [
        RouteTemplate([(47.6, -6.4), (48.9, -4.6)], speed=12.0, weight=1.0, name="sw-ne"),
        RouteTemplate([(48.9, -6.4), (47.6, -4.6)], speed=12.0, weight=1.0, name="nw-se"),
    ]


def two_route_anomalies():
    return [
        AnomalySpec("off_route_path"),
        AnomalySpec("route_deviation", magnitude=0.12, onset=0.3, duration=3 * 3600.0),
        AnomalySpec("route_deviation", magnitude=0.12, onset=0.5, duration=3 * 3600.0),
        AnomalySpec("speed_drop", magnitude=0.2, onset=0.3, duration=2 * 3600.0),
        AnomalySpec("u_turn", magnitude=0.04, onset=0.4, duration=2 * 3600.0),
    ]


def two_route_scenario(seed: int = 7, counts=(200, 50, 20)):
    return generate_scenario(two_route_templates(), counts, TWO_ROUTE_ROI, seed, two_route_anomalies())


HETERO_ROI = Roi(47.5, 48.5, -6.0, -4.5)


def heterogeneous_templates():
    """A busy, tightly followed lane and a thinly used, loosely followed one."""
    return [
        RouteTemplate([(47.7, -5.95), (47.75, -4.55)], speed=12.0, speed_std=0.3, cross_std=0.003,
                      weight=3.0, name="dense"),
        RouteTemplate([(48.3, -5.95), (48.25, -4.55)], speed=10.0, speed_std=2.5, cross_std=0.025,
                      weight=1.0, name="sparse"),
    ]


def heterogeneous_scenario(seed: int = 11, counts=(160, 80, 40), n_anomalies: int = 4):
    anomalies = [AnomalySpec("route_deviation", magnitude=0.1, onset=0.3 + 0.1 * (i % 3),
                             duration=2 * 3600.0) for i in range(n_anomalies)]
    return generate_scenario(heterogeneous_templates(), counts, HETERO_ROI, seed, anomalies,
                             anomaly_templates=[0])
