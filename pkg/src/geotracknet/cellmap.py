"""Per-cell reference distributions of per-message scores.

The region of interest is cut into square cells.  Every validation message
contributes its score to the cell holding its (decoded) position; each cell
with enough samples gets a Gaussian or Gaussian-kernel KDE fit whose CDF the
detector compares against the per-message threshold ``p``.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .ais_ingest import Roi
from .container import PayloadWriter, pack, read_array, unpack
from .errors import EmptyValidation, InactiveCell, OutOfRoi
from .fourhot import NUDGE, n_bins

MAGIC = b"GTNCELLS"
FORMAT_VERSION = 1
SIGMA_FLOOR = 1e-6
BANDWIDTH_FLOOR = 1e-3
FORMS = ("gaussian", "kde")


@dataclass(frozen=True)
class Grid:
    roi: Roi
    cell_size: float = 0.1

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def n_rows(self):
        return n_bins(self.roi.lat_max - self.roi.lat_min, self.cell_size)

    @property
    def n_cols(self):
        return n_bins(self.roi.lon_max - self.roi.lon_min, self.cell_size)

    @property
    def n_cells(self):
        return self.n_rows * self.n_cols

    def row_col(self, index):
        return divmod(int(index), self.n_cols)

    def center(self, index):
        row, col = self.row_col(index)
        return (self.roi.lat_min + (row + 0.5) * self.cell_size,
                self.roi.lon_min + (col + 0.5) * self.cell_size)

    def to_dict(self):
        return {"roi": self.roi.to_dict(), "cell_size": self.cell_size}

    @classmethod
    def from_dict(cls, d):
        return cls(Roi.from_dict(d["roi"]), float(d["cell_size"]))


def cells_of(lat, lon, grid: Grid) -> np.ndarray:
    """Vectorized :func:`cell_of`."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    roi = grid.roi
    out = (lat < roi.lat_min) | (lat > roi.lat_max) | (lon < roi.lon_min) | (lon > roi.lon_max)
    if np.any(out):
        raise OutOfRoi(f"{int(np.sum(out))} point(s) outside {roi}")
    row = np.minimum(np.floor((lat - roi.lat_min) / grid.cell_size + NUDGE).astype(np.int64), grid.n_rows - 1)
    col = np.minimum(np.floor((lon - roi.lon_min) / grid.cell_size + NUDGE).astype(np.int64), grid.n_cols - 1)
    return row * grid.n_cols + col


def cell_of(lat: float, lon: float, grid: Grid) -> int:
    return int(cells_of([lat], [lon], grid)[0])


@dataclass
class Gaussian:
    mu: float
    sigma: float


@dataclass
class Kde:
    samples: np.ndarray
    bandwidth: float


@dataclass
class CellModel:
    index: int
    m: int = 0
    fit: Optional[object] = None  # Gaussian, Kde, or None when inactive

    @property
    def active(self):
        return self.fit is not None

    @property
    def form(self):
        if isinstance(self.fit, Gaussian):
            return "gaussian"
        if isinstance(self.fit, Kde):
            return "kde"
        return "inactive"

    def mean_std(self):
        if isinstance(self.fit, Gaussian):
            return self.fit.mu, self.fit.sigma
        if isinstance(self.fit, Kde):
            return float(np.mean(self.fit.samples)), float(np.std(self.fit.samples))
        return None, None


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(float(np.std(x)), float(q75 - q25) / 1.34)
    return max(0.9 * spread * len(x) ** -0.2, BANDWIDTH_FLOOR)


def fit_kde(samples) -> Kde:
    x = np.array(samples, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("KDE needs at least 2 samples")
    return Kde(x, silverman_bandwidth(x))


def fit_gaussian(samples) -> Gaussian:
    x = np.asarray(samples, dtype=np.float64)
    return Gaussian(float(np.mean(x)), max(float(np.std(x)), SIGMA_FLOOR))


def cell_cdf(cell: CellModel, l):
    """P(L < l) under the cell's fitted score distribution (vectorized in ``l``)."""
    fit = cell.fit
    if fit is None:
        raise InactiveCell(f"cell {cell.index} has no fitted distribution ({cell.m} samples)")
    l = np.asarray(l, dtype=np.float64)
    if isinstance(fit, Gaussian):
        out = ndtr((l - fit.mu) / fit.sigma)
    else:
        z = (l[..., None] - fit.samples) / fit.bandwidth
        out = ndtr(z).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


@dataclass
class CellMap:
    grid: Grid
    cells: list
    form: str
    m_min: int
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, index) -> CellModel:
        return self.cells[index]

    @property
    def n_active(self):
        return sum(c.active for c in self.cells)


def fit_cells(scores, cell_ids, grid: Grid, m_min: int = 50, form: str = "kde", provenance=None) -> CellMap:
    """Fit every cell from per-track score arrays and matching cell-index arrays."""
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if not len(scores):
        raise EmptyValidation("no validation tracks")
    buckets = [[] for _ in range(grid.n_cells)]
    for sc, ids in zip(scores, cell_ids):
        for value, idx in zip(np.asarray(sc, dtype=np.float64), np.asarray(ids)):
            buckets[idx].append(value)
    cells = []
    for idx, values in enumerate(buckets):
        cell = CellModel(idx, len(values))
        if len(values) >= max(m_min, 1):
            if form == "gaussian":
                cell.fit = fit_gaussian(values)
            elif len(values) >= 2:
                cell.fit = fit_kde(values)
        cells.append(cell)
    return CellMap(grid, cells, form, int(m_min), dict(provenance or {}))


def track_cells(track, grid: Grid) -> np.ndarray:
    pos = track.positions()
    return cells_of(pos[:, 0], pos[:, 1], grid)


def tracks_fingerprint(tracks) -> str:
    h = hashlib.sha256()
    for tr in tracks:
        h.update(str(tr.track_id).encode())
        h.update(np.ascontiguousarray(tr.indices, dtype="<i4").tobytes())
    return h.hexdigest()


def build_cell_map(model, tracks, grid: Grid, m_min: int = 50, form: str = "kde", seed=0,
                   samples: int = 16, p: float = 0.1, threads: int = 1) -> CellMap:
    """Score the validation tracks and fit every cell."""
    from .vrnn import score_tracks

    tracks = list(tracks)
    if not tracks:
        raise EmptyValidation("no validation tracks")
    scores = score_tracks(model, tracks, samples, seed, threads)
    ids = [track_cells(tr, grid) for tr in tracks]
    prov = {"model": model.fingerprint(), "validation": tracks_fingerprint(tracks),
            "p": p, "m_min": int(m_min), "seed": seed, "samples": samples}
    return fit_cells(scores, ids, grid, m_min, form, prov)


# -------------------------------------------------------------- persistence

def cellmap_to_bytes(cmap: CellMap) -> bytes:
    writer = PayloadWriter()
    cells = []
    for c in cmap.cells:
        if c.m == 0:
            continue
        entry = {"index": c.index, "m": c.m, "form": c.form}
        if isinstance(c.fit, Gaussian):
            entry.update(mu=c.fit.mu, sigma=c.fit.sigma)
        elif isinstance(c.fit, Kde):
            entry.update(bandwidth=c.fit.bandwidth, samples=writer.add(c.fit.samples))
        cells.append(entry)
    header = {"format_version": FORMAT_VERSION, "kind": "cellmap", "grid": cmap.grid.to_dict(),
              "form": cmap.form, "m_min": cmap.m_min, "provenance": cmap.provenance, "cells": cells}
    return pack(MAGIC, header, writer.getvalue())


def cellmap_from_bytes(blob: bytes) -> CellMap:
    header, payload = unpack(blob, MAGIC)
    grid = Grid.from_dict(header["grid"])
    cells = [CellModel(i) for i in range(grid.n_cells)]
    for entry in header["cells"]:
        cell = cells[entry["index"]]
        cell.m = entry["m"]
        if entry["form"] == "gaussian":
            cell.fit = Gaussian(entry["mu"], entry["sigma"])
        elif entry["form"] == "kde":
            cell.fit = Kde(read_array(payload, entry["samples"]), entry["bandwidth"])
    return CellMap(grid, cells, header["form"], header["m_min"], header["provenance"])


def save_cellmap(cmap, path):
    with open(path, "wb") as fh:
        fh.write(cellmap_to_bytes(cmap))


def load_cellmap(path) -> CellMap:
    with open(path, "rb") as fh:
        return cellmap_from_bytes(fh.read())


PERFORMANCE_COLUMNS = ["cell_row", "cell_col", "lat_center", "lon_center", "count", "mean", "std"]


def export_performance_map(cmap: CellMap, path):
    """Dense CSV of per-cell count, mean and std; inactive cells leave mean/std empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERFORMANCE_COLUMNS)
        for c in cmap.cells:
            row, col = cmap.grid.row_col(c.index)
            lat, lon = cmap.grid.center(c.index)
            mean, std = c.mean_std()
            w.writerow([row, col, repr(lat), repr(lon), c.m,
                        "" if mean is None else repr(mean), "" if std is None else repr(std)])
