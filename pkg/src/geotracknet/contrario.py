"""Geospatial a contrario decision rule and the global-threshold baseline.

A message is flagged when its score falls in the lower ``p`` tail of its
cell's reference distribution.  Under the null hypothesis flags are
independent Bernoulli(p), so a segment of ``n`` messages holding ``k`` flags
has tail probability ``B(n, k, p)``.  Multiplying by the number of segments
``T(T+1)/2`` gives the number of false alarms (NFA); a track is abnormal when
some segment has NFA below ``epsilon``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .cellmap import CellMap, cell_cdf
from .errors import ConfigError, DomainError, ShapeError


@dataclass
class DetectorConfig:
    p: float = 0.1
    epsilon: Optional[float] = None
    samples: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class SegmentFinding:
    start: int
    n: int
    k: int
    log_nfa: float

    @property
    def nfa(self) -> float:
        return math.exp(self.log_nfa)


@dataclass
class TrackVerdict:
    track_id: str
    scores: np.ndarray
    flags: np.ndarray
    uncovered: int
    segment: SegmentFinding
    abnormal: bool
    config: DetectorConfig
    mmsi: int = 0
    t0: float = 0.0

    @property
    def T(self):
        return len(self.flags)

    @property
    def min_nfa(self) -> float:
        return self.segment.nfa

    def to_json(self):
        return {
            "track_id": self.track_id, "mmsi": int(self.mmsi), "t0": float(self.t0), "T": self.T,
            "abnormal": bool(self.abnormal), "min_nfa": self.min_nfa,
            "segment": {"start": self.segment.start, "n": self.segment.n, "k": self.segment.k},
            "uncovered": int(self.uncovered),
            "scores": [float(s) for s in self.scores],
            "flags": [bool(f) for f in self.flags],
            "config": {"p": self.config.p, "epsilon": self.config.epsilon,
                       "samples": self.config.samples, "seed": self.config.seed},
        }


def _check_binom(n, k, p):
    if not (isinstance(n, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise DomainError("n and k must be integers")
    if not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n, got n={n}, k={k}")
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")


def log_binomial_pmf(n: int, p: float) -> np.ndarray:
    i = np.arange(n + 1)
    return (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
            + i * math.log(p) + (n - i) * math.log1p(-p))


def _log_tails(n: int, p: float) -> np.ndarray:
    """``log P(X >= k)`` for k = 0..n.

    Right-to-left log-add accumulation is monotone in k by construction;
    values are capped at 0 because rounding can push them above.
    """
    out = np.minimum(np.logaddexp.accumulate(log_binomial_pmf(n, p)[::-1])[::-1], 0.0)
    out[0] = 0.0
    return out


def binomial_tail(n: int, k: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(n, p), summed in log space."""
    _check_binom(n, k, p)
    return float(np.exp(_log_tails(int(n), p)[k]))


@lru_cache(maxsize=64)
def log_tail_table(T: int, p: float) -> np.ndarray:
    """``table[n, k] = log B(n, k, p)`` for ``0 <= k <= n <= T``; +inf elsewhere."""
    table = np.full((T + 1, T + 2), np.inf)
    for n in range(T + 1):
        table[n, :n + 1] = _log_tails(n, p)
    table.setflags(write=False)
    return table


def n_segments(T: int) -> int:
    if T < 1:
        raise DomainError("T must be >= 1")
    return T * (T + 1) // 2


def nfa(n: int, k: int, p: float, T: int) -> float:
    return n_segments(T) * binomial_tail(n, k, p)


TIE_RTOL = 1e-12


def min_nfa_segment(flags, p: float) -> SegmentFinding:
    """Exhaustive search over all contiguous segments for the smallest NFA.

    Ties go to the earliest start, then the longest segment.  Tails that are
    equal in exact arithmetic can differ in the last bits, so values within
    ``TIE_RTOL`` (relative, in log space) count as ties.
    """
    flags = np.asarray(flags, dtype=bool)
    T = len(flags)
    if T < 1:
        raise DomainError("empty flag sequence")
    cs = np.concatenate([[0], np.cumsum(flags, dtype=np.int64)])
    start = np.arange(T)[:, None]
    length = np.arange(1, T + 1)[None, :]
    end = start + length
    valid = end <= T
    k = cs[np.minimum(end, T)] - cs[start]
    table = log_tail_table(T, float(p))
    logb = np.where(valid, table[np.broadcast_to(length, k.shape), k], np.inf)
    best = logb.min()
    cand = np.argwhere(logb <= best + TIE_RTOL * max(1.0, abs(best)))
    s0 = cand[:, 0].min()
    n_idx = cand[cand[:, 0] == s0, 1].max()
    return SegmentFinding(int(s0), int(n_idx + 1), int(k[s0, n_idx]),
                          math.log(n_segments(T)) + float(logb[s0, n_idx]))


def flag_message(l: float, cell, p: float) -> bool:
    if cell is None or not cell.active:
        return False
    return bool(cell_cdf(cell, l) < p)


def flag_messages(scores, cell_ids, cmap: CellMap, p: float):
    """Per-message flags and the count of messages in inactive cells."""
    scores = np.asarray(scores, dtype=np.float64)
    cell_ids = np.asarray(cell_ids)
    flags = np.zeros(len(scores), dtype=bool)
    uncovered = 0
    for idx in np.unique(cell_ids):
        sel = cell_ids == idx
        cell = cmap[int(idx)]
        if not cell.active:
            uncovered += int(sel.sum())
            continue
        flags[sel] = np.atleast_1d(cell_cdf(cell, scores[sel])) < p
    return flags, uncovered


def detect_track(scores, cell_ids, cmap: CellMap, cfg: DetectorConfig, track_id="", mmsi=0, t0=0.0):
    if cfg.epsilon is None:
        raise ConfigError("detect_track needs an epsilon")
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(cell_ids):
        raise ShapeError(f"{len(scores)} scores but {len(cell_ids)} cells")
    flags, uncovered = flag_messages(scores, cell_ids, cmap, cfg.p)
    seg = min_nfa_segment(flags, cfg.p)
    abnormal = seg.log_nfa < math.log(cfg.epsilon)
    return TrackVerdict(track_id, scores, flags, uncovered, seg, abnormal, cfg, mmsi, t0)


def global_threshold_detect(scores, threshold: float) -> bool:
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) < 1:
        raise DomainError("empty score sequence")
    return bool(scores.sum() < threshold)


def sweep_epsilon(items, grid):
    """Rows ``(epsilon, abnormal count)`` from cached minimum NFAs.

    ``items`` holds TrackVerdict / SegmentFinding objects or plain minimum
    NFA values.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty epsilon grid")
    logs = []
    for it in items:
        if isinstance(it, TrackVerdict):
            logs.append(it.segment.log_nfa)
        elif isinstance(it, SegmentFinding):
            logs.append(it.log_nfa)
        else:
            logs.append(math.log(it) if it > 0 else -math.inf)
    logs = np.asarray(logs, dtype=np.float64)
    return [(float(eps), int(np.sum(logs < math.log(eps)))) for eps in grid]
