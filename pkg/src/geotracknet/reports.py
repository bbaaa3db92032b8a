"""Verdict JSON Lines, GeoJSON export and evaluation against labels.

The ``*_SCHEMA`` dictionaries are JSON Schema (draft 7) documents describing
each output, so that consumers can validate files independently.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict

import numpy as np

log = logging.getLogger(__name__)

VERDICT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["track_id", "mmsi", "t0", "T", "abnormal", "min_nfa", "segment",
                 "uncovered", "scores", "flags"],
    "properties": {
        "track_id": {"type": "string"},
        "mmsi": {"type": "integer"},
        "t0": {"type": "number"},
        "T": {"type": "integer", "minimum": 1},
        "abnormal": {"type": "boolean"},
        "min_nfa": {"type": "number", "minimum": 0},
        "segment": {
            "type": "object",
            "required": ["start", "n", "k"],
            "properties": {
                "start": {"type": "integer", "minimum": 0},
                "n": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 0},
            },
        },
        "uncovered": {"type": "integer", "minimum": 0},
        "scores": {"type": "array", "items": {"type": "number"}},
        "flags": {"type": "array", "items": {"type": "boolean"}},
        "config": {"type": "object"},
    },
}

_POSITION = {"type": "array", "minItems": 2, "maxItems": 3, "items": {"type": "number"}}

GEOJSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["type", "features"],
    "properties": {
        "type": {"const": "FeatureCollection"},
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "geometry", "properties"],
                "properties": {
                    "type": {"const": "Feature"},
                    "geometry": {
                        "type": "object",
                        "required": ["type", "coordinates"],
                        "properties": {
                            "type": {"const": "LineString"},
                            "coordinates": {"type": "array", "minItems": 2, "items": _POSITION},
                        },
                    },
                    "properties": {"type": "object"},
                },
            },
        },
    },
}

LABEL_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["track_id", "anomalous", "kind", "window"],
    "properties": {
        "track_id": {"type": "string"},
        "anomalous": {"type": "boolean"},
        "kind": {"type": ["string", "null"]},
        "window": {"oneOf": [{"type": "null"},
                             {"type": "array", "minItems": 2, "maxItems": 2,
                              "items": {"type": "number"}}]},
    },
}


def write_verdicts(verdicts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_json(), sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _line(coords):
    pts = [[float(lon), float(lat)] for lat, lon in coords]
    if len(pts) == 1:
        pts = pts * 2  # LineString needs two positions
    return {"type": "LineString", "coordinates": pts}


def verdicts_geojson(verdicts, coordinates, provenance=None):
    """FeatureCollection with one LineString per track plus its abnormal segment.

    ``coordinates[i]`` is a (T, 2) lat/lon array for ``verdicts[i]``.
    """
    features = []
    for v, coords in zip(verdicts, coordinates):
        coords = np.asarray(coords)
        features.append({"type": "Feature", "geometry": _line(coords),
                         "properties": {"track_id": v.track_id, "mmsi": int(v.mmsi), "role": "track",
                                        "abnormal": bool(v.abnormal), "min_nfa": v.min_nfa}})
        if v.abnormal:
            seg = v.segment
            features.append({"type": "Feature",
                             "geometry": _line(coords[seg.start:seg.start + seg.n]),
                             "properties": {"track_id": v.track_id, "role": "abnormal_segment",
                                            "abnormal": True, "min_nfa": v.min_nfa,
                                            "start": seg.start, "n": seg.n, "k": seg.k}})
    out = {"type": "FeatureCollection", "features": features}
    if provenance is not None:
        out["provenance"] = provenance  # foreign member, ignored by GIS readers
    return out


def write_geojson(verdicts, coordinates, path, provenance=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(verdicts_geojson(verdicts, coordinates, provenance), fh, sort_keys=True)


def evaluate(verdicts, labels):
    """Detection rate, false-positive rate and per-kind breakdown.

    Verdict rows (dicts as written to JSONL) are grouped by MMSI; a vessel is
    abnormal when any of its tracks is.  Labels are matched on
    ``track_id == str(mmsi)``; only the intersection is scored.
    """
    flagged = defaultdict(bool)
    for v in verdicts:
        flagged[str(v["mmsi"])] |= bool(v["abnormal"])
    by_id = {lab["track_id"]: lab for lab in labels}
    common = sorted(set(flagged) & set(by_id))
    missing = (set(flagged) ^ set(by_id))
    if missing:
        log.warning("%d track id(s) present on one side only; scoring the intersection", len(missing))
    pos = [i for i in common if by_id[i]["anomalous"]]
    neg = [i for i in common if not by_id[i]["anomalous"]]
    kinds = defaultdict(lambda: [0, 0])
    for i in pos:
        kinds[by_id[i]["kind"]][0] += flagged[i]
        kinds[by_id[i]["kind"]][1] += 1
    return {
        "n_tracks": len(common),
        "n_anomalous": len(pos),
        "n_normal": len(neg),
        "detected": int(sum(flagged[i] for i in pos)),
        "false_positives": int(sum(flagged[i] for i in neg)),
        "detection_rate": (sum(flagged[i] for i in pos) / len(pos)) if pos else None,
        "false_positive_rate": (sum(flagged[i] for i in neg) / len(neg)) if neg else None,
        "per_kind": {k: {"detected": d, "total": n, "rate": d / n} for k, (d, n) in sorted(kinds.items())},
        "unmatched": len(missing),
    }
