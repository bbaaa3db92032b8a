import json
import logging

import jsonschema
import numpy as np
import pytest

from conftest import TINY_SPEC, random_track
from geotracknet.ais_ingest import Roi
from geotracknet.cellmap import CellMap, CellModel, Gaussian, Grid
from geotracknet.contrario import DetectorConfig, detect_track
from geotracknet.errors import GeoTrackNetError
from geotracknet.fourhot import FourHotSpec
from geotracknet.reports import (GEOJSON_SCHEMA, LABEL_SCHEMA, VERDICT_SCHEMA, evaluate, read_jsonl,
                                 verdicts_geojson, write_geojson, write_verdicts)
from geotracknet.store import MAGIC, load_tracks, save_tracks, tracks_from_bytes, tracks_to_bytes
from geotracknet.synthgen import two_route_scenario


def one_cell_map():
    grid = Grid(Roi(0, 1, 0, 1), 1.0)
    return CellMap(grid, [CellModel(0, 100, Gaussian(0.0, 1.0))], "gaussian", 50)


def make_verdicts():
    cfg = DetectorConfig(epsilon=0.5)
    cmap = one_cell_map()
    normal = detect_track([0.0] * 4, [0] * 4, cmap, cfg, "a", 11, 100.0)
    abnormal = detect_track([0.0, -10.0, -10.0, 0.0, 0.0], [0] * 5, cmap, cfg, "b", 22, 200.0)
    single = detect_track([-10.0], [0], cmap, DetectorConfig(epsilon=2.0), "c", 33, 300.0)
    return [normal, abnormal, single]


# ------------------------------------------------------------------- store

def test_store_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tracks = [random_track(rng, T, track_id=f"t{T}") for T in (1, 5, 9)]
    save_tracks(tmp_path / "s.gtn", tracks, TINY_SPEC, {"voyages": 3}, {"seed": 0})
    spec, back, header = load_tracks(tmp_path / "s.gtn")
    assert spec == TINY_SPEC
    assert header["summary"] == {"voyages": 3} and header["provenance"] == {"seed": 0}
    for a, b in zip(tracks, back):
        np.testing.assert_array_equal(a.indices, b.indices)
        assert (a.mmsi, a.t0, a.dt, a.track_id) == (b.mmsi, b.t0, b.dt, b.track_id)
    assert tracks_to_bytes(back, spec, header["summary"], header["provenance"]) == \
        (tmp_path / "s.gtn").read_bytes()


def test_empty_store_round_trip():
    blob = tracks_to_bytes([], TINY_SPEC)
    assert blob.startswith(MAGIC)
    spec, tracks, _ = tracks_from_bytes(blob)
    assert spec == TINY_SPEC and tracks == []


def test_store_rejects_mixed_spec_and_bad_magic():
    other = FourHotSpec(Roi(0.0, 1.0, 0.0, 1.0), 0.05, 0.1, 3.0, 36.0, 30.0)
    tr = random_track(np.random.default_rng(1), 3, spec=other)
    with pytest.raises(ValueError):
        tracks_to_bytes([tr], TINY_SPEC)
    with pytest.raises((ValueError, GeoTrackNetError)):
        tracks_from_bytes(b"NOTATRACK" + tracks_to_bytes([], TINY_SPEC)[9:])


# ---------------------------------------------------------------- verdicts

def test_verdict_jsonl_validates(tmp_path):
    verdicts = make_verdicts()
    write_verdicts(verdicts, tmp_path / "v.jsonl")
    rows = read_jsonl(tmp_path / "v.jsonl")
    assert len(rows) == 3
    for row in rows:
        jsonschema.validate(row, VERDICT_SCHEMA)
    assert [r["abnormal"] for r in rows] == [False, True, True]
    lines = (tmp_path / "v.jsonl").read_text().splitlines()
    assert all(json.dumps(json.loads(line), sort_keys=True) == line for line in lines)


def test_geojson_validates_and_marks_segment(tmp_path):
    verdicts = make_verdicts()
    coords = [np.column_stack([np.linspace(0, 1, v.T), np.linspace(2, 3, v.T)]) for v in verdicts]
    write_geojson(verdicts, coords, tmp_path / "v.geojson", provenance={"seed": 0})
    doc = json.loads((tmp_path / "v.geojson").read_text())
    jsonschema.validate(doc, GEOJSON_SCHEMA)
    assert doc["provenance"] == {"seed": 0}
    roles = [(f["properties"]["track_id"], f["properties"]["role"]) for f in doc["features"]]
    assert roles == [("a", "track"), ("b", "track"), ("b", "abnormal_segment"),
                     ("c", "track"), ("c", "abnormal_segment")]
    seg = doc["features"][2]
    assert (seg["properties"]["start"], seg["properties"]["n"]) == (1, 2)
    # positions are [lon, lat]
    assert seg["geometry"]["coordinates"][0] == [coords[1][1, 1], coords[1][1, 0]]
    assert len(doc["features"][3]["geometry"]["coordinates"]) == 2


def test_geojson_without_provenance_has_no_member():
    assert "provenance" not in verdicts_geojson([], [])


def test_generated_labels_validate(tmp_path):
    paths = two_route_scenario(7, counts=(2, 1, 3)).write(tmp_path)
    for row in read_jsonl(paths["labels"]):
        jsonschema.validate(row, LABEL_SCHEMA)


# -------------------------------------------------------------- evaluation

LABELS = [
    {"track_id": "1", "anomalous": True, "kind": "u_turn", "window": [0.0, 1.0]},
    {"track_id": "2", "anomalous": True, "kind": "speed_drop", "window": [0.0, 1.0]},
    {"track_id": "3", "anomalous": False, "kind": None, "window": None},
    {"track_id": "4", "anomalous": False, "kind": None, "window": None},
]


def rows(flags):
    return [{"mmsi": m, "abnormal": f} for m, f in flags]


def test_evaluate_perfect_detector():
    out = evaluate(rows([(1, True), (2, True), (3, False), (4, False)]), LABELS)
    assert (out["detection_rate"], out["false_positive_rate"]) == (1.0, 0.0)
    assert out["per_kind"]["u_turn"] == {"detected": 1, "total": 1, "rate": 1.0}


def test_evaluate_all_normal_detector():
    out = evaluate(rows([(1, False), (2, False), (3, False), (4, False)]), LABELS)
    assert (out["detection_rate"], out["false_positive_rate"]) == (0.0, 0.0)


def test_evaluate_any_chunk_flags_vessel_and_reports_unmatched(caplog):
    verdicts = rows([(1, False), (1, True), (3, True), (9, True)])
    with caplog.at_level(logging.WARNING):
        out = evaluate(verdicts, LABELS)
    assert out["n_tracks"] == 2 and out["unmatched"] == 3
    assert out["detected"] == 1 and out["false_positives"] == 1
    assert "one side only" in caplog.text
