import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geotracknet.ais_ingest import (USHANT, AisMessage, RawTrack, ResampledTrack, Roi,
                                    assemble_tracks, clean_messages, parse_ais_csv,
                                    prepare_voyages, resample_track, split_voyage,
                                    write_messages_csv, write_parse_errors)
from geotracknet.errors import SchemaError, TrackTooShort

HEADER = "mmsi,timestamp,lat,lon,sog,cog\n"


def parse_text(text, schema=None):
    return parse_ais_csv(io.StringIO(text), schema)


def msg(t, lat=48.0, lon=-5.0, sog=10.0, cog=90.0, mmsi=1):
    return AisMessage(mmsi, float(t), lat, lon, sog, cog)


# ------------------------------------------------------------------ parsing

def test_parse_row_maps_fields():
    msgs, errors = parse_text(HEADER + "211000001,1488326400,48.10,-5.30,12.5,210.0\n")
    assert errors == []
    assert msgs == [AisMessage(211000001, 1488326400.0, 48.10, -5.30, 12.5, 210.0)]


def test_parse_out_of_range_latitude_is_row_error():
    msgs, errors = parse_text(HEADER + "1,0,91.0,-5,1,1\n2,0,48,-5,1,1\n")
    assert len(msgs) == 1 and msgs[0].mmsi == 2
    assert errors[0].row == 1 and errors[0].reason == "out-of-range latitude"


def test_parse_header_only_is_empty():
    assert parse_text(HEADER) == ([], [])


def test_parse_accepts_bytes_and_bom():
    msgs, _ = parse_ais_csv(("﻿" + HEADER + "1,0,48,-5,1,1\n").encode("utf-8"))
    assert len(msgs) == 1
    msgs, _ = parse_ais_csv(io.BytesIO((HEADER + "1,0,48,-5,1,1\n").encode()))
    assert len(msgs) == 1


def test_parse_missing_column_is_fatal():
    with pytest.raises(SchemaError):
        parse_text("mmsi,timestamp,lat,lon,sog\n1,0,48,-5,1\n")


def test_parse_custom_schema_and_bad_rows():
    text = "id,time,y,x,speed,course\n1,0,48,-5,1,1\n2,zero,48,-5,1,1\n3,0,48\n4,0,48,-5,-1,1\n"
    msgs, errors = parse_text(text, {"mmsi": "id", "t": "time", "lat": "y", "lon": "x",
                                   "sog": "speed", "cog": "course"})
    assert [m.mmsi for m in msgs] == [1]
    assert [(e.row, e.reason) for e in errors] == [
        (2, "unparseable number"), (3, "missing field"), (4, "out-of-range speed")]


def test_csv_round_trip(tmp_path):
    msgs = [msg(0, 48.123456789, -5.5, 12.25, 359.5, 7), msg(600, 48.2, -5.4, 0.0, 0.0, 7)]
    write_messages_csv(msgs, tmp_path / "m.csv")
    with open(tmp_path / "m.csv", "rb") as fh:
        back, errors = parse_ais_csv(fh)
    assert back == msgs and errors == []
    _, errors = parse_text(HEADER + "1,0,91,0,0,0\n")
    write_parse_errors(errors, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "row,reason\n1,out-of-range latitude\n"


# ----------------------------------------------------------------- cleaning

def test_clean_truncates_speed_and_wraps_course():
    out = clean_messages([msg(0, sog=35.0), msg(1, cog=360.0)], USHANT, 30.0)
    assert out[0].sog == 30.0
    assert out[1].cog == 0.0


def test_clean_drops_outside_roi_and_preserves_order():
    msgs = [msg(0), msg(1, lat=50.0), msg(2, lon=-4.5)]
    assert [m.t for m in clean_messages(msgs, USHANT)] == [0.0, 2.0]


@given(st.lists(st.builds(msg, t=st.integers(0, 10_000), lat=st.floats(47, 50), lon=st.floats(-8, -3),
                          sog=st.floats(0, 60), cog=st.floats(0, 360)), max_size=30))
def test_clean_is_idempotent(msgs):
    once = clean_messages(msgs, USHANT)
    assert clean_messages(once, USHANT) == once


# --------------------------------------------------------------- assembling

def test_gap_split_strictly_greater():
    times = np.cumsum([0, 600, 600, 9000, 600])
    tracks = assemble_tracks([msg(t) for t in times])
    assert [len(t) for t in tracks] == [3, 2]


def test_exactly_two_hour_gap_stays_joined():
    assert len(assemble_tracks([msg(0), msg(7200), msg(7800)])) == 1
    assert len(assemble_tracks([msg(0), msg(7201)])) == 2


def test_regular_gaps_single_track():
    assert len(assemble_tracks([msg(600 * i) for i in range(10)])) == 1


def test_interleaved_mmsis_split_by_vessel():
    msgs = [msg(60 * i, mmsi=1 + i % 2) for i in range(10)]
    tracks = assemble_tracks(msgs)
    assert sorted(t.mmsi for t in tracks) == [1, 2]
    assert all(len(t) == 5 for t in tracks)


def test_duplicate_timestamp_keeps_first():
    tracks = assemble_tracks([msg(0, lat=48.0), msg(0, lat=48.5), msg(600)])
    assert [m.lat for m in tracks[0].messages] == [48.0, 48.0]


@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 40_000)), max_size=40))
def test_assemble_preserves_pairs_up_to_duplicates(pairs):
    msgs = [msg(t, mmsi=m) for m, t in pairs]
    tracks = assemble_tracks(msgs)
    out = sorted((m.mmsi, m.t) for tr in tracks for m in tr.messages)
    assert out == sorted(set((m, float(t)) for m, t in pairs))
    for tr in tracks:
        ts = [m.t for m in tr.messages]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        assert all(b - a <= 7200 for a, b in zip(ts, ts[1:]))


# --------------------------------------------------------------- resampling

def test_resample_midpoint():
    res = resample_track(RawTrack(1, [msg(0, lat=48.0), msg(1200, lat=48.2)]), 600)
    assert res.states[1, 0] == pytest.approx(48.1, abs=1e-12)
    assert len(res) == 3


def test_resample_course_wraps_through_north():
    res = resample_track(RawTrack(1, [msg(0, cog=350.0), msg(1200, cog=10.0)]), 600)
    assert res.states[1, 3] == pytest.approx(0.0, abs=1e-9)
    assert np.all((res.states[:, 3] >= 0) & (res.states[:, 3] < 360))


def test_resample_on_grid_is_identity():
    msgs = [msg(600 * i, 48 + 0.01 * i, -5 - 0.02 * i, 10 + i, (90 + 7 * i) % 360) for i in range(6)]
    res = resample_track(RawTrack(1, msgs), 600)
    expect = np.array([(m.lat, m.lon, m.sog, m.cog) for m in msgs])
    np.testing.assert_allclose(res.states, expect, atol=1e-12)


def test_resample_needs_two_messages():
    with pytest.raises(TrackTooShort):
        resample_track(RawTrack(1, [msg(0)]))


@settings(max_examples=200)
@given(st.lists(st.integers(1, 7200), min_size=1, max_size=20),
       st.floats(47, 49), st.floats(-1e-4, 1e-4), st.floats(-7, -5), st.floats(-1e-4, 1e-4),
       st.floats(0, 10), st.floats(-1e-3, 1e-3))
def test_resample_exact_on_affine_tracks(gaps, lat0, vlat, lon0, vlon, sog0, vsog):
    t = np.concatenate([[0], np.cumsum(gaps)]).astype(float)
    msgs = [msg(ti, lat0 + vlat * ti, lon0 + vlon * ti, sog0 + vsog * ti + 20, 45.0) for ti in t]
    res = resample_track(RawTrack(1, msgs), 600)
    tt = res.times - res.t0
    np.testing.assert_allclose(res.states[:, 0], lat0 + vlat * tt, atol=1e-9, rtol=0)
    np.testing.assert_allclose(res.states[:, 1], lon0 + vlon * tt, atol=1e-9, rtol=0)
    np.testing.assert_allclose(res.states[:, 2], sog0 + vsog * tt + 20, atol=1e-9, rtol=0)
    assert res.times[-1] <= t[-1]
    assert np.all(np.diff(res.times) == 600)


# ------------------------------------------------------------------ chunking

def _resampled(hours, dt=600.0):
    return ResampledTrack(1, 0.0, dt, np.zeros((int(round(hours * 3600 / dt)), 4)))


def test_split_thirty_hours():
    chunks = split_voyage(_resampled(30))
    assert [c.duration / 3600 for c in chunks] == [24.0, 6.0]
    assert chunks[1].t0 == 24 * 3600


def test_split_drops_three_hour_track():
    assert split_voyage(_resampled(3)) == []


def test_split_keeps_ten_hours_unchanged():
    tr = _resampled(10)
    (chunk,) = split_voyage(tr)
    assert chunk.t0 == tr.t0 and np.array_equal(chunk.states, tr.states)


def test_split_drops_short_tail_chunk():
    chunks = split_voyage(_resampled(27))
    assert [c.duration / 3600 for c in chunks] == [24.0]


@given(st.integers(1, 400))
def test_split_chunk_bounds(n):
    tr = ResampledTrack(1, 0.0, 600.0, np.arange(4 * n, dtype=float).reshape(n, 4))
    chunks = split_voyage(tr)
    for c in chunks:
        assert 4 * 3600 <= c.duration <= 24 * 3600
    joined = np.concatenate([c.states for c in chunks]) if chunks else np.zeros((0, 4))
    flat = tr.states[:, 0].tolist()
    assert all(x in flat for x in joined[:, 0])  # subsequence of the input


def test_prepare_voyages_pipeline_counts():
    msgs = [msg(300 * i, lat=48 + 1e-4 * i) for i in range(200)]  # ~16.6 h
    msgs += [msg(300 * i, mmsi=2) for i in range(20)]  # 1.6 h, too short
    msgs += [msg(0, lat=60.0, mmsi=3)]
    voyages, summary = prepare_voyages(msgs, USHANT)
    assert len(voyages) == 1 and voyages[0].mmsi == 1
    assert summary.messages_in == 221 and summary.messages_kept == 220
    assert summary.drops["outside_roi"] == 1 and summary.drops["short_chunk"] == 1
    assert np.all(np.diff(voyages[0].times) == 600)


def test_roi_rejects_degenerate():
    with pytest.raises(ValueError):
        Roi(48, 48, -5, -4)
    assert math.isclose(USHANT.lat_max, 49.5)
