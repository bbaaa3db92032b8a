import filecmp

import numpy as np
import pytest

from geotracknet.ais_ingest import clean_messages, prepare_voyages
from geotracknet.errors import ConfigError
from geotracknet.synthgen import (TWO_ROUTE_ROI, AnomalySpec, RouteTemplate, distance_to_polyline,
                                  generate_scenario, heterogeneous_scenario, inject_anomaly,
                                  two_route_anomalies, two_route_scenario, two_route_templates)

ROI = TWO_ROUTE_ROI


@pytest.fixture(scope="module")
def two_route():
    return two_route_scenario(7)


def quiet_route(**kw):
    return RouteTemplate([(47.6, -6.4), (48.9, -4.6)], speed=12.0, speed_std=0.0, cross_std=0.0, **kw)


def single_track(template=None, seed=0):
    ds = generate_scenario([template or quiet_route()], (1, 0, 0), ROI, seed)
    return ds.tracks["train"][0]


# ------------------------------------------------------------- generation

def test_partition_counts(two_route):
    assert [len(two_route.tracks[k]) for k in ("train", "validation", "test")] == [200, 50, 25]
    mmsis = {m.mmsi for m in two_route.validation}
    assert len(mmsis) == 50


def test_seeded_runs_write_identical_files(tmp_path):
    a = two_route_scenario(7, counts=(5, 2, 2)).write(tmp_path / "a")
    b = two_route_scenario(7, counts=(5, 2, 2)).write(tmp_path / "b")
    for key in a:
        assert filecmp.cmp(a[key], b[key], shallow=False)
    c = two_route_scenario(8, counts=(5, 2, 2)).write(tmp_path / "c")
    assert not filecmp.cmp(a["train"], c["train"], shallow=False)


def test_message_intervals_in_range(two_route):
    for tr in two_route.tracks["train"][:20]:
        gaps = np.diff(tr.times)
        assert gaps.min() >= 60.0 and gaps.max() <= 300.0


def test_anomalies_only_in_test_and_labels_conserved(two_route):
    for part in ("train", "validation"):
        assert all(tr.anomaly is None for tr in two_route.tracks[part])
    labels = two_route.labels
    assert len(labels) == 25
    assert sum(lab["anomalous"] for lab in labels) == len(two_route_anomalies())
    kinds = sorted(lab["kind"] for lab in labels if lab["anomalous"])
    assert kinds == ["off_route_path", "route_deviation", "route_deviation", "speed_drop", "u_turn"]
    test_mmsis = {str(m.mmsi) for m in two_route.test}
    assert {lab["track_id"] for lab in labels} == test_mmsis


def test_generated_messages_pass_cleaning_unchanged(two_route):
    for part in (two_route.train, two_route.validation, two_route.test):
        assert clean_messages(part, ROI) == part


def test_normal_messages_stay_near_route(two_route):
    inside = total = 0
    templates = two_route_templates()
    for tr in two_route.tracks["test"]:
        if tr.anomaly is not None:
            continue
        tpl = templates[tr.template]
        pts = np.array([(m.lat, m.lon) for m in tr.messages()])
        d = distance_to_polyline(pts, np.asarray(tpl.waypoints))
        inside += int(np.sum(d <= 3 * tpl.cross_std))
        total += len(d)
    assert inside / total >= 0.99


def test_noiseless_track_resamples_onto_polyline():
    tpl = quiet_route()
    ds = generate_scenario([tpl], (3, 0, 0), ROI, seed=5)
    voyages, _ = prepare_voyages(ds.train, ROI)
    assert voyages
    path = np.asarray(tpl.waypoints)
    for v in voyages:
        assert distance_to_polyline(v.states[:, :2], path).max() <= 1e-6


def test_noiseless_bent_route_messages_on_polyline():
    tpl = RouteTemplate([(47.6, -6.4), (48.5, -5.5), (47.8, -4.6)], speed_std=0.0, cross_std=0.0)
    tr = single_track(tpl)
    pts = np.array([(m.lat, m.lon) for m in tr.messages()])
    assert distance_to_polyline(pts, np.asarray(tpl.waypoints)).max() <= 1e-9


def test_template_outside_roi_rejected():
    tpl = RouteTemplate([(47.6, -6.4), (49.5, -4.6)])
    with pytest.raises(ConfigError):
        generate_scenario([tpl], (1, 0, 0), ROI, 0)


@pytest.mark.parametrize("bad", [
    lambda: RouteTemplate([(48.0, -5.0)]),
    lambda: RouteTemplate([(48.0, -5.0), (48.1, -5.0)], speed=0.0),
    lambda: AnomalySpec("teleport"),
    lambda: AnomalySpec("route_deviation", magnitude=-0.1),
    lambda: AnomalySpec("route_deviation", onset=1.0),
    lambda: AnomalySpec("speed_drop", magnitude=1.5),
    lambda: generate_scenario([], (1, 0, 0), ROI, 0),
    lambda: generate_scenario([quiet_route()], (0, 1, 1), ROI, 0),
])
def test_invalid_inputs_raise(bad):
    with pytest.raises(ConfigError):
        bad()


# -------------------------------------------------------------- anomalies

def test_speed_drop_window_sog():
    tr = inject_anomaly(single_track(), AnomalySpec("speed_drop", 0.2, 0.3, 7200.0), seed=1)
    lo, hi = tr.anomaly["window"]
    inside = (tr.times >= lo) & (tr.times <= hi)
    np.testing.assert_array_equal(tr.speed_mult[inside], 0.2)
    np.testing.assert_array_equal(tr.speed_mult[~inside], 1.0)
    sog = np.array([m.sog for m in tr.messages()])
    assert sog[inside].mean() == pytest.approx(2.4, abs=0.2)
    assert sog[~inside].mean() == pytest.approx(12.0, abs=0.2)


def test_route_deviation_reaches_magnitude():
    base = single_track()
    tr = inject_anomaly(base, AnomalySpec("route_deviation", 0.1, 0.3, 3 * 3600.0), seed=2)
    assert np.abs(tr.offset).max() >= 0.1 - 1e-12
    d = distance_to_polyline(tr.centerline(), base.path)
    assert d.max() >= 0.1 - 1e-9
    lo, hi = tr.anomaly["window"]
    outside = (tr.times < lo) | (tr.times > hi)
    assert np.all(d[outside] <= 1e-9)


def test_u_turn_reverses_twice():
    tr = inject_anomaly(single_track(), AnomalySpec("u_turn", 0.04, 0.4, 7200.0), seed=3)
    sign = np.sign(tr.speed_mult[tr.speed_mult != 0])
    assert int(np.sum(sign[1:] != sign[:-1])) == 2


def test_off_route_path_leaves_template():
    base = single_track()
    tr = inject_anomaly(base, AnomalySpec("off_route_path"), seed=4)
    assert tr.anomaly["window"] == [0.0, tr.duration]
    assert not np.array_equal(tr.path, base.path)
    pts = tr.centerline()
    assert np.all((pts[:, 0] >= ROI.lat_min) & (pts[:, 0] <= ROI.lat_max))


def test_window_recorded_in_label():
    tr = inject_anomaly(single_track(), AnomalySpec("speed_drop", 0.5, 0.25, 3600.0), seed=5)
    lab = tr.label()
    assert lab["anomalous"] and lab["kind"] == "speed_drop"
    assert lab["window"][0] == pytest.approx(tr.t_start + 0.25 * tr.duration)
    assert lab["window"][1] - lab["window"][0] == pytest.approx(3600.0)


def test_window_past_track_end_rejected():
    with pytest.raises(ConfigError):
        inject_anomaly(single_track(), AnomalySpec("speed_drop", 0.5, 0.9, 10 * 3600.0))


def test_heterogeneous_scenario_routes():
    ds = heterogeneous_scenario(11, counts=(40, 10, 20), n_anomalies=2)
    counts = np.bincount([tr.template for tr in ds.tracks["train"]], minlength=2)
    assert counts[0] > counts[1] > 0
    assert all(tr.template == 0 for tr in ds.tracks["test"] if tr.anomaly is not None)
