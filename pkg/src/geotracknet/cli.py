"""Command-line pipeline driven by one JSON configuration file.

    geotracknet <preprocess|train|build-map|detect|eval> --config PATH
                [--sweep GRID] [--threads N]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.  Relative paths in the configuration resolve against the
configuration file's directory.  Every output carries the configuration
echo: inside the header of binary files and GeoJSON, and in a
``<output>.provenance.json`` sidecar for CSV and JSON Lines files.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import ais_ingest as ingest
from .ais_ingest import Roi
from .cellmap import (FORMS, Grid, build_cell_map, export_performance_map, load_cellmap,
                      save_cellmap, track_cells)
from .contrario import DetectorConfig, detect_track, sweep_epsilon
from .errors import (ConfigError, GeoTrackNetError, NonFiniteGradient, NonFiniteValue,
                     SpecMismatch, TrainingAborted)
from .fourhot import FourHotSpec, encode_track
from .reports import evaluate, read_jsonl, write_geojson, write_verdicts
from .store import load_tracks, save_tracks
from .vrnn import TrainConfig, VrnnModel, load_model, save_model, score_tracks, train

log = logging.getLogger("geotracknet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PARTITIONS = ("train", "validation", "test")
PATH_KEYS = tuple(f"{p}_csv" for p in PARTITIONS) + tuple(f"{p}_store" for p in PARTITIONS) + (
    "checkpoint", "history_csv", "cellmap", "performance_csv", "verdicts", "geojson",
    "sweep_csv", "labels", "metrics")

DEFAULTS = {
    "seed": 0,
    "roi": Roi(47.5, 49.5, -7.0, -4.0).to_dict(),
    "fourhot": {"res_lat": 0.01, "res_lon": 0.01, "res_sog": 1.0, "res_cog": 5.0},
    "preprocess": {"gap_max": ingest.GAP_MAX, "dt": ingest.DT, "dur_min": ingest.DUR_MIN,
                   "dur_max": ingest.DUR_MAX, "sog_max": ingest.SOG_MAX},
    "model": {"hidden": 100, "latent": None, "dense": 100},  # latent None: same as hidden
    "train": {"lr": 3e-4, "batch_size": 16, "max_epochs": 50, "patience": 5, "samples": 1,
              "clip_norm": 5.0},
    "cellmap": {"cell_size": 0.1, "m_min": 50, "form": "kde"},
    "detector": {"p": 0.1, "epsilon": None, "samples": 16},
    "paths": {},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(base[key], dict) and key != "roi":
            if not isinstance(value, dict):
                raise ConfigError(f"{key!r} must be an object")
            if key != "paths":
                unknown = set(value) - set(base[key])
                if unknown:
                    raise ConfigError(f"unknown key(s) in {key!r}: {sorted(unknown)}")
            out[key].update(value)
        else:
            out[key] = value
    return out


def _positive(section, name, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{section}.{name} must be a finite number")
    if integer and int(value) != value:
        raise ConfigError(f"{section}.{name} must be an integer")
    if value <= 0:
        raise ConfigError(f"{section}.{name} must be positive")


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    paths: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(data, path.resolve().parent)

    @classmethod
    def from_dict(cls, data, base_dir=".") -> "PipelineConfig":
        cfg = cls(_merge(DEFAULTS, data), Path(base_dir))
        cfg.validate()
        return cfg

    def validate(self):
        r = self.raw
        if isinstance(r["seed"], bool) or not isinstance(r["seed"], int) or r["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        try:
            self.roi
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid roi: {exc}") from exc
        for name, value in r["fourhot"].items():
            _positive("fourhot", name, value)
        for name, value in r["preprocess"].items():
            _positive("preprocess", name, value)
        pre = r["preprocess"]
        if pre["dur_min"] > pre["dur_max"]:
            raise ConfigError("preprocess.dur_min exceeds dur_max")
        for name, value in r["model"].items():
            if name == "latent" and value is None:
                continue
            _positive("model", name, value, integer=True)
        if r["model"]["latent"] not in (None, r["model"]["hidden"]):
            raise ConfigError("model.latent must equal model.hidden")
        tr = r["train"]
        for name in ("batch_size", "max_epochs", "patience", "samples"):
            _positive("train", name, tr[name], integer=True)
        for name in ("lr", "clip_norm"):
            _positive("train", name, tr[name])
        cm = r["cellmap"]
        _positive("cellmap", "cell_size", cm["cell_size"])
        _positive("cellmap", "m_min", cm["m_min"], integer=True)
        if cm["form"] not in FORMS:
            raise ConfigError(f"cellmap.form must be one of {FORMS}")
        det = r["detector"]
        _positive("detector", "samples", det["samples"], integer=True)
        DetectorConfig(det["p"], det["epsilon"], det["samples"], r["seed"])
        unknown = set(r["paths"]) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown path key(s): {sorted(unknown)}")
        resolved = {}
        for key, value in r["paths"].items():
            if value is None:
                continue
            if not isinstance(value, str) or not value:
                raise ConfigError(f"paths.{key} must be a non-empty string")
            resolved[key] = (self.base_dir / value).resolve()
        seen = {}
        for key, p in resolved.items():
            if p in seen:
                raise ConfigError(f"paths.{key} and paths.{seen[p]} both point to {p}")
            seen[p] = key
        self.paths = resolved

    def path(self, key) -> Path:
        if key not in self.paths:
            raise ConfigError(f"paths.{key} is required for this command")
        return self.paths[key]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def roi(self) -> Roi:
        return Roi.from_dict(self.raw["roi"])

    @property
    def spec(self) -> FourHotSpec:
        fh = self.raw["fourhot"]
        return FourHotSpec(self.roi, fh["res_lat"], fh["res_lon"], fh["res_sog"], fh["res_cog"],
                           self.raw["preprocess"]["sog_max"])

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.raw["train"])

    @property
    def grid(self) -> Grid:
        return Grid(self.roi, self.raw["cellmap"]["cell_size"])

    def detector(self, epsilon="config") -> DetectorConfig:
        det = self.raw["detector"]
        eps = det["epsilon"] if epsilon == "config" else epsilon
        return DetectorConfig(det["p"], eps, det["samples"], self.seed)

    def provenance(self) -> dict:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return {"config": self.raw, "config_sha256": hashlib.sha256(blob).hexdigest()}


# ------------------------------------------------------------------ helpers

def _sidecar(path: Path, provenance):
    side = path.with_name(path.name + ".provenance.json")
    side.write_text(json.dumps(provenance, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _parent(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_store(cfg, key, require=True):
    spec, tracks, _ = load_tracks(cfg.path(key))
    if require and not tracks:
        raise ValueError(f"track store {cfg.path(key)} is empty")
    return spec, tracks


def _check_model_spec(model, spec, what):
    if model.spec != spec:
        raise SpecMismatch(f"checkpoint four-hot spec differs from the {what} store's")


# ----------------------------------------------------------------- commands

def cmd_preprocess(cfg: PipelineConfig, args) -> int:
    spec = cfg.spec
    pre = cfg.raw["preprocess"]
    done = 0
    for part in PARTITIONS:
        if f"{part}_csv" not in cfg.paths:
            continue
        src = cfg.path(f"{part}_csv")
        with open(src, "rb") as fh:
            msgs, errors = ingest.parse_ais_csv(fh)
        if errors:
            side = src.with_name(src.stem + ".errors.csv")
            ingest.write_parse_errors(errors, side)
            log.warning("%s: %d malformed row(s), see %s", src.name, len(errors), side)
        voyages, summary = ingest.prepare_voyages(
            msgs, spec.roi, sog_max=pre["sog_max"], gap_max=pre["gap_max"], dt=pre["dt"],
            dur_min=pre["dur_min"], dur_max=pre["dur_max"])
        tracks = [encode_track(v, spec) for v in voyages]
        info = summary.to_dict()
        info["parse_errors"] = len(errors)
        save_tracks(_parent(cfg.path(f"{part}_store")), tracks, spec, info, cfg.provenance())
        print(f"{part}: {json.dumps(info, sort_keys=True)}")
        done += 1
    if not done:
        raise ConfigError("no *_csv input path configured")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, args) -> int:
    spec, train_set = _load_store(cfg, "train_store")
    vspec, val_set = _load_store(cfg, "validation_store")
    if spec != vspec or spec != cfg.spec:
        raise SpecMismatch("train store, validation store and configuration disagree on the encoding")
    m = cfg.raw["model"]
    model = VrnnModel(spec, hidden=m["hidden"], dense=m["dense"], seed=cfg.seed)
    model, history = train(model, train_set, val_set, cfg.train_config)
    save_model(model, _parent(cfg.path("checkpoint")), history)
    out = _parent(cfg.path("history_csv"))
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_elbo", "val_elbo"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_elbo"]), repr(h["val_elbo"])])
    _sidecar(out, cfg.provenance())
    best = max(history, key=lambda h: h["val_elbo"]) if history else None
    print(f"epochs: {len(history)}; best validation ELBO: "
          f"{best['val_elbo'] if best else float('nan'):.4f}")
    return EXIT_OK


def cmd_build_map(cfg: PipelineConfig, args) -> int:
    model = load_model(cfg.path("checkpoint"))
    spec, val_set = _load_store(cfg, "validation_store")
    _check_model_spec(model, spec, "validation")
    cm = cfg.raw["cellmap"]
    det = cfg.raw["detector"]
    cmap = build_cell_map(model, val_set, cfg.grid, m_min=cm["m_min"], form=cm["form"], seed=cfg.seed,
                          samples=det["samples"], p=det["p"], threads=args.threads)
    cmap.provenance.update(cfg.provenance())
    save_cellmap(cmap, _parent(cfg.path("cellmap")))
    perf = _parent(cfg.path("performance_csv"))
    export_performance_map(cmap, perf)
    _sidecar(perf, cmap.provenance)
    print(f"active cells: {cmap.n_active} of {cfg.grid.n_cells}")
    return EXIT_OK


def _parse_grid(text):
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --sweep grid {text!r}") from exc
    if not grid or any(not (g > 0 and math.isfinite(g)) for g in grid):
        raise ConfigError(f"--sweep needs positive finite values, got {text!r}")
    return grid


def cmd_detect(cfg: PipelineConfig, args) -> int:
    grid = _parse_grid(args.sweep) if args.sweep is not None else None
    if grid is None and cfg.raw["detector"]["epsilon"] is None:
        raise ConfigError("detector.epsilon is not set; give it in the configuration or pass --sweep")
    model = load_model(cfg.path("checkpoint"))
    cmap = load_cellmap(cfg.path("cellmap"))
    spec, tracks = _load_store(cfg, "test_store", require=False)
    _check_model_spec(model, spec, "test")
    fp = cmap.provenance.get("model")
    if fp is not None and fp != model.fingerprint():
        raise SpecMismatch("cell map was built from a different checkpoint")
    det = cfg.detector(epsilon=grid[0] if grid else "config")
    scores = score_tracks(model, tracks, det.samples, det.seed, args.threads)
    verdicts = [detect_track(sc, track_cells(tr, cmap.grid), cmap, det, tr.track_id, tr.mmsi, tr.t0)
                for sc, tr in zip(scores, tracks)]
    prov = cfg.provenance()
    if grid is not None:
        rows = sweep_epsilon(verdicts, grid)
        out = _parent(cfg.path("sweep_csv"))
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "n_abnormal"])
            for eps, n in rows:
                w.writerow([repr(eps), n])
                print(f"epsilon={eps:g}\tabnormal={n}")
        prov = dict(prov, sweep=grid, n_tracks=len(verdicts))
        _sidecar(out, prov)
        return EXIT_OK
    out = _parent(cfg.path("verdicts"))
    write_verdicts(verdicts, out)
    _sidecar(out, prov)
    gj = _parent(cfg.path("geojson"))
    write_geojson(verdicts, [tr.positions() for tr in tracks], gj, provenance=prov)
    print(f"abnormal tracks: {sum(v.abnormal for v in verdicts)} of {len(verdicts)}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args) -> int:
    verdicts = read_jsonl(cfg.path("verdicts"))
    labels = read_jsonl(cfg.path("labels"))
    metrics = evaluate(verdicts, labels)
    metrics["provenance"] = cfg.provenance()
    out = _parent(cfg.path("metrics"))
    out.write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"detection rate: {metrics['detection_rate']}; "
          f"false-positive rate: {metrics['false_positive_rate']}")
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "build-map": cmd_build_map,
            "detect": cmd_detect, "eval": cmd_eval}


def build_parser():
    ap = argparse.ArgumentParser(prog="geotracknet", description="AIS track anomaly detection pipeline")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="pipeline configuration (JSON)")
    ap.add_argument("--sweep", help="comma-separated epsilon grid (detect only)")
    ap.add_argument("--threads", type=int, default=1, help="cap on scoring worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.sweep is not None and args.command != "detect":
            raise ConfigError("--sweep only applies to detect")
        cfg = PipelineConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"geotracknet: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NonFiniteValue, NonFiniteGradient, FloatingPointError) as exc:
        print(f"geotracknet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GeoTrackNetError, OSError, ValueError, KeyError) as exc:
        print(f"geotracknet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
