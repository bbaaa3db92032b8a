"""Encoded track store: many EncodedTracks in one container file.

Header fields: ``format_version``, ``kind`` ("tracks"), ``spec`` (four-hot
resolutions and ROI), ``tracks`` (one entry per track with ``track_id``,
``mmsi``, ``t0``, ``dt`` and the ``indices`` array directory entry, an
int32 array of shape (T, 4)), ``summary`` (preprocessing counts) and
``provenance`` (the configuration echo).
"""
from __future__ import annotations

from .container import PayloadWriter, pack, read_array, unpack
from .fourhot import EncodedTrack, FourHotSpec

MAGIC = b"GTNTRACK"
FORMAT_VERSION = 1


def tracks_to_bytes(tracks, spec: FourHotSpec, summary=None, provenance=None) -> bytes:
    writer = PayloadWriter()
    entries = []
    for tr in tracks:
        if tr.spec != spec:
            raise ValueError(f"track {tr.track_id} encoded with a different spec")
        entries.append({"track_id": tr.track_id, "mmsi": int(tr.mmsi), "t0": float(tr.t0),
                        "dt": float(tr.dt), "indices": writer.add(tr.indices.reshape(-1, 4), "i4")})
    header = {"format_version": FORMAT_VERSION, "kind": "tracks", "spec": spec.to_dict(),
              "tracks": entries, "summary": summary or {}, "provenance": provenance or {}}
    return pack(MAGIC, header, writer.getvalue())


def tracks_from_bytes(blob: bytes):
    """Return ``(spec, tracks, header)``."""
    header, payload = unpack(blob, MAGIC)
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported track store version {header.get('format_version')}")
    spec = FourHotSpec.from_dict(header["spec"])
    tracks = [EncodedTrack(spec, read_array(payload, e["indices"]).astype(int), e["mmsi"], e["t0"],
                           e["dt"], e["track_id"])
              for e in header["tracks"]]
    return spec, tracks, header


def save_tracks(path, tracks, spec, summary=None, provenance=None):
    with open(path, "wb") as fh:
        fh.write(tracks_to_bytes(tracks, spec, summary, provenance))


def load_tracks(path):
    with open(path, "rb") as fh:
        return tracks_from_bytes(fh.read())
