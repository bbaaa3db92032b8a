import numpy as np
import pytest

from geotracknet.ais_ingest import Roi
from geotracknet.fourhot import EncodedTrack, FourHotSpec

# 10 bins per block, D = 40
TINY_SPEC = FourHotSpec(Roi(0.0, 1.0, 0.0, 1.0), 0.1, 0.1, 3.0, 36.0, 30.0)


def random_track(rng, T, spec=TINY_SPEC, track_id="t"):
    idx = np.column_stack([rng.integers(0, n, T) for n in spec.sizes])
    return EncodedTrack(spec, idx, mmsi=int(rng.integers(1, 10**6)), track_id=track_id)


@pytest.fixture
def tiny_spec():
    return TINY_SPEC


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(label: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
