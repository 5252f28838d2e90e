import numpy as np
import pytest

from pulsebench.ingest import Record, write_record
from pulsebench.synthgen import generate_dataset


def make_record(n_frames=240, fps=30.0, size=16, bvp_fs=None, identity=0, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(n_frames, 3, size, size), dtype=np.uint8)
    bvp_fs = fps if bvp_fs is None else bvp_fs
    n_bvp = int(round(n_frames / fps * bvp_fs))
    bvp = np.sin(2 * np.pi * 1.25 * np.arange(n_bvp) / bvp_fs)
    return Record(frames=frames, fps=fps, bvp=bvp, bvp_fs=bvp_fs, identity=identity)


def dump_record(path, rec: Record, **meta):
    return write_record(path, rec.frames, rec.fps, rec.bvp, rec.bvp_fs, rec.identity, rec.hr_bpm, meta)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 identities x 4 records of 10 s, 16x16 frames."""
    root = tmp_path_factory.mktemp("tiny")
    return generate_dataset(3, 4, (60, 120), seed=1, root=root, duration=10.0,
                            resolution=(16, 16), noise_std=1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
