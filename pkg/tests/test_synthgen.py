import hashlib
import os

import numpy as np
import pytest

from pulsebench.errors import ContourOutOfFrame
from pulsebench.ingest import load_record
from pulsebench.metrics import video_level_hr
from pulsebench.preprocess import segment_for_eval
from pulsebench.spectral import estimate_hr
from pulsebench.synthgen import (Ellipse, SyntheticSpec, bin_aligned_hrs, generate_dataset, generate_record,
                                 identity_contour, synth_bvp)


def tree_digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, files in sorted(os.walk(root)):
        dirnames.sort()
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_bvp_exact_bin():
    assert estimate_hr(synth_bvp(75, 30, 8), 30) == 75.0


def test_bvp_off_bin_goes_to_nearest():
    bins = 60 * np.arange(121) * 30 / 240
    nearest = bins[np.argmin(np.abs(bins - 72))]
    assert nearest == 75.0
    assert estimate_hr(synth_bvp(72, 30, 8), 30) == nearest


def test_bvp_unit_peak_and_phase():
    b = synth_bvp(90, 30, 8, phase=1.3)
    assert np.max(np.abs(b.values)) == pytest.approx(1.0)
    assert estimate_hr(b, 30) == estimate_hr(synth_bvp(90, 30, 8), 30)


def test_noiseless_green_mean_over_ellipse():
    spec = SyntheticSpec(identity=2, hr_bpm=75.0, resolution=(32, 32))
    rec = generate_record(spec)
    mask = spec.contour.mask(32, 32)
    g = rec.frames[:, 1][:, mask].mean(axis=1)
    expected = spec.skin_base_rgb[1] + spec.modulation_amp[1] * rec.bvp
    assert np.abs(g - expected).max() <= 0.5


def test_background_is_flat():
    spec = SyntheticSpec(identity=0, hr_bpm=75.0, resolution=(32, 32))
    rec = generate_record(spec)
    outside = ~spec.contour.mask(32, 32)
    assert np.all(rec.frames[:, :, outside] == 20)


def test_green_dominant_modulation():
    spec = SyntheticSpec(identity=0, hr_bpm=75.0)
    assert np.argmax(spec.modulation_amp) == 1


def test_contours_differ_and_fit():
    contours = [identity_contour(i) for i in range(50)]
    assert len({(c.a, c.b, c.cx, c.cy) for c in contours}) == 50
    assert all(c.fits() for c in contours)


def test_contour_out_of_frame():
    with pytest.raises(ContourOutOfFrame):
        SyntheticSpec(identity=0, hr_bpm=75.0, contour=Ellipse(0.1, 0.5, 0.3, 0.2, 0.0))


def test_hr_outside_band():
    with pytest.raises(ValueError):
        SyntheticSpec(identity=0, hr_bpm=20.0)


def test_record_determinism():
    spec = SyntheticSpec(identity=1, hr_bpm=82.5, noise_std=3.0, resolution=(16, 16))
    a, b = generate_record(spec, seed=4), generate_record(spec, seed=4)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert generate_record(spec, seed=5).frames.tobytes() != a.frames.tobytes()


def test_bin_aligned_hrs():
    hrs = bin_aligned_hrs((60, 120), 30, 720)
    assert hrs.min() >= 60 and hrs.max() <= 120
    np.testing.assert_allclose(hrs / 7.5, np.round(hrs / 7.5))


def test_dataset_counts_and_labels(tiny_dataset):
    assert len(tiny_dataset) == 12 and tiny_dataset.num_identities == 3
    for d in tiny_dataset.records:
        rec = load_record(d.path)
        assert 60 <= rec.hr_bpm <= 120
        seg = segment_for_eval(rec)[0]
        assert estimate_hr(seg.bvp, rec.fps) == rec.hr_bpm


def test_video_hr_from_segments_of_constant_record(tmp_path):
    idx = generate_dataset(2, 1, (60, 120), seed=3, root=tmp_path, duration=32.0, resolution=(8, 8))
    rec = load_record(idx.records[0].path)
    segs = segment_for_eval(rec)
    assert len(segs) == 4
    hr = video_level_hr([estimate_hr(s.bvp, rec.fps) for s in segs])
    assert abs(hr - rec.hr_bpm) <= 60 * rec.fps / segs[0].num_frames


def test_dataset_determinism(tmp_path):
    kw = dict(duration=4.0, resolution=(8, 8), noise_std=1.0)
    generate_dataset(2, 2, seed=9, root=tmp_path / "a", **kw)
    generate_dataset(2, 2, seed=9, root=tmp_path / "b", **kw)
    generate_dataset(2, 2, seed=10, root=tmp_path / "c", **kw)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_dataset_needs_two_identities(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(1, 2, root=tmp_path)
