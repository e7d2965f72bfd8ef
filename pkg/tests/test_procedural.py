import time

import numpy as np
import pytest

from ldlab import landmarks as L
from ldlab import procedural as P
from ldlab.editing import EditPlan
from ldlab.exceptions import FeatureNotFound


def test_base_landmarks_deterministic():
    assert P.sample_base_landmarks(0) == P.sample_base_landmarks(0)
    assert P.sample_base_landmarks(0) != P.sample_base_landmarks(1)


def test_zero_perturbation_is_template():
    np.testing.assert_array_equal(P.sample_base_landmarks(7, perturbation=0.0).points, P.TEMPLATE)


def test_thousand_seeds_validate_unclamped():
    for s in range(1000):
        lm = P.sample_base_landmarks(s)
        assert not lm.clamped
        assert L.validate(lm.points) == lm


def test_styles_registered_and_distinct():
    assert sorted(P.STYLES) == list(range(0, 26))  # base domain plus 25 styles
    palettes = {tuple(map(tuple, P.get_style(i).color_array())) for i in range(1, 26)}
    assert len(palettes) == 25
    assert P.get_style(3) == P.get_style(3)


def test_render_deterministic_and_style_dependent():
    lm = P.sample_base_landmarks(3)
    a = P.render_face(lm, 4)
    assert a.dtype == np.uint8 and a.shape == (64, 64, 3)
    np.testing.assert_array_equal(a, P.render_face(lm, 4))
    assert not np.array_equal(a, P.render_face(lm, 5))
    assert not np.array_equal(a, P.render_face(lm, 0))


def test_left_eye_mass_centroid_within_one_pixel():
    eye = P.PALETTE_ROLES.index("eye")
    for s in range(100):
        lm = P.sample_base_landmarks(s)
        img = P.render_face(lm, 0)
        lab = P.classify_pixels(img, 0)
        px = lm.to_pixels(64)
        target = px[list(L.GROUPS["left_eye"])].mean(axis=0)
        split = 0.5 * (target[0] + px[list(L.GROUPS["right_eye"])].mean(axis=0)[0])
        yy, xx = np.nonzero((lab == eye) & (np.arange(64)[None, :] < split))
        assert np.hypot(xx.mean() - target[0], yy.mean() - target[1]) <= 1.0


@pytest.mark.parametrize("style", [0, 1, 9, 25])
def test_renderer_alignment_within_one_pixel(style):
    for s in range(20):
        lm = P.sample_base_landmarks(s)
        assert P.measure_alignment(P.render_face(lm, style), lm, style).mean <= 1.0


def test_shifted_eyes_detected():
    lm = P.sample_base_landmarks(11)
    pts = lm.points.copy()
    for g in ("left_eye", "right_eye"):
        pts[list(L.GROUPS[g]), 0] += 5 / 64
    img = P.render_face(L.validate(pts), 0)
    rep = P.measure_alignment(img, lm, 0)
    assert rep.per_group["left_eye"] == pytest.approx(5.0, abs=1.0)
    assert rep.per_group["right_eye"] == pytest.approx(5.0, abs=1.0)
    assert rep.per_group["mouth"] <= 1.0


def test_blank_image_feature_not_found():
    blank = np.zeros((64, 64, 3), np.uint8)
    blank[:] = P.get_style(0).color_array()[0]
    with pytest.raises(FeatureNotFound):
        P.measure_alignment(blank, P.sample_base_landmarks(0), 0)


def test_stage1_corpus(tmp_path):
    m = P.build_stage1_corpus(10, 0, tmp_path / "a")
    assert len(m) == 10
    back = P.read_manifest(tmp_path / "a" / "manifest.jsonl")
    assert [r.to_dict() for r in back] == [r.to_dict() for r in m]
    for r in back:
        assert r.style_id == 0 and r.edit_plan is None
        assert back.image(r).shape == (64, 64, 3)
        back.landmarks(r)
    P.build_stage1_corpus(10, 0, tmp_path / "b")
    for rel in ["manifest.jsonl"] + [r.image_path for r in m] + [r.landmarks_path for r in m]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_manifest_field_names(tmp_path):
    import json

    P.build_stage2_corpus(1, [2], 0, tmp_path)
    row = json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[0])
    assert set(row) == {"image_path", "landmarks_path", "style_id", "edit_plan", "seed"}


def test_stage2_corpus_full_size(tmp_path):
    m = P.build_stage2_corpus(32, None, 0, tmp_path)
    assert len(m) == 800
    counts = np.bincount([r.style_id for r in m], minlength=26)
    assert counts[0] == 0 and np.all(counts[1:] == 32)
    for r in m:
        m.landmarks(r)
        plan = EditPlan.from_dict(r.edit_plan)
        assert len({op.kind for op in plan.ops}) == 2


def test_stage1_corpus_timing(tmp_path):
    t0 = time.perf_counter()
    m = P.build_stage1_corpus(2000, 0, tmp_path)
    assert len(m) == 2000
    assert time.perf_counter() - t0 < 300
