import numpy as np
import pytest
import torch

from ldlab import detector as det
from ldlab import landmarks as L
from ldlab.estimators import LandmarkDetector
from ldlab.exceptions import BadConfig, DegenerateMap, ShapeMismatch
from ldlab.procedural import TEMPLATE, render_face, sample_base_landmarks


def _lm_at_pixels(px, size):
    return L.LandmarkSet(np.asarray(px, dtype=np.float64) / size, n=len(px))


def test_on_grid_peak_is_one():
    hm = det.encode_heatmaps(_lm_at_pixels([(5, 9)], 16), 16, 1.5)
    m = hm.maps[0]
    assert np.unravel_index(np.argmax(m), m.shape) == (9, 5)
    assert m[9, 5] == 1.0


def test_maps_are_independent():
    a = det.encode_heatmaps(_lm_at_pixels([(5, 9), (2, 2)], 16), 16)
    b = det.encode_heatmaps(_lm_at_pixels([(5, 9), (12, 3)], 16), 16)
    np.testing.assert_array_equal(a.maps[0], b.maps[0])


def test_gaussian_mass_matches_integral():
    sigma = 2.0
    hm = det.encode_heatmaps(_lm_at_pixels([(31.3, 30.6)], 64), 64, sigma)
    total = float(hm.maps[0].astype(np.float64).sum())
    assert total == pytest.approx(2 * np.pi * sigma ** 2, rel=0.02)


def test_encode_errors():
    with pytest.raises(ValueError):
        det.encode_heatmaps(L.validate(TEMPLATE), 16, 0.0)


def test_on_grid_exact_recovery():
    r = np.random.default_rng(0)
    px = r.integers(1, 15, size=(68, 2)).astype(np.float64)
    lm = _lm_at_pixels(px, 16)
    out = det.decode_heatmaps(det.encode_heatmaps(lm, 16, 1.5))
    np.testing.assert_allclose(out.points * 16, px, atol=1e-9)


@pytest.mark.parametrize("sigma", [1.5, 2.0, 2.5, 3.0])
def test_round_trip_error_bound(sigma):
    # 1,000 random off-grid points strictly inside the heatmap grid
    size = 64
    r = np.random.default_rng(int(sigma * 10))
    px = r.uniform(1.0, size - 2.0, size=(1000, 2))
    worst = 0.0
    for chunk in np.split(px, 10):
        lm = _lm_at_pixels(chunk, size)
        got = det.decode_heatmap_points(det.encode_heatmaps(lm, size, sigma).maps)
        worst = max(worst, float(np.abs(got - chunk).max()))
    assert worst <= 0.5
    assert worst < 1e-3  # the log-parabola refine is exact for sampled Gaussians


def test_decode_errors():
    with pytest.raises(DegenerateMap):
        det.decode_heatmap_points(np.zeros((1, 8, 8)))
    bad = np.ones((1, 8, 8))
    bad[0, 2, 2] = np.nan
    with pytest.raises(DegenerateMap):
        det.decode_heatmap_points(bad)


def test_decode_translation_equivariance():
    base = det.encode_heatmaps(_lm_at_pixels([(10.3, 11.7)], 32), 32, 2.0).maps
    p0 = det.decode_heatmap_points(base)[0]
    for dx, dy in [(1, 0), (0, 2), (-3, 4), (5, -2)]:
        shifted = np.zeros_like(base)
        shifted[0] = np.roll(np.roll(base[0], dy, axis=0), dx, axis=1)
        p = det.decode_heatmap_points(shifted)[0]
        np.testing.assert_allclose(p - p0, [dx, dy], atol=1e-9)


def test_loss_examples():
    a = np.zeros((2, 4, 4), np.float32)
    assert float(det.detector_loss(torch.as_tensor(a), torch.as_tensor(a))) == 0.0
    assert float(det.detector_loss(torch.as_tensor(a + 1), torch.as_tensor(a))) == 1.0
    r = np.random.default_rng(0)
    x, y = r.normal(size=(3, 5, 5)), r.normal(size=(3, 5, 5))
    oracle = sum((u - v) ** 2 for u, v in zip(x.ravel().tolist(), y.ravel().tolist())) / x.size
    assert float(det.detector_loss(torch.as_tensor(x), torch.as_tensor(y))) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        det.detector_loss(torch.zeros(2, 4, 4), torch.zeros(2, 4, 5))


@pytest.mark.parametrize("cfg", [
    det.DetectorConfig(input_size=32, heatmap_stride=4, base_width=8, hourglass_depth=1),
    det.DetectorConfig(input_size=64, heatmap_stride=4, base_width=8, hourglass_depth=2),
    det.DetectorConfig(n_landmarks=5, input_size=32, heatmap_stride=2, base_width=4, hourglass_depth=3),
])
def test_predict_shape_determinism_finite(cfg):
    m = det.init_detector(cfg, 0)
    img = np.random.default_rng(0).random((cfg.input_size, cfg.input_size, 3)).astype(np.float32)
    hm = det.predict(m, img)
    assert hm.maps.shape == (cfg.n_landmarks, cfg.heatmap_size, cfg.heatmap_size)
    assert np.all(np.isfinite(hm.maps))
    np.testing.assert_array_equal(hm.maps, det.predict(m, img).maps)
    with pytest.raises(ShapeMismatch):
        det.predict(m, np.zeros((cfg.input_size + 8, cfg.input_size + 8, 3), np.float32))


def test_prediction_independent_of_batch():
    cfg = det.DetectorConfig(input_size=32, base_width=8, hourglass_depth=1)
    m = det.init_detector(cfg, 0)
    imgs = np.random.default_rng(1).random((3, 32, 32, 3)).astype(np.float32)
    batch = det.predict(m, imgs)
    for i in range(3):
        np.testing.assert_allclose(det.predict(m, imgs[i]).maps, batch[i].maps, atol=1e-6)


def test_bad_detector_config():
    with pytest.raises(BadConfig):
        det.DetectorConfig(heatmap_stride=3)
    with pytest.raises(BadConfig):
        det.DetectorConfig(input_size=32, heatmap_stride=4, hourglass_depth=4)


def test_detector_gradient_matches_finite_differences():
    cfg = det.DetectorConfig(n_landmarks=4, input_size=16, heatmap_stride=2, base_width=4, hourglass_depth=1)
    m = det.init_detector(cfg, 0).double()
    r = np.random.default_rng(0)
    x = torch.as_tensor(r.random((2, 3, 16, 16)))
    target = det.target_batch(r.uniform(0.2, 0.8, size=(2, 4, 2)), cfg).double()

    def loss():
        return det.detector_loss(m(x), target)

    m.zero_grad()
    loss().backward()
    params = list(m.parameters())
    h = 1e-3
    worst = 0.0
    for _ in range(20):
        p = params[r.integers(len(params))]
        idx = tuple(int(r.integers(n)) for n in p.shape)
        analytic = float(p.grad[idx])
        with torch.no_grad():
            orig = float(p[idx])
            p[idx] = orig + h
            up = float(loss())
            p[idx] = orig - h
            down = float(loss())
            p[idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    assert worst <= 1e-2


def _toy_set(n=8):
    lms = [sample_base_landmarks(i) for i in range(n)]
    return np.stack([render_face(l, 0, 64) for l in lms]), np.stack([l.points for l in lms])


def test_estimator_zero_steps_is_init():
    X, Y = _toy_set(4)
    est = LandmarkDetector(base_width=8, steps=0, random_state=3).fit(X, Y)
    ref = det.init_detector(est.config_, 3)
    for k, v in ref.state_dict().items():
        assert torch.equal(v, est.model_.state_dict()[k])


def test_estimator_deterministic_and_warm_start(tmp_path):
    X, Y = _toy_set(8)
    a = LandmarkDetector(base_width=8, steps=3, batch_size=4).fit(X, Y)
    b = LandmarkDetector(base_width=8, steps=3, batch_size=4).fit(X, Y)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    assert [r["loss"] for r in a.log_] == [r["loss"] for r in b.log_]
    a.save(tmp_path / "d.ckpt")
    c, _ = LandmarkDetector.load(tmp_path / "d.ckpt")
    np.testing.assert_array_equal(a.predict(X), c.predict(X))
    c.set_params(warm_start=True, steps=2).fit(X, Y)
    assert c.n_steps_total_ == 5
    assert c.predict(X).shape == (8, 68, 2)
    assert c.score(X, Y) <= 0
