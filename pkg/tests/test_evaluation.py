import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldlab import evaluation as M
from ldlab import landmarks as L
from ldlab.exceptions import CountMismatch, DegenerateFace, EmptyList
from ldlab.procedural import TEMPLATE

nme_lists = st.lists(st.floats(0.0, 0.3, allow_nan=False), min_size=1, max_size=40)


def test_nme_zero_for_identical():
    lm = L.validate(TEMPLATE)
    assert M.nme(lm, lm) == 0.0


def test_nme_two_point_hand_case():
    gt = L.validate([(0.0, 0.0), (1.0, 0.0)], n=2)
    pred = L.validate([(0.2, 0.0), (1.0, 0.0)], n=2)
    # (0.2 + 0) / 2 / d_io with d_io = 1
    assert M.nme(pred, gt, norm_value=1.0) == pytest.approx(0.1, abs=1e-15)


def test_nme_scale_invariant():
    r = np.random.default_rng(0)
    gt = L.validate(0.25 + 0.25 * TEMPLATE)
    pred = L.validate(gt.points + r.normal(scale=0.01, size=gt.points.shape))
    scaled = M.nme(L.validate(2 * pred.points), L.validate(2 * gt.points))
    assert scaled == pytest.approx(M.nme(pred, gt), rel=1e-12)


def test_nme_errors():
    lm = L.validate(TEMPLATE)
    with pytest.raises(CountMismatch):
        M.nme(L.validate([(0.1, 0.1)], n=1), lm)
    pts = TEMPLATE.copy()
    pts[45] = pts[36]
    with pytest.raises(DegenerateFace):
        M.nme(lm, L.validate(pts))


def test_nme_bbox_normalizer():
    gt = L.validate(TEMPLATE)
    pred = L.validate(TEMPLATE + [0.01, 0.0])
    span = TEMPLATE.max(0) - TEMPLATE.min(0)
    assert M.nme(pred, gt, "bbox_diagonal") == pytest.approx(0.01 / np.hypot(*span))


def test_failure_rate_cases():
    assert M.failure_rate([0.05, 0.15], 0.10) == 0.5
    assert M.failure_rate([0.01, 0.02], 0.10) == 0.0
    assert M.failure_rate([0.2, 0.3], 0.10) == 1.0
    assert M.failure_rate([0.10], 0.10) == 0.0  # ties count as success
    with pytest.raises(EmptyList):
        M.failure_rate([], 0.1)


def test_auc_cases():
    assert M.auc([0.0, 0.0, 0.0], 0.1) == 1.0
    assert M.auc([0.1, 0.2], 0.1) == 0.0
    assert M.auc([0.05], 0.10) == pytest.approx((0.10 - 0.05) / 0.10)
    with pytest.raises(EmptyList):
        M.auc([], 0.1)


def _riemann_auc(nmes, threshold, n=100_000):
    # midpoint rule on the empirical CED, independent of the closed-form path
    x = np.sort(np.asarray(nmes))
    e = (np.arange(n) + 0.5) * threshold / n
    ced = np.searchsorted(x, e, side="right") / len(x)
    return float(ced.mean())


@settings(max_examples=60, deadline=None)
@given(nme_lists)
def test_auc_matches_riemann_sum(nmes):
    assert abs(M.auc(nmes, 0.10) - _riemann_auc(nmes, 0.10)) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(nme_lists, st.randoms(use_true_random=False))
def test_permutation_invariance(nmes, rnd):
    shuffled = list(nmes)
    rnd.shuffle(shuffled)
    assert M.failure_rate(shuffled, 0.1) == M.failure_rate(nmes, 0.1)
    assert M.auc(shuffled, 0.1) == pytest.approx(M.auc(nmes, 0.1), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(nme_lists, st.lists(st.floats(0.0, 0.05), min_size=40, max_size=40))
def test_monotonicity(nmes, bumps):
    worse = [a + b for a, b in zip(nmes, bumps)]
    assert M.auc(worse, 0.1) <= M.auc(nmes, 0.1) + 1e-15
    assert M.failure_rate(worse, 0.1) >= M.failure_rate(nmes, 0.1)


@settings(max_examples=40, deadline=None)
@given(nme_lists)
def test_report_invariants(nmes):
    rep = M.report_from_nmes(nmes, 0.1)
    assert rep.fr_at_threshold == pytest.approx(np.mean(np.array(nmes) > 0.1))
    fr = [f for _, f in rep.ced]
    assert all(b >= a for a, b in zip(fr, fr[1:]))
    assert 0.0 <= rep.auc_at_threshold <= 1.0


def test_ced_csv_roundtrip(tmp_path):
    ced = M.ced_curve([0.02, 0.05, 0.05, 0.2])
    M.write_ced_csv(ced, tmp_path / "ced.csv")
    assert M.read_ced_csv(tmp_path / "ced.csv") == ced
    assert ced[-1] == (0.2, 1.0)
    assert (tmp_path / "ced.csv").read_text().startswith("error,fraction\n")


def test_plot_ced_svg(tmp_path):
    out = tmp_path / "ced.svg"
    M.plot_ced({"a": M.ced_curve([0.01, 0.04, 0.2])}, out)
    text = out.read_text()
    assert "<svg" in text
    M.plot_ced({"a": M.ced_curve([0.01, 0.04, 0.2])}, tmp_path / "ced2.svg")
    assert (tmp_path / "ced2.svg").read_text() == text
