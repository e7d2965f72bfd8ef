"""68-point landmark sets: validation, grouping, JSON I/O and rasterization.

Coordinates are normalized to [0, 1] fractions of width/height. A
normalized coordinate ``x`` maps to the continuous pixel coordinate
``x * W``; pixel ``i`` has its center at ``i``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadResolution,
    DegenerateFace,
    NonFinite,
    OutOfRange,
    UnsupportedVersion,
    WrongCount,
)

N_LANDMARKS = 68
CLAMP_BAND = (-0.25, 1.25)
FORMAT_VERSION = 1

# image-left / image-right naming; the outer eye corners are 36 and 45
GROUPS: dict[str, range] = {
    "jaw": range(0, 17),
    "left_brow": range(17, 22),
    "right_brow": range(22, 27),
    "nose": range(27, 36),
    "left_eye": range(36, 42),
    "right_eye": range(42, 48),
    "mouth": range(48, 68),
}

DEFAULT_GROUP_COLORS: dict[str, tuple[float, float, float]] = {
    "jaw": (1.0, 1.0, 1.0),
    "left_brow": (1.0, 0.5, 0.0),
    "right_brow": (0.5, 1.0, 0.0),
    "nose": (0.0, 1.0, 1.0),
    "left_eye": (0.0, 0.0, 1.0),
    "right_eye": (1.0, 0.0, 1.0),
    "mouth": (1.0, 0.0, 0.0),
}


@dataclass(frozen=True)
class SemanticGroup:
    name: str
    index_range: range


def semantic_groups(n: int = N_LANDMARKS) -> list[SemanticGroup]:
    if n != N_LANDMARKS:
        return []
    return [SemanticGroup(name, rng) for name, rng in GROUPS.items()]


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Ordered (n, 2) array of normalized points.

    ``clamped`` records whether validation pulled any coordinate back
    into [0, 1].
    """

    points: np.ndarray
    n: int = N_LANDMARKS
    clamped: bool = field(default=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.n, self.points.tobytes()))

    def group(self, name: str) -> np.ndarray:
        return self.points[GROUPS[name]]

    def centroid(self, name: str | None = None) -> np.ndarray:
        pts = self.points if name is None else self.group(name)
        return pts.mean(axis=0)

    def to_pixels(self, resolution) -> np.ndarray:
        h, w = _as_hw(resolution)
        return self.points * np.array([w, h], dtype=np.float64)

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


def validate(raw_points, n: int = N_LANDMARKS) -> LandmarkSet:
    """Check count and finiteness, clamp the tolerance band, reject the rest.

    Values inside [-0.25, 1.25] but outside [0, 1] are clamped and the
    returned set is flagged ``clamped=True``.
    """
    pts = np.asarray(raw_points, dtype=np.float64)
    if pts.size == 0 and n == 0:
        return LandmarkSet(np.zeros((0, 2)), n=0)
    if pts.ndim != 2 or pts.shape[1] != 2:
        if pts.ndim == 1 and pts.size % 2 == 0 and pts.size // 2 == n:
            pts = pts.reshape(-1, 2)
        else:
            raise WrongCount(f"expected {n} (x, y) pairs, got array of shape {pts.shape}")
    if pts.shape[0] != n:
        raise WrongCount(f"expected {n} points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise NonFinite("landmark coordinates must be finite")
    lo, hi = CLAMP_BAND
    if np.any(pts < lo) or np.any(pts > hi):
        bad = np.argwhere((pts < lo) | (pts > hi))[0]
        raise OutOfRange(
            f"point {bad[0]} coordinate {pts[bad[0], bad[1]]:.4f} outside [{lo}, {hi}]"
        )
    clipped = np.clip(pts, 0.0, 1.0)
    was_clamped = bool(np.any(clipped != pts))
    return LandmarkSet(clipped, n=n, clamped=was_clamped)


def interocular_distance(lm: LandmarkSet) -> float:
    """Distance between the outer eye corners (points 36 and 45)."""
    if lm.n != N_LANDMARKS:
        raise DegenerateFace(f"inter-ocular distance needs {N_LANDMARKS} points, got {lm.n}")
    d = float(np.hypot(*(lm.points[45] - lm.points[36])))
    if d < 1e-6:
        raise DegenerateFace(f"outer eye corners coincide (distance {d:.2e})")
    return d


# --------------------------------------------------------------------------- io


def to_json_dict(lm: LandmarkSet) -> dict:
    return {"version": FORMAT_VERSION, "n": lm.n, "normalized": True, "points": lm.to_list()}


def from_json_dict(obj: dict) -> LandmarkSet:
    version = obj.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported landmark file version {version!r}")
    if obj.get("normalized") is not True:
        raise UnsupportedVersion("only normalized landmark files are supported")
    return validate(obj["points"], n=int(obj["n"]))


def save_landmarks(lm: LandmarkSet, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(lm)))


def load_landmarks(path) -> LandmarkSet:
    return from_json_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------- rasterize


@dataclass(frozen=True)
class RasterSpec:
    resolution: tuple[int, int] = (64, 64)
    stroke_radius_px: float = 1.0
    per_group_channel_colors: dict = field(default_factory=lambda: dict(DEFAULT_GROUP_COLORS))
    draw_polylines: bool = True
    line_radius_px: float = 0.5


def _as_hw(resolution) -> tuple[int, int]:
    if isinstance(resolution, (int, np.integer)):
        return int(resolution), int(resolution)
    h, w = resolution
    return int(h), int(w)


def _segment_distance(yy, xx, p, q):
    d = q - p
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(xx - p[0], yy - p[1])
    t = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(xx - (p[0] + t * d[0]), yy - (p[1] + t * d[1]))


def rasterize(lm: LandmarkSet, spec: RasterSpec | None = None) -> np.ndarray:
    """Draw the landmark set as an (H, W, 3) float image in [0, 1].

    Each semantic group is painted in its own color: filled discs of
    ``stroke_radius_px`` at the points and, optionally, thin polylines
    between consecutive points of a group. Groups are painted in index
    order, later groups overwrite earlier ones.
    """
    spec = spec or RasterSpec()
    h, w = _as_hw(spec.resolution)
    if h < 8 or w < 8:
        raise BadResolution(f"raster resolution must be at least 8x8, got {h}x{w}")
    img = np.zeros((h, w, 3), dtype=np.float32)
    if lm.n == 0:
        return img
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    px = lm.to_pixels((h, w))
    r = float(spec.stroke_radius_px)
    if lm.n == N_LANDMARKS:
        groups = [(name, list(idx)) for name, idx in GROUPS.items()]
    else:
        groups = [("jaw", list(range(lm.n)))]
    # the pixel nearest each landmark is always painted, whatever the radius
    nearest = np.clip(np.rint(px), 0, [w - 1, h - 1]).astype(int)
    for name, idx in groups:
        color = np.asarray(spec.per_group_channel_colors[name], dtype=np.float32)
        mask = np.zeros((h, w), dtype=bool)
        for i in idx:
            mask |= (xx - px[i, 0]) ** 2 + (yy - px[i, 1]) ** 2 <= r * r
            mask[nearest[i, 1], nearest[i, 0]] = True
        if spec.draw_polylines:
            lr = min(spec.line_radius_px, r)
            for a, b in zip(idx[:-1], idx[1:]):
                mask |= _segment_distance(yy, xx, px[a], px[b]) <= lr
        img[mask] = color
    return img
