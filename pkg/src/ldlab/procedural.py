"""Procedural toy-face domain.

Stands in for real face photographs (base domain, style 0) and for the
small multi-domain set (styles 1..25). Features are drawn so that each
feature's pixel-mass centroid lands on its landmark-group centroid, which
makes :func:`measure_alignment` a ground-truth oracle for image/landmark
alignment.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.draw import polygon as fill_polygon

from . import landmarks as lmk
from .editing import EditConfig, EditPlan, apply_plan, sample_edit_plan
from .exceptions import BadResolution, FeatureNotFound, IoError
from .landmarks import GROUPS, LandmarkSet
from .seeding import derive_seed

N_STYLES = 25
BASE_STYLE = 0
DEFAULT_RESOLUTION = 64

PALETTE_ROLES = ("background", "skin", "outline", "brow", "eye", "nose", "mouth")
MEASURED = ("left_eye", "right_eye", "nose", "mouth")


def _template() -> np.ndarray:
    pts = np.zeros((68, 2))
    # jaw: lower half of an ellipse from the left temple to the right temple
    phi = np.linspace(0.0, math.pi, 17)
    pts[0:17, 0] = 0.5 - 0.30 * np.cos(phi)
    pts[0:17, 1] = 0.45 + 0.40 * np.sin(phi)
    # brows: shallow arcs
    for start, cx in ((17, 0.35), (22, 0.65)):
        u = np.linspace(-1.0, 1.0, 5)
        pts[start:start + 5, 0] = cx + 0.09 * u
        pts[start:start + 5, 1] = 0.33 - 0.025 * (1 - u ** 2)
    # nose bridge 27-30 and base 31-35
    pts[27:31, 0] = 0.5
    pts[27:31, 1] = np.linspace(0.41, 0.55, 4)
    pts[31:36, 0] = np.linspace(0.445, 0.555, 5)
    pts[31:36, 1] = 0.60 + 0.012 * (1 - np.linspace(-1, 1, 5) ** 2)

    def eye(cx, outer_left):
        # corner, two upper-lid points, corner, two lower-lid points
        ang = np.array([180.0, 120.0, 60.0, 0.0, -60.0, -120.0])
        if not outer_left:
            ang = 180.0 - ang
        a = np.radians(ang)
        return np.stack([cx + 0.065 * np.cos(a), 0.43 - 0.03 * np.sin(a)], axis=1)

    pts[36:42] = eye(0.36, True)
    pts[42:48] = eye(0.64, False)
    # mouth: outer lip 48-59 and inner lip 60-67, both clockwise from the left corner
    a = np.radians(np.linspace(180.0, -150.0, 12))
    pts[48:60] = np.stack([0.5 + 0.11 * np.cos(a), 0.74 - 0.045 * np.sin(a)], axis=1)
    a = np.radians(np.linspace(180.0, -135.0, 8))
    pts[60:68] = np.stack([0.5 + 0.07 * np.cos(a), 0.74 - 0.015 * np.sin(a)], axis=1)
    return pts


TEMPLATE = _template()


def sample_base_landmarks(rng_seed: int, perturbation: float = 1.0) -> LandmarkSet:
    """Template face plus a bounded, smooth random perturbation.

    ``perturbation`` scales every random deviation; 0 returns the template.
    """
    r = np.random.default_rng(rng_seed)
    p = float(perturbation)
    pts = TEMPLATE.copy()
    # per-group rigid jitter and size changes
    for name, idx in GROUPS.items():
        idx = list(idx)
        c = pts[idx].mean(axis=0)
        scale = 1.0 + p * r.uniform(-0.12, 0.12, size=2)
        shift = p * r.uniform(-0.012, 0.012, size=2)
        pts[idx] = c + (pts[idx] - c) * scale + shift
    # smooth low-frequency bend of the jaw line
    k = np.linspace(0.0, math.pi, 17)
    bend = p * (r.uniform(-0.02, 0.02) * np.sin(k) + r.uniform(-0.01, 0.01) * np.sin(2 * k))
    pts[0:17, 1] += bend
    # global similarity transform
    th = math.radians(p * r.uniform(-6.0, 6.0))
    s = 1.0 + p * r.uniform(-0.06, 0.06)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]) * s
    c = np.array([0.5, 0.55])
    pts = (pts - c) @ rot.T + c + p * r.uniform(-0.03, 0.03, size=2)
    return lmk.validate(pts)


# ---------------------------------------------------------------------- styles


@dataclass(frozen=True)
class StyleSpec:
    style_id: int
    palette: dict
    line_width_px: float
    exaggeration: float

    def color_array(self) -> np.ndarray:
        return np.array([self.palette[k] for k in PALETTE_ROLES], dtype=np.float64)


_BASE_PALETTE = {
    "background": (196, 204, 212),
    "skin": (232, 190, 160),
    "outline": (90, 60, 50),
    "brow": (70, 45, 30),
    "eye": (40, 50, 150),
    "nose": (60, 150, 70),
    "mouth": (200, 40, 50),
}

# prototype hue families for the measured features; styles jitter around them
_FEATURE_PROTOS = {"eye": (40, 50, 150), "nose": (60, 150, 70), "mouth": (200, 40, 50)}
_MIN_SEPARATION = 80.0


def _style(style_id: int) -> StyleSpec:
    if style_id == BASE_STYLE:
        return StyleSpec(BASE_STYLE, dict(_BASE_PALETTE), 1.0, 1.0)
    r = np.random.default_rng(derive_seed(7919, "style", style_id))
    while True:
        pal = {}
        for role, proto in _FEATURE_PROTOS.items():
            pal[role] = tuple(int(v) for v in np.clip(np.array(proto) + r.integers(-35, 36, size=3), 0, 255))
        pal["background"] = tuple(int(v) for v in r.integers(0, 256, size=3))
        pal["skin"] = tuple(int(v) for v in r.integers(120, 256, size=3))
        pal["outline"] = tuple(int(v) for v in r.integers(0, 90, size=3))
        pal["brow"] = tuple(int(v) for v in r.integers(0, 110, size=3))
        cols = np.array([pal[k] for k in PALETTE_ROLES], dtype=np.float64)
        d = np.linalg.norm(cols[:, None] - cols[None], axis=-1)
        # measured features must be far from every other palette entry
        measured = [PALETTE_ROLES.index(k) for k in ("eye", "nose", "mouth", "skin")]
        ok = all(d[i, j] >= _MIN_SEPARATION for i in measured for j in range(len(cols)) if i != j)
        if ok:
            break
    lw = float(r.choice([1.0, 1.5, 2.0, 2.5]))
    ex = float(np.round(r.uniform(0.8, 1.35), 3))
    return StyleSpec(style_id, pal, lw, ex)


STYLES: dict[int, StyleSpec] = {i: _style(i) for i in range(0, N_STYLES + 1)}


def get_style(style) -> StyleSpec:
    if isinstance(style, StyleSpec):
        return style
    if style is None:
        return STYLES[BASE_STYLE]
    return STYLES[int(style)]


# -------------------------------------------------------------------- drawing


def _ellipse_mask(h, w, cx, cy, rx, ry):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _thick_polyline(h, w, pts, radius):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for p, q in zip(pts[:-1], pts[1:]):
        mask |= lmk._segment_distance(yy, xx, p, q) <= radius
    return mask


def feature_ellipses(lm: LandmarkSet, resolution, exaggeration: float = 1.0) -> dict:
    """Ellipse (cx, cy, rx, ry) in pixels for each measured feature.

    Centers are exactly the landmark-group centroids.
    """
    h, w = lmk._as_hw(resolution)
    px = lm.to_pixels((h, w))
    out = {}
    for name in ("left_eye", "right_eye"):
        g = px[list(GROUPS[name])]
        c = g.mean(axis=0)
        rx = max(0.5 * np.ptp(g[:, 0]) * exaggeration, 1.5)
        ry = max(0.5 * np.ptp(g[:, 1]) * exaggeration, 1.2)
        out[name] = (c[0], c[1], rx, ry)
    # nose: width from the base, height a fraction of the bridge-to-base span
    g = px[list(GROUPS["nose"])]
    base = px[31:36]
    c = g.mean(axis=0)
    out["nose"] = (c[0], c[1], max(0.45 * np.ptp(base[:, 0]) * exaggeration, 1.5),
                   max(0.28 * np.ptp(g[:, 1]) * exaggeration, 1.5))
    g = px[list(GROUPS["mouth"])]
    c = g.mean(axis=0)
    out["mouth"] = (c[0], c[1], max(0.5 * np.ptp(g[:, 0]) * exaggeration, 1.5),
                    max(0.5 * np.ptp(g[:, 1]) * exaggeration, 1.2))
    return out


def render_face(lm: LandmarkSet, style=None, resolution=DEFAULT_RESOLUTION) -> np.ndarray:
    """Render a toy face as an (H, W, 3) uint8 RGB image."""
    h, w = lmk._as_hw(resolution)
    if h < 8 or w < 8:
        raise BadResolution(f"render resolution must be at least 8x8, got {h}x{w}")
    st = get_style(style)
    pal = {k: np.array(v, dtype=np.uint8) for k, v in st.palette.items()}
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = pal["background"]
    px = lm.to_pixels((h, w))

    # head: jaw plus a forehead arc closing over the top
    jaw = px[0:17]
    mid = 0.5 * (jaw[0] + jaw[-1])
    half = 0.5 * float(np.hypot(*(jaw[-1] - jaw[0])))
    ang = math.atan2(jaw[-1][1] - jaw[0][1], jaw[-1][0] - jaw[0][0])
    t = np.linspace(0.0, math.pi, 15)[1:-1]
    local = np.stack([np.cos(t) * half, -np.sin(t) * half * 0.85], axis=1)
    rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    forehead = local @ rot.T + mid
    head = np.concatenate([jaw, forehead], axis=0)
    rr, cc = fill_polygon(head[:, 1], head[:, 0], shape=(h, w))
    img[rr, cc] = pal["skin"]
    lw = 0.5 * st.line_width_px
    img[_thick_polyline(h, w, jaw, lw)] = pal["outline"]
    for brow in ("left_brow", "right_brow"):
        img[_thick_polyline(h, w, px[list(GROUPS[brow])], lw + 0.25)] = pal["brow"]

    ell = feature_ellipses(lm, (h, w), st.exaggeration)
    for name, role in (("nose", "nose"), ("mouth", "mouth"), ("left_eye", "eye"), ("right_eye", "eye")):
        img[_ellipse_mask(h, w, *ell[name])] = pal[role]
    return img


# ----------------------------------------------------------------- alignment


@dataclass
class AlignmentReport:
    per_group: dict
    mean: float

    def to_dict(self):
        return {"per_group": dict(self.per_group), "mean": self.mean}


def classify_pixels(image: np.ndarray, style=None, max_distance: float = 60.0) -> np.ndarray:
    """Label each pixel with the index of its nearest palette role, -1 if none is close."""
    st = get_style(style)
    cols = st.color_array()
    image = np.asarray(image)
    x = image.astype(np.float64)
    if np.issubdtype(image.dtype, np.floating):
        x = x * 255.0
    d = np.linalg.norm(x[:, :, None, :] - cols[None, None], axis=-1)
    lab = d.argmin(axis=-1)
    lab[d.min(axis=-1) > max_distance] = -1
    return lab


def _largest_component_centroid(mask: np.ndarray):
    lab, n = ndimage.label(mask)
    if n == 0:
        return None
    sizes = ndimage.sum(mask, lab, index=np.arange(1, n + 1))
    k = int(np.argmax(sizes)) + 1
    yy, xx = np.nonzero(lab == k)
    return np.array([xx.mean(), yy.mean()])


def measure_alignment(image, lm: LandmarkSet, style=None, max_distance: float = 60.0) -> AlignmentReport:
    """Locate eyes, nose and mouth by palette-color mass; report centroid errors in pixels.

    Each feature is the largest connected blob of its color class. The two
    eyes share a color and are separated by the vertical line through the
    midpoint of their landmark centroids.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    lab = classify_pixels(img, style, max_distance)
    px = lm.to_pixels((h, w))
    targets = {name: px[list(GROUPS[name])].mean(axis=0) for name in MEASURED}
    split = 0.5 * (targets["left_eye"][0] + targets["right_eye"][0])
    xx = np.arange(w)[None, :]
    masks = {
        "left_eye": (lab == PALETTE_ROLES.index("eye")) & (xx < split),
        "right_eye": (lab == PALETTE_ROLES.index("eye")) & (xx >= split),
        "nose": lab == PALETTE_ROLES.index("nose"),
        "mouth": lab == PALETTE_ROLES.index("mouth"),
    }
    per = {}
    for name in MEASURED:
        c = _largest_component_centroid(masks[name])
        if c is None:
            raise FeatureNotFound(f"no pixels of the {name} color class found")
        per[name] = float(np.hypot(*(c - targets[name])))
    return AlignmentReport(per_group=per, mean=float(np.mean(list(per.values()))))


# ------------------------------------------------------------------- corpora


@dataclass
class DatasetRecord:
    image_path: str
    landmarks_path: str
    style_id: int
    edit_plan: dict | None
    seed: int
    provenance: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "image_path": self.image_path,
            "landmarks_path": self.landmarks_path,
            "style_id": int(self.style_id),
            "edit_plan": self.edit_plan,
            "seed": int(self.seed),
        }
        if self.provenance is not None:
            d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        return cls(
            image_path=d["image_path"],
            landmarks_path=d["landmarks_path"],
            style_id=int(d["style_id"]),
            edit_plan=d.get("edit_plan"),
            seed=int(d["seed"]),
            provenance=d.get("provenance"),
        )


@dataclass
class Manifest:
    path: Path
    records: list = field(default_factory=list)

    @property
    def root(self) -> Path:
        return self.path.parent

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def image(self, rec: DatasetRecord) -> np.ndarray:
        return load_png(self.root / rec.image_path)

    def landmarks(self, rec: DatasetRecord) -> LandmarkSet:
        return lmk.load_landmarks(self.root / rec.landmarks_path)

    def arrays(self):
        """Stack every record into (images uint8 NxHxWx3, points Nx68x2, style ids N)."""
        imgs = np.stack([self.image(r) for r in self.records]) if self.records else np.zeros((0, 0, 0, 3), np.uint8)
        pts = np.stack([self.landmarks(r).points for r in self.records]) if self.records else np.zeros((0, 68, 2))
        styles = np.array([r.style_id for r in self.records], dtype=np.int64)
        return imgs, pts, styles


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_manifest(records, path) -> Manifest:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(f"cannot write manifest {path}: {e}") from e
    return Manifest(path, list(records))


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e
    return Manifest(path, [DatasetRecord.from_dict(json.loads(l)) for l in lines if l.strip()])


def write_pair(out_dir: Path, stem: str, img: np.ndarray, lm: LandmarkSet) -> tuple[str, str]:
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "landmarks").mkdir(parents=True, exist_ok=True)
        save_png(img, out_dir / "images" / f"{stem}.png")
        lmk.save_landmarks(lm, out_dir / "landmarks" / f"{stem}.json")
    except OSError as e:
        raise IoError(f"cannot write record {stem} under {out_dir}: {e}") from e
    return f"images/{stem}.png", f"landmarks/{stem}.json"


def build_stage1_corpus(n: int, rng_seed: int, out_dir, resolution=DEFAULT_RESOLUTION) -> Manifest:
    """Base-domain (style 0), unedited face/landmark pairs."""
    if n < 1:
        raise ValueError("stage-1 corpus needs n >= 1")
    out_dir = Path(out_dir)
    records = []
    for i in range(n):
        seed_i = derive_seed(rng_seed, "stage1", i)
        lm = sample_base_landmarks(seed_i)
        ip, lp = write_pair(out_dir, f"s1_{i:05d}", render_face(lm, BASE_STYLE, resolution), lm)
        records.append(DatasetRecord(ip, lp, BASE_STYLE, None, seed_i))
    return write_manifest(records, out_dir / "manifest.jsonl")


def build_stage2_corpus(per_style: int = 32, styles=None, rng_seed: int = 0, out_dir=".",
                        resolution=DEFAULT_RESOLUTION, edit_cfg: EditConfig | None = None) -> Manifest:
    """Small multi-domain corpus: exaggerated (two-edit) faces rendered in each style."""
    styles = list(range(1, N_STYLES + 1)) if styles is None else [int(s) for s in styles]
    out_dir = Path(out_dir)
    records = []
    for s in styles:
        for j in range(per_style):
            seed_i = derive_seed(rng_seed, "stage2", s, j)
            base = sample_base_landmarks(seed_i)
            plan = sample_edit_plan(derive_seed(seed_i, "edit"), edit_cfg)
            lm = apply_plan(base, plan)
            ip, lp = write_pair(out_dir, f"s2_{s:02d}_{j:04d}", render_face(lm, s, resolution), lm)
            records.append(DatasetRecord(ip, lp, s, plan.to_dict(), seed_i))
    return write_manifest(records, out_dir / "manifest.jsonl")
