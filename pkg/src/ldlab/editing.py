"""Geometric landmark edits and the two-edit plans used for dataset generation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import landmarks as lmk
from .exceptions import IllegalStrength, TooFewKinds, UnknownKind
from .landmarks import GROUPS, LandmarkSet

KINDS = (
    "chubby",
    "linear_transform",
    "open_eyes",
    "raised_eyebrow",
    "stretched_nostrils",
    "component_shift",
)

# legal strength ranges; sampling ranges must sit inside these
LEGAL_STRENGTH = {
    "chubby": (-0.15, 0.25),
    "linear_transform": (0.0, 1.0),
    "open_eyes": (-0.5, 1.0),
    "raised_eyebrow": (0.0, 0.3),
    "stretched_nostrils": (0.0, 0.6),
    "component_shift": (0.0, 0.05),
}

LINEAR_RANGES = {
    "theta_deg": (-10.0, 10.0),
    "scale": (0.85, 1.15),
    "shear": (-0.1, 0.1),
    "offset": (-0.05, 0.05),
}
DET_RANGE = (0.5, 2.0)

SHIFT_COMPONENTS = ("left_eye", "right_eye", "nose", "mouth")
SIDES = ("left", "right", "both")
NOSE_BASE = range(31, 36)


@dataclass(frozen=True)
class EditOp:
    """One landmark edit.

    ``params`` by kind:

    - ``linear_transform``: ``matrix`` (2x2) and ``offset`` (2,). The strength
      blends from the identity (0) to the full transform (1).
    - ``component_shift``: ``component`` and unit ``direction``; the strength
      is the shift magnitude in normalized units.
    - ``open_eyes`` / ``raised_eyebrow``: ``side`` in {left, right, both}.
    """

    kind: str
    strength: float
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strength": float(self.strength), "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "EditOp":
        return cls(kind=d["kind"], strength=float(d["strength"]), params=dict(d.get("params", {})))


@dataclass(frozen=True)
class EditPlan:
    ops: tuple
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if len(self.ops) != 2 or self.ops[0].kind == self.ops[1].kind:
            raise TooFewKinds("an edit plan holds exactly two ops of distinct kinds")

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "ops": [op.to_dict() for op in self.ops]}

    @classmethod
    def from_dict(cls, d: dict) -> "EditPlan":
        return cls(ops=tuple(EditOp.from_dict(o) for o in d["ops"]), seed=int(d["seed"]))


@dataclass
class EditConfig:
    """Per-kind sampling ranges and the set of kinds the sampler may draw."""

    strength_ranges: dict = field(
        default_factory=lambda: {
            "chubby": (-0.15, 0.25),
            "linear_transform": (1.0, 1.0),
            "open_eyes": (-0.5, 1.0),
            "raised_eyebrow": (0.0, 0.3),
            "stretched_nostrils": (0.0, 0.6),
            "component_shift": (0.0, 0.05),
        }
    )
    enabled_kinds: tuple = KINDS


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def linear_matrix(theta_deg=0.0, sx=1.0, sy=1.0, shear=0.0) -> np.ndarray:
    """rotation(theta) @ scale(sx, sy) @ shear(k)."""
    th = math.radians(theta_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    scale = np.diag([sx, sy])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    return rot @ scale @ sh


def _check_strength(op: EditOp):
    if op.kind not in LEGAL_STRENGTH:
        raise UnknownKind(f"unknown edit kind {op.kind!r}")
    lo, hi = LEGAL_STRENGTH[op.kind]
    s = float(op.strength)
    if not (math.isfinite(s) and lo - 1e-12 <= s <= hi + 1e-12):
        raise IllegalStrength(f"{op.kind} strength {s} outside [{lo}, {hi}]")


def _sides(op, left: str, right: str) -> list[str]:
    side = op.params.get("side", "both")
    if side not in SIDES:
        raise IllegalStrength(f"{op.kind}: side must be one of {SIDES}, got {side!r}")
    return {"left": [left], "right": [right], "both": [left, right]}[side]


def edit_points(points: np.ndarray, op: EditOp) -> np.ndarray:
    """Apply ``op`` to a raw (68, 2) array without clamping."""
    _check_strength(op)
    pts = np.array(points, dtype=np.float64)
    s = float(op.strength)
    kind = op.kind

    if kind == "chubby":
        idx = list(GROUPS["jaw"])
        c = pts[idx].mean(axis=0)
        pts[idx] = pts[idx] + s * (pts[idx] - c)

    elif kind == "linear_transform":
        A = np.asarray(op.params.get("matrix", np.eye(2)), dtype=np.float64).reshape(2, 2)
        b = np.asarray(op.params.get("offset", (0.0, 0.0)), dtype=np.float64).reshape(2)
        det = float(np.linalg.det(A))
        if not DET_RANGE[0] <= det <= DET_RANGE[1]:
            raise IllegalStrength(f"linear_transform determinant {det:.3f} outside {DET_RANGE}")
        # written as a perturbation of the identity so strength 0 is exact
        c = pts.mean(axis=0)
        pts = pts + (pts - c) @ (s * (A - np.eye(2))).T + s * b

    elif kind == "open_eyes":
        for eye in _sides(op, "left_eye", "right_eye"):
            idx = list(GROUPS[eye])
            cy = pts[idx, 1].mean()
            pts[idx, 1] = pts[idx, 1] + s * (pts[idx, 1] - cy)

    elif kind == "raised_eyebrow":
        d_io = float(np.hypot(*(pts[45] - pts[36])))
        for brow in _sides(op, "left_brow", "right_brow"):
            pts[list(GROUPS[brow]), 1] -= s * d_io

    elif kind == "stretched_nostrils":
        idx = list(NOSE_BASE)
        cx = pts[idx, 0].mean()
        pts[idx, 0] = pts[idx, 0] + s * (pts[idx, 0] - cx)

    elif kind == "component_shift":
        comp = op.params.get("component", "nose")
        if comp not in SHIFT_COMPONENTS:
            raise IllegalStrength(f"component_shift component must be one of {SHIFT_COMPONENTS}")
        u = np.asarray(op.params.get("direction", (1.0, 0.0)), dtype=np.float64)
        norm = float(np.hypot(*u))
        if norm == 0.0:
            raise IllegalStrength("component_shift direction must be non-zero")
        pts[list(GROUPS[comp])] += s * u / norm

    return pts


def apply_edit(lm: LandmarkSet, op: EditOp) -> LandmarkSet:
    return lmk.validate(edit_points(lm.points, op), n=lm.n)


def apply_plan(lm: LandmarkSet, plan: EditPlan) -> LandmarkSet:
    # clamping happens after each op, so a clamped intermediate feeds the next op
    out = lm
    for op in plan.ops:
        out = apply_edit(out, op)
    return out


def _sample_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "linear_transform":
        A = linear_matrix(
            rng.uniform(*LINEAR_RANGES["theta_deg"]),
            rng.uniform(*LINEAR_RANGES["scale"]),
            rng.uniform(*LINEAR_RANGES["scale"]),
            rng.uniform(*LINEAR_RANGES["shear"]),
        )
        b = rng.uniform(*LINEAR_RANGES["offset"], size=2)
        return {"matrix": A.tolist(), "offset": b.tolist()}
    if kind == "component_shift":
        comp = SHIFT_COMPONENTS[int(rng.integers(len(SHIFT_COMPONENTS)))]
        ang = rng.uniform(0.0, 2.0 * math.pi)
        return {"component": comp, "direction": [math.cos(ang), math.sin(ang)]}
    if kind in ("open_eyes", "raised_eyebrow"):
        return {"side": SIDES[int(rng.integers(len(SIDES)))]}
    return {}


def sample_edit_plan(rng_seed: int, cfg: EditConfig | None = None) -> EditPlan:
    """Draw two distinct kinds uniformly without replacement, then their strengths."""
    cfg = cfg or EditConfig()
    kinds = [k for k in KINDS if k in set(cfg.enabled_kinds)]
    unknown = set(cfg.enabled_kinds) - set(KINDS)
    if unknown:
        raise UnknownKind(f"unknown edit kinds {sorted(unknown)}")
    if len(kinds) < 2:
        raise TooFewKinds(f"need at least two enabled kinds, got {kinds}")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(kinds), size=2, replace=False)
    ops = []
    for i in chosen:
        kind = kinds[int(i)]
        lo, hi = cfg.strength_ranges[kind]
        llo, lhi = LEGAL_STRENGTH[kind]
        if lo < llo or hi > lhi or lo > hi:
            raise IllegalStrength(f"sampling range {(lo, hi)} for {kind} not inside legal {(llo, lhi)}")
        ops.append(EditOp(kind, float(rng.uniform(lo, hi)), _sample_params(kind, rng)))
    return EditPlan(ops=tuple(ops), seed=int(rng_seed))
