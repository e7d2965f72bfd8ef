"""NME, failure rate, AUC and CED metrics for landmark predictions."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CountMismatch, DegenerateFace, EmptyList
from .landmarks import LandmarkSet, interocular_distance

DEFAULT_THRESHOLD = 0.10


def _normalizer(gt: LandmarkSet, normalizer: str) -> float:
    if normalizer == "interocular":
        return interocular_distance(gt)
    if normalizer == "bbox_diagonal":
        span = gt.points.max(axis=0) - gt.points.min(axis=0)
        d = float(np.hypot(*span))
        if d < 1e-6:
            raise DegenerateFace("landmark bounding box is degenerate")
        return d
    raise ValueError(f"unknown normalizer {normalizer!r}")


def nme(pred: LandmarkSet, gt: LandmarkSet, normalizer: str = "interocular", norm_value: float | None = None) -> float:
    """Mean point-to-point error divided by the ground-truth face scale.

    ``norm_value`` overrides the normalizer; it exists for point sets that
    are not 68-point faces.
    """
    if pred.n != gt.n:
        raise CountMismatch(f"prediction has {pred.n} points, ground truth {gt.n}")
    d = norm_value if norm_value is not None else _normalizer(gt, normalizer)
    if d < 1e-6:
        raise DegenerateFace(f"normalizer {d:.2e} too small")
    err = np.linalg.norm(pred.points - gt.points, axis=1)
    return float(err.mean() / d)


def failure_rate(nmes, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of samples whose NME is strictly above ``threshold``."""
    x = np.asarray(nmes, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyList("failure_rate needs at least one NME value")
    return float(np.count_nonzero(x > threshold) / x.size)


def ced_curve(nmes) -> list[tuple[float, float]]:
    """Exact cumulative error distribution as (error, fraction <= error) steps."""
    x = np.sort(np.asarray(nmes, dtype=np.float64).ravel())
    if x.size == 0:
        raise EmptyList("ced needs at least one NME value")
    vals, counts = np.unique(x, return_counts=True)
    frac = np.cumsum(counts) / x.size
    return [(0.0, 0.0)] + [(float(v), float(f)) for v, f in zip(vals, frac)]


def auc(nmes, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Area under CED(e) = P(nme <= e) on [0, threshold], divided by threshold.

    CED is a right-continuous step function, so the integral is exact:
    each sample with nme e < threshold contributes (threshold - e).
    """
    x = np.asarray(nmes, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyList("auc needs at least one NME value")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    contrib = np.clip(threshold - x, 0.0, threshold)
    return float(contrib.sum() / (x.size * threshold))


@dataclass
class MetricsReport:
    nme_mean: float
    fr_at_threshold: float
    auc_at_threshold: float
    threshold: float
    per_sample_nme: list
    ced: list
    normalizer: str = "interocular"
    config_hash: str = ""
    dataset_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, report_path, ced_csv_path=None) -> None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        if ced_csv_path is not None:
            write_ced_csv(self.ced, ced_csv_path)


def report_from_nmes(nmes, threshold: float = DEFAULT_THRESHOLD, **kw) -> MetricsReport:
    x = [float(v) for v in nmes]
    if not x:
        raise EmptyList("cannot build a report from zero samples")
    return MetricsReport(
        nme_mean=float(np.mean(x)),
        fr_at_threshold=failure_rate(x, threshold),
        auc_at_threshold=auc(x, threshold),
        threshold=threshold,
        per_sample_nme=x,
        ced=[list(p) for p in ced_curve(x)],
        **kw,
    )


def compare_landmarks(preds, gts, threshold: float = DEFAULT_THRESHOLD, normalizer: str = "interocular", **kw) -> MetricsReport:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise CountMismatch(f"{len(preds)} predictions for {len(gts)} ground-truth sets")
    return report_from_nmes(
        [nme(p, g, normalizer) for p, g in zip(preds, gts)], threshold, normalizer=normalizer, **kw
    )


def write_ced_csv(ced, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["error", "fraction"])
        for e, f in ced:
            w.writerow([repr(float(e)), repr(float(f))])


def read_ced_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(float(e), float(f)) for e, f in rows[1:]]


def plot_ced(curves: dict, out_svg, threshold: float = DEFAULT_THRESHOLD) -> None:
    """Write an SVG with one CED step curve per entry of ``curves`` (label -> ced)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ldlab"
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for label, ced in curves.items():
        e = [p[0] for p in ced] + [max(threshold, ced[-1][0])]
        f = [p[1] for p in ced] + [ced[-1][1]]
        ax.step(e, f, where="post", label=label)
    ax.set_xlim(0, threshold)
    ax.set_ylim(0, 1)
    ax.set_xlabel("NME")
    ax.set_ylabel("fraction of images")
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    Path(out_svg).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)


def sha256_of(obj) -> str:
    if isinstance(obj, (bytes, bytearray)):
        data = bytes(obj)
    else:
        data = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha256(data).hexdigest()


def manifest_hash(manifest) -> str:
    """Hash of the manifest text plus every referenced image and landmark file."""
    h = hashlib.sha256(Path(manifest.path).read_bytes())
    for rec in manifest.records:
        h.update((manifest.root / rec.image_path).read_bytes())
        h.update((manifest.root / rec.landmarks_path).read_bytes())
    return h.hexdigest()


def evaluate(detector_ckpt, manifest, threshold: float = DEFAULT_THRESHOLD, normalizer: str = "interocular",
             predictor=None) -> MetricsReport:
    """Run a detector over every record of a manifest and aggregate the metrics.

    ``predictor`` (images -> (N, n, 2) points) replaces the checkpoint's
    detector when given; the checkpoint still supplies the config hash.
    """
    from .checkpoint import load_checkpoint
    from .exceptions import IoError
    from .procedural import read_manifest

    m = manifest if hasattr(manifest, "records") else read_manifest(manifest)
    if len(m) == 0:
        raise EmptyList(f"manifest {m.path} has no records")
    header, _ = load_checkpoint(detector_ckpt, "detector")
    try:
        images, gts, _ = m.arrays()
        data_hash = manifest_hash(m)
    except OSError as e:
        raise IoError(f"cannot read records of {m.path}: {e}") from e
    if predictor is None:
        from .estimators import LandmarkDetector

        predictor = LandmarkDetector.load(detector_ckpt)[0].predict
    preds = predictor(images)
    return compare_landmarks(
        [LandmarkSet(p, n=len(p)) for p in preds],
        [LandmarkSet(g, n=len(g)) for g in gts],
        threshold,
        normalizer,
        config_hash=sha256_of(header["config"]),
        dataset_hash=data_hash,
    )
