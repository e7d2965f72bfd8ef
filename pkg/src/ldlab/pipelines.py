"""Training and generation pipelines over manifests and checkpoint files.

Checkpoints carry a stage tag in their metadata and the pipeline enforces
the order init -> stage 1 -> stage 2 -> synthetic data. Every run appends
JSON lines (step, loss, lr, wall_ms) to ``run_log.jsonl`` in its output
directory and saves checkpoints named ``{stage}-{step}.ckpt``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import procedural as P
from .checkpoint import load_checkpoint
from .config import AutoencoderTrainConfig, DetectorTrainConfig, SamplerConfig, TrainConfig
from .editing import EditConfig, EditPlan, apply_plan, sample_edit_plan
from .estimators import ConditionalDiffusion, LandmarkDetector, LatentAutoencoder, identity_autoencoder
from .evaluation import compare_landmarks
from .exceptions import (
    BadConfig,
    CheckpointMismatch,
    EmptyCorpus,
    FeatureNotFound,
    IncompatibleAutoencoder,
    IoError,
    WrongStage,
)
from .landmarks import LandmarkSet
from .seeding import derive_seed

RUN_LOG = "run_log.jsonl"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunLog:
    """Append-only JSON-lines log; one object per line, keys sorted."""

    def __init__(self, out_dir):
        self.path = Path(out_dir) / RUN_LOG
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def write(self, row: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_run_log(path) -> list[dict]:
    return [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]


def _load_manifest(path) -> P.Manifest:
    m = P.read_manifest(path)
    if len(m) == 0:
        raise EmptyCorpus(f"manifest {path} has no records")
    return m


def _callback(log: RunLog, out_dir: Path, stage: str, every: int, total: int, meta_fn):
    def cb(row, est):
        log.write({**row, "stage": stage})
        step = row["step"]
        if every and step % every == 0 and step != total:
            est.save(out_dir / f"{stage}-{step}.ckpt", meta_fn(step))

    return cb


# ------------------------------------------------------------------ diffusion


def _diffusion_estimator(cfg: TrainConfig, stage: str) -> ConditionalDiffusion:
    return ConditionalDiffusion(
        base_width=cfg.base_width,
        depth=cfg.depth,
        timestep_embedding_dim=cfg.timestep_embedding_dim,
        T=cfg.T,
        beta_start=cfg.beta_start,
        beta_end=cfg.beta_end,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        cfg_drop_prob=cfg.cfg_drop_prob,
        ema_decay=cfg.ema_decay,
        stroke_radius_px=cfg.stroke_radius_px,
        random_state=derive_seed(cfg.seed, stage),
    )


def _load_autoencoder(path, image_size: int) -> LatentAutoencoder:
    if path is None:
        return identity_autoencoder(image_size)
    try:
        ae_est, _ = LatentAutoencoder.load(path)
    except CheckpointMismatch as e:
        raise IncompatibleAutoencoder(f"{path}: {e}") from e
    if ae_est.image_size_ != image_size or image_size % ae_est.downsample_factor:
        raise IncompatibleAutoencoder(
            f"autoencoder trained at {ae_est.image_size_}px cannot encode {image_size}px images"
        )
    return ae_est


def _train_denoiser(stage: str, stage_tag, est, X, Y, styles, cfg: TrainConfig, out_dir, extra_meta, autoencoder=None):
    out_dir = Path(out_dir)
    log = RunLog(out_dir)

    def meta(step):
        return {"stage": stage_tag, "step": int(step), "seed": int(cfg.seed), "train": cfg.to_dict(), **extra_meta}

    total = getattr(est, "n_steps_total_", 0) + cfg.steps
    cb = _callback(log, out_dir, stage, cfg.checkpoint_every, total, meta)
    est.fit(X, Y, styles, autoencoder=autoencoder, callback=cb)
    path = out_dir / f"{stage}-{est.n_steps_total_}.ckpt"
    est.save(path, meta(est.n_steps_total_))
    return path


def train_stage1(corpus_manifest, autoencoder_ckpt, cfg: TrainConfig, out_dir) -> Path:
    """Base-domain training with the null style token; checkpoint stamped stage 1."""
    m = _load_manifest(corpus_manifest)
    X, Y, styles = m.arrays()
    if np.any(styles != P.BASE_STYLE):
        raise BadConfig("stage-1 corpus must be base-domain (style 0 only)")
    ae_est = _load_autoencoder(autoencoder_ckpt, int(X.shape[1]))
    est = _diffusion_estimator(cfg, "stage1")
    meta = {"corpus": str(corpus_manifest), "corpus_sha256": file_sha256(corpus_manifest)}
    return _train_denoiser("stage1", 1, est, X, Y, None, cfg, out_dir, meta, autoencoder=ae_est)


def train_stage2(stage1_ckpt, corpus_manifest, cfg: TrainConfig, out_dir) -> Path:
    """Multi-domain fine-tune of every parameter, style tokens dropped at ``cfg_drop_prob``."""
    est, header = ConditionalDiffusion.load(stage1_ckpt)
    if header["metadata"].get("stage") != 1:
        raise WrongStage(f"stage 2 needs a stage-1 checkpoint, got stage {header['metadata'].get('stage')!r}")
    m = _load_manifest(corpus_manifest)
    X, Y, styles = m.arrays()
    if np.any(styles < 1):
        raise BadConfig("stage-2 corpus must hold styled records (style ids >= 1)")
    est.set_params(
        warm_start=True,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        cfg_drop_prob=cfg.cfg_drop_prob,
        ema_decay=cfg.ema_decay,
        random_state=derive_seed(cfg.seed, "stage2"),
    )
    meta = {
        "corpus": str(corpus_manifest),
        "corpus_sha256": file_sha256(corpus_manifest),
        "parent_sha256": file_sha256(stage1_ckpt),
    }
    return _train_denoiser("stage2", 2, est, X, Y, styles, cfg, out_dir, meta)


def train_one_step(corpus_manifest, autoencoder_ckpt, cfg: TrainConfig, out_dir) -> Path:
    """Ablation baseline: train from initialization on the multi-domain corpus only."""
    m = _load_manifest(corpus_manifest)
    X, Y, styles = m.arrays()
    ae_est = _load_autoencoder(autoencoder_ckpt, int(X.shape[1]))
    est = _diffusion_estimator(cfg, "onestep")
    meta = {"corpus": str(corpus_manifest), "corpus_sha256": file_sha256(corpus_manifest)}
    return _train_denoiser("onestep", "onestep", est, X, Y, styles, cfg, out_dir, meta, autoencoder=ae_est)


def train_autoencoder(corpus_manifest, cfg: AutoencoderTrainConfig, out_dir) -> Path:
    m = _load_manifest(corpus_manifest)
    X, _, _ = m.arrays()
    out_dir = Path(out_dir)
    log = RunLog(out_dir)
    est = LatentAutoencoder(cfg.downsample_factor, cfg.latent_channels, cfg.base_width, cfg.steps,
                            cfg.batch_size, cfg.learning_rate, derive_seed(cfg.seed, "autoencoder"))
    est.fit(X, callback=lambda row: log.write({**row, "step": row["step"] + 1, "stage": "autoencoder"}))
    path = out_dir / f"autoencoder-{cfg.steps}.ckpt"
    est.save(path, {"stage": "autoencoder", "step": cfg.steps, "seed": cfg.seed, "train": cfg.to_dict()})
    return path


# ----------------------------------------------------------------- generation


def _landmark_pool(manifest_path) -> tuple[P.Manifest, np.ndarray]:
    m = _load_manifest(manifest_path)
    return m, np.stack([m.landmarks(r).points for r in m.records])


def _generation_item(seed: int, style: int, j: int, pool_size: int, edit_cfg: EditConfig | None):
    item_seed = derive_seed(seed, "generate", style, j)
    source = int(np.random.default_rng(derive_seed(item_seed, "pool")).integers(pool_size))
    plan = sample_edit_plan(derive_seed(item_seed, "edit"), edit_cfg)
    noise_seed = derive_seed(item_seed, "noise")
    return item_seed, source, plan, noise_seed


def _render_item(est: ConditionalDiffusion, pool_points, source, plan: EditPlan, style, noise_seed, sampler):
    lm = apply_plan(LandmarkSet(pool_points[source]), plan)
    img = est.sample_one(lm, style, noise_seed, sampler.guidance_w, sampler.ddim_steps)
    return lm, img


def generate_synthetic_dataset(stage2_ckpt, styles, per_style: int, edit_cfg: EditConfig | None,
                               sampler: SamplerConfig, rng_seed: int, out_dir, pool_manifest=None) -> P.Manifest:
    """Synthetic face/landmark pairs with full replayable provenance.

    Landmarks are drawn from the stage-2 training pool (the manifest recorded
    in the checkpoint unless ``pool_manifest`` is given), edited by a fresh
    two-op plan, rasterized and rendered with guided DDIM.
    """
    est, header = ConditionalDiffusion.load(stage2_ckpt)
    if header["metadata"].get("stage") != 2:
        raise WrongStage(f"generation needs a stage-2 checkpoint, got stage {header['metadata'].get('stage')!r}")
    pool_manifest = Path(pool_manifest or header["metadata"]["corpus"])
    _, pool = _landmark_pool(pool_manifest)
    out_dir = Path(out_dir)
    ckpt_sha = file_sha256(stage2_ckpt)
    pool_sha = file_sha256(pool_manifest)
    records = []
    for s in styles:
        for j in range(per_style):
            item_seed, source, plan, noise_seed = _generation_item(rng_seed, int(s), j, len(pool), edit_cfg)
            lm, img = _render_item(est, pool, source, plan, int(s), noise_seed, sampler)
            ip, lp = P.write_pair(out_dir, f"syn_{int(s):02d}_{j:04d}", img, lm)
            prov = {
                "checkpoint_sha256": ckpt_sha,
                "pool_manifest": str(pool_manifest),
                "pool_manifest_sha256": pool_sha,
                "source_index": source,
                "noise_seed": noise_seed,
                "ddim_steps": sampler.ddim_steps,
                "guidance_w": sampler.guidance_w,
            }
            records.append(P.DatasetRecord(ip, lp, int(s), plan.to_dict(), item_seed, prov))
    return P.write_manifest(records, out_dir / "manifest.jsonl")


def replay_record(stage2_ckpt, record: P.DatasetRecord) -> tuple[LandmarkSet, np.ndarray]:
    """Regenerate one synthetic record from its provenance alone."""
    prov = record.provenance
    if not prov:
        raise BadConfig("record carries no generation provenance")
    if file_sha256(stage2_ckpt) != prov["checkpoint_sha256"]:
        raise CheckpointMismatch("checkpoint differs from the one recorded in provenance")
    est, _ = ConditionalDiffusion.load(stage2_ckpt)
    _, pool = _landmark_pool(prov["pool_manifest"])
    sampler = SamplerConfig(prov["ddim_steps"], prov["guidance_w"])
    plan = EditPlan.from_dict(record.edit_plan)
    return _render_item(est, pool, prov["source_index"], plan, record.style_id, prov["noise_seed"], sampler)


# ------------------------------------------------------------------- detector


def _detector_estimator(cfg: DetectorTrainConfig, stage: str) -> LandmarkDetector:
    return LandmarkDetector(
        input_size=cfg.input_size,
        heatmap_stride=cfg.heatmap_stride,
        base_width=cfg.base_width,
        hourglass_depth=cfg.hourglass_depth,
        sigma_px=cfg.sigma_px,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        random_state=derive_seed(cfg.seed, stage),
    )


def _validate_detector(est: LandmarkDetector, manifest) -> dict:
    m = _load_manifest(manifest)
    X, Y, _ = m.arrays()
    rep = compare_landmarks([LandmarkSet(p) for p in est.predict(X)], [LandmarkSet(p) for p in Y])
    return {"nme": rep.nme_mean, "fr_at_10": rep.fr_at_threshold, "auc_at_10": rep.auc_at_threshold}


def pretrain_detector(base_manifest, cfg: DetectorTrainConfig, out_dir, val_manifest=None) -> Path:
    m = _load_manifest(base_manifest)
    X, Y, _ = m.arrays()
    out_dir = Path(out_dir)
    log = RunLog(out_dir)
    est = _detector_estimator(cfg, "detector-pretrain")

    def meta(step):
        return {"stage": "detector", "pretrained": True, "finetuned": False, "step": int(step),
                "seed": int(cfg.seed), "train": cfg.to_dict(), "corpus_sha256": file_sha256(base_manifest)}

    est.fit(X, Y, callback=_callback(log, out_dir, "detector-pretrain", cfg.checkpoint_every, cfg.steps, meta))
    if val_manifest is not None:
        log.write({"event": "validation", "stage": "detector-pretrain", **_validate_detector(est, val_manifest)})
    path = out_dir / f"detector-pretrain-{cfg.steps}.ckpt"
    est.save(path, meta(cfg.steps))
    return path


def finetune_detector(detector_ckpt, synthetic_manifest, cfg: DetectorTrainConfig, out_dir, val_manifest=None) -> Path:
    """Supervised fine-tune of a pretrained detector; logs validation before and after."""
    est, header = LandmarkDetector.load(detector_ckpt)
    if not header["metadata"].get("pretrained"):
        raise WrongStage("fine-tuning needs a pretrained detector checkpoint")
    m = _load_manifest(synthetic_manifest)
    X, Y, _ = m.arrays()
    out_dir = Path(out_dir)
    log = RunLog(out_dir)
    if val_manifest is not None:
        log.write({"event": "validation", "stage": "before-finetune", **_validate_detector(est, val_manifest)})
    est.set_params(warm_start=True, steps=cfg.steps, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                   random_state=derive_seed(cfg.seed, "detector-finetune"))
    base_steps = est.n_steps_total_

    def meta(step):
        return {"stage": "detector", "pretrained": True, "finetuned": True, "step": int(step),
                "seed": int(cfg.seed), "train": cfg.to_dict(), "parent_sha256": file_sha256(detector_ckpt),
                "corpus_sha256": file_sha256(synthetic_manifest)}

    est.fit(X, Y, callback=_callback(log, out_dir, "detector-finetune", cfg.checkpoint_every,
                                     base_steps + cfg.steps, meta))
    if val_manifest is not None:
        log.write({"event": "validation", "stage": "after-finetune", **_validate_detector(est, val_manifest)})
    path = out_dir / f"detector-finetune-{est.n_steps_total_}.ckpt"
    est.save(path, meta(est.n_steps_total_))
    return path


# ------------------------------------------------------------------- ablation


def alignment_error(image, lm: LandmarkSet, style: int) -> tuple[float, bool]:
    """Mean feature-centroid error in px; a missing feature costs the image diagonal."""
    try:
        return P.measure_alignment(image, lm, style).mean, False
    except FeatureNotFound:
        h, w = np.asarray(image).shape[:2]
        return float(np.hypot(h, w)), True


def ablate(checkpoints: dict, grid_manifest, n: int, sampler: SamplerConfig, rng_seed: int, out_dir,
           panel_rows: int = 8) -> dict:
    """Sample every model on the same landmark/style grid and score alignment.

    ``checkpoints`` maps a label (``one_step``, ``stage1_only``, ``two_stage``)
    to a denoiser checkpoint. Models that never saw style tokens are sampled
    with the null token and scored against the base palette.
    """
    m = _load_manifest(grid_manifest)
    if n > len(m):
        raise BadConfig(f"grid manifest holds {len(m)} records, {n} requested")
    order = np.random.default_rng(derive_seed(rng_seed, "ablate")).permutation(len(m))[:n]
    items = [(m.landmarks(m.records[i]), m.records[i].style_id) for i in order]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"n": n, "sampler": sampler.to_dict(), "seed": int(rng_seed), "models": {}}
    images = {}
    for label, ckpt in checkpoints.items():
        est, header = ConditionalDiffusion.load(ckpt)
        styled = header["metadata"].get("stage") != 1
        errs, missing, imgs = [], 0, []
        for k, (lm, style) in enumerate(items):
            s = int(style) if styled else P.BASE_STYLE
            img = est.sample_one(lm, s, derive_seed(rng_seed, "ablate-noise", k), sampler.guidance_w, sampler.ddim_steps)
            e, miss = alignment_error(img, lm, s)
            errs.append(e)
            missing += miss
            imgs.append(img)
        images[label] = imgs
        report["models"][label] = {
            "checkpoint_sha256": file_sha256(ckpt),
            "mean_alignment_px": float(np.mean(errs)),
            "per_sample_px": errs,
            "missing_features": int(missing),
            "styled": styled,
        }
    est_any = ConditionalDiffusion.load(next(iter(checkpoints.values())))[0]
    conds = [
        (est_any.conditions(lm.points[None], est_any.image_size_)[0] * 255).round().astype(np.uint8)
        for lm, _ in items[:panel_rows]
    ]
    panel = _panel([conds] + [images[k][:panel_rows] for k in checkpoints])
    P.save_png(panel, out_dir / "ablation_panel.png")
    (out_dir / "ablation_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _panel(columns, pad: int = 2) -> np.ndarray:
    rows = len(columns[0])
    h, w = columns[0][0].shape[:2]
    out = np.full((rows * (h + pad) + pad, len(columns) * (w + pad) + pad, 3), 255, np.uint8)
    for c, col in enumerate(columns):
        for r, img in enumerate(col):
            y, x = pad + r * (h + pad), pad + c * (w + pad)
            out[y:y + h, x:x + w] = img
    return out


def sample_image(ckpt, landmarks_path, style: int, seed: int, sampler: SamplerConfig, out_png) -> np.ndarray:
    from .landmarks import load_landmarks

    est, _ = ConditionalDiffusion.load(ckpt)
    lm = load_landmarks(landmarks_path)
    img = est.sample_one(lm, int(style), int(seed), sampler.guidance_w, sampler.ddim_steps)
    try:
        Path(out_png).parent.mkdir(parents=True, exist_ok=True)
        P.save_png(img, out_png)
    except OSError as e:
        raise IoError(f"cannot write {out_png}: {e}") from e
    return img
