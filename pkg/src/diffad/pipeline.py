"""Run orchestration: backend assembly, sample workers, persistence, sweeps.

Every sample writes a JSON sidecar, an 8-bit heatmap PNG, a full-precision
map blob, and a `.done` marker; reruns skip samples whose marker exists, so
interrupted runs resume cheaply.  Reports are rendered with sorted keys so a
fixed config and seed reproduce byte-identical JSON.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import wire
from .anomaly import (
    AnomalyResult,
    PipelineBackends,
    heatmap_png_bytes,
    score_image,
)
from .backends import (
    AnalyticGaussianDenoiser,
    ArrayImageCodec,
    ConstantDenoiser,
    GaussianWorldModel,
    IdentityFeatures,
    MeanPoolFeatures,
    OracleSegmenter,
)
from .config import RunConfig, config_to_dotted
from .dataset import (
    AnomalySpec,
    ClassConfig,
    SampleRecord,
    SyntheticDataset,
    generate_synthetic,
    load_image_resized,
    load_mask_resized,
    validate_manifest,
)
from .ddim import prompt_for_object
from .errors import ConfigError, DataError
from .metrics import MetricsReport, evaluate
from .schedule import build_plan, build_schedule

MAP_SUFFIX = "_map.dten"
HEATMAP_SUFFIX = "_heatmap.png"
DONE_SUFFIX = ".done"


@dataclass
class PipelineContext:
    backends: PipelineBackends
    schedule: object
    plan: object
    config: RunConfig

    def class_config(self, class_name: str) -> ClassConfig:
        cfg = ClassConfig.default_for(class_name)
        override = self.config.class_overrides.get(class_name, {})
        if override:
            cfg = ClassConfig(
                class_name=cfg.class_name,
                prompt_object_word=override.get("prompt_word", cfg.prompt_object_word),
                apply_object_mask=override.get("apply_object_mask", cfg.apply_object_mask),
                category=cfg.category,
            )
        if self.config.segmenter_kind == "none":
            cfg = ClassConfig(
                class_name=cfg.class_name,
                prompt_object_word=cfg.prompt_object_word,
                apply_object_mask=False,
                category=cfg.category,
            )
        return cfg


def build_context(config: RunConfig, synthetic: SyntheticDataset | None = None) -> PipelineContext:
    """Assemble backends per the config; a synthetic corpus supplies its own world."""
    schedule = build_schedule(config.schedule_config())
    plan = build_plan(config.num_base_steps, config.plan_steps)

    codec = ArrayImageCodec(center=config.codec_center, gain=config.codec_gain)
    if config.backend_kind == "remote" or config.features_kind == "remote" or config.segmenter_kind == "remote":
        from .client import RemoteCodec, RemoteDenoiser, RemoteFeatures, RemoteModelClient, RemoteSegmenter

        client = RemoteModelClient(config.effective_url(), pool_size=max(2, config.workers or 4))
    else:
        client = None

    if config.backend_kind == "analytic":
        if synthetic is not None:
            world = codec.world_to_latent(synthetic.world_mean, synthetic.world_std)
        else:
            world = codec.world_to_latent(config.world_mean, config.world_std)
        denoiser = AnalyticGaussianDenoiser(world, schedule)
    elif config.backend_kind == "constant":
        denoiser = ConstantDenoiser(config.constant_value)
    else:
        denoiser = RemoteDenoiser(client)
        codec = RemoteCodec(client)

    if config.features_kind == "identity":
        features = IdentityFeatures()
    elif config.features_kind == "mean_pool":
        features = MeanPoolFeatures(config.features_patch)
    else:
        features = RemoteFeatures(client)

    segmenter = None
    if config.segmenter_kind == "oracle":
        if synthetic is None:
            raise ConfigError("segmenter.kind=oracle needs a synthetic corpus")
        segmenter = OracleSegmenter(synthetic.object_masks())
    elif config.segmenter_kind == "remote":
        segmenter = RemoteSegmenter(client, config.segmenter_threshold)

    bundle = PipelineBackends(codec=codec, denoiser=denoiser, features=features, segmenter=segmenter)
    return PipelineContext(backends=bundle, schedule=schedule, plan=plan, config=config)


def persist_result(out_dir: Path, sample_id: str, result: AnomalyResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{sample_id}{HEATMAP_SUFFIX}").write_bytes(heatmap_png_bytes(result.masked_map))
    (out_dir / f"{sample_id}{MAP_SUFFIX}").write_bytes(
        wire.encode_tensor(result.masked_map.astype(np.float32))
    )
    sidecar = {
        "image_score": float(result.image_score),
        "map_max": float(result.masked_map.max()),
        **result.metadata,
    }
    (out_dir / f"{sample_id}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    (out_dir / f"{sample_id}{DONE_SUFFIX}").write_text("")


def load_results(out_dir: Path) -> dict:
    """sample_id -> (final map, image score) for every completed sample."""
    out_dir = Path(out_dir)
    results = {}
    for marker in sorted(out_dir.glob(f"*{DONE_SUFFIX}")):
        sample_id = marker.name[: -len(DONE_SUFFIX)]
        blob = (out_dir / f"{sample_id}{MAP_SUFFIX}").read_bytes()
        sidecar = json.loads((out_dir / f"{sample_id}.json").read_text())
        results[sample_id] = (wire.decode_tensor(blob), float(sidecar["image_score"]))
    return results


def _run_one(ctx: PipelineContext, sample_id: str, image: np.ndarray, class_cfg: ClassConfig, out_dir: Path):
    cfg = ctx.config
    prompt = prompt_for_object(
        class_cfg.prompt_object_word or class_cfg.class_name,
        mode=cfg.prompt_mode,
        guidance_weight=cfg.guidance,
    )
    result = score_image(
        image,
        class_cfg,
        ctx.backends,
        ctx.schedule,
        ctx.plan,
        cfg.t_prime,
        prompt,
        sample_id=sample_id,
        invert_extent=cfg.invert_extent,
        score_reduction=cfg.score_reduction,
        topk_fraction=cfg.topk_fraction,
        smooth_sigma=cfg.smooth_sigma,
    )
    persist_result(out_dir, sample_id, result)
    return sample_id


def run_samples(
    ctx: PipelineContext,
    samples: Iterable[tuple[str, Callable[[], np.ndarray], ClassConfig]],
    out_dir: str | Path,
) -> list[str]:
    """Score every sample lacking a completion marker. Returns processed ids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pending = [
        (sid, loader, ccfg)
        for sid, loader, ccfg in samples
        if not (out_dir / f"{sid}{DONE_SUFFIX}").exists()
    ]
    workers = ctx.config.workers or os.cpu_count() or 1
    processed: list[str] = []
    if workers <= 1:
        for sid, loader, ccfg in pending:
            processed.append(_run_one(ctx, sid, loader(), ccfg, out_dir))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_one, ctx, sid, loader(), ccfg, out_dir)
                for sid, loader, ccfg in pending
            ]
            for fut in futures:
                processed.append(fut.result())
    return processed


def run_manifest(config: RunConfig, records: list[SampleRecord], out_dir: str | Path) -> list[str]:
    validate_manifest(records)
    ctx = build_context(config)
    side = config.resize_side

    def make_loader(path: str):
        return lambda: load_image_resized(path, side)

    samples = [
        (rec.sample_id, make_loader(rec.image_path), ctx.class_config(rec.class_name))
        for rec in records
    ]
    processed = run_samples(ctx, samples, out_dir)
    _write_run_config(config, out_dir)
    return processed


def evaluate_run(config: RunConfig, records: list[SampleRecord], out_dir: str | Path) -> MetricsReport:
    results = load_results(Path(out_dir))
    missing = [r.sample_id for r in records if r.sample_id not in results]
    if missing:
        raise DataError(f"results missing for {len(missing)} samples, e.g. {missing[:3]}")
    gt_masks = {}
    for rec in records:
        if rec.label == "anomaly":
            if not rec.mask_path:
                raise DataError(f"anomalous sample {rec.sample_id!r} has no mask_path")
            gt_masks[rec.sample_id] = load_mask_resized(rec.mask_path, config.resize_side)
    return evaluate(results, records, gt_masks)


def synthetic_spec_from_config(config: RunConfig) -> AnomalySpec:
    overrides = dict(
        shape=config.synth_anomaly_shape,
        size=config.synth_anomaly_size,
        clutter_amplitude=config.synth_clutter_amplitude,
        clutter_count=config.synth_clutter_count,
    )
    if config.synth_amplitude is not None:
        overrides["amplitude"] = config.synth_amplitude
    return AnomalySpec.for_profile(config.synth_profile, **overrides)


def run_synth_bench(config: RunConfig, out_dir: str | Path) -> MetricsReport:
    """Generate the seeded corpus, score it with analytic backends, evaluate."""
    out_dir = Path(out_dir)
    dataset = generate_synthetic(
        seed=config.synth_seed,
        n_images=config.synth_n_images,
        side=config.synth_side,
        anomaly_spec=synthetic_spec_from_config(config),
        anomaly_fraction=config.synth_anomaly_fraction,
    )
    ctx = build_context(config, synthetic=dataset)
    if config.synth_apply_mask and config.segmenter_kind == "none":
        # masking requested without an explicit segmenter: use the corpus oracle
        ctx.backends.segmenter = OracleSegmenter(dataset.object_masks())
        ctx = PipelineContext(
            backends=ctx.backends, schedule=ctx.schedule, plan=ctx.plan, config=config
        )

    class_cfg = ClassConfig(
        class_name="synthetic",
        prompt_object_word="textured surface",
        apply_object_mask=config.synth_apply_mask,
        category="texture",
    )
    samples = [
        (s.sample_id, (lambda img=s.image: img), class_cfg) for s in dataset.samples
    ]
    run_samples(ctx, samples, out_dir)
    results = load_results(out_dir)
    report = evaluate(results, dataset.records(), dataset.gt_masks())
    write_report(report, out_dir / "report.json", out_dir / "report.txt")
    _write_run_config(config, out_dir)
    return report


def write_report(report: MetricsReport, json_path: Path, text_path: Path | None = None) -> None:
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n")
    if text_path is not None:
        text_path.write_text(report.render_table() + "\n")


def _write_run_config(config: RunConfig, out_dir: str | Path) -> None:
    payload = config_to_dotted(config)
    Path(out_dir, "run_config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def sweep_t_prime(
    config: RunConfig,
    values: list[int],
    out_dir: str | Path,
    records: list[SampleRecord] | None = None,
) -> dict[int, MetricsReport]:
    """One bench (or manifest run) per t_prime value plus a combined table."""
    out_dir = Path(out_dir)
    reports: dict[int, MetricsReport] = {}
    for value in values:
        sub = out_dir / f"t_prime_{value}"
        cfg_kwargs = {**vars(config)}
        cfg_kwargs["t_prime"] = value
        sub_config = RunConfig(**cfg_kwargs)
        if records is None:
            reports[value] = run_synth_bench(sub_config, sub)
        else:
            run_manifest(sub_config, records, sub)
            reports[value] = evaluate_run(sub_config, records, sub)
            write_report(reports[value], sub / "report.json", sub / "report.txt")
    write_sweep_table(reports, out_dir)
    return reports


def write_sweep_table(reports: dict[int, MetricsReport], out_dir: Path) -> None:
    """Combined sweep table: one row per timestep, mean metrics as columns."""
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["t_prime", "ROC_I", "ROC_P", "PRO", "AP_P", "F1_P"]
    rows = []
    for value in sorted(reports, reverse=True):
        m = reports[value].mean
        rows.append(
            [str(value)] + [f"{100 * getattr(m, f):.1f}" for f in ("roc_i", "roc_p", "pro", "ap_p", "f1_p")]
        )
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    (out_dir / "sweep.txt").write_text("\n".join(lines) + "\n")
    payload = {str(v): reports[v].as_dict() for v in sorted(reports, reverse=True)}
    (out_dir / "sweep.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
