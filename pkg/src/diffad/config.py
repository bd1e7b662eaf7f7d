"""Run configuration: a flat dotted-key space shared by config files and CLI flags."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .schedule import ScheduleConfig

SERVER_URL_ENV = "DIFFAD_SERVER_URL"


@dataclass
class RunConfig:
    # schedule.*
    num_base_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    spacing: str = "scaled_linear"
    # ddim.*
    plan_steps: int = 50
    t_prime: int = 10
    guidance: float = 3.5
    invert_extent: str = "partial"          # partial | full
    # prompt.*
    prompt_mode: str = "template"           # template | empty
    # backend.*
    backend_kind: str = "analytic"          # analytic | constant | remote
    backend_url: str | None = None
    constant_value: float = 0.0
    # codec.* (analytic image<->latent map; defaults are bitwise invertible)
    codec_center: float = 0.0
    codec_gain: float = 4.0
    # world.* (analytic denoiser prior in image units)
    world_mean: float = 0.5
    world_std: float = 0.05
    # features.*
    features_kind: str = "mean_pool"        # identity | mean_pool | remote
    features_patch: int = 4
    # segmenter.*
    segmenter_kind: str = "none"            # none | oracle | remote
    segmenter_threshold: float = 0.1
    # score.*
    score_reduction: str = "max"            # max | topk_mean
    topk_fraction: float = 0.01
    smooth_sigma: float = 0.0
    # synth.*
    synth_seed: int = 2024
    synth_n_images: int = 100
    synth_side: int = 64
    synth_profile: str = "plain"            # plain | detailed | cluttered
    synth_amplitude: float | None = None    # None = profile preset
    synth_anomaly_fraction: float = 0.5
    synth_anomaly_size: int = 8
    synth_anomaly_shape: str = "square"
    synth_clutter_amplitude: float = 0.33
    synth_clutter_count: int = 3
    synth_apply_mask: bool = False
    # run.*
    output_dir: str = "runs"
    workers: int = 0                        # 0 = cpu count
    seed: int = 0
    resize_side: int = 256
    # per-class overrides: class name -> {"apply_object_mask": bool, "prompt_word": str}
    class_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.t_prime < 1 or self.t_prime > self.plan_steps:
            raise ConfigError(
                f"ddim.t_prime must be in [1, ddim.plan_steps], got t_prime={self.t_prime}"
            )
        if self.guidance < 0:
            raise ConfigError(f"ddim.guidance must be >= 0, got {self.guidance}")
        if self.prompt_mode not in ("template", "empty"):
            raise ConfigError(f"prompt.mode must be 'template' or 'empty', got {self.prompt_mode!r}")
        if self.invert_extent not in ("partial", "full"):
            raise ConfigError(f"ddim.invert_extent must be 'partial' or 'full', got {self.invert_extent!r}")
        if self.backend_kind not in ("analytic", "constant", "remote"):
            raise ConfigError(f"backend.kind must be analytic|constant|remote, got {self.backend_kind!r}")
        if self.features_kind not in ("identity", "mean_pool", "remote"):
            raise ConfigError(f"features.kind must be identity|mean_pool|remote, got {self.features_kind!r}")
        if self.segmenter_kind not in ("none", "oracle", "remote"):
            raise ConfigError(f"segmenter.kind must be none|oracle|remote, got {self.segmenter_kind!r}")
        if self.synth_profile not in ("plain", "detailed", "cluttered"):
            raise ConfigError(
                f"synth.profile must be plain|detailed|cluttered, got {self.synth_profile!r}"
            )
        if self.synth_amplitude is not None and self.synth_amplitude < 0:
            raise ConfigError(f"synth.amplitude must be >= 0, got {self.synth_amplitude}")
        remote_pieces = [self.backend_kind, self.features_kind, self.segmenter_kind]
        if "remote" in remote_pieces and not self.effective_url():
            raise ConfigError("backend.url (or DIFFAD_SERVER_URL) is required for remote kinds")

    def effective_url(self) -> str | None:
        return os.environ.get(SERVER_URL_ENV) or self.backend_url

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            num_base_steps=self.num_base_steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            spacing=self.spacing,
        )


# dotted key -> (attribute, parser)
def _bool(text: str) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


DOTTED_KEYS: dict[str, tuple[str, type]] = {
    "schedule.num_base_steps": ("num_base_steps", int),
    "schedule.beta_start": ("beta_start", float),
    "schedule.beta_end": ("beta_end", float),
    "schedule.spacing": ("spacing", str),
    "ddim.plan_steps": ("plan_steps", int),
    "ddim.t_prime": ("t_prime", int),
    "ddim.guidance": ("guidance", float),
    "ddim.invert_extent": ("invert_extent", str),
    "prompt.mode": ("prompt_mode", str),
    "backend.kind": ("backend_kind", str),
    "backend.url": ("backend_url", str),
    "backend.constant_value": ("constant_value", float),
    "codec.center": ("codec_center", float),
    "codec.gain": ("codec_gain", float),
    "world.mean": ("world_mean", float),
    "world.std": ("world_std", float),
    "features.kind": ("features_kind", str),
    "features.patch": ("features_patch", int),
    "segmenter.kind": ("segmenter_kind", str),
    "segmenter.threshold": ("segmenter_threshold", float),
    "score.reduction": ("score_reduction", str),
    "score.topk_fraction": ("topk_fraction", float),
    "score.smooth_sigma": ("smooth_sigma", float),
    "synth.seed": ("synth_seed", int),
    "synth.n_images": ("synth_n_images", int),
    "synth.side": ("synth_side", int),
    "synth.profile": ("synth_profile", str),
    "synth.amplitude": ("synth_amplitude", float),
    "synth.anomaly_fraction": ("synth_anomaly_fraction", float),
    "synth.anomaly_size": ("synth_anomaly_size", int),
    "synth.anomaly_shape": ("synth_anomaly_shape", str),
    "synth.clutter_amplitude": ("synth_clutter_amplitude", float),
    "synth.clutter_count": ("synth_clutter_count", int),
    "synth.apply_mask": ("synth_apply_mask", _bool),
    "run.output_dir": ("output_dir", str),
    "run.workers": ("workers", int),
    "run.seed": ("seed", int),
    "run.resize_side": ("resize_side", int),
}

_CLASS_OVERRIDE_FIELDS = {"apply_object_mask": _bool, "prompt_word": str}


def config_from_dotted(pairs: dict) -> RunConfig:
    """Build a RunConfig from flat dotted keys; unknown keys are an error."""
    kwargs: dict = {}
    class_overrides: dict = {}
    for key, value in pairs.items():
        if key in DOTTED_KEYS:
            attr, parse = DOTTED_KEYS[key]
            try:
                kwargs[attr] = parse(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
        elif key.startswith("classes."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _CLASS_OVERRIDE_FIELDS:
                raise ConfigError(
                    f"class override keys look like classes.<name>.<field> with field in "
                    f"{sorted(_CLASS_OVERRIDE_FIELDS)}, got {key!r}"
                )
            _, cls, fieldname = parts
            try:
                class_overrides.setdefault(cls, {})[fieldname] = _CLASS_OVERRIDE_FIELDS[fieldname](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if class_overrides:
        kwargs["class_overrides"] = class_overrides
    return RunConfig(**kwargs)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Merge a JSON config file (flat dotted keys) with CLI overrides; flags win."""
    pairs: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object of dotted keys")
        pairs.update(loaded)
    if overrides:
        pairs.update(overrides)
    return config_from_dotted(pairs)


def config_to_dotted(cfg: RunConfig) -> dict:
    """Inverse of config_from_dotted, used to persist reproducible run manifests."""
    out = {}
    attr_to_key = {attr: key for key, (attr, _) in DOTTED_KEYS.items()}
    for f in fields(cfg):
        if f.name == "class_overrides":
            for cls, kv in sorted(cfg.class_overrides.items()):
                for fieldname, value in sorted(kv.items()):
                    out[f"classes.{cls}.{fieldname}"] = value
        elif f.name in attr_to_key:
            out[attr_to_key[f.name]] = getattr(cfg, f.name)
    return out
