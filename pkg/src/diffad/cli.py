"""Command-line entry point.

Subcommands: selftest, synth-bench, scan, run, evaluate, sweep, heatmap.
Configuration is a JSON file of flat dotted keys mirrored by CLI flags
(`--ddim.t_prime 10`); flags override the file.  Every failure exits nonzero
with a single-line `error[<kind>]:` prefix on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import DOTTED_KEYS, RunConfig, load_config
from .errors import DiffadError


def _split_dotted_overrides(argv: list[str]) -> tuple[list[str], dict]:
    """Pull `--a.b value` pairs out of argv; argparse handles the rest."""
    rest: list[str] = []
    overrides: dict = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and ("." in tok.split("=", 1)[0]):
            if "=" in tok:
                key, value = tok[2:].split("=", 1)
            else:
                key = tok[2:]
                if i + 1 >= len(argv):
                    raise DiffadError(f"flag --{key} needs a value")
                i += 1
                value = argv[i]
            overrides[key] = value
        else:
            rest.append(tok)
        i += 1
    return rest, overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffad",
        description="Training-free visual anomaly detection via diffusion inversion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="run the built-in verification suites")
    p.add_argument("--mutate", choices=["sign-flip"], default=None,
                   help="inject a deliberate defect (CI check that the suite bites)")

    p = sub.add_parser("synth-bench", help="seeded synthetic benchmark with analytic backends")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory (default run.output_dir/synth)")

    p = sub.add_parser("scan", help="scan a dataset layout into a JSONL manifest")
    p.add_argument("--layout", choices=["mvtec", "visa"], required=True)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--csv", type=Path, default=None, help="split CSV (visa layout)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", help="score every sample in a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("evaluate", help="five-metric report for a finished run")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)

    p = sub.add_parser("sweep", help="rerun the bench (or a manifest) across t_prime values")
    p.add_argument("--param", choices=["t_prime"], default="t_prime")
    p.add_argument("--values", default="30,20,15,10,5",
                   help="comma-separated values, default 30,20,15,10,5")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("heatmap", help="single-image pipeline with all intermediates")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--class-name", default="object")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)

    return parser


def _config_from(args, overrides: dict) -> RunConfig:
    return load_config(getattr(args, "config", None), overrides)


def _cmd_selftest(args, overrides) -> int:
    from .selftest import run_selftest

    return run_selftest(mutate=args.mutate)


def _cmd_synth_bench(args, overrides) -> int:
    from .pipeline import run_synth_bench

    config = _config_from(args, overrides)
    out = args.out or Path(config.output_dir) / "synth"
    report = run_synth_bench(config, out)
    print(report.render_table())
    print(f"report written to {out}/report.json")
    return 0


def _cmd_scan(args, overrides) -> int:
    from .dataset import scan_mvtec_layout, scan_visa_layout, write_manifest

    if args.layout == "mvtec":
        records = scan_mvtec_layout(args.root)
    else:
        if args.csv is None:
            raise DiffadError("--csv is required for the visa layout")
        records = scan_visa_layout(args.root, args.csv)
    write_manifest(records, args.out)
    anomalies = sum(1 for r in records if r.label == "anomaly")
    print(f"{len(records)} records ({anomalies} anomalous) -> {args.out}")
    return 0


def _cmd_run(args, overrides) -> int:
    from .dataset import read_manifest
    from .pipeline import run_manifest

    config = _config_from(args, overrides)
    records = read_manifest(args.manifest)
    out = args.out or Path(config.output_dir) / "run"
    processed = run_manifest(config, records, out)
    print(f"processed {len(processed)} samples ({len(records) - len(processed)} already done) -> {out}")
    return 0


def _cmd_evaluate(args, overrides) -> int:
    from .dataset import read_manifest
    from .pipeline import evaluate_run, write_report

    config = _config_from(args, overrides)
    records = read_manifest(args.manifest)
    report = evaluate_run(config, records, args.results)
    write_report(report, Path(args.results) / "report.json", Path(args.results) / "report.txt")
    print(report.render_table())
    return 0


def _cmd_sweep(args, overrides) -> int:
    from .dataset import read_manifest
    from .pipeline import sweep_t_prime

    config = _config_from(args, overrides)
    try:
        values = [int(v) for v in str(args.values).split(",") if v.strip()]
    except ValueError as exc:
        raise DiffadError(f"bad sweep values {args.values!r}: {exc}") from exc
    records = read_manifest(args.manifest) if args.manifest else None
    out = args.out or Path(config.output_dir) / "sweep"
    reports = sweep_t_prime(config, values, out, records)
    print((Path(out) / "sweep.txt").read_text().rstrip())
    return 0


def _cmd_heatmap(args, overrides) -> int:
    import numpy as np

    from .anomaly import heatmap_png_bytes, heatmap_sidecar_json, score_image
    from .client import image_to_png_bytes
    from .dataset import load_image_resized
    from .ddim import prompt_for_object
    from .pipeline import build_context
    from . import wire

    config = _config_from(args, overrides)
    ctx = build_context(config)
    image = load_image_resized(args.image, config.resize_side)
    class_cfg = ctx.class_config(args.class_name)
    prompt = prompt_for_object(
        class_cfg.prompt_object_word or args.class_name,
        mode=config.prompt_mode,
        guidance_weight=config.guidance,
    )
    result = score_image(
        image, class_cfg, ctx.backends, ctx.schedule, ctx.plan, config.t_prime, prompt,
        sample_id=args.image.stem, invert_extent=config.invert_extent,
        score_reduction=config.score_reduction, topk_fraction=config.topk_fraction,
        smooth_sigma=config.smooth_sigma,
    )
    out = args.out or Path(config.output_dir) / "heatmap" / args.image.stem
    out.mkdir(parents=True, exist_ok=True)
    (out / "heatmap.png").write_bytes(heatmap_png_bytes(result.masked_map))
    (out / "heatmap.json").write_text(heatmap_sidecar_json(result) + "\n")
    (out / "map_raw.dten").write_bytes(wire.encode_tensor(result.map.astype(np.float32)))
    (out / "map_masked.dten").write_bytes(wire.encode_tensor(result.masked_map.astype(np.float32)))
    # reconstruction image for inspection when the codec can decode
    from .ddim import LatentTensor, invert, invert_full_then_restart, reconstruct

    z = LatentTensor(np.asarray(ctx.backends.codec.encode(image), dtype=np.float32))
    invert_fn = invert_full_then_restart if config.invert_extent == "full" else invert
    z_noisy = invert_fn(z, ctx.backends.denoiser, prompt, ctx.plan, config.t_prime, ctx.schedule)
    z_rec = reconstruct(z_noisy, ctx.backends.denoiser, prompt, ctx.plan, config.t_prime, ctx.schedule)
    reconstruction = ctx.backends.codec.decode(z_rec.data)
    (out / "reconstruction.png").write_bytes(image_to_png_bytes(reconstruction))
    print(f"image_score={result.image_score:.6f} -> {out}")
    return 0


_COMMANDS = {
    "selftest": _cmd_selftest,
    "synth-bench": _cmd_synth_bench,
    "scan": _cmd_scan,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "heatmap": _cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_dotted_overrides(argv)
        unknown = [k for k in overrides if k not in DOTTED_KEYS and not k.startswith("classes.")]
        if unknown:
            raise DiffadError(f"unknown config keys: {', '.join(sorted(unknown))}")
        args = _build_parser().parse_args(rest)
        return _COMMANDS[args.command](args, overrides)
    except DiffadError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
