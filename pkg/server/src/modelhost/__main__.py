"""Entry point: `python -m modelhost [--stub] [--port N] ...`"""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import create_app
from .config import ServerConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelhost",
        description="Model server for the diffusion-inversion anomaly detection protocol",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--stub", action="store_true",
                        help="serve the analytic conformance bundle (no models needed)")
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--non-deterministic", action="store_true")
    parser.add_argument("--diffusion-model", default="stabilityai/stable-diffusion-2-1")
    parser.add_argument("--feature-model", default="dino_vits8")
    parser.add_argument("--segmenter-config", default=None)
    parser.add_argument("--segmenter-weights", default=None)
    parser.add_argument("--max-concurrent", type=int, default=8)
    args = parser.parse_args(argv)

    config = ServerConfig(
        host=args.host,
        port=args.port,
        device=args.device,
        deterministic=not args.non_deterministic,
        stub=args.stub,
        diffusion_model=args.diffusion_model,
        feature_model=args.feature_model,
        segmenter_config=args.segmenter_config,
        segmenter_weights=args.segmenter_weights,
        max_concurrent_requests=args.max_concurrent,
    )

    if config.stub:
        from .analytic import StubBundle

        bundle = StubBundle()
    else:
        from .real import ModelLoadError, RealBundle

        try:
            bundle = RealBundle(config)
        except ModelLoadError as exc:
            print(f"refusing to start: {exc}", file=sys.stderr)
            return 1

    app = create_app(bundle, max_concurrent=config.max_concurrent_requests)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
