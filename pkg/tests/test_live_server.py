"""Smoke checks against a live model server (GPU-backed or stub).

Skipped unless DIFFAD_SERVER_URL points at a running server.  With a real
pretrained-model server these exercise the full remote pipeline on a handful
of images; runtime depends entirely on the server.
"""

import os

import numpy as np
import pytest

from diffad.client import RemoteModelClient, image_to_png_bytes

SERVER_URL = os.environ.get("DIFFAD_SERVER_URL")

pytestmark = pytest.mark.skipif(
    not SERVER_URL, reason="DIFFAD_SERVER_URL not set; live-server smoke skipped"
)


@pytest.fixture(scope="module")
def client():
    return RemoteModelClient(SERVER_URL, timeout=300.0)


def test_live_info_consistent(client):
    info = client.info()
    assert info["latent_channels"] >= 1
    assert info["latent_side"] >= 1
    assert info["num_base_steps"] >= 1


def test_live_shapes_match_info(client, rng):
    info = client.info()
    side = info["latent_side"] * 8
    img = rng.random((side, side, 3)).astype(np.float32)
    latent = client.encode_image(image_to_png_bytes(img))
    assert latent.shape == (info["latent_channels"], info["latent_side"], info["latent_side"])
    eps = client.predict_eps(latent, 1, "an image of a bottle")
    assert eps.shape == latent.shape
    feats = client.features(image_to_png_bytes(img))
    assert feats.grid.shape[0] == side // feats.patch_size
    mask = client.object_mask(image_to_png_bytes(img), threshold=0.1)
    assert mask.pixels.shape == (side, side)


def test_live_decode_psnr(client, rng):
    """Autoencoder sanity: decode(encode(x)) should stay above 25 dB PSNR.

    Only meaningful against a real trained autoencoder; the analytic stub
    downsamples and is excluded.
    """
    info = client.info()
    if "stub" in str(info.get("models", {})).lower():
        pytest.skip("stub autoencoder is intentionally lossy")
    from diffad.client import png_bytes_to_image

    side = info["latent_side"] * 8
    img = rng.random((side, side, 3)).astype(np.float32)
    back = png_bytes_to_image(client.decode_latent(client.encode_image(image_to_png_bytes(img))))
    mse = float(((back - img) ** 2).mean())
    psnr = 10 * np.log10(1.0 / mse) if mse > 0 else np.inf
    assert psnr > 25.0


def test_live_pipeline_end_to_end(client, tmp_path, rng):
    """Ten-image remote run completes and emits heatmaps."""
    from diffad.config import RunConfig
    from diffad.dataset import SampleRecord, write_manifest
    from diffad.pipeline import run_manifest
    from PIL import Image

    info = client.info()
    side = info["latent_side"] * 8
    records = []
    for i in range(10):
        img = (rng.random((side, side, 3)) * 255).astype(np.uint8)
        path = tmp_path / f"img_{i:02d}.png"
        Image.fromarray(img).save(path)
        records.append(SampleRecord(image_path=str(path), class_name="bottle", label="normal"))
    manifest = tmp_path / "manifest.jsonl"
    write_manifest(records, manifest)

    config = RunConfig(
        backend_kind="remote",
        features_kind="remote",
        segmenter_kind="remote",
        backend_url=SERVER_URL,
        resize_side=side,
        workers=2,
        t_prime=10,
    )
    out = tmp_path / "results"
    processed = run_manifest(config, records, out)
    assert len(processed) == 10
    assert len(list(out.glob("*_heatmap.png"))) == 10
