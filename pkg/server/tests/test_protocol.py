"""Drive the stub-mode server through the client package's remote interface.

The client package (`diffad`) is this server's consumer; these tests are the
cross-implementation conformance check between the two codebases.
"""

import io

import numpy as np
import pytest
from PIL import Image

from diffad.backends import GaussianWorldModel, analytic_gaussian_eps
from diffad.client import RemoteModelClient, image_to_png_bytes
from diffad.schedule import ScheduleConfig, build_schedule
from diffad.wire import encode_tensor


@pytest.fixture(scope="module")
def client(stub_server):
    return RemoteModelClient(stub_server.url, timeout=30.0)


def test_info_schema(client):
    info = client.info()
    assert info["latent_channels"] == 3
    assert info["latent_side"] == 32
    assert info["num_base_steps"] == 1000
    assert info["patch_size"] == 8


def test_blobs_parse_under_client_reader(client):
    rng = np.random.default_rng(0)
    img = rng.random((64, 64, 3)).astype(np.float32)
    latent = client.encode_image(image_to_png_bytes(img))
    assert latent.dtype == np.float32
    assert latent.shape == (3, 8, 8)


def test_eps_matches_client_side_analytic_to_1e5(client):
    """Cross-implementation: server eps vs the client package's closed form."""
    schedule = build_schedule(ScheduleConfig())
    world = GaussianWorldModel(mean=0.0, std=1.0)
    rng = np.random.default_rng(1)
    for t in (0, 17, 180, 512, 999):
        latent = rng.standard_normal((3, 8, 8)).astype(np.float32) * 3.0
        remote = client.predict_eps(latent, t, None)
        local = analytic_gaussian_eps(latent, t, world, schedule).astype(np.float32)
        assert np.abs(remote - local).max() <= 1e-5


def test_eps_round_trips_bit_exactly(client):
    rng = np.random.default_rng(2)
    latent = rng.standard_normal((4, 5, 6)).astype(np.float32)
    a = client.predict_eps(latent, 250, "an image of a connector")
    b = client.predict_eps(latent, 250, "an image of a connector")
    assert encode_tensor(a) == encode_tensor(b)


def test_features_framed_response(client):
    rng = np.random.default_rng(3)
    img = rng.random((48, 48, 3)).astype(np.float32)
    feats = client.features(image_to_png_bytes(img))
    assert feats.patch_size == 8
    assert feats.grid.shape == (6, 6, 3)


def test_objectmask_png(client):
    rng = np.random.default_rng(4)
    img = rng.random((40, 40, 3)).astype(np.float32)
    mask = client.object_mask(image_to_png_bytes(img), threshold=0.1)
    assert mask.pixels.shape == (40, 40)
    assert mask.pixels.all()


def test_decode_returns_png(client):
    rng = np.random.default_rng(5)
    latent = rng.standard_normal((3, 8, 8)).astype(np.float32)
    png = client.decode_latent(latent)
    img = Image.open(io.BytesIO(png))
    assert img.size == (64, 64)


def test_server_rejects_garbage_blob(client):
    from diffad.errors import RemoteModelError

    import requests

    resp = requests.post(f"{client.base_url}/v1/decode", data=b"not a blob")
    assert resp.status_code == 400
    assert "error" in resp.json()

    with pytest.raises(RemoteModelError):
        client.predict_eps(np.zeros((1, 2, 2), dtype=np.float32), 10_000)


def test_unknown_endpoint_json_error(client):
    import requests

    resp = requests.post(f"{client.base_url}/v1/never", data=b"x")
    assert resp.status_code == 404
    assert "error" in resp.json()


def test_full_remote_pipeline_through_client(stub_server, tmp_path):
    """The consumer's scoring pipeline runs end to end against this server."""
    from diffad.anomaly import score_image
    from diffad.config import RunConfig
    from diffad.dataset import ClassConfig
    from diffad.ddim import prompt_for_object
    from diffad.pipeline import build_context

    config = RunConfig(
        backend_kind="remote",
        features_kind="remote",
        segmenter_kind="remote",
        backend_url=stub_server.url,
        t_prime=3,
        plan_steps=10,
        workers=1,
        resize_side=64,
    )
    ctx = build_context(config)
    rng = np.random.default_rng(6)
    image = rng.random((64, 64, 3)).astype(np.float32)
    result = score_image(
        image,
        ClassConfig(class_name="widget", apply_object_mask=True),
        ctx.backends,
        ctx.schedule,
        ctx.plan,
        config.t_prime,
        prompt_for_object("widget"),
        sample_id="srv0",
    )
    assert result.map.shape == (64, 64)
    assert np.isfinite(result.image_score)
