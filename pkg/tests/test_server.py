import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from patchblend.identity import IdentityMap, encode_id_map, mask_id
from patchblend.server import create_app


@pytest.fixture(scope="module")
def client(toy_bundle_dir):
    app = create_app(str(toy_bundle_dir.parent))
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def decode_png(b64):
    with Image.open(io.BytesIO(base64.b64decode(b64))) as im:
        return np.asarray(im.convert("RGB"))


def half_mask_payload(h, w, faithful=None):
    masks = np.zeros((2, h, w), bool)
    masks[0, :, : w // 2] = True
    masks[1, :, w // 2:] = True
    payload = {"kind": "mask",
               "png_base64": base64.b64encode(encode_id_map(mask_id(masks))).decode()}
    if faithful is not None:
        payload["faithful"] = faithful
    return payload


class TestModels:
    def test_listing(self, client):
        resp = client.get("/models")
        assert resp.status_code == 200
        models = resp.json()
        assert len(models) == 1
        entry = models[0]
        assert entry["model_id"] == "toy"
        assert entry["K"] == 2
        assert entry["scale_count"] >= 2
        thumb = decode_png(entry["thumbnails"][0])
        assert thumb.shape == (32, 32, 3)

    def test_unknown_model_404(self, client):
        resp = client.post("/models/ghost/generate", json={"mode": "sample"})
        assert resp.status_code == 404


class TestGenerate:
    def test_sample_constant_id(self, client):
        body = {"mode": "sample", "id_map": {"kind": "constant", "k": 0},
                "seed": 4, "noise": "random"}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 200
        data = resp.json()
        img = decode_png(data["image"])
        assert img.shape == (32, 32, 3)
        assert data["request_echo"]["seed"] == 4
        assert "X-Timing-Ms" in resp.headers

    def test_reconstruction_noise_byte_identical(self, client):
        body = {"mode": "sample", "id_map": {"kind": "constant", "k": 0},
                "noise": "reconstruction", "seed": 0}
        r1 = client.post("/models/toy/generate", json=body)
        r2 = client.post("/models/toy/generate", json=body)
        assert r1.status_code == r2.status_code == 200
        assert r1.content == r2.content

    def test_random_same_seed_byte_identical(self, client):
        body = {"mode": "sample", "id_map": {"kind": "blend", "weights": [0.4, 0.6]},
                "seed": 11, "noise": "random", "size": [40, 48]}
        r1 = client.post("/models/toy/generate", json=body)
        r2 = client.post("/models/toy/generate", json=body)
        assert r1.content == r2.content
        assert decode_png(r1.json()["image"]).shape == (40, 48, 3)

    def test_ramp_map(self, client):
        body = {"mode": "sample", "id_map": {"kind": "ramp", "a": 1 / 3, "b": 2 / 3},
                "seed": 0}
        assert client.post("/models/toy/generate", json=body).status_code == 200

    def test_meld_mode(self, client):
        body = {"mode": "meld", "k_left": 0, "k_right": 1, "out_width": 96, "seed": 1}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 200
        assert decode_png(resp.json()["image"]).shape == (32, 96, 3)

    def test_fuse_mode(self, client):
        body = {"mode": "fuse", "structure_k": 0, "texture_k": 1, "transition_scale": 1}
        assert client.post("/models/toy/generate", json=body).status_code == 200

    def test_spatial_mask_png(self, client):
        body = {"mode": "spatial", "id_map": half_mask_payload(32, 32, faithful=[0]),
                "seed": 2}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 200

    def test_spatial_mask_raster_format(self, client):
        weights = np.zeros((32, 32, 2), np.float32)
        weights[:, :16, 0] = 1.0
        weights[:, 16:, 1] = 1.0
        raw = encode_id_map(IdentityMap(weights))
        # force the raster branch: soft maps always use it, but categorical
        # payloads may also arrive as rasters
        from patchblend.identity import _encode_raster

        raw = _encode_raster(IdentityMap(weights))
        body = {"mode": "spatial",
                "id_map": {"kind": "mask", "raster_base64": base64.b64encode(raw).decode()}}
        assert client.post("/models/toy/generate", json=body).status_code == 200

    def test_edit_mode(self, client, toy_bundle):
        from patchblend.pyramid import encode_png

        payload = base64.b64encode(encode_png(toy_bundle.images[0])).decode()
        body = {"mode": "edit", "image_png_base64": payload, "k": 0}
        assert client.post("/models/toy/generate", json=body).status_code == 200


class TestErrors:
    def test_overlapping_mask_400_names_invariant(self, client):
        masks = np.zeros((2, 32, 32), np.float32)
        masks[0] = 1.0
        masks[1, :4, :4] = 1.0
        weights = np.stack([masks[0], masks[1]], axis=2)
        weights /= np.maximum(weights.sum(axis=2, keepdims=True), 1)
        # build an indexed png whose decoded map is fine, then corrupt weights via raster
        from patchblend.identity import _encode_raster

        bad = IdentityMap(np.stack([np.ones((32, 32)), np.ones((32, 32))], axis=2).astype(np.float32))
        body = {"mode": "spatial",
                "id_map": {"kind": "mask",
                           "raster_base64": base64.b64encode(_encode_raster(bad)).decode()}}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 400
        assert "sum to 1" in resp.json()["error"]

    def test_soft_map_where_categorical_required_422(self, client):
        soft = IdentityMap(np.full((32, 32, 2), 0.5, np.float32))
        from patchblend.identity import _encode_raster

        body = {"mode": "spatial",
                "id_map": {"kind": "mask",
                           "raster_base64": base64.b64encode(_encode_raster(soft)).decode()}}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 422
        assert "categorical" in resp.json()["error"]

    def test_bad_blend_weights_400(self, client):
        body = {"mode": "sample", "id_map": {"kind": "blend", "weights": [0.9, 0.9]}}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 400
        assert "simplex" in resp.json()["error"]

    def test_too_small_size_400(self, client):
        body = {"mode": "sample", "id_map": {"kind": "constant", "k": 0},
                "size": [12, 12]}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 400
        assert "receptive field" in resp.json()["error"]

    def test_unknown_mode_400(self, client):
        resp = client.post("/models/toy/generate", json={"mode": "speculate"})
        assert resp.status_code == 400

    def test_missing_field_400(self, client):
        resp = client.post("/models/toy/generate", json={"mode": "fuse"})
        assert resp.status_code == 400
        assert "structure_k" in resp.json()["error"]

    def test_bad_base64_400(self, client):
        body = {"mode": "spatial", "id_map": {"kind": "mask", "png_base64": "!!!"}}
        resp = client.post("/models/toy/generate", json=body)
        assert resp.status_code == 400


class TestMorphEndpoint:
    def test_four_frames_from_presets(self, client):
        body = {"weights_sequence": [0.2, 0.4, 0.6, 0.8], "seed": 0}
        resp = client.post("/models/toy/morph", json=body)
        assert resp.status_code == 200
        frames = resp.json()["frames"]
        assert len(frames) == 4
        for f in frames:
            assert decode_png(f).shape == (32, 32, 3)

    def test_explicit_weight_vectors(self, client):
        body = {"weights_sequence": [[1.0, 0.0], [0.0, 1.0]], "noise": "reconstruction"}
        resp = client.post("/models/toy/morph", json=body)
        assert resp.status_code == 200
        assert len(resp.json()["frames"]) == 2

    def test_morph_byte_identical(self, client):
        body = {"weights_sequence": [0.5], "seed": 3, "noise": "random"}
        r1 = client.post("/models/toy/morph", json=body)
        r2 = client.post("/models/toy/morph", json=body)
        assert r1.content == r2.content

    def test_unknown_model(self, client):
        resp = client.post("/models/ghost/morph", json={"weights_sequence": [0.5]})
        assert resp.status_code == 404

    def test_bad_weights_400(self, client):
        resp = client.post("/models/toy/morph", json={"weights_sequence": [[0.9, 0.9]]})
        assert resp.status_code == 400
