import os
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from kcvision.ann import VisionModelANN
from kcvision.checkpoint import (CheckpointError, encode_checkpoint, load_checkpoint,
                                 read_checkpoint, save_checkpoint)
from kcvision.config import ConfigError, RunConfig, load_config
from kcvision.datasets import class_manifest, read_index_map, traverse_manifest
from kcvision.images import ImageLoadError, load_image_bg, resize_bilinear, rgb_to_bg
from kcvision.snn import VisionModelSNN


# ---------------------------------------------------------------- images

def _png(path, rgb):
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)
    return path


def test_pure_red_is_zero(tmp_path):
    img = np.zeros((20, 30, 3), np.uint8)
    img[..., 0] = 255
    out = load_image_bg(_png(tmp_path / "r.png", img))
    assert out.shape == (2, 75, 75) and out.dtype == np.float32
    np.testing.assert_array_equal(out, 0)


def test_pure_blue_channel_mapping(tmp_path):
    img = np.zeros((75, 75, 3), np.uint8)
    img[..., 2] = 255
    out = load_image_bg(_png(tmp_path / "b.png", img))
    np.testing.assert_array_equal(out[0], 1)
    np.testing.assert_array_equal(out[1], 0)


def reference_bilinear(img, h, w):
    """Scalar re-derivation: half-pixel centres, clamped edges."""
    H, W = img.shape
    out = np.zeros((h, w))
    for i in range(h):
        sy = min(max((i + 0.5) * H / h - 0.5, 0), H - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, H - 1)
        fy = sy - y0
        for j in range(w):
            sx = min(max((j + 0.5) * W / w - 0.5, 0), W - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, W - 1)
            fx = sx - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def test_checkerboard_bilinear_oracle(tmp_path):
    yy, xx = np.mgrid[:150, :150]
    board = (((yy // 3) + (xx // 5)) % 2 * 255).astype(np.uint8)
    rgb = np.stack([board, 255 - board, board], axis=-1)
    out = load_image_bg(_png(tmp_path / "c.png", rgb))
    np.testing.assert_allclose(out[0], reference_bilinear(board / 255.0, 75, 75), atol=1e-6)
    np.testing.assert_allclose(out[1], reference_bilinear(1 - board / 255.0, 75, 75), atol=1e-6)


def test_resize_upsample_and_identity():
    x = np.random.default_rng(0).random((2, 10, 7))
    np.testing.assert_array_equal(resize_bilinear(x, 10, 7), x)
    up = resize_bilinear(x[0], 23, 19)
    np.testing.assert_allclose(up, reference_bilinear(x[0], 23, 19), atol=1e-12)


def test_image_loading_deterministic(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (90, 80, 3))
    p = _png(tmp_path / "x.png", rgb)
    assert load_image_bg(p).tobytes() == load_image_bg(p).tobytes()


def test_undecodable_image(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageLoadError, match="bad.png"):
        load_image_bg(bad)


def test_rgb_to_bg_shape_error():
    with pytest.raises(ValueError):
        rgb_to_bg(np.zeros((4, 4)))


# ---------------------------------------------------------------- manifests

def test_manifests(tmp_path):
    for cls in ("b_class", "a_class"):
        os.makedirs(tmp_path / "ds" / cls)
        for i in (2, 0, 1):
            _png(tmp_path / "ds" / cls / f"img{i}.png", np.zeros((80, 80, 3)))
    m = class_manifest(tmp_path / "ds")
    assert m.class_names == ["a_class", "b_class"]
    assert [os.path.basename(p) for p in m.paths[:3]] == ["img0.png", "img1.png", "img2.png"]
    np.testing.assert_array_equal(m.labels, [0, 0, 0, 1, 1, 1])
    t = traverse_manifest(tmp_path / "ds" / "a_class")
    assert [i for _, i in t.entries] == [0, 1, 2]


def test_flat_class_layout(tmp_path):
    for i in range(6):
        _png(tmp_path / f"image_{i:04d}.png", np.zeros((80, 80, 3)))
    m = class_manifest(tmp_path, flat_class_size=3)
    np.testing.assert_array_equal(m.labels, [0, 0, 0, 1, 1, 1])


def test_index_map(tmp_path):
    p = tmp_path / "map.csv"
    p.write_text("query,reference\n1,5\n0,3\n")
    np.testing.assert_array_equal(read_index_map(p), [3, 5])
    p.write_text("query,reference\n1,5\n")
    with pytest.raises(ValueError):
        read_index_map(p)


# ---------------------------------------------------------------- config

def test_empty_config_defaults(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg.akwta.rho == 0.05
    assert cfg.train.temperature == 0.5
    assert cfg.train.batch_size == 128
    assert cfg.train.lr == 1e-4


def test_config_rho_domain(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[akwta]\nrho = 1.5\n")
    with pytest.raises(ConfigError, match="rho"):
        load_config(p)


def test_config_unknown_key_and_type(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="train.bogus"):
        load_config(p)
    p.write_text("[train]\nepochs = 'three'\n")
    with pytest.raises(ConfigError, match=r"train\.epochs.*int"):
        load_config(p)
    p.write_text("[nosuch]\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_merge_and_env_seed(tmp_path, monkeypatch):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nlr = 0.001\nseed = 3\n[snn]\nbeta = 0.9\n")
    monkeypatch.setenv("APIA_SEED", "17")
    cfg = load_config(p)
    assert cfg.train.lr == 0.001 and cfg.snn.beta == 0.9
    assert cfg.train.seed == 17
    assert cfg.train.epochs == 20


def test_config_json_roundtrip():
    cfg = RunConfig().desk_scale()
    again = RunConfig.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json()


# ---------------------------------------------------------------- checkpoint

@pytest.fixture(scope="module")
def trained_like():
    m = VisionModelANN()
    rng = np.random.default_rng(0)
    for p in m.params():
        p.data += rng.standard_normal(p.shape).astype(p.dtype) * 0.01
    m.akwta.mu = rng.random(1024).astype(np.float32)
    return m


def test_checkpoint_roundtrip_bit_exact(tmp_path, trained_like):
    path = tmp_path / "m.avis"
    cfg = RunConfig()
    cfg.model = trained_like.cfg
    save_checkpoint(trained_like, path, cfg)
    loaded = load_checkpoint(path)
    for name, arr in trained_like.state_tensors().items():
        assert arr.tobytes() == loaded.state_tensors()[name].tobytes(), name
    x = np.random.default_rng(1).random((3, 2, 75, 75)).astype(np.float32)
    assert trained_like.encode(x).tobytes() == loaded.encode(x).tobytes()
    assert read_checkpoint(path).config_json == cfg.to_json()
    # re-saving the loaded model reproduces the file byte for byte
    assert encode_checkpoint(loaded, cfg) == path.read_bytes()


def test_checkpoint_layout(tmp_path, trained_like):
    blob = encode_checkpoint(trained_like)
    assert blob[:4] == b"AVIS"
    version, kind, _ = struct.unpack("<HBB", blob[4:8])
    assert (version, kind) == (1, 0)
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])


def test_truncated_checkpoint(tmp_path, trained_like):
    blob = encode_checkpoint(trained_like)
    for cut in (3, 10, 200, len(blob) // 2, len(blob) - 1):
        p = tmp_path / f"t{cut}.avis"
        p.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)


def test_corrupted_byte_fails_crc(tmp_path, trained_like):
    blob = bytearray(encode_checkpoint(trained_like))
    blob[len(blob) // 2] ^= 0xFF
    p = tmp_path / "c.avis"
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(p)


def test_ann_checkpoint_rejected_by_snn_loader(tmp_path, trained_like):
    p = tmp_path / "a.avis"
    save_checkpoint(trained_like, p)
    with pytest.raises(CheckpointError, match="ANN model but an SNN"):
        load_checkpoint(p, kind="snn")


def test_snn_checkpoint_roundtrip(tmp_path):
    m = VisionModelSNN()
    m.kc_log_threshold.data[:] = np.linspace(-1, 1, 1024)
    p = tmp_path / "s.avis"
    save_checkpoint(m, p)
    loaded = load_checkpoint(p, kind="snn")
    assert loaded.kind == "snn"
    assert loaded.kc_log_threshold.data.tobytes() == m.kc_log_threshold.data.tobytes()


def _rewrite(blob, mutate):
    """Decode the tensor table, mutate it, and re-encode with a valid CRC."""
    from kcvision.checkpoint import decode_checkpoint
    ck = decode_checkpoint(blob)
    mutate(ck.tensors)
    import io
    body = io.BytesIO()
    body.write(b"AVIS" + struct.pack("<HBB", 1, 0, 0))
    cfg = ck.config_json.encode()
    body.write(struct.pack("<I", len(cfg)) + cfg + struct.pack("<I", len(ck.tensors)))
    payload = io.BytesIO()
    for name, arr in ck.tensors.items():
        raw = np.ascontiguousarray(arr, "<f4").tobytes()
        body.write(struct.pack("<H", len(name)) + name.encode() + struct.pack("<BB", 0, arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.write(struct.pack("<QQ", payload.tell(), len(raw)))
        payload.write(raw)
    data = body.getvalue() + payload.getvalue()
    return data + struct.pack("<I", zlib.crc32(data))


def test_shape_mismatch_names_tensor(tmp_path, trained_like):
    blob = _rewrite(encode_checkpoint(trained_like),
                    lambda t: t.__setitem__("kc.bias", t["kc.bias"][:10]))
    p = tmp_path / "s.avis"
    p.write_bytes(blob)
    with pytest.raises(CheckpointError, match="kc.bias") as exc:
        load_checkpoint(p)
    assert exc.value.tensor == "kc.bias"


def test_missing_tensor_names_tensor(tmp_path, trained_like):
    blob = _rewrite(encode_checkpoint(trained_like), lambda t: t.pop("lamina.gamma"))
    p = tmp_path / "m.avis"
    p.write_bytes(blob)
    with pytest.raises(CheckpointError, match="lamina.gamma"):
        load_checkpoint(p)


def test_version_mismatch(tmp_path, trained_like):
    blob = bytearray(encode_checkpoint(trained_like))
    blob[4:6] = struct.pack("<H", 9)
    p = tmp_path / "v.avis"
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(p)


def test_desk_scale_preset_yields_to_explicit_keys(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nlr = 0.001\nn_images = 300\n")
    cfg = load_config(p, desk_scale=True)
    assert (cfg.train.n_images, cfg.train.lr) == (300, 0.001)
    assert (cfg.train.epochs, cfg.train.batch_size) == (3, 32)
    assert load_config(None, desk_scale=True).train.n_images == 2000
