import json

import numpy as np
import pytest

from embedsafe.checkpoint import load_checkpoint, save_checkpoint
from embedsafe.embedding import EmbedderArch, EmbeddingNet
from embedsafe.errors import CheckpointError, MigrationError
from embedsafe.generator import GeneratorNet, IdentityGenerator, UNetArch

TINY_EMB = EmbedderArch(input_hw=(8, 8), channels=(2, 3), hidden=5, embed_dim=4)
TINY_GEN = UNetArch(input_hw=(8, 8), channels=(2, 3), bottleneck=4)


def read(path):
    return open(path, "rb").read()


def patch_manifest(path, out, mutate):
    """Decode, mutate, and re-encode a checkpoint's manifest."""
    blob = read(path)
    mlen = int.from_bytes(blob[4:8], "little")
    manifest = json.loads(blob[8 : 8 + mlen])
    mutate(manifest)
    enc = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(out, "wb") as f:
        f.write(blob[:4] + len(enc).to_bytes(4, "little") + enc + blob[8 + mlen :])


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_bit_exact_embedder(tmp_path, seed):
    net = EmbeddingNet.init(seed, TINY_EMB)
    p1 = str(tmp_path / "a.ckpt")
    save_checkpoint(net, p1, config_echo={"seed": seed})
    loaded = load_checkpoint(p1)
    for k, v in net.params.items():
        assert np.array_equal(loaded.model.params[k], v)
        assert loaded.model.params[k].dtype == v.dtype
    p2 = str(tmp_path / "b.ckpt")
    save_checkpoint(loaded.model, p2, config_echo=loaded.manifest["config"])
    assert read(p1) == read(p2)


@pytest.mark.parametrize("seed", range(3))
def test_round_trip_bit_exact_generator(tmp_path, seed):
    gen = GeneratorNet.init(seed, TINY_GEN)
    p1 = str(tmp_path / "g.ckpt")
    save_checkpoint(gen, p1)
    loaded = load_checkpoint(p1)
    assert loaded.manifest["model_kind"] == "generator"
    p2 = str(tmp_path / "g2.ckpt")
    save_checkpoint(loaded.model, p2)
    assert read(p1) == read(p2)


def test_identity_checkpoint(tmp_path):
    path = str(tmp_path / "id.ckpt")
    save_checkpoint(IdentityGenerator(), path)
    loaded = load_checkpoint(path)
    assert isinstance(loaded.model, IdentityGenerator)
    img = np.random.rand(28, 28, 1).astype(np.float32)
    assert np.array_equal(loaded.model.distort(img), img)


def test_config_echo_preserved(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB)
    path = str(tmp_path / "c.ckpt")
    save_checkpoint(net, path, config_echo={"margin": 0.2, "epochs": 3})
    assert load_checkpoint(path).manifest["config"] == {"margin": 0.2, "epochs": 3}


def test_truncated_blob_rejected(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB)
    path = str(tmp_path / "t.ckpt")
    save_checkpoint(net, path)
    blob = read(path)
    open(path, "wb").write(blob[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "m.ckpt")
    open(path, "wb").write(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_future_version_rejected(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB)
    p1 = str(tmp_path / "v.ckpt")
    p2 = str(tmp_path / "v2.ckpt")
    save_checkpoint(net, p1)

    def bump(man):
        man["format_version"] = 99

    patch_manifest(p1, p2, bump)
    with pytest.raises(MigrationError):
        load_checkpoint(p2)


def test_corrupted_offset_rejected(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB)
    p1 = str(tmp_path / "o.ckpt")
    p2 = str(tmp_path / "o2.ckpt")
    save_checkpoint(net, p1)

    def shift(man):
        man["tensors"][-1]["offset"] += 100000

    patch_manifest(p1, p2, shift)
    with pytest.raises(CheckpointError):
        load_checkpoint(p2)


def test_shape_mismatch_rejected(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB)
    p1 = str(tmp_path / "s.ckpt")
    p2 = str(tmp_path / "s2.ckpt")
    save_checkpoint(net, p1)

    def reshape(man):
        man["tensors"][0]["shape"] = [1, 1, 1, 2]

    patch_manifest(p1, p2, reshape)
    with pytest.raises(CheckpointError):
        load_checkpoint(p2)


def test_float64_tensors_round_trip(tmp_path):
    net = EmbeddingNet.init(0, TINY_EMB, dtype=np.float64)
    path = str(tmp_path / "d.ckpt")
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.model.params["fc0_w"].dtype == np.float64
    assert np.array_equal(loaded.model.params["fc0_w"], net.params["fc0_w"])
