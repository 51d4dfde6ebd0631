"""Architecture behavior: heads, conditioning, embeddings, checkpoints."""

import numpy as np
import pytest

from fedgtea import numkit as nk
from fedgtea.checkpoint import load_model, read_arrays, save_model, write_arrays
from fedgtea.errors import DataFormatError, ShapeError
from fedgtea.models import (
    ArchConfig,
    ClientModels,
    cate_embed_batch,
    discriminate,
    generate,
)
from fedgtea.seeding import seed_sequence

from helpers import check_gradients

TOY = ArchConfig.toy(num_classes=4)


def make_models(seed=0, arch=TOY):
    return ClientModels.init(arch, seed_sequence(seed, "models"))


def test_toy_channel_scaling():
    assert TOY.disc_channels == (4, 4, 8, 16, 32, 64)
    assert TOY.gen_channels == (48, 24, 12, 6, 1)


def test_full_arch_keeps_paper_channels():
    full = ArchConfig.full(num_classes=10)
    assert full.disc_channels == (16, 32, 64, 128, 256, 512)
    assert full.gen_channels == (384, 192, 96, 48, 3)


def test_generator_output_shape_and_range():
    for arch in (TOY, ArchConfig.toy(num_classes=3, image_shape=(3, 16, 16))):
        m = make_models(arch=arch)
        images, labels = generate(m.gen, [0, 1, 2], rng_seed=5)
        assert images.shape == (3, *arch.image_shape)
        assert np.abs(images).max() <= 1.0
        np.testing.assert_array_equal(labels, [0, 1, 2])


def test_generate_deterministic_and_label_checked():
    m = make_models()
    a, _ = generate(m.gen, [1, 3, 2], rng_seed=9)
    b, _ = generate(m.gen, [1, 3, 2], rng_seed=9)
    np.testing.assert_array_equal(a, b)
    c, _ = generate(m.gen, [1, 3, 2], rng_seed=10)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        generate(m.gen, [4], rng_seed=0)


def test_generator_nondegenerate_in_noise():
    m = make_models()
    rng = np.random.default_rng(0)
    z1, z2 = rng.standard_normal((2, 1, TOY.z_dim))
    onehot = np.zeros((1, 4))
    onehot[0, 2] = 1.0
    img1 = m.gen.forward(nk.constant(z1), nk.constant(onehot)).data
    img2 = m.gen.forward(nk.constant(z2), nk.constant(onehot)).data
    assert np.abs(img1 - img2).max() > 1e-6


def test_class_conditioning_reaches_output():
    m = make_models()
    means = []
    for cls in (0, 1):
        images, _ = generate(m.gen, [cls] * 64, rng_seed=77)
        means.append(images.mean())
    assert abs(means[0] - means[1]) > 1e-6


def test_cate_embed_singleton_and_duplicates():
    m = make_models()
    x = np.random.default_rng(1).standard_normal((1, *TOY.image_shape))
    single = cate_embed_batch(m.cate, nk.constant(x)).data
    per_example = m.cate.embed(nk.constant(x)).data[0]
    np.testing.assert_allclose(single, per_example, atol=1e-15)
    doubled = cate_embed_batch(m.cate, nk.constant(np.concatenate([x, x]))).data
    np.testing.assert_allclose(doubled, single, atol=1e-15)


def test_cate_embed_permutation_invariant():
    m = make_models()
    rng = np.random.default_rng(2)
    x = rng.standard_normal((16, *TOY.image_shape))
    base = cate_embed_batch(m.cate, nk.constant(x)).data
    perm = cate_embed_batch(m.cate, nk.constant(x[rng.permutation(16)])).data
    np.testing.assert_allclose(perm, base, atol=1e-12)


def test_cate_emb_variance_shrinks_with_batch_size():
    m = make_models()
    rng = np.random.default_rng(3)
    pool = rng.standard_normal((4096, *TOY.image_shape))

    def embed_trace(batch_size):
        embeds = []
        for _ in range(64):
            idx = rng.choice(len(pool), size=batch_size, replace=False)
            embeds.append(cate_embed_batch(m.cate, nk.constant(pool[idx])).data)
        embeds = np.stack(embeds)
        return np.trace(np.cov(embeds.T))

    assert embed_trace(64) <= embed_trace(8)


def test_rf_head_ignores_embedding():
    m = make_models()
    rng = np.random.default_rng(4)
    img = rng.standard_normal(TOY.image_shape)
    rf1, cls1 = discriminate(m.disc, img, rng.standard_normal(TOY.embed_dim))
    rf2, cls2 = discriminate(m.disc, img, rng.standard_normal(TOY.embed_dim))
    assert rf1 == rf2
    assert not np.allclose(cls1, cls2)


def test_zeroed_class_head_gives_flat_logits():
    m = make_models()
    m.disc.class_head.w.data[:] = 0.0
    m.disc.class_head.b.data[:] = 0.0
    _, cls = discriminate(m.disc, np.zeros(TOY.image_shape), np.ones(TOY.embed_dim))
    np.testing.assert_array_equal(cls, np.zeros(4))


def test_embedding_dim_checked():
    m = make_models()
    with pytest.raises(ShapeError):
        discriminate(m.disc, np.zeros(TOY.image_shape), np.zeros(TOY.embed_dim + 1))


def test_class_logit_gradient_wrt_embedding():
    m = make_models()
    rng = np.random.default_rng(5)
    img = rng.standard_normal((3, *TOY.image_shape))
    feats = m.disc.features(nk.constant(img)).data
    e0 = rng.standard_normal(TOY.embed_dim)

    def build(e):
        logits = m.disc.class_logits(nk.constant(feats), e)
        return nk.mean(nk.mul(logits, logits))

    check_gradients(build, [e0], seed=6)


def test_init_deterministic_and_param_count_stable():
    a = make_models(seed=11)
    b = make_models(seed=11)
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    c = make_models(seed=12)
    assert not np.array_equal(a.to_vector(), c.to_vector())
    cate_count = sum(p.size for _, p in a.cate.named_params())
    assert cate_count == sum(p.size for _, p in make_models(seed=13).cate.named_params())


def test_vector_round_trip_bitwise():
    m = make_models(seed=20)
    vec = m.to_vector()
    other = make_models(seed=21)
    other.from_vector(vec)
    np.testing.assert_array_equal(other.to_vector(), vec)
    with pytest.raises(ShapeError):
        other.from_vector(vec[:-1])


def test_model_checkpoint_round_trip(tmp_path):
    m = make_models(seed=30)
    path = tmp_path / "model.ckpt"
    save_model(path, m, extra={"note": "fixture"})
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.to_vector(), m.to_vector())
    assert loaded.arch == m.arch


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataFormatError):
        read_arrays(path)
    good = tmp_path / "trunc.ckpt"
    write_arrays(good, {"kind": "model"}, [("a", np.arange(4.0))])
    blob = good.read_bytes()
    good.write_bytes(blob[:-8])
    with pytest.raises(DataFormatError):
        read_arrays(good)
