import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ascl.datastore import (ImageFeatures, PairedDataset, SynthConfig, TextFeatures, dataset_from_dict,
                            dataset_to_dict, datasets_equal, generate_synthetic, load_dataset,
                            load_features, make_batches, nearest_centroid_accuracy, save_features,
                            save_manifest)
from ascl.errors import ConfigError, FormatError, NumericError, PairingError, ShapeError


def small_dataset(seed=0, n_images=3, dim=4, f32=True):
    rng = np.random.default_rng(seed)
    cast = (lambda a: a.astype(np.float32).astype(np.float64)) if f32 else (lambda a: a)
    images = [ImageFeatures(f"im{i}", cast(rng.standard_normal((int(rng.integers(1, 4)), dim))),
                            cast(rng.standard_normal(dim))) for i in range(n_images)]
    captions = [TextFeatures(f"im{i}_{j}", f"im{i}", cast(rng.standard_normal((int(rng.integers(1, 6)), dim))),
                             ("train", "val", "test")[j % 3])
                for i in range(n_images) for j in range(2)]
    return PairedDataset(images, captions)


def test_containers_validate():
    with pytest.raises(NumericError):
        ImageFeatures("a", [[np.inf, 0.0]], [0.0, 0.0])
    with pytest.raises(ShapeError):
        ImageFeatures("a", np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError):
        TextFeatures("t", "a", np.zeros((0, 3)))
    img = ImageFeatures("a", np.ones((1, 2)), np.ones(2))
    with pytest.raises(PairingError):
        PairedDataset([img], [TextFeatures("t", "b", np.ones((1, 2)))])
    with pytest.raises(ShapeError):
        PairedDataset([img], [TextFeatures("t", "a", np.ones((1, 3)))])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 6))
def test_binary_round_trip_is_exact(tmp_path_factory, seed, n_images, dim):
    ds = small_dataset(seed, n_images, dim)
    path = tmp_path_factory.mktemp("rt") / "d.ascl"
    save_features(ds, path)
    back = load_features(path)
    assert datasets_equal(ds, back)
    save_features(back, path.with_suffix(".2"))
    assert path.read_bytes() == path.with_suffix(".2").read_bytes()


def test_round_trip_of_float64_is_float32_granular(tmp_path):
    ds = small_dataset(1, f32=False)
    save_features(ds, tmp_path / "d.ascl")
    back = load_features(tmp_path / "d.ascl")
    np.testing.assert_array_equal(back.images[0].regions, ds.images[0].regions.astype(np.float32))


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        load_features(tmp_path / "x")


def test_bad_version_reports_offset(tmp_path):
    (tmp_path / "x").write_bytes(b"ASCL" + struct.pack("<IIII", 9, 4, 0, 0))
    with pytest.raises(FormatError, match="offset 4"):
        load_features(tmp_path / "x")


def test_record_dimension_mismatch_names_record(tmp_path):
    img = struct.pack("<I", 3) + b"im0" + struct.pack("<II", 512, 1) + bytes(4 * 512 * 2)
    (tmp_path / "x").write_bytes(b"ASCL" + struct.pack("<IIII", 1, 1024, 1, 0) + img)
    with pytest.raises(FormatError, match="'im0'.*512.*1024"):
        load_features(tmp_path / "x")


def test_truncated_file(tmp_path):
    save_features(small_dataset(), tmp_path / "d")
    raw = (tmp_path / "d").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_features(tmp_path / "t")
    (tmp_path / "t").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_features(tmp_path / "t")


def test_manifest_round_trip(tmp_path):
    ds = small_dataset(2)
    save_manifest(ds, tmp_path / "d.json")
    assert datasets_equal(load_dataset(tmp_path / "d.json"), ds)
    assert datasets_equal(dataset_from_dict(dataset_to_dict(ds)), ds)
    with pytest.raises(FormatError):
        dataset_from_dict({"images": [{"id": 1}]})


def test_synthetic_is_deterministic():
    cfg = SynthConfig(clusters=4, dim=16)
    assert datasets_equal(generate_synthetic(cfg, 7), generate_synthetic(cfg, 7))
    assert not datasets_equal(generate_synthetic(cfg, 7), generate_synthetic(cfg, 8))


def test_synthetic_shapes_and_splits():
    ds = generate_synthetic(SynthConfig(clusters=6, captions_per_image=4, dim=16, regions=5), 0)
    assert len(ds.images) == 6 and len(ds.captions) == 24
    assert all(img.regions.shape == (5, 16) for img in ds.images)
    assert all(6 <= c.word_count <= 12 for c in ds.captions)
    assert len(ds.split_indices("test")) == 6
    assert all(len(g) == 3 for g in ds.caption_groups("train").values())


def test_synthetic_noise_free_separation():
    ds = generate_synthetic(SynthConfig(clusters=4, noise=0.0), 0)
    latent = np.stack([img.regions.mean(axis=0) for img in ds.images])
    latent /= np.linalg.norm(latent, axis=1, keepdims=True)
    sims = latent @ latent.T
    for i in range(4):
        assert all(sims[i, i] > sims[i, j] for j in range(4) if j != i)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 32))
def test_noise_free_captions_match_own_image(seed, clusters):
    # holds whenever the concept bank fits in D (orthonormal concepts)
    cfg = SynthConfig(clusters=clusters, dim=64, shared_concepts=64 - clusters, noise=0.0)
    assert nearest_centroid_accuracy(generate_synthetic(cfg, seed)) == 1.0


def test_nearest_centroid_oracle_at_default_noise():
    for seed in range(3):
        assert nearest_centroid_accuracy(generate_synthetic(SynthConfig(), seed)) >= 0.95


def test_twins_defeat_mean_pooling():
    # twins share every concept, so mean pooling can at best guess between them
    ds = generate_synthetic(SynthConfig(twins=True, noise=0.0), 0)
    assert nearest_centroid_accuracy(ds) < 0.8
    a, b = ds.images[0].regions, ds.images[1].regions
    np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=1e-12)
    assert not np.allclose(np.sort(a, axis=0), np.sort(b, axis=0))


def test_asymmetric_variants_change_lengths():
    plain = generate_synthetic(SynthConfig(clusters=8, dim=16), 3)
    asym = generate_synthetic(SynthConfig(clusters=8, dim=16, asymmetric=1.0), 3)
    lengths = [c.word_count for c in asym.captions]
    assert max(lengths) > 12 or min(lengths) < 6
    assert len(asym.captions) == len(plain.captions)


def test_synth_config_errors():
    for bad in (dict(clusters=1), dict(captions_per_image=1), dict(test_captions=5),
                dict(min_words=5, max_words=4), dict(twins=True, clusters=5), dict(noise=-1.0)):
        with pytest.raises(ConfigError):
            SynthConfig(**bad).validate()


def ten_pairs():
    img = ImageFeatures("a", np.ones((1, 2)), np.ones(2))
    caps = [TextFeatures(f"t{j}", "a", np.full((1, 2), j + 1.0)) for j in range(10)]
    return PairedDataset([img], caps)


def test_batches_drop_remainder():
    assert [len(b) for b in make_batches(ten_pairs(), 4)] == [4, 4]


def test_batches_unshuffled_keep_order():
    b = make_batches(ten_pairs(), 3, shuffle=False)
    assert [t.text_id for t in b[0].texts] == ["t0", "t1", "t2"]
    assert b[2].caption_indices.tolist() == [6, 7, 8]


def test_batches_seeded_and_partitioning():
    ds = generate_synthetic(SynthConfig(clusters=5, dim=8), 0)
    a = make_batches(ds, 3, seed=11)
    b = make_batches(ds, 3, seed=11)
    assert [x.caption_indices.tolist() for x in a] == [x.caption_indices.tolist() for x in b]
    used = np.concatenate([x.caption_indices for x in a])
    assert len(set(used.tolist())) == len(used) == 18
    assert set(used.tolist()) <= set(ds.split_indices("train"))
    for batch in a:
        assert all(t.parent_image == im.image_id for im, t in zip(batch.images, batch.texts))


def test_batch_errors():
    with pytest.raises(ConfigError):
        make_batches(ten_pairs(), 1)
    with pytest.raises(ConfigError):
        make_batches(ten_pairs(), 11)
