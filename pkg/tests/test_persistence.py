import numpy as np
import pytest
import torch

from radet import errors
from radet.data import ToyImageDataset, ToyTaskConfig, make_toy_dataset
from radet.detector.checkpoint import load_checkpoint, save_checkpoint
from radet.detector.embeddings import (EmbeddingSet, predict_from_embeddings,
                                       read_embeddings, write_embeddings,
                                       write_embeddings_csv)


# ---- checkpoint -----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, small_model, small_dataset):
    path = tmp_path / "m.radet"
    save_checkpoint(small_model, path)
    loaded = load_checkpoint(path)
    X = small_dataset.test_images[:12]
    assert np.array_equal(loaded.decision_function(X),
                          small_model.decision_function(X))
    assert loaded.get_params() == small_model.get_params()
    for pa, pb in zip(small_model.drp_.state_dict().values(),
                      loaded.drp_.state_dict().values()):
        assert torch.equal(pa, pb)


def test_checkpoint_magic_validated(tmp_path, small_model):
    path = tmp_path / "m.radet"
    save_checkpoint(small_model, path)
    data = bytearray(path.read_bytes())
    data[:6] = b"BOGUS1"
    path.write_bytes(bytes(data))
    with pytest.raises(errors.DataFormatError, match="offset 0"):
        load_checkpoint(path)


def test_checkpoint_truncation_offset(tmp_path, small_model):
    path = tmp_path / "m.radet"
    save_checkpoint(small_model, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(errors.DataFormatError, match="offset"):
        load_checkpoint(path)


def test_checkpoint_deterministic_bytes(tmp_path, small_model):
    p1, p2 = tmp_path / "a.radet", tmp_path / "b.radet"
    save_checkpoint(small_model, p1)
    save_checkpoint(small_model, p2)
    assert p1.read_bytes() == p2.read_bytes()


# ---- embeddings -----------------------------------------------------------

def _toy_embeddings(rng, n=10, d=8, res_dim=None):
    res = None if res_dim is None else \
        rng.standard_normal((n, res_dim)).astype(np.float32)
    return EmbeddingSet(labels=rng.integers(0, 2, n),
                        clean=rng.standard_normal((n, d)).astype(np.float32),
                        perturbed=rng.standard_normal((n, d)).astype(np.float32),
                        residual=res)


def test_embeddings_binary_roundtrip(tmp_path, rng):
    emb = _toy_embeddings(rng, res_dim=5)
    path = tmp_path / "e.bin"
    write_embeddings(path, emb)
    back = read_embeddings(path)
    assert np.array_equal(back.labels, emb.labels)
    assert np.array_equal(back.clean, emb.clean)
    assert np.array_equal(back.perturbed, emb.perturbed)
    assert np.array_equal(back.residual, emb.residual)
    # bit-identical rewrite
    path2 = tmp_path / "e2.bin"
    write_embeddings(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_embeddings_no_residual_roundtrip(tmp_path, rng):
    emb = _toy_embeddings(rng)
    path = tmp_path / "e.bin"
    write_embeddings(path, emb)
    back = read_embeddings(path)
    assert back.residual is None
    assert np.array_equal(back.clean, emb.clean)


def test_embeddings_bad_magic(tmp_path, rng):
    path = tmp_path / "e.bin"
    write_embeddings(path, _toy_embeddings(rng))
    data = bytearray(path.read_bytes())
    data[:6] = b"XXXXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(errors.DataFormatError, match="offset 0"):
        read_embeddings(path)


def test_embeddings_truncation(tmp_path, rng):
    path = tmp_path / "e.bin"
    write_embeddings(path, _toy_embeddings(rng))
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(errors.DataFormatError, match="offset"):
        read_embeddings(path)


def test_embeddings_csv_roundtrip(tmp_path, rng):
    emb = _toy_embeddings(rng, n=6, d=4, res_dim=3)
    path = tmp_path / "e.csv"
    write_embeddings_csv(path, emb)
    back = read_embeddings(path)
    assert np.array_equal(back.labels, emb.labels)
    assert np.allclose(back.clean, emb.clean, atol=0)
    assert np.allclose(back.residual, emb.residual, atol=0)


def test_predict_cross_path_agreement(small_model, small_dataset):
    """In-process scoring equals the embedding-ingestion path."""
    X = small_dataset.test_images[:12]
    e, e2, res = small_model.embed(X)
    via_emb = predict_from_embeddings(small_model, e, e2, res)
    direct = small_model.score_images(X)
    assert np.allclose(via_emb, direct, atol=1e-10)


def test_predict_from_embeddings_skips_res_without_features(small_model,
                                                            small_dataset):
    X = small_dataset.test_images[:6]
    e, e2, _ = small_model.embed(X)
    got = predict_from_embeddings(small_model, e, e2, None)
    want = small_model.score_images(X, branches=("sem", "dist", "diff"))
    assert np.allclose(got, want, atol=1e-10)


# ---- dataset --------------------------------------------------------------

def test_dataset_roundtrip(tmp_path, small_dataset):
    path = tmp_path / "d.npz"
    small_dataset.save(path)
    back = ToyImageDataset.load(path)
    assert back.config == small_dataset.config
    assert np.array_equal(back.train_images, small_dataset.train_images)
    assert np.array_equal(back.test_labels, small_dataset.test_labels)


def test_dataset_bad_file(tmp_path):
    path = tmp_path / "d.npz"
    path.write_bytes(b"not a dataset")
    with pytest.raises(errors.DataFormatError):
        ToyImageDataset.load(path)


def test_dataset_deterministic():
    cfg = ToyTaskConfig(n_train=8, n_test=4, seed=11)
    a, b = make_toy_dataset(cfg), make_toy_dataset(cfg)
    assert np.array_equal(a.train_images, b.train_images)
    assert np.array_equal(a.test_images, b.test_images)


def test_dataset_class_balance_and_range(small_dataset):
    for labels in (small_dataset.train_labels, small_dataset.test_labels):
        assert labels.sum() * 2 == len(labels)
    assert small_dataset.train_images.min() >= 0.0
    assert small_dataset.train_images.max() <= 1.0


def test_dataset_memorization_knob_changes_fakes_only():
    base = dict(n_train=16, n_test=8, seed=3, noise_std=0.0)
    a = make_toy_dataset(ToyTaskConfig(lam_img=0.0, **base))
    b = make_toy_dataset(ToyTaskConfig(lam_img=1.0, **base))
    real_a = a.train_images[a.train_labels == 1]
    real_b = b.train_images[b.train_labels == 1]
    assert np.array_equal(np.sort(real_a.ravel()), np.sort(real_b.ravel()))
    fake_a = a.train_images[a.train_labels == 0]
    fake_b = b.train_images[b.train_labels == 0]
    assert not np.array_equal(np.sort(fake_a.ravel()), np.sort(fake_b.ravel()))


def test_dataset_config_validation():
    with pytest.raises(errors.ConfigurationError):
        ToyTaskConfig(lam_img=1.5)
    with pytest.raises(errors.ConfigurationError):
        ToyTaskConfig(image_hw=30)
