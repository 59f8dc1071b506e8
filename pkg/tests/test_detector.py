import numpy as np
import pytest
import torch

from radet import errors
from radet.detector.losses import loss_bce, loss_comp, loss_ra
from radet.detector.model import RADetector, gradcheck, perturb
from radet.detector.nets import DrpNet, FrozenImageEncoder, Heads, to_tensor
from radet.detector.residual import median_residual


# ---- residual -------------------------------------------------------------

def test_residual_constant_image():
    assert np.all(median_residual(np.full((5, 5), 0.7)) == 0.0)


def test_residual_center_impulse():
    img = np.zeros((3, 3))
    img[1, 1] = 1.0
    res = median_residual(img)
    assert res[1, 1] == 1.0


def test_residual_brute_force(rng):
    img = rng.random((8, 8, 3))
    res = median_residual(img)
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    for i in range(8):
        for j in range(8):
            for c in range(3):
                window = pad[i:i + 3, j:j + 3, c].ravel()
                med = np.sort(window)[4]
                assert res[i, j, c] == img[i, j, c] - med


def test_residual_small_image_rejected():
    with pytest.raises(errors.DomainError):
        median_residual(np.zeros((2, 5)))


def test_residual_batch_consistency(rng):
    imgs = rng.random((4, 6, 6, 3))
    batched = median_residual(imgs)
    singles = np.stack([median_residual(im) for im in imgs])
    assert np.array_equal(batched, singles)


# ---- perturb --------------------------------------------------------------

def test_perturb_zero_delta():
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    assert torch.equal(perturb(x, torch.zeros_like(x)), x)


def test_perturb_clamps():
    x = torch.ones(1, 3, 4, 4, dtype=torch.float64)
    out = perturb(x, torch.full_like(x, 0.5))
    assert torch.all(out == 1.0)


def test_perturb_random_oracle(rng):
    x = torch.from_numpy(rng.random((2, 3, 5, 5)))
    d = torch.from_numpy(rng.uniform(-0.5, 0.5, (2, 3, 5, 5)))
    expect = np.clip((x + d).numpy(), 0.0, 1.0)
    assert np.array_equal(perturb(x, d).numpy(), expect)
    with pytest.raises(errors.ConfigurationError):
        perturb(x, d[:1])


# ---- losses ---------------------------------------------------------------

def test_bce_hand_cases():
    z = torch.zeros(4, dtype=torch.float64)
    y = torch.tensor([0, 1, 0, 1])
    assert float(loss_bce(z, y)) == pytest.approx(np.log(2.0), abs=1e-12)
    big = torch.tensor([30.0, -30.0], dtype=torch.float64)
    assert float(loss_bce(big, torch.tensor([1, 0]))) < 1e-10


def test_bce_random_oracle(rng):
    z = torch.from_numpy(rng.standard_normal(16))
    y = torch.from_numpy(rng.integers(0, 2, 16))
    p = 1.0 / (1.0 + np.exp(-z.numpy()))
    oracle = -np.mean(y.numpy() * np.log(p)
                      + (1 - y.numpy()) * np.log(1 - p))
    assert float(loss_bce(z, y)) == pytest.approx(oracle, abs=1e-10)


def test_loss_ra_hand_cases():
    sims = torch.tensor([0.95, 0.9], dtype=torch.float64)
    labels = torch.tensor([1, 0])
    val, skipped = loss_ra(sims, labels, 0.1)
    assert not skipped and float(val) == pytest.approx(0.05, abs=1e-12)
    val, skipped = loss_ra(torch.tensor([0.99, 0.8], dtype=torch.float64),
                           labels, 0.1)
    assert float(val) == 0.0 and not skipped


def test_loss_ra_single_class_skipped():
    val, skipped = loss_ra(torch.tensor([0.5, 0.6], dtype=torch.float64),
                           torch.tensor([1, 1]), 0.1)
    assert skipped and float(val) == 0.0


def test_loss_ra_exact_zero_iff_margin(rng):
    for _ in range(20):
        sims = torch.from_numpy(rng.uniform(-1, 1, 8))
        labels = torch.from_numpy(rng.integers(0, 2, 8))
        if labels.min() == labels.max():
            continue
        val, _ = loss_ra(sims, labels, 0.1)
        s = sims.numpy()
        y = labels.numpy()
        gap = s[y == 0].mean() - s[y == 1].mean() + 0.1
        if gap <= 0:
            assert float(val) == 0.0
        else:
            assert float(val) == pytest.approx(gap, abs=1e-12)


def test_loss_comp_is_sum(rng):
    z = torch.from_numpy(rng.standard_normal(8))
    sims = torch.from_numpy(rng.uniform(-1, 1, 8))
    y = torch.from_numpy(np.array([1, 0, 1, 0, 1, 0, 1, 0]))
    total = float(loss_comp(z, sims, y, 0.1))
    assert total == pytest.approx(float(loss_bce(z, y))
                                  + float(loss_ra(sims, y, 0.1)[0]), abs=1e-12)


# ---- DRP ------------------------------------------------------------------

def test_drp_budget_many_pairs():
    """Hard sup-norm budget across random inputs and random parameters."""
    eps = 8.0 / 255.0
    worst = 0.0
    n_pairs = 0
    gen = torch.Generator().manual_seed(0)
    for trial in range(100):
        torch.manual_seed(trial)
        drp = DrpNet(eps_pix=eps, image_hw=16)
        with torch.no_grad():
            for p in drp.parameters():
                p.copy_(3.0 * torch.randn(p.shape, generator=gen,
                                          dtype=torch.float64))
            x = torch.rand(100, 3, 16, 16, dtype=torch.float64,
                           generator=gen)
            e = torch.randn(100, 32, dtype=torch.float64, generator=gen)
            delta = drp(x, e)
        worst = max(worst, float(delta.abs().max()))
        n_pairs += 100
    assert n_pairs == 10_000
    assert worst <= eps


def test_drp_deterministic():
    torch.manual_seed(7)
    a = DrpNet(image_hw=16)
    torch.manual_seed(7)
    b = DrpNet(image_hw=16)
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    e = torch.randn(2, 32, dtype=torch.float64)
    assert torch.equal(a(x, e), b(x, e))


def test_drp_embedding_dim_check():
    drp = DrpNet(image_hw=16)
    with pytest.raises(errors.ConfigurationError):
        drp(torch.rand(1, 3, 16, 16, dtype=torch.float64),
            torch.zeros(1, 7, dtype=torch.float64))


# ---- encoder / heads ------------------------------------------------------

def test_frozen_encoder_requires_even_dim():
    with pytest.raises(errors.ConfigurationError):
        FrozenImageEncoder(emb_dim=7)


def test_frozen_encoder_hash_stable():
    a = FrozenImageEncoder(seed=3)
    b = FrozenImageEncoder(seed=3)
    c = FrozenImageEncoder(seed=4)
    assert a.param_hash() == b.param_hash() != c.param_hash()


def test_heads_zero_weights_give_half():
    heads = Heads()
    with torch.no_grad():
        for p in heads.parameters():
            p.zero_()
    e = torch.randn(4, 32, dtype=torch.float64)
    r = torch.randn(4, 3, 32, 32, dtype=torch.float64)
    agg = heads(e, e, r).detach()
    assert torch.all(agg == 0.0)
    assert np.allclose(1 / (1 + np.exp(-agg.numpy())), 0.5)


def test_heads_aggregate_matches_recompute():
    heads = Heads()
    e = torch.randn(4, 32, dtype=torch.float64)
    e2 = torch.randn(4, 32, dtype=torch.float64)
    r = torch.randn(4, 3, 32, 32, dtype=torch.float64)
    logits = heads.branch_logits(e, e2, r)
    agg = heads.aggregate(logits)
    manual = sum(logits[b] for b in heads.branches)
    assert torch.allclose(agg, manual, atol=1e-12)


def test_heads_single_branch():
    heads = Heads(branches=("res",))
    e = torch.randn(2, 32, dtype=torch.float64)
    r = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    logits = heads.branch_logits(e, e, r)
    assert set(logits) == {"res"}
    assert torch.equal(heads.aggregate(logits), logits["res"])
    with pytest.raises(errors.ConfigurationError):
        Heads(branches=("sem", "nope"))


# ---- estimator ------------------------------------------------------------

def test_fit_validates_labels(small_dataset):
    X = small_dataset.train_images[:8]
    m = RADetector(epochs=1)
    with pytest.raises(errors.ConfigurationError):
        m.fit(X, np.zeros(8))            # single class
    with pytest.raises(errors.ConfigurationError):
        m.fit(X, np.full(8, 2))          # bad values
    with pytest.raises(errors.DomainError):
        m.fit(X + 10.0, np.arange(8) % 2)  # out of range


def test_lr_zero_keeps_parameters(small_dataset):
    X = small_dataset.train_images[:16]
    y = small_dataset.train_labels[:16]
    m = RADetector(lr=0.0, epochs=2, seed=0)
    m.fit(X, y)
    torch.manual_seed(0)
    ref_enc = FrozenImageEncoder(3, 32, 0, 32, 1.5)
    ref_drp = DrpNet(3, 8, 32, 8.0 / 255.0, 32)
    for got, ref in zip(m.drp_.state_dict().values(),
                        ref_drp.state_dict().values()):
        assert torch.equal(got, ref)
    assert m.encoder_.param_hash() == ref_enc.param_hash()


def test_training_deterministic(small_dataset):
    X = small_dataset.train_images[:32]
    y = small_dataset.train_labels[:32]
    a = RADetector(epochs=2, seed=5).fit(X, y)
    b = RADetector(epochs=2, seed=5).fit(X, y)
    assert a.trace_ == b.trace_
    for pa, pb in zip(a.drp_.state_dict().values(),
                      b.drp_.state_dict().values()):
        assert torch.equal(pa, pb)
    for pa, pb in zip(a.heads_.state_dict().values(),
                      b.heads_.state_dict().values()):
        assert torch.equal(pa, pb)


def test_encoder_frozen_after_fit(small_model):
    assert small_model.encoder_.param_hash() == small_model.encoder_hash_


def test_overfit_separable_batch():
    """Eight separable images reach loss_comp < 0.05 within 500 steps."""
    rng = np.random.default_rng(0)
    X = np.concatenate([
        np.clip(0.8 + 0.05 * rng.standard_normal((4, 32, 32, 3)), 0, 1),
        np.clip(0.2 + 0.05 * rng.standard_normal((4, 32, 32, 3)), 0, 1)])
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    m = RADetector(epochs=63, batch_size=8, seed=0,  # 63 epochs = 504 steps
                   lr=5e-3)
    m.fit(X, y)
    final = m.trace_["loss_bce"][-1] + m.trace_["loss_ra"][-1]
    assert final < 0.05


def test_predict_batch_independence(small_model, small_dataset):
    X = small_dataset.test_images[:9]
    whole = small_model.decision_function(X)
    singles = np.concatenate([small_model.decision_function(x[None])
                              for x in X])
    assert np.allclose(whole, singles, atol=1e-12)


def test_predict_proba_shape_and_range(small_model, small_dataset):
    p = small_model.predict_proba(small_dataset.test_images[:6])
    assert p.shape == (6, 2)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all((p > 0) & (p < 1))
    pred = small_model.predict(small_dataset.test_images[:6])
    assert set(pred) <= {0, 1}


def test_unknown_branch_rejected(small_model, small_dataset):
    with pytest.raises(errors.ConfigurationError):
        small_model.score_images(small_dataset.test_images[:2],
                                 branches=("sem", "bogus"))


def test_unfitted_predict_rejected(small_dataset):
    with pytest.raises(errors.ConfigurationError):
        RADetector().decision_function(small_dataset.test_images[:2])


def test_adversarial_stub_rejected(small_dataset):
    m = RADetector(adversarial_drp=True)
    with pytest.raises(errors.ConfigurationError):
        m.fit(small_dataset.train_images[:8], small_dataset.train_labels[:8])


def test_sklearn_clone_roundtrip():
    from sklearn.base import clone
    m = RADetector(gamma=0.2, epochs=3)
    c = clone(m)
    assert c.get_params() == m.get_params()


# ---- gradcheck ------------------------------------------------------------

def test_gradcheck_small_net(small_model, small_dataset):
    X = small_dataset.test_images[:8]
    y = small_dataset.test_labels[:8]
    if y.min() == y.max():
        X = small_dataset.test_images[:16]
        y = small_dataset.test_labels[:16]
    err = gradcheck(small_model, X, y, n_params=50, seed=0)
    assert err <= 1e-4


def test_gradcheck_linear_head_closed_form():
    """Analytic gradient of BCE through an affine head matches (p - y) x."""
    heads = Heads(branches=("sem",))
    e = torch.randn(6, 32, dtype=torch.float64)
    y = torch.tensor([1, 0, 1, 0, 1, 0])
    logits = heads.sem(e).reshape(-1)
    loss = loss_bce(logits, y)
    loss.backward()
    p = torch.sigmoid(logits.detach())
    expect_w = ((p - y.to(torch.float64))[:, None] * e).mean(dim=0)
    assert torch.allclose(heads.sem.weight.grad.reshape(-1), expect_w,
                          atol=1e-12)
