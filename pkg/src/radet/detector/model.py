"""RA detector: joint training of the perturbation generator and branch heads.

The estimator follows the fit/predict convention; the frozen encoder is built
from its seed at fit time and never updated (verified by parameter hash).
"""
from __future__ import annotations

import copy
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from ..errors import ConfigurationError, DomainError, NumericError
from .losses import loss_bce, loss_comp, loss_ra
from .nets import DTYPE, DrpNet, FrozenImageEncoder, Heads, to_tensor
from .residual import median_residual

logger = logging.getLogger(__name__)


def perturb(img: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """x' = clamp(x + delta, 0, 1)."""
    if img.shape != delta.shape:
        raise ConfigurationError("image/perturbation shape mismatch")
    return torch.clamp(img + delta, 0.0, 1.0)


def _cosine(e: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.cosine_similarity(e, e2, dim=1, eps=1e-12)


class RADetector(BaseEstimator, ClassifierMixin):
    """Robustness-asymmetry image detector (label 1 = real, 0 = generated).

    Parameters mirror the desk-scale protocol: composite BCE + margin-hinge
    objective, Adam, one perturbed view per image per step.
    """

    def __init__(self, eps_pix: float = 8.0 / 255.0, gamma: float = 0.1,
                 lr: float = 1e-3, batch_size: int = 32, epochs: int = 10,
                 seed: int = 0, emb_dim: int = 32,
                 branches: tuple = Heads.BRANCHES,
                 learned_agg: bool = False, adversarial_drp: bool = False,
                 encoder_seed: int = 0, encoder_gain: float = 1.5,
                 image_hw: int = 32, channels: int = 3, drp_width: int = 8):
        self.eps_pix = eps_pix
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.emb_dim = emb_dim
        self.branches = branches
        self.learned_agg = learned_agg
        self.adversarial_drp = adversarial_drp
        self.encoder_seed = encoder_seed
        self.encoder_gain = encoder_gain
        self.image_hw = image_hw
        self.channels = channels
        self.drp_width = drp_width

    # ---- module construction --------------------------------------------

    def _build(self):
        if self.gamma <= 0:
            raise ConfigurationError("margin gamma must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be >= 2")
        if self.adversarial_drp:
            raise ConfigurationError(
                "adversarial DRP inner step is a stub; use joint descent")
        torch.manual_seed(self.seed)
        self.encoder_ = FrozenImageEncoder(self.channels, self.emb_dim,
                                           self.encoder_seed, self.image_hw,
                                           self.encoder_gain)
        self.drp_ = DrpNet(self.channels, self.drp_width, self.emb_dim,
                           self.eps_pix, self.image_hw)
        self.heads_ = Heads(self.emb_dim, self.channels, self.branches,
                            self.learned_agg)
        self.encoder_hash_ = self.encoder_.param_hash()

    def _check_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4 or X.shape[3] != self.channels \
                or X.shape[1] != self.image_hw or X.shape[2] != self.image_hw:
            raise ConfigurationError(
                f"expected images N x {self.image_hw} x {self.image_hw} x "
                f"{self.channels}, got {X.shape}")
        if X.min() < 0.0 or X.max() > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        return X

    def _forward(self, x: torch.Tensor, r: torch.Tensor):
        e = self.encoder_(x)
        delta = self.drp_(x, e)
        e2 = self.encoder_(perturb(x, delta))
        logits = self.heads_.branch_logits(e, e2, r)
        return e, e2, logits, _cosine(e, e2)

    # ---- training --------------------------------------------------------

    def fit(self, X, y):
        X = self._check_images(X)
        y = np.asarray(y).ravel().astype(int)
        if len(y) != len(X) or not np.all(np.isin(y, (0, 1))):
            raise ConfigurationError("labels must be 0/1, one per image")
        if y.min() == y.max():
            raise ConfigurationError("training set needs both classes")
        self._build()
        trainable = list(self.drp_.parameters()) + \
            [p for p in self.heads_.parameters() if p.requires_grad]
        opt = torch.optim.Adam(trainable, lr=self.lr, betas=(0.9, 0.999),
                               eps=1e-8)
        order_rng = np.random.default_rng(self.seed)
        residuals = to_tensor(median_residual(X))
        images = to_tensor(X)
        labels = torch.from_numpy(y)

        self.trace_ = {"loss_bce": [], "loss_ra": [], "s_real": [],
                       "s_fake": []}
        last_good = self._snapshot()
        for _ in range(self.epochs):
            perm = order_rng.permutation(len(X))
            ep_bce, ep_ra, n_b = 0.0, 0.0, 0
            for start in range(0, len(X), self.batch_size):
                idx = perm[start:start + self.batch_size]
                if len(idx) < 2:
                    continue
                xb, rb, yb = images[idx], residuals[idx], labels[idx]
                _, _, logits, sims = self._forward(xb, rb)
                agg = self.heads_.aggregate(logits)
                bce = loss_bce(agg, yb)
                ra, skipped = loss_ra(sims, yb, self.gamma)
                loss = bce + ra
                if not torch.isfinite(loss):
                    logger.warning("non-finite loss; restoring last checkpoint")
                    self._restore(last_good)
                    return self
                opt.zero_grad()
                loss.backward()
                opt.step()
                ep_bce += float(bce.detach())
                ep_ra += float(ra.detach())
                n_b += 1
                sim_np = sims.detach().numpy()
                y_np = yb.numpy()
                self.trace_["s_real"].append(float(sim_np[y_np == 1].mean())
                                             if (y_np == 1).any() else np.nan)
                self.trace_["s_fake"].append(float(sim_np[y_np == 0].mean())
                                             if (y_np == 0).any() else np.nan)
            self.trace_["loss_bce"].append(ep_bce / max(1, n_b))
            self.trace_["loss_ra"].append(ep_ra / max(1, n_b))
            last_good = self._snapshot()
        if self.encoder_.param_hash() != self.encoder_hash_:
            raise NumericError("frozen encoder parameters changed during fit")
        self.classes_ = np.array([0, 1])
        return self

    def _snapshot(self):
        return {"drp": copy.deepcopy(self.drp_.state_dict()),
                "heads": copy.deepcopy(self.heads_.state_dict())}

    def _restore(self, snap):
        self.drp_.load_state_dict(snap["drp"])
        self.heads_.load_state_dict(snap["heads"])

    # ---- inference -------------------------------------------------------

    def _scores(self, X, branches=None) -> np.ndarray:
        if not hasattr(self, "heads_"):
            raise ConfigurationError("detector is not fitted")
        X = self._check_images(X)
        out = np.empty(len(X))
        use = tuple(branches) if branches is not None else self.heads_.branches
        unknown = set(use) - set(self.heads_.branches)
        if unknown:
            raise ConfigurationError(f"unavailable branches {sorted(unknown)}")
        with torch.no_grad():
            for start in range(0, len(X), 256):
                xb = to_tensor(X[start:start + 256])
                rb = to_tensor(median_residual(X[start:start + 256]))
                _, _, logits, _ = self._forward(xb, rb)
                agg = sum(logits[b] for b in use)
                out[start:start + 256] = agg.numpy()
        return out

    def decision_function(self, X) -> np.ndarray:
        return self._scores(X)

    def predict_proba(self, X) -> np.ndarray:
        p = 1.0 / (1.0 + np.exp(-self._scores(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self._scores(X) >= 0.0).astype(int)

    def score_images(self, X, branches=None) -> np.ndarray:
        """Probability of 'real' from the selected branch subset."""
        return 1.0 / (1.0 + np.exp(-self._scores(X, branches)))

    def embed(self, X):
        """Clean/perturbed embeddings and residual features for export."""
        X = self._check_images(X)
        resid = median_residual(X)
        with torch.no_grad():
            xb = to_tensor(X)
            e = self.encoder_(xb)
            e2 = self.encoder_(perturb(xb, self.drp_(xb, e)))
        # residual exported in H x W x C order, one flat row per image
        return e.numpy(), e2.numpy(), resid.reshape(len(X), -1)


def gradcheck(model: RADetector, X, y, n_params: int = 50, h: float = 1e-4,
              seed: int = 0) -> float:
    """Max relative error of autograd vs central differences on loss_comp.

    Parameters whose perturbation crosses the hinge kink are excluded via a
    margin-distance filter (the subgradient convention makes the two sides
    disagree there by definition, not by error).
    """
    X = model._check_images(X)
    y = torch.from_numpy(np.asarray(y).ravel().astype(int))
    xb = to_tensor(X)
    rb = to_tensor(median_residual(X))

    def closure():
        _, _, logits, sims = model._forward(xb, rb)
        return loss_comp(model.heads_.aggregate(logits), sims, y, model.gamma)

    def margin_gap():
        with torch.no_grad():
            _, _, _, sims = model._forward(xb, rb)
            s = sims.numpy()
            yn = y.numpy()
            return float(s[yn == 0].mean() - s[yn == 1].mean() + model.gamma)

    if abs(margin_gap()) < 1e-4:
        raise NumericError("batch sits on the hinge kink; redraw the batch")

    params = [p for p in list(model.drp_.parameters())
              + list(model.heads_.parameters()) if p.requires_grad]
    loss = closure()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    flat = []
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat.extend((p, i, float(g.reshape(-1)[i]))
                    for i in range(p.numel()))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(flat), size=min(n_params, len(flat)),
                        replace=False)
    worst = 0.0
    for ci in chosen:
        p, i, g_an = flat[ci]
        orig = float(p.data.view(-1)[i])
        p.data.view(-1)[i] = orig + h
        lp = float(closure().detach())
        p.data.view(-1)[i] = orig - h
        lm = float(closure().detach())
        p.data.view(-1)[i] = orig
        g_fd = (lp - lm) / (2 * h)
        denom = max(1e-8, abs(g_an), abs(g_fd))
        worst = max(worst, abs(g_an - g_fd) / denom)
    return worst
