"""Synthetic data manifold, training-neighborhood tube, and density-known generator.

The real distribution lives on a graph-type embedded manifold t -> (t, g(t))
with g a finite sum of bounded sinusoidal features, so tangent/normal
decompositions and all log-densities are available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError

_MAX_AMBIENT_DIM = 64


@dataclass(frozen=True)
class ManifoldSpec:
    """Configuration of a graph-embedded manifold t -> (t, g(t))."""

    intrinsic_dim: int = 1
    ambient_dim: int = 2
    seed: int = 0
    n_terms: int = 4
    amplitude: float = 0.5
    freq_scale: float = 1.0
    latent_halfwidth: float = 2.0
    # Explicit sinusoid parameters override the seeded random draw.
    coeffs: tuple | None = None  # (c, w, phi) arrays, see ManifoldModel

    @staticmethod
    def flat_line(n: int = 2) -> "ManifoldSpec":
        """g(t) = 0: the manifold is the first coordinate axis (plane for m=2)."""
        c = np.zeros((n - 1, 1))
        w = np.zeros((1, 1))
        phi = np.zeros(1)
        return ManifoldSpec(intrinsic_dim=1, ambient_dim=n, coeffs=(c, w, phi))

    @staticmethod
    def sine_graph(n: int = 2, amplitude: float = 1.0,
                   frequency: float = 1.0) -> "ManifoldSpec":
        """m=1 graph of g(t) = amplitude * sin(frequency * t) in the second coordinate."""
        c = np.zeros((n - 1, 1))
        c[0, 0] = amplitude
        w = np.array([[frequency]])
        phi = np.zeros(1)
        return ManifoldSpec(intrinsic_dim=1, ambient_dim=n, coeffs=(c, w, phi))


class ManifoldModel:
    """Immutable graph embedding with analytic chart, tangent and normal spaces.

    g_j(t) = sum_k c[j,k] * sin(w[k]@t + phi[k]) for j in 0..(n-m-1).
    """

    def __init__(self, spec: ManifoldSpec):
        m, n = spec.intrinsic_dim, spec.ambient_dim
        if not (1 <= m < n <= _MAX_AMBIENT_DIM):
            raise ConfigurationError(
                f"need 1 <= m < n <= {_MAX_AMBIENT_DIM}, got m={m}, n={n}")
        if spec.latent_halfwidth <= 0:
            raise ConfigurationError("latent_halfwidth must be positive")
        self.spec = spec
        self.m = m
        self.n = n
        if spec.coeffs is not None:
            c, w, phi = (np.asarray(a, dtype=float) for a in spec.coeffs)
        else:
            rng = np.random.default_rng(spec.seed)
            k = spec.n_terms
            # Coefficients decay with term index so g stays bounded and smooth.
            c = spec.amplitude * rng.uniform(-1.0, 1.0, size=(n - m, k))
            c /= np.maximum(1.0, np.arange(1, k + 1))
            w = spec.freq_scale * rng.uniform(0.5, 2.0, size=(k, m))
            phi = rng.uniform(0.0, 2 * np.pi, size=k)
        if c.shape != (n - m, w.shape[0]) or w.shape[1] != m:
            raise ConfigurationError("inconsistent sinusoid coefficient shapes")
        if not np.all(np.isfinite(c)) or np.max(np.abs(c), initial=0.0) > 1e3:
            raise ConfigurationError("sinusoid coefficients must be finite and bounded")
        self._c = c
        self._w = w
        self._phi = phi

    # ---- chart -----------------------------------------------------------

    def g(self, t: np.ndarray) -> np.ndarray:
        """Graph map R^m -> R^(n-m), vectorized over leading axes."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        phase = t @ self._w.T + self._phi  # (k, K)
        return np.sin(phase) @ self._c.T   # (k, n-m)

    def dg(self, t: np.ndarray) -> np.ndarray:
        """Jacobian of g: shape (k, n-m, m)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        phase = t @ self._w.T + self._phi          # (k, K)
        dsin = np.cos(phase)                       # (k, K)
        return np.einsum("jK,kK,Km->kjm", self._c, dsin, self._w)

    def d2g(self, t: np.ndarray) -> np.ndarray:
        """Second derivative of g: shape (k, n-m, m, m)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        phase = t @ self._w.T + self._phi
        dd = -np.sin(phase)                        # (k, K)
        return np.einsum("jK,kK,Km,Kl->kjml", self._c, dd, self._w, self._w)

    def chart(self, t: np.ndarray) -> np.ndarray:
        """Embed chart coordinates: t -> (t, g(t)), shape (k, n)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return np.concatenate([t, self.g(t)], axis=1)

    def chart_residual(self, x: np.ndarray) -> np.ndarray:
        """Graph-equation residual x[m:] - g(x[:m]); zero exactly on the manifold."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, self.m:] - self.g(x[:, :self.m])

    # ---- tangent / normal ------------------------------------------------

    def tangent_basis(self, t: np.ndarray) -> np.ndarray:
        """Orthonormal tangent basis at chart coordinate t, shape (n, m)."""
        t = np.asarray(t, dtype=float).reshape(1, self.m)
        raw = np.concatenate([np.eye(self.m), self.dg(t)[0]], axis=0)  # (n, m)
        q, _ = np.linalg.qr(raw)
        # Fix sign so the basis is deterministic.
        sign = np.sign(np.diag(q[: self.m, :]))
        sign[sign == 0] = 1.0
        return q * sign

    def normal_basis(self, t: np.ndarray) -> np.ndarray:
        """Orthonormal normal basis at chart coordinate t, shape (n, n-m)."""
        tan = self.tangent_basis(t)
        full = np.concatenate([tan, np.eye(self.n)], axis=1)
        q, _ = np.linalg.qr(full)
        return q[:, self.m:]

    # ---- sampling --------------------------------------------------------

    def sample_latent(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Standard normal truncated to the latent box, shape (k, m)."""
        hw = self.spec.latent_halfwidth
        out = np.empty((k, self.m))
        filled = 0
        while filled < k:
            cand = rng.standard_normal((2 * (k - filled) + 16, self.m))
            ok = cand[np.all(np.abs(cand) <= hw, axis=1)]
            take = min(len(ok), k - filled)
            out[filled:filled + take] = ok[:take]
            filled += take
        return out


def make_manifold(spec: ManifoldSpec) -> ManifoldModel:
    return ManifoldModel(spec)


def sample_real(model: ManifoldModel, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw k ambient points from the real distribution p (on the manifold)."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    return model.chart(model.sample_latent(k, rng))


@dataclass(frozen=True)
class TrainingSet:
    """Anchor points x_i drawn from p; every anchor lies on the manifold image."""

    anchors: np.ndarray
    latents: np.ndarray

    @property
    def n_tr(self) -> int:
        return len(self.anchors)


def make_training_set(model: ManifoldModel, n_tr: int,
                      rng: np.random.Generator) -> TrainingSet:
    if n_tr < 1:
        raise ConfigurationError("n_tr must be >= 1")
    latents = model.sample_latent(n_tr, rng)
    return TrainingSet(anchors=model.chart(latents), latents=latents)


def _gaussian_mixture_logpdf(x: np.ndarray, centers: np.ndarray,
                             sigma: float) -> np.ndarray:
    """Log-density of the equal-weight isotropic mixture N(centers_i, sigma^2 I)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)  # (k, N)
    log_comp = -0.5 * d2 / sigma ** 2 - 0.5 * n * np.log(2 * np.pi * sigma ** 2)
    return logsumexp(log_comp, axis=1) - np.log(len(centers))


def _gaussian_mixture_sample(centers: np.ndarray, sigma: float, k: int,
                             rng: np.random.Generator) -> np.ndarray:
    idx = rng.integers(0, len(centers), size=k)
    return centers[idx] + sigma * rng.standard_normal((k, centers.shape[1]))


@dataclass(frozen=True)
class TubeMixture:
    """Equal-weight Gaussian mixture around training anchors (radius eps0)."""

    anchors: np.ndarray
    eps0: float

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ConfigurationError("tube radius eps0 must be positive")
        if len(self.anchors) < 1:
            raise ConfigurationError("tube needs at least one anchor")


def tube_logdensity(tube: TubeMixture, x: np.ndarray) -> np.ndarray:
    return _gaussian_mixture_logpdf(x, tube.anchors, tube.eps0)


def tube_sample(tube: TubeMixture, k: int, rng: np.random.Generator) -> np.ndarray:
    return _gaussian_mixture_sample(tube.anchors, tube.eps0, k, rng)


@dataclass(frozen=True)
class GenModel:
    """Two-component generator: lam * anchor mixture + (1 - lam) * broad Gaussian.

    lam is the memorization level; at lam=1 with sigma_mem equal to the tube
    radius the generator density coincides with the tube mixture.
    """

    anchors: np.ndarray
    lam: float
    sigma_mem: float
    sigma_broad: float
    broad_center: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("memorization weight lam must be in [0, 1]")
        if self.sigma_mem <= 0 or self.sigma_broad <= 0:
            raise ConfigurationError("component scales must be positive")
        if self.broad_center is None:
            object.__setattr__(self, "broad_center", self.anchors.mean(axis=0))


def _broad_logpdf(gen: GenModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    d2 = np.sum((x - gen.broad_center) ** 2, axis=1)
    return -0.5 * d2 / gen.sigma_broad ** 2 \
        - 0.5 * n * np.log(2 * np.pi * gen.sigma_broad ** 2)


def gen_logdensity(gen: GenModel, x: np.ndarray) -> np.ndarray:
    if gen.lam == 0.0:
        return _broad_logpdf(gen, x)
    mem = _gaussian_mixture_logpdf(x, gen.anchors, gen.sigma_mem)
    if gen.lam == 1.0:
        return mem
    broad = _broad_logpdf(gen, x)
    return np.logaddexp(np.log(gen.lam) + mem, np.log1p(-gen.lam) + broad)


def gen_sample(gen: GenModel, k: int, rng: np.random.Generator) -> np.ndarray:
    from_mem = rng.random(k) < gen.lam
    n_mem = int(from_mem.sum())
    out = np.empty((k, gen.anchors.shape[1]))
    if n_mem:
        out[from_mem] = _gaussian_mixture_sample(gen.anchors, gen.sigma_mem,
                                                 n_mem, rng)
    if k - n_mem:
        out[~from_mem] = gen.broad_center + gen.sigma_broad * \
            rng.standard_normal((k - n_mem, gen.anchors.shape[1]))
    return out
