"""Fixed C^2 feature maps with Jacobian access.

Encoder kinds:
  linear      f(x) = A x
  quadratic   f_i(x) = a_i x_i^2 + b_i x_i
  smooth_net  fixed-weight tanh MLP
  anisotropic tangent/normal-adapted encoder tied to a graph manifold
  external    tag only; evaluation happens through embedding-file ingestion

The anisotropic encoder realizes reduced tangent sensitivity (kappa_t) and
elevated normal sensitivity (kappa_n) with respect to a manifold's chart:

    f(x) = kappa_t * x  +  [0_m ; (kappa_n - kappa_t) * W(u)^{-1} psi(v)]

where (u, v) is the global graph decomposition u = x[:m], v = x[m:] - g(u)
and W(u) = sqrtm(I + g'(u) g'(u)^T) whitens the normal residual (exact for
m=1).  The offset block annihilates tangent directions on the manifold, so
tangent directional derivatives equal kappa_t exactly, normal ones kappa_n up
to a curvature-sized correction, and the map degenerates to the linear
isotropy null kappa * x when kappa_t = kappa_n.  The normal nonlinearity
psi(v) = (1+a) v - a tanh(v) has derivative 1 + a tanh(v)^2: unit slope on
the manifold, rising with normal offset |v|, which makes the mean Jacobian
energy over a small tube exceed the on-manifold mean (the positive-margin
mechanism).  The curvature weight a scales with the anisotropy ratio and
vanishes at the null.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .manifold import ManifoldModel

B_SAFETY_FACTOR = 1.25


def default_fd_step(x: np.ndarray) -> float:
    """Central-difference step: O(h^2) truncation vs roundoff balance."""
    return 1e-4 * (1.0 + np.max(np.abs(x), initial=0.0))


class EncoderHandle:
    """Immutable encoder with batched evaluation and Jacobian access."""

    def __init__(self, kind, in_dim, out_dim, fn, jac_fn=None, params=None,
                 squash_radius=None):
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._fn = fn
        self._jac_fn = jac_fn
        self.params = params or {}
        self.squash_radius = squash_radius
        self.jacobian_mode = "analytic" if jac_fn is not None \
            else "central_finite_difference"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate f on a batch: (k, n) -> (k, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"expected input dim {self.in_dim}, got {x.shape[1]}")
        y = self._fn(x)
        if self.squash_radius is not None:
            r = self.squash_radius
            y = r * np.tanh(y / r)
        return y

    def jacobian_batch(self, x: np.ndarray) -> np.ndarray:
        """Analytic Jacobians for a batch: (k, n) -> (k, d, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self._jac_fn is None:
            return np.stack([fd_jacobian(self, xi) for xi in x])
        jac = self._jac_fn(x)
        if self.squash_radius is not None:
            r = self.squash_radius
            y = self._fn(x)
            jac = (1.0 - np.tanh(y / r) ** 2)[:, :, None] * jac
        if not np.all(np.isfinite(jac)):
            bad = np.argwhere(~np.isfinite(jac))[0]
            raise NumericError(f"non-finite Jacobian entry at (point, row, col)="
                               f"{tuple(int(i) for i in bad)}")
        return jac


def fd_jacobian(enc: EncoderHandle, x: np.ndarray, h: float | None = None
                ) -> np.ndarray:
    """Central finite-difference Jacobian at a single point, shape (d, n)."""
    x = np.asarray(x, dtype=float).ravel()
    if h is None:
        h = default_fd_step(x)
    cols = []
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((enc(xp[None])[0] - enc(xm[None])[0]) / (2 * h))
    return np.stack(cols, axis=1)


def jacobian(enc: EncoderHandle, x: np.ndarray) -> np.ndarray:
    """Jacobian at a single point, analytic if available."""
    x = np.asarray(x, dtype=float).ravel()
    if enc.jacobian_mode == "analytic":
        return enc.jacobian_batch(x[None])[0]
    return fd_jacobian(enc, x)


def jacobian_energy(enc: EncoderHandle, x: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm of the Jacobian; scalar or per-point array."""
    single = np.asarray(x).ndim == 1
    jac = enc.jacobian_batch(np.atleast_2d(np.asarray(x, dtype=float)))
    g = np.einsum("kdn,kdn->k", jac, jac)
    return float(g[0]) if single else g


@dataclass(frozen=True)
class JacobianEnergyProfile:
    """Observed Jacobian energies plus a conservative supremum estimate."""

    energies: np.ndarray
    raw_max: float
    b_hat: float
    safety_factor: float = B_SAFETY_FACTOR


def energy_profile(enc: EncoderHandle, domain_sampler, k: int,
                   rng: np.random.Generator) -> JacobianEnergyProfile:
    if k < 1000:
        raise ConfigurationError("estimate_B needs k >= 1000 probe points")
    pts = domain_sampler(k, rng)
    g = jacobian_energy(enc, pts)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite Jacobian energy in B estimation")
    raw = float(np.max(g))
    return JacobianEnergyProfile(energies=g, raw_max=raw,
                                 b_hat=raw * B_SAFETY_FACTOR)


def estimate_B(enc: EncoderHandle, domain_sampler, k: int,
               rng: np.random.Generator) -> float:
    """Conservative estimate of sup G: sample max inflated by a safety factor."""
    return energy_profile(enc, domain_sampler, k, rng).b_hat


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_linear(A: np.ndarray) -> EncoderHandle:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ConfigurationError("linear encoder needs a 2-D matrix")

    def fn(x):
        return x @ A.T

    def jac(x):
        return np.broadcast_to(A, (len(x),) + A.shape).copy()

    return EncoderHandle("linear", A.shape[1], A.shape[0], fn, jac,
                         params={"A": A})


def make_quadratic(a: np.ndarray, b: np.ndarray) -> EncoderHandle:
    """Elementwise f_i(x) = a_i x_i^2 + b_i x_i."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConfigurationError("quadratic coefficient arrays must match")

    def fn(x):
        return a * x ** 2 + b * x

    def jac(x):
        diag = 2 * a * x + b                      # (k, n)
        k, n = diag.shape
        out = np.zeros((k, n, n))
        idx = np.arange(n)
        out[:, idx, idx] = diag
        return out

    return EncoderHandle("quadratic", len(a), len(a), fn, jac,
                         params={"a": a, "b": b})


def make_smooth_net(widths: list[int], seed: int,
                    activation: str = "tanh") -> EncoderHandle:
    """Fixed-weight MLP with tanh hidden layers and a linear output layer."""
    if activation != "tanh":
        raise ConfigurationError(
            f"smooth_net requires a C^2 activation (tanh), got {activation!r}")
    if len(widths) < 2:
        raise ConfigurationError("smooth_net needs at least [in, out] widths")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        Ws.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        bs.append(0.1 * rng.standard_normal(fan_out))

    def fn(x):
        z = x
        for W, b in zip(Ws[:-1], bs[:-1]):
            z = np.tanh(z @ W.T + b)
        return z @ Ws[-1].T + bs[-1]

    def jac(x):
        z = x
        jacs = np.broadcast_to(np.eye(widths[0]),
                               (len(x), widths[0], widths[0])).copy()
        for W, b in zip(Ws[:-1], bs[:-1]):
            pre = z @ W.T + b
            z = np.tanh(pre)
            d = 1.0 - z ** 2
            jacs = d[:, :, None] * np.einsum("oi,kin->kon", W, jacs)
        return np.einsum("oi,kin->kon", Ws[-1], jacs)

    return EncoderHandle("smooth_net", widths[0], widths[-1], fn, jac,
                         params={"W": Ws, "b": bs, "widths": list(widths)})


def _rho(s: np.ndarray) -> np.ndarray:
    """rho(s) = ((1+s)^(-1/2) - 1)/s, smooth through s=0."""
    s = np.asarray(s, dtype=float)
    out = -0.5 + 0.375 * s  # series branch, accurate for small s
    big = s > 1e-8
    sb = s[big]
    out[big] = (1.0 / np.sqrt(1.0 + sb) - 1.0) / sb
    return out


def _rho_prime(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = 0.375 - 0.625 * s
    big = s > 1e-4
    sb = s[big]
    out[big] = (-0.5 * sb * (1.0 + sb) ** -1.5
                - (1.0 / np.sqrt(1.0 + sb) - 1.0)) / sb ** 2
    return out


def make_anisotropic(manifold: ManifoldModel, kappa_t: float, kappa_n: float,
                     psi: str = "curved", curvature_gain: float = 1.0,
                     squash_radius: float | None = None) -> EncoderHandle:
    """Encoder with tangent sensitivity kappa_t and normal sensitivity kappa_n.

    Exact tangent calibration for any m; the normal block is metric-whitened
    for m=1 (normal directional derivatives kappa_n up to an O(kappa_t/kappa_n)
    correction) and unwhitened, hence approximate, for m>=2.  psi="identity"
    forces a linear normal profile (zero curvature weight); kappa_t == kappa_n
    yields the exactly linear isotropy null kappa * x.
    """
    if not 0 < kappa_t <= kappa_n:
        raise ConfigurationError("need 0 < kappa_t <= kappa_n")
    if psi not in ("curved", "identity"):
        raise ConfigurationError(f"unknown psi profile {psi!r}")
    m, n = manifold.m, manifold.n
    a = 0.0 if psi == "identity" else \
        curvature_gain * (kappa_n - kappa_t) / (kappa_n + kappa_t)
    c = kappa_n - kappa_t
    whiten = (m == 1)

    def psi_n(v):
        return (1.0 + a) * v - a * np.tanh(v)

    def dpsi_n(v):
        return 1.0 + a * np.tanh(v) ** 2

    def winv(gp):
        # W^{-1} = I + rho(|g'|^2) g' g'^T, inverse sqrt of I + g' g'^T (m=1).
        s = np.sum(gp ** 2, axis=1)
        eye = np.eye(n - 1)
        return eye + _rho(s)[:, None, None] * np.einsum("kj,kl->kjl", gp, gp)

    def fn(x):
        u = x[:, :m]
        v = x[:, m:] - manifold.g(u)
        block = psi_n(v)
        if whiten:
            gp = manifold.dg(u)[:, :, 0]
            block = np.einsum("kjl,kl->kj", winv(gp), block)
        out = kappa_t * x.copy()
        out[:, m:] += c * block
        return out

    def jac(x):
        k = len(x)
        u = x[:, :m]
        v = x[:, m:] - manifold.g(u)
        dg = manifold.dg(u)                                # (k, n-m, m)
        psi_v, dpsi_v = psi_n(v), dpsi_n(v)
        out = np.zeros((k, n, n))
        out[:, np.arange(n), np.arange(n)] = kappa_t
        if whiten:
            gp = dg[:, :, 0]                               # (k, n-1)
            gpp = manifold.d2g(u)[:, :, 0, 0]              # (k, n-1)
            s = np.sum(gp ** 2, axis=1)
            sp = 2.0 * np.sum(gp * gpp, axis=1)
            Wi = winv(gp)
            outer = np.einsum("kj,kl->kjl", gp, gp)
            cross = np.einsum("kj,kl->kjl", gpp, gp) \
                + np.einsum("kj,kl->kjl", gp, gpp)
            dWi = (_rho_prime(s) * sp)[:, None, None] * outer \
                + _rho(s)[:, None, None] * cross
            term_u = np.einsum("kjl,kl->kj", dWi, psi_v) \
                + np.einsum("kjl,kl->kj", Wi, dpsi_v * (-gp))
            out[:, 1:, 0] += c * term_u
            out[:, 1:, 1:] += c * Wi * dpsi_v[:, None, :]
        else:
            out[:, m:, :m] += -c * dpsi_v[:, :, None] * dg
            idx = np.arange(n - m)
            out[:, m + idx, m + idx] += c * dpsi_v
        return out

    return EncoderHandle("anisotropic", n, n, fn, jac,
                         params={"kappa_t": kappa_t, "kappa_n": kappa_n,
                                 "a": a, "psi": psi, "whitened": whiten},
                         squash_radius=squash_radius)


def make_zero(n: int, d: int | None = None) -> EncoderHandle:
    """Zero map; useful as a degenerate fixture."""
    d = n if d is None else d
    return make_linear(np.zeros((d, n)))
