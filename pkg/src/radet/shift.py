"""Feature-shift operator, discrepancy features, and differential-shift curves.

Shift_eps(x) is the expected squared embedding displacement under a small
isotropic probe; its leading order is (eps^2/n) * G(x) with G the Jacobian
energy.  The differential curve tracks the generated-vs-real gap of the mean
shift across probe magnitudes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderHandle, jacobian_energy
from .errors import ConfigurationError, DomainError, NumericError


@dataclass(frozen=True)
class ProbeLaw:
    """Isotropic probe with E[delta]=0 and E[delta delta^T] = (eps^2/n) I."""

    eps: float
    dim: int
    law: str = "gaussian"  # or "sphere"

    def __post_init__(self):
        if self.eps < 0:
            raise ConfigurationError("probe magnitude eps must be >= 0")
        if self.law not in ("gaussian", "sphere"):
            raise ConfigurationError(f"unknown probe law {self.law!r}")

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((k, self.dim))
        if self.law == "gaussian":
            return (self.eps / np.sqrt(self.dim)) * z
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return self.eps * z / norms


@dataclass(frozen=True)
class ShiftEstimate:
    mean: float
    stderr: float
    n_samples: int


def _check_finite(y: np.ndarray, what: str):
    if not np.all(np.isfinite(y)):
        idx = int(np.argwhere(~np.all(np.isfinite(y), axis=tuple(range(1, y.ndim))))[0])
        raise NumericError(f"non-finite {what} at sample index {idx}")


def shift_mc(enc: EncoderHandle, x: np.ndarray, probe: ProbeLaw, k: int,
             rng: np.random.Generator) -> ShiftEstimate:
    """Monte-Carlo estimate of Shift_eps at a single point."""
    if k < 100:
        raise ConfigurationError("shift_mc needs k >= 100 draws")
    x = np.asarray(x, dtype=float).ravel()
    delta = probe.sample(k, rng)
    fx = enc(x[None])[0]
    fxd = enc(x[None, :] + delta)
    _check_finite(fxd, "encoder output")
    vals = np.sum((fxd - fx) ** 2, axis=1)
    return ShiftEstimate(mean=float(vals.mean()),
                         stderr=float(vals.std(ddof=1) / np.sqrt(k)),
                         n_samples=k)


@dataclass(frozen=True)
class ExpansionReport:
    """Residuals of Shift_eps against its leading-order law (eps^2/n) G(x)."""

    eps_grid: np.ndarray
    residuals: np.ndarray
    stderrs: np.ndarray
    slope: float          # log-log fit over the resolvable sub-grid
    fit_mask: np.ndarray  # points used for the slope fit


def expansion_residual(enc: EncoderHandle, x: np.ndarray,
                       eps_grid: np.ndarray, k: int,
                       rng: np.random.Generator,
                       law: str = "gaussian") -> ExpansionReport:
    """Estimate |Shift_eps - (eps^2/n) G(x)| on a grid of probe magnitudes.

    The residual is estimated directly per draw as
    ||f(x+delta)-f(x)||^2 - ||J delta||^2, whose expectation equals the
    residual exactly (E||J delta||^2 = (eps^2/n) G for any isotropic probe);
    estimating the residual as a difference of two separately estimated large
    quantities would drown the O(eps^4) term in Monte-Carlo noise.
    """
    if enc.jacobian_mode != "analytic":
        raise ConfigurationError("expansion_residual needs an analytic Jacobian")
    x = np.asarray(x, dtype=float).ravel()
    eps_grid = np.asarray(eps_grid, dtype=float)
    n = len(x)
    jac = enc.jacobian_batch(x[None])[0]
    fx = enc(x[None])[0]
    res = np.zeros(len(eps_grid))
    ses = np.zeros(len(eps_grid))
    for i, eps in enumerate(eps_grid):
        if eps == 0.0:
            continue
        delta = ProbeLaw(eps, n, law).sample(k, rng)
        shift_vals = np.sum((enc(x[None, :] + delta) - fx) ** 2, axis=1)
        lin_vals = np.sum((delta @ jac.T) ** 2, axis=1)
        d = shift_vals - lin_vals
        res[i] = d.mean()
        ses[i] = d.std(ddof=1) / np.sqrt(k)
    # Fit log|residual| ~ slope * log(eps) over points that are resolved
    # (positive and at least 3 sigma away from zero).
    mask = (res > 0) & (res > 3 * ses) & (eps_grid > 0)
    if mask.sum() >= 2:
        coef = np.polyfit(np.log(eps_grid[mask]), np.log(res[mask]), 1)
        slope = float(coef[0])
    else:
        slope = float("nan")
    return ExpansionReport(eps_grid=eps_grid, residuals=res, stderrs=ses,
                           slope=slope, fit_mask=mask)


# ---------------------------------------------------------------------------
# discrepancy features
# ---------------------------------------------------------------------------

def cosine_sim(e: np.ndarray, e2: np.ndarray) -> float:
    e = np.asarray(e, dtype=float).ravel()
    e2 = np.asarray(e2, dtype=float).ravel()
    ne, ne2 = np.linalg.norm(e), np.linalg.norm(e2)
    if ne == 0.0 or ne2 == 0.0:
        raise DomainError("cosine similarity undefined for a zero vector")
    return float(np.dot(e, e2) / (ne * ne2))


def l2_distance(e: np.ndarray, e2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(e, dtype=float).ravel()
                                - np.asarray(e2, dtype=float).ravel()))


def diff_vector(e: np.ndarray, e2: np.ndarray) -> np.ndarray:
    return np.asarray(e, dtype=float).ravel() - np.asarray(e2, dtype=float).ravel()


def dca(batch_e: np.ndarray, batch_e2: np.ndarray) -> float:
    """Diagonal-restricted cross-covariance mean over the embedding dimension.

    Uses the population convention (divide by batch size): the quantity is an
    expectation, not an unbiased estimator.
    """
    batch_e = np.atleast_2d(np.asarray(batch_e, dtype=float))
    batch_e2 = np.atleast_2d(np.asarray(batch_e2, dtype=float))
    if batch_e.shape != batch_e2.shape:
        raise DomainError("batches must have matching shapes")
    if len(batch_e) < 2:
        raise DomainError("dca needs a batch of at least 2 samples")
    ce = batch_e - batch_e.mean(axis=0)
    ce2 = batch_e2 - batch_e2.mean(axis=0)
    diag = np.mean(ce * ce2, axis=0)  # population divisor
    return float(diag.mean())


# ---------------------------------------------------------------------------
# population differentials
# ---------------------------------------------------------------------------

def _population_shift(enc, pts, probe, k, rng):
    """Per-point MC shift means: (P,) array."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    p, n = pts.shape
    delta = probe.sample(p * k, rng).reshape(p, k, n)
    base = enc(pts)
    shifted = enc((pts[:, None, :] + delta).reshape(p * k, n))
    _check_finite(shifted, "encoder output")
    vals = np.sum((shifted.reshape(p, k, -1) - base[:, None, :]) ** 2, axis=2)
    return vals.mean(axis=1)


@dataclass(frozen=True)
class DifferentialShift:
    delta: float
    stderr: float
    mean_gen: float
    mean_real: float
    n_points: int


def differential_shift(enc: EncoderHandle, real_pts: np.ndarray,
                       gen_pts: np.ndarray, probe: ProbeLaw, k: int,
                       rng: np.random.Generator) -> DifferentialShift:
    """Mean shift over generated points minus mean over real points."""
    real_pts = np.atleast_2d(np.asarray(real_pts, dtype=float))
    gen_pts = np.atleast_2d(np.asarray(gen_pts, dtype=float))
    if len(real_pts) < 32 or len(gen_pts) < 32:
        raise DomainError("differential_shift needs >= 32 points per population")
    mr = _population_shift(enc, real_pts, probe, k, rng)
    mg = _population_shift(enc, gen_pts, probe, k, rng)
    se = float(np.sqrt(mr.var(ddof=1) / len(mr) + mg.var(ddof=1) / len(mg)))
    return DifferentialShift(delta=float(mg.mean() - mr.mean()), stderr=se,
                             mean_gen=float(mg.mean()),
                             mean_real=float(mr.mean()),
                             n_points=len(real_pts))


@dataclass(frozen=True)
class ShiftCurve:
    """Differential shift across a strictly increasing grid of probe sizes."""

    eps_grid: np.ndarray
    delta: np.ndarray
    stderr: np.ndarray
    n_points: int
    ci_z: float = 1.96

    def __post_init__(self):
        if np.any(np.diff(self.eps_grid) <= 0):
            raise ConfigurationError("eps grid must be strictly increasing")
        if not (np.all(np.isfinite(self.stderr)) and np.all(np.isfinite(self.delta))):
            raise NumericError("non-finite entries in shift curve")

    @property
    def ci_lo(self) -> np.ndarray:
        return self.delta - self.ci_z * self.stderr

    @property
    def ci_hi(self) -> np.ndarray:
        return self.delta + self.ci_z * self.stderr

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.delta))

    @property
    def eps_turn(self) -> float:
        """Probe magnitude at the curve maximum (the turning point)."""
        return float(self.eps_grid[self.argmax_index])

    @property
    def has_interior_argmax(self) -> bool:
        return 0 < self.argmax_index < len(self.eps_grid) - 1

    def to_rows(self):
        for i in range(len(self.eps_grid)):
            yield {"epsilon": self.eps_grid[i], "delta": self.delta[i],
                   "stderr": self.stderr[i], "ci_lo": self.ci_lo[i],
                   "ci_hi": self.ci_hi[i]}


def shift_scan(enc: EncoderHandle, real_pts: np.ndarray, gen_pts: np.ndarray,
               eps_grid: np.ndarray, k: int, rng: np.random.Generator,
               law: str = "gaussian") -> ShiftCurve:
    """Evaluate the differential shift over a grid of probe magnitudes."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    n = np.atleast_2d(real_pts).shape[1]
    deltas, ses = [], []
    for eps in eps_grid:
        d = differential_shift(enc, real_pts, gen_pts, ProbeLaw(eps, n, law),
                               k, rng)
        deltas.append(d.delta)
        ses.append(d.stderr)
    return ShiftCurve(eps_grid=eps_grid, delta=np.array(deltas),
                      stderr=np.array(ses),
                      n_points=len(np.atleast_2d(real_pts)))
