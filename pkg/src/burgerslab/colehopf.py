"""Cole-Hopf machinery at the level of the Galerkin Burgers dynamics.

For a smoothing scale L the lab tracks

    h^L = Θ * (ρ^L * u),      φ^L = exp(h^L),

and the two correction functionals that appear when Itô's formula is
applied to φ^L:

    R^L_t(x) = ∫_0^t φ^L_s(x) { u_s²(ρ^L_x - 1) - (u^L_s(x))² + ∫(u^L_s)² - K } ds
    Q^L_t    = ∫_0^t { -∫((u^L_s)² - ||ρ^L||²_{L²(R)}) dy + 1 } ds

Here ``u²`` is the Galerkin square Π_K(u²), the object the simulated dynamics
actually contain.  The constant K is fixed by requiring the R^L drift to
vanish under the white-noise law; see :func:`K_calibrate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, PositivityError, RangeError, StatisticsError
from .spde import Trajectory, _left_riemann
from .torus_field import (
    TWO_PI,
    Mollifier,
    SpectralField,
    dealiased_size,
    from_grid,
    mollify,
    pair_coeffs,
    renorm_constant,
    sample_white_noise,
    square_coeffs,
    theta_convolve,
    theta_multipliers,
    to_grid,
    wavenumbers,
)

EXP_LIMIT = 700.0


@dataclass(frozen=True, eq=False)
class ColeHopfState:
    L: float
    h: SpectralField
    phi_grid: np.ndarray
    K_const: float


class CorrectionSeries(NamedTuple):
    times: np.ndarray
    R: np.ndarray | None
    Q: np.ndarray | None


class KCalibration(NamedTuple):
    """Centering constant for R^L.

    ``analytic`` is the tilted centering E[φ^L B] / E[φ^L] in closed form,
    ``monte_carlo`` / ``stderr`` its sampling estimate, and ``unweighted``
    the plain expectation E[B] split into its three terms (which cancel).
    """

    analytic: float
    monte_carlo: float
    stderr: float
    unweighted: tuple


def _scaled(m: Mollifier, L: float) -> Mollifier:
    return m.with_scale(L)


def _h_multipliers(K: int, L: float, m: Mollifier) -> np.ndarray:
    return theta_multipliers(K) * _scaled(m, L).multipliers(K)


def build_state(u: SpectralField, L: float, m: Mollifier = Mollifier(), K_const: float | None = None,
                M: int | None = None) -> ColeHopfState:
    """h^L = Θ * ρ^L * u and φ^L = exp(h^L) on the dealiased grid."""
    h = theta_convolve(mollify(u, _scaled(m, L)))
    grid = to_grid(h.coeffs, M)
    peak = float(np.max(np.abs(grid))) if grid.size else 0.0
    if peak > EXP_LIMIT:
        raise RangeError(f"exp(h) overflows: max |h| = {peak:.4g}")
    if K_const is None:
        K_const = K_analytic(m, L, u.K)
    return ColeHopfState(float(L), h, np.exp(grid), float(K_const))


# ----------------------------------------------------------------------------
# the braced integrand of R^L, on the grid
# ----------------------------------------------------------------------------

def _bracket_parts(c: np.ndarray, mult: np.ndarray, hmult: np.ndarray, M: int):
    """Grid values of B(x) = u²(ρ^L_x - 1) - (u^L(x))² + ∫(u^L)² and of h^L(x)."""
    sq = square_coeffs(c, M)
    smooth_sq = sq * mult
    smooth_sq[..., 0] = 0.0                      # pairing with ρ^L_x - 1 removes the mean
    uL = c * mult
    energy = pair_coeffs(uL, uL)
    gL = to_grid(uL, M)
    bracket = to_grid(smooth_sq, M) - gL * gL + energy[..., None]
    h = to_grid(c * hmult, M)
    return bracket, h


def R_integrand(coeffs: np.ndarray, L: float, phi: SpectralField, K_const: float,
                m: Mollifier = Mollifier(), block: int = 16) -> np.ndarray:
    """∫ φ^L(x) {B(x) - K} φ(x) dx at every stored state, by grid quadrature in x.

    The x-integral uses the dealiased grid of the band.
    """
    K = coeffs.shape[-1] - 1
    mL = _scaled(m, L)
    if mL.support * L > K:
        raise ParameterError(f"smoothing scale L={L} reaches beyond the band K={K}")
    M = dealiased_size(K)
    mult = mL.multipliers(K)
    hmult = theta_multipliers(K) * mult
    test = to_grid(phi.truncate(K).coeffs, M)
    values = np.empty(coeffs.shape[:-1])
    for start in range(0, len(coeffs), block):
        bracket, h = _bracket_parts(coeffs[start:start + block], mult, hmult, M)
        if np.max(h) > EXP_LIMIT:
            raise RangeError(f"exp(h) overflows: max h = {np.max(h):.4g}")
        values[start:start + block] = np.mean(np.exp(h) * (bracket - K_const) * test, axis=-1)
    return values


def correction_R(traj: Trajectory, L: float, phi: SpectralField, K_const: float,
                 m: Mollifier = Mollifier()) -> CorrectionSeries:
    """R^L_t(φ) along a trajectory (left-point sums in time)."""
    values = R_integrand(traj.coeffs, L, phi, K_const, m)
    return CorrectionSeries(traj.times, _left_riemann(values, traj.times), None)


def Q_integrand(coeffs: np.ndarray, L: float, m: Mollifier = Mollifier(),
                normalization: str = "line") -> np.ndarray:
    K = coeffs.shape[-1] - 1
    mL = _scaled(m, L)
    consts = renorm_constant(mL, K)
    c_norm = {"line": consts.line, "torus": consts.torus}[normalization]
    uL = coeffs * mL.multipliers(K)
    return -(pair_coeffs(uL, uL) - c_norm) + 1.0


def correction_Q(traj: Trajectory, L: float, m: Mollifier = Mollifier(),
                 normalization: str = "line") -> CorrectionSeries:
    """Q^L_t; the spatial integral is the spectral power sum of u^L."""
    q = Q_integrand(traj.coeffs, L, m, normalization)
    return CorrectionSeries(traj.times, None, _left_riemann(q, traj.times))


# ----------------------------------------------------------------------------
# centering constant
# ----------------------------------------------------------------------------

def K_analytic(m: Mollifier, L: float, K_modes: int) -> float:
    """Closed-form tilted centering of the R^L bracket.

    Under the weight exp(h^L(0)) the white noise is shifted by its covariance
    with h^L(0), the field v with modes -ρ̂(k/L)/(2πik).  The bracket is a
    centred quadratic form B, so E[e^h B] / E[e^h] = B(v); at x = 0:

        B(v) = Σ_{k≠0} ρ̂(k/L) (Π v²)(k) - (v^L(0))² + ||v^L||².
    """
    mult = _scaled(m, L).multipliers(K_modes)
    v = -theta_multipliers(K_modes) * mult
    sq = square_coeffs(v[None, :])[0]
    smooth = sq * mult
    smooth[0] = 0.0
    first = smooth[0].real + 2.0 * smooth[1:].real.sum()        # value at x = 0
    vL = v * mult
    vL0 = vL[0].real + 2.0 * vL[1:].real.sum()
    return float(first - vL0 ** 2 + pair_coeffs(vL, vL))


def K_unweighted_terms(m: Mollifier, L: float, K_modes: int, mean_zero: bool = True) -> tuple:
    """(E[u²(ρ^L_x - 1)], E[(u^L(x))²], E[∫(u^L)²]) under white noise."""
    mult = _scaled(m, L).multipliers(K_modes)
    power = 2.0 * np.sum(mult[1:] ** 2) + (0.0 if mean_zero else mult[0] ** 2)
    return (0.0, float(power), float(power))


def K_calibrate(m: Mollifier, L: float, K_modes: int, rng: np.random.Generator | None = None,
                samples: int = 2000, mean_zero: bool = True) -> KCalibration:
    """Analytic centering plus an independent Monte Carlo estimate.

    The Monte Carlo ratio E[e^h B] / E[e^h] pools all grid points; its
    standard error comes from per-sample spatial averages (delta method).
    """
    analytic = K_analytic(m, L, K_modes)
    terms = K_unweighted_terms(m, L, K_modes, mean_zero)
    if rng is None:
        return KCalibration(analytic, math.nan, math.nan, terms)
    if samples < 10:
        raise StatisticsError("K calibration needs at least 10 samples")
    M = dealiased_size(K_modes)
    mult = _scaled(m, L).multipliers(K_modes)
    hmult = theta_multipliers(K_modes) * mult
    num, den = [], []
    for start in range(0, samples, 200):
        n = min(200, samples - start)
        u = sample_white_noise(K_modes, rng, mean_zero=mean_zero, size=n).coeffs
        bracket, h = _bracket_parts(u, mult, hmult, M)
        w = np.exp(h)
        num.append(np.mean(w * bracket, axis=-1))
        den.append(np.mean(w, axis=-1))
    num, den = np.concatenate(num), np.concatenate(den)
    ratio = num.mean() / den.mean()
    resid = (num - ratio * den) / den.mean()
    stderr = resid.std(ddof=1) / math.sqrt(len(num))
    return KCalibration(analytic, float(ratio), float(stderr), terms)


# ----------------------------------------------------------------------------
# exponential moments and the inverse transform
# ----------------------------------------------------------------------------

def theta_variance(K: int, L: float | None = None, m: Mollifier = Mollifier()) -> float:
    """Var h(x) for mean-free white noise: Σ_{0<|k|<=K} ρ̂(k/L)² / (2πk)²."""
    k = wavenumbers(K)[1:]
    mult = np.ones(K) if L is None else _scaled(m, L).multipliers(K)[1:]
    return float(2.0 * np.sum(mult ** 2 / (TWO_PI * k) ** 2))


class ExpMomentResult(NamedTuple):
    moments: np.ndarray          # (n_times, n_x) ensemble means of exp(2h)
    stderr: np.ndarray
    predicted: float
    sup: float
    sup_stderr: float
    argmax: tuple

    @property
    def z_sup(self) -> float:
        return (self.sup - self.predicted) / self.sup_stderr


def exp_moment_check(fields: np.ndarray, x: np.ndarray) -> ExpMomentResult:
    """E[exp(2 u_t(Θ_x))] over an ensemble.

    ``fields`` has shape ``(n_times, n_replicas, K+1)``; the prediction is the
    lognormal value exp(2 Var h) for stationary white noise.
    """
    fields = np.asarray(fields)
    if fields.ndim != 3 or fields.shape[1] < 2:
        raise StatisticsError("need (n_times, n_replicas >= 2, K+1) fields")
    K = fields.shape[-1] - 1
    h = SpectralField(fields * theta_multipliers(K), mean_zero=True).evaluate(x)
    e2h = np.exp(2.0 * h)
    moments = e2h.mean(axis=1)
    stderr = e2h.std(axis=1, ddof=1) / math.sqrt(fields.shape[1])
    idx = np.unravel_index(np.argmax(moments), moments.shape)
    return ExpMomentResult(moments, stderr, math.exp(2.0 * theta_variance(K)),
                           float(moments[idx]), float(stderr[idx]), tuple(int(i) for i in idx))


def she_initial(u0: SpectralField) -> SpectralField:
    """φ_0 = exp(Θ * u_0), projected to the band."""
    M = dealiased_size(u0.K)
    h = to_grid(theta_convolve(u0).coeffs, M)
    return SpectralField(from_grid(np.exp(h), u0.K))


def log_projection_error(phi_coeffs: np.ndarray, M: int | None = None) -> float:
    """Relative L2 mass of log φ outside the band (diagnostic of the band projection)."""
    K = phi_coeffs.shape[-1] - 1
    M = M or dealiased_size(K)
    logs = np.log(to_grid(phi_coeffs, M))
    spec = np.abs(np.fft.rfft(logs, axis=-1) / M) ** 2
    spec[..., 1:] *= 2.0
    outside = spec[..., K + 1:].sum()
    total = spec[..., 1:].sum()
    return float(math.sqrt(outside / total)) if total > 0 else 0.0


def colehopf_extract(phi: Trajectory | SpectralField, L: float | None = None, m: Mollifier = Mollifier(),
                     mean: float = 0.0):
    """u = ∂x Π_K log φ (optionally smoothed at scale L) + mean.

    Accepts a single (possibly batched) field or a trajectory of fields, and
    returns the same kind of object.  Raises PositivityError at the first
    stored time where φ is not strictly positive on the grid.
    """
    coeffs = phi.coeffs
    K = coeffs.shape[-1] - 1
    M = dealiased_size(K)
    grid = to_grid(coeffs, M)
    bad = np.min(grid.reshape(grid.shape[0], -1), axis=-1) <= 0 if isinstance(phi, Trajectory) \
        else np.array([np.min(grid) <= 0])
    if bad.any():
        j = int(np.argmax(bad))
        if isinstance(phi, Trajectory):
            raise PositivityError(f"φ not positive at t = {phi.times[j]:.6g}", step=j, time=float(phi.times[j]))
        raise PositivityError("φ not positive on the grid")
    logc = from_grid(np.log(grid), K)
    if L is not None:
        logc = logc * _scaled(m, L).multipliers(K)
    u = logc * (TWO_PI * 1j * wavenumbers(K))
    u[..., 0] = mean
    if isinstance(phi, Trajectory):
        return Trajectory(phi.times, u, phi.noise, False, phi.stride, phi.drift_sign)
    return SpectralField(u)
