"""Estimators and Gaussian-analysis oracles.

Time series arrive with time on axis 0 and replicas on the remaining axes.
Chaos functionals are represented by kernels on the full band ``-K..K``:
an order-1 kernel ``g`` defines ``F(u) = Σ_k g(k) û(k)`` and an order-2
kernel the Wick product ``F(u) = Σ g(a, b) (û(a) û(b) - E[û(a) û(b)])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ParameterError, StatisticsError, UndefinedExponentError
from .report import StatReport
from .spde import Trajectory, _left_riemann
from .torus_field import (
    TWO_PI,
    Mollifier,
    SpectralField,
    from_grid,
    pair_coeffs,
    sample_white_noise,
    to_grid,
)


# ----------------------------------------------------------------------------
# containers
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Regression:
    slope: float
    stderr: float
    intercept: float
    n: int

    def ci(self, level: float = 0.95) -> tuple:
        if self.n <= 2 or not math.isfinite(self.stderr):
            return (self.slope, self.slope)
        q = stats.t.ppf(0.5 + level / 2, self.n - 2)
        return (self.slope - q * self.stderr, self.slope + q * self.stderr)


def fit_line(x, y) -> Regression:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2:
        raise StatisticsError("a regression needs at least two points")
    if len(x) == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return Regression(float(slope), math.nan, float(y[0] - slope * x[0]), 2)
    r = stats.linregress(x, y)
    return Regression(float(r.slope), float(r.stderr), float(r.intercept), len(x))


@dataclass(frozen=True, eq=False)
class SeriesStats:
    """A scalar estimate with the per-level (or per-lag) data it came from."""

    estimate: float
    stderr: float
    levels: np.ndarray
    values: np.ndarray
    value_stderr: np.ndarray
    slopes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _mean_se(samples: np.ndarray, axis=0):
    samples = np.asarray(samples, float)
    n = samples.shape[axis]
    se = samples.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full(np.mean(samples, axis=axis).shape, np.nan)
    return samples.mean(axis=axis), se


def _replicas(x: np.ndarray) -> np.ndarray:
    """Flatten all replica axes: (n_times, *batch) -> (n_times, R)."""
    x = np.asarray(x, float)
    return x.reshape(x.shape[0], -1)


# ----------------------------------------------------------------------------
# quadratic variation and roughness
# ----------------------------------------------------------------------------

def realized_qv(series: np.ndarray, dt: float, levels: int = 4) -> SeriesStats:
    """Sum of squared increments on dyadic coarsenings of a uniform grid.

    Level j uses every 2^j-th point.  ``estimate`` is the replica-mean QV
    per unit time on the finest grid; ``extra['limit']`` extrapolates the
    per-unit-time QV linearly in the mesh to mesh 0.
    """
    x = _replicas(series)
    n = x.shape[0] - 1
    if levels < 1 or n < 2 ** (levels - 1) * 2:
        raise ParameterError(f"series of {n + 1} points too short for {levels} dyadic levels")
    T = n * dt
    mesh, qv, se = [], [], []
    for j in range(levels):
        step = 2 ** j
        sub = x[: (n // step) * step + 1: step]
        per = np.sum(np.diff(sub, axis=0) ** 2, axis=0) / ((len(sub) - 1) * step * dt)
        m, s = _mean_se(per)
        mesh.append(step * dt)
        qv.append(m)
        se.append(s)
    mesh, qv, se = map(np.asarray, (mesh, qv, se))
    slopes, extra = {}, {"T": T}
    if levels >= 2:
        reg = fit_line(mesh, qv)
        slopes["mesh"] = reg
        extra["limit"] = reg.intercept
    return SeriesStats(float(qv[0]), float(se[0]), mesh, qv, se, slopes, extra)


def geometric_lags(lo: int, hi: int, n: int) -> np.ndarray:
    """Distinct integer lags spaced geometrically in [lo, hi]."""
    lags = np.unique(np.round(np.geomspace(lo, hi, n)).astype(int))
    return lags[lags >= 1]


def structure_function(series: np.ndarray, lags, p: float) -> np.ndarray:
    """E|X_{t+h} - X_t|^p per replica, averaged over all t; shape (n_lags, R)."""
    x = _replicas(series)
    return np.stack([np.mean(np.abs(x[h:] - x[:-h]) ** p, axis=0) for h in lags])


def holder_exponent(series: np.ndarray, dt: float, p_list=(2, 4), lag_range=None,
                    n_lags: int = 12, drop_smallest: int = 2) -> SeriesStats:
    """Structure-function exponents α̂_p = slope_p / p and a pooled α̂.

    ``lag_range`` is (h_min, h_max) in time units; the geometric lag grid is
    built inside it and its ``drop_smallest`` shortest lags are left out of
    every fit.  The pooled exponent fits all p jointly with a common slope
    in log h (after dividing log moments by p) and one intercept per p.
    Standard errors come from a delete-a-group jackknife over replicas when
    at least ten replicas are available.
    """
    x = _replicas(series)
    n = x.shape[0]
    if lag_range is None:
        lag_range = (dt, (n - 1) * dt / 4)
    lo = max(1, int(round(lag_range[0] / dt)))
    hi = min(n - 1, int(round(lag_range[1] / dt)))
    if hi <= lo:
        raise ParameterError("lag range is empty for this series")
    lags = geometric_lags(lo, hi, n_lags)
    fit_lags = lags[drop_smallest:]
    if len(fit_lags) < 2:
        raise ParameterError("too few lags left to fit")
    S = {p: structure_function(x, lags, p) for p in p_list}

    def exponents(cols):
        out = {}
        rows = []
        for p in p_list:
            m = S[p][drop_smallest:, cols].mean(axis=1)
            if np.any(m <= 0):
                raise UndefinedExponentError("structure function vanishes: constant series")
            out[p] = np.polyfit(np.log(fit_lags * dt), np.log(m), 1)[0] / p
            rows.append(np.log(m) / p)
        # joint fit: common slope, one intercept per p
        lh = np.log(fit_lags * dt)
        X = np.zeros((len(p_list) * len(lh), 1 + len(p_list)))
        for i in range(len(p_list)):
            X[i * len(lh):(i + 1) * len(lh), 0] = lh
            X[i * len(lh):(i + 1) * len(lh), 1 + i] = 1.0
        coef = np.linalg.lstsq(X, np.concatenate(rows), rcond=None)[0]
        out["pooled"] = coef[0]
        return out

    R = x.shape[1]
    full = exponents(np.arange(R))
    se = {k: math.nan for k in full}
    if R >= 10:
        groups = np.array_split(np.arange(R), 10)
        jack = [exponents(np.setdiff1d(np.arange(R), g)) for g in groups]
        for k in full:
            vals = np.array([j[k] for j in jack])
            se[k] = float(math.sqrt((len(vals) - 1) / len(vals) * np.sum((vals - vals.mean()) ** 2)))
    values = np.stack([S[p].mean(axis=1) for p in p_list])
    return SeriesStats(float(full["pooled"]), se["pooled"], lags * dt, values, np.full(values.shape, np.nan),
                       {}, {"alpha": {p: float(full[p]) for p in p_list},
                            "alpha_stderr": {p: se[p] for p in p_list},
                            "fit_lags": fit_lags * dt, "p_list": tuple(p_list)})


# ----------------------------------------------------------------------------
# energy estimate
# ----------------------------------------------------------------------------

def energy_scaling(functionals: dict, dt: float, windows, min_replicas: int = 100) -> SeriesStats:
    """Scaling of E[(I_N - I_M)²] over time windows in (t-s) and in min(N, M).

    ``functionals`` maps each level N to the drift functional series
    ``(n_times, *batch)`` on a common uniform grid (all driven by the same
    paths).  Levels are compared in consecutive pairs (N, next N), and each
    window length w is tiled by non-overlapping windows.  The level slope
    pools all window lengths with one intercept per window; the time slope
    pools all pairs with one intercept per pair.
    """
    levels = sorted(functionals)
    if len(levels) < 3:
        raise ParameterError("energy scaling needs at least three levels")
    data = {N: _replicas(functionals[N]) for N in levels}
    R = data[levels[0]].shape[1]
    if R < min_replicas:
        raise StatisticsError(f"energy scaling needs >= {min_replicas} replicas, got {R}")
    n = data[levels[0]].shape[0]
    rows = []
    for N, M in zip(levels[:-1], levels[1:]):
        diff = data[M] - data[N]
        for w in windows:
            s = int(round(w / dt))
            if s < 1 or s > n - 1:
                raise ParameterError(f"window {w} does not fit the series")
            ends = np.arange(s, n, s)
            inc = diff[ends] - diff[ends - s]
            per = np.mean(inc ** 2, axis=0)
            m, se = _mean_se(per)
            rows.append((N, M, s * dt, m, se))
    rows = np.array(rows)

    def pooled(xcol, groupcol):
        keys = np.unique(rows[:, groupcol])
        X = np.zeros((len(rows), 1 + len(keys)))
        X[:, 0] = np.log(rows[:, xcol])
        for i, k in enumerate(keys):
            X[rows[:, groupcol] == k, 1 + i] = 1.0
        y = np.log(rows[:, 3])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = len(y) - X.shape[1]
        cov = (resid @ resid / dof) * np.linalg.inv(X.T @ X) if dof > 0 else np.full((X.shape[1],) * 2, np.nan)
        return Regression(float(coef[0]), float(math.sqrt(cov[0, 0])), float(coef[1]), len(y))

    level_fit = pooled(0, 2)
    time_fit = pooled(2, 0)
    return SeriesStats(level_fit.slope, level_fit.stderr, rows[:, :3], rows[:, 3], rows[:, 4],
                       {"level": level_fit, "time": time_fit}, {"columns": ("N", "M", "window")})


# ----------------------------------------------------------------------------
# stationarity
# ----------------------------------------------------------------------------

def real_modes(coeffs: np.ndarray, mean_zero: bool = False) -> np.ndarray:
    """Standardized real coordinates: mode 0, √2 Re û(k), √2 Im û(k) for k >= 1.

    For white noise these are i.i.d. standard normals.
    """
    c = np.asarray(coeffs)
    parts = [math.sqrt(2) * c[..., 1:].real, math.sqrt(2) * c[..., 1:].imag]
    if not mean_zero:
        parts.insert(0, c[..., :1].real)
    return np.concatenate(parts, axis=-1)


def stationarity_test(fields: np.ndarray, mean_zero: bool = False, alpha: float = 0.01,
                      z_max: float = 3.0, label: str = "") -> StatReport:
    """Compare samples (replicas, K+1) of a field with the white-noise law.

    Per real mode: z-score of the sample second moment against 1 (the mean
    is known to be 0 and the fourth moment is 3, so se = √(2/n)).  Pooled:
    Kolmogorov-Smirnov of all standardized coordinates against N(0,1).
    Bonferroni: the largest |z| is compared with the two-sided
    alpha / n_modes quantile.
    """
    x = real_modes(np.asarray(fields).reshape(-1, np.shape(fields)[-1]), mean_zero)
    n, d = x.shape
    if n < 10:
        raise StatisticsError("stationarity test needs at least 10 samples")
    z = (np.mean(x ** 2, axis=0) - 1.0) / math.sqrt(2.0 / n)
    frac = float(np.mean(np.abs(z) < z_max))
    ks = stats.kstest(x.ravel(), "norm")
    bonf = stats.norm.isf(alpha / (2 * d))
    rep = StatReport("stationarity")
    tag = f"{label} " if label else ""
    rep.add(f"{tag}fraction of modes with |z| < {z_max:g}", frac, math.nan, 0.99, "ge")
    rep.add(f"{tag}KS p-value", float(ks.pvalue), math.nan, alpha, "ge")
    rep.add(f"{tag}max |z| (Bonferroni bound {bonf:.3g})", float(np.max(np.abs(z))), math.nan, float(bonf), "info")
    rep.add(f"{tag}mean second moment", float(np.mean(x ** 2)), float(math.sqrt(2.0 / (n * d))), 1.0, "info")
    rep.metadata["z_scores"] = z
    return rep


# ----------------------------------------------------------------------------
# chaos kernels
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChaosKernel:
    """Symmetric Hermitian kernel of order 1 or 2 on modes -K..K.

    ``g`` has shape (2K+1,) or (2K+1, 2K+1) indexed by k + K.
    """

    order: int
    g: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=complex)
        if self.order not in (1, 2):
            raise ParameterError(f"unsupported chaos order {self.order}")
        if g.ndim != self.order or any(s != g.shape[0] for s in g.shape) or g.shape[0] % 2 == 0:
            raise ParameterError("kernel must be a cube of odd side 2K+1")
        flip = g[::-1] if self.order == 1 else g[::-1, ::-1]
        if not np.allclose(flip, np.conj(g), atol=1e-12):
            raise ParameterError("kernel is not Hermitian: F would not be real")
        if self.order == 2 and not np.allclose(g, g.T, atol=1e-12):
            raise ParameterError("order-2 kernel must be symmetric")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def K(self) -> int:
        return (self.g.shape[0] - 1) // 2

    @classmethod
    def zeros(cls, order: int, K: int) -> "ChaosKernel":
        return cls(order, np.zeros((2 * K + 1,) * order))

    @classmethod
    def linear(cls, psi: SpectralField) -> "ChaosKernel":
        """F(u) = u(ψ) = Σ û(k) ψ̂(-k)."""
        full = psi.full_coeffs()
        return cls(1, full[::-1])

    @classmethod
    def mode(cls, k: int, K: int, part: str = "cos") -> "ChaosKernel":
        """u(cos 2πkx) or u(sin 2πkx)."""
        psi = SpectralField.from_modes({k: 0.5 if part == "cos" else -0.5j}, K)
        return cls.linear(psi)

    @classmethod
    def wick_square(cls, psi: SpectralField) -> "ChaosKernel":
        """F(u) = :u(ψ)²: = u(ψ)² - ||ψ||²."""
        a = psi.full_coeffs()[::-1]
        return cls(2, np.outer(a, a))

    @classmethod
    def wick_mode(cls, k: int, K: int) -> "ChaosKernel":
        """F(u) = |û(k)|² - 1."""
        g = np.zeros((2 * K + 1, 2 * K + 1))
        g[K + k, K - k] = g[K - k, K + k] = 0.5
        return cls(2, g)

    def scaled(self, c: float) -> "ChaosKernel":
        return ChaosKernel(self.order, c * self.g)

    def restrict(self, K: int) -> "ChaosKernel":
        """Restrict (or zero-pad) to the band -K..K."""
        out = np.zeros((2 * K + 1,) * self.order, dtype=complex)
        n = min(K, self.K)
        src = slice(self.K - n, self.K + n + 1)
        dst = slice(K - n, K + n + 1)
        out[(dst,) * self.order] = self.g[(src,) * self.order]
        return ChaosKernel(self.order, out)

    def wavenumber_sq(self) -> np.ndarray:
        """(2π)² (k_1² + ... + k_n²) on the kernel grid."""
        k2 = (TWO_PI * np.arange(-self.K, self.K + 1)) ** 2
        return k2 if self.order == 1 else k2[:, None] + k2[None, :]

    def laplacian(self) -> "ChaosKernel":
        """Kernel of L_S F, i.e. W_n(Δ g)."""
        return ChaosKernel(self.order, -self.wavenumber_sq() * self.g)

    def variance(self) -> float:
        """E[F²] = n! Σ |g|²."""
        return float(math.factorial(self.order) * np.sum(np.abs(self.g) ** 2))

    def rates(self) -> np.ndarray:
        """Distinct OU decay rates present in the kernel."""
        lam = self.wavenumber_sq()[np.abs(self.g) > 1e-14]
        return np.unique(np.round(lam, 9))

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        """F(u) for half-band coefficients of shape (..., K_u + 1)."""
        u = SpectralField(coeffs).truncate(self.K).full_coeffs()
        if self.order == 1:
            return np.einsum("...a,a->...", u, self.g).real
        trace = np.trace(self.g[:, ::-1]).real          # Σ_a g(a, -a)
        return (np.einsum("...a,ab,...b->...", u, self.g, u).real - trace)

    def energy_form(self, coeffs: np.ndarray) -> np.ndarray:
        """ℰ(F)(u) = 2 ∫ |∂x D_x F|² dx.

        Order 1: 2 Σ (2πk)² |g(k)|² (deterministic); order 2:
        8 Σ_a (2πa)² |Σ_b g(a, b) û(b)|².
        """
        w = (TWO_PI * np.arange(-self.K, self.K + 1)) ** 2
        if self.order == 1:
            val = 2.0 * np.sum(w * np.abs(self.g) ** 2)
            return np.full(np.shape(coeffs)[:-1], val)
        u = SpectralField(coeffs).truncate(self.K).full_coeffs()
        inner = np.einsum("ab,...b->...a", self.g, u)
        return 8.0 * np.sum(w * np.abs(inner) ** 2, axis=-1)

    def energy_matrix(self) -> np.ndarray:
        """Symmetric A with ℰ(F) = zᵀ A z in the real coordinates z of :func:`real_modes`."""
        if self.order != 2:
            raise ParameterError("energy form is deterministic for first-chaos kernels")
        K = self.K
        # û(b) = Σ_j T[b, j] z_j with z = (mode 0, √2 Re, √2 Im) / standardization
        T = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        T[K, 0] = 1.0
        for k in range(1, K + 1):
            T[K + k, k] = 0.5 ** 0.5
            T[K + k, K + k] = 1j * 0.5 ** 0.5
            T[K - k, k] = 0.5 ** 0.5
            T[K - k, K + k] = -1j * 0.5 ** 0.5
        C = self.g @ T
        w = (TWO_PI * np.arange(-K, K + 1)) ** 2
        A = 8.0 * (C.conj().T @ (w[:, None] * C)).real
        return 0.5 * (A + A.T)

    def energy_moment(self, q: int) -> float:
        """E[ℰ(F)^q] for q = 1, 2 under white noise (closed form)."""
        if self.order == 1:
            return float(self.energy_form(np.zeros((self.K + 1,), dtype=complex))) ** q
        A = self.energy_matrix()
        tr = np.trace(A)
        if q == 1:
            return float(tr)
        if q == 2:
            return float(tr ** 2 + 2.0 * np.sum(A * A))
        raise ParameterError("closed-form energy moments only for q in {1, 2}")


def kv_norm(kernel: ChaosKernel) -> float:
    """Σ n! |g|² / ((2π)² Σ k_i²): the (-L_S)^{-1} form on the chaos."""
    lam = kernel.wavenumber_sq()
    g2 = np.abs(kernel.g) ** 2
    if np.any(g2[lam == 0] > 0):
        raise ParameterError("kernel has a component on the conserved zero mode (order-0 part)")
    return float(math.factorial(kernel.order) * np.sum(g2[lam > 0] / lam[lam > 0]))


# ----------------------------------------------------------------------------
# renormalized square: variance and pairing oracles
# ----------------------------------------------------------------------------

def _full_band(phi: SpectralField, K_out: int) -> np.ndarray:
    """ψ̂ on -K_out..K_out (zero outside the band of ψ)."""
    return phi.truncate(K_out).full_coeffs()


def second_chaos_variance(phi: SpectralField, m: Mollifier, N: float, K: int,
                          rng: np.random.Generator | None = None, samples: int = 0) -> SeriesStats:
    """Variance of ((ρ^N * u)² - c_N)(φ) for band-K white noise.

    Analytic (Isserlis): 2 Σ_{|k1|,|k2|<=K} |ρ̂(k1/N) ρ̂(k2/N) φ̂(k1 + k2)|².
    With ``rng`` and ``samples`` a Monte Carlo estimate is attached in
    ``extra`` (``mc``, ``mc_stderr``).
    """
    r = m.with_scale(N).multipliers(K)
    rho = np.concatenate([r[:0:-1], r])
    ks = np.arange(-K, K + 1)
    phif = _full_band(phi, 2 * K)
    total = ks[:, None] + ks[None, :] + 2 * K
    weight = np.abs(rho[:, None] * rho[None, :] * phif[total]) ** 2
    value = float(2.0 * weight.sum())
    extra = {}
    if rng is not None and samples > 1:
        vals = []
        for start in range(0, samples, 500):
            n = min(500, samples - start)
            v = sample_white_noise(K, rng, size=n).coeffs * r
            g = to_grid(v, 4 * K + 2)
            sq = from_grid(g * g, 2 * K)                  # exact: v² has band 2K
            sq[..., 0] -= np.sum(rho ** 2)                # c_N, torus normalization
            vals.append(pair_coeffs(sq, phi.truncate(2 * K).coeffs))
        vals = np.concatenate(vals)
        var = vals.var(ddof=1)
        # se of a sample variance: sqrt((m4 - var²(n-3)/(n-1)) / n)
        m4 = np.mean((vals - vals.mean()) ** 4)
        extra = {"mc": float(var), "mc_stderr": float(math.sqrt(max(m4 - var ** 2, 0.0) / len(vals)))}
    return SeriesStats(value, 0.0, np.array([N]), np.array([value]), np.array([0.0]), {}, extra)


def wick_pairing(phi: SpectralField, kernel: ChaosKernel, m: Mollifier | None = None, N: float = math.inf) -> float:
    """E[((ρ^N * u)² - c_N)(φ) F(u)] for F = W_2(g) (exact Wick pairing).

    Equals 2 Σ_{a,b} ρ̂(a/N) ρ̂(b/N) φ̂(-a-b) g(-a,-b); without ρ̂ it is the
    limit pairing 2 Σ φ̂(-a-b) g(-a,-b).
    """
    if kernel.order != 2:
        raise ParameterError("pairing with the renormalized square needs a second-chaos F")
    K = kernel.K
    if m is None or math.isinf(N):
        rho = np.ones(2 * K + 1)
    else:
        r = m.with_scale(N).multipliers(K)
        rho = np.concatenate([r[:0:-1], r])
    ks = np.arange(-K, K + 1)
    phif = _full_band(phi, 2 * K)
    idx = -(ks[:, None] + ks[None, :]) + 2 * K
    g_neg = kernel.g[::-1, ::-1]                         # g(-a, -b)
    return float(2.0 * np.sum(rho[:, None] * rho[None, :] * phif[idx] * g_neg).real)


def pairing_convergence(phi: SpectralField, kernel: ChaosKernel, levels, mollifiers=(Mollifier(),),
                        tol: float = 1e-6, mollifier_tol: float = 1e-8) -> StatReport:
    """Level-by-level Wick pairing for each mollifier shape.

    Reports the largest successive difference once every mollifier is the
    identity on the kernel's band, the gap to the limit pairing, and the
    spread of the final values across mollifier shapes.
    """
    if kernel.order == 0:
        raise ParameterError("order-0 functional: pairing is identically 0")
    levels = sorted(levels)
    limit = wick_pairing(phi, kernel)
    band = int(np.max(np.abs(np.nonzero(np.abs(kernel.g) > 0)[0] - kernel.K), initial=0))
    table = {}
    rep = StatReport("pairing-convergence")
    for i, m in enumerate(mollifiers):
        seq = np.array([wick_pairing(phi, kernel, m, N) for N in levels])
        table[i] = seq
        covered = [j for j, N in enumerate(levels) if m.with_scale(N).covers(band)]
        diffs = np.abs(np.diff(seq[covered])) if len(covered) >= 2 else np.array([math.nan])
        rep.add(f"mollifier {i}: max successive difference once band covered",
                float(np.max(diffs)), math.nan, tol, "le")
        rep.add(f"mollifier {i}: |final - limit|", float(abs(seq[-1] - limit)), math.nan, tol, "le")
    if len(mollifiers) > 1:
        finals = [table[i][-1] for i in table]
        rep.add("spread across mollifier shapes", float(np.ptp(finals)), math.nan, mollifier_tol, "le")
    rep.add("limit pairing", limit, math.nan, math.nan, "info")
    rep.metadata["levels"] = levels
    rep.metadata["sequences"] = {i: table[i] for i in table}
    return rep


# ----------------------------------------------------------------------------
# OU chaos action
# ----------------------------------------------------------------------------

def autocorrelation(values: np.ndarray, lags) -> tuple:
    """E[X_t X_{t+h}] averaged over t and replicas, with replica standard errors."""
    x = _replicas(values)
    per = np.stack([np.mean(x[: len(x) - h] * x[h:], axis=0) for h in lags])
    return _mean_se(per, axis=1)


def chaos_generator_action(kernel: ChaosKernel, traj: Trajectory, lags=None, floor: float = 0.05) -> StatReport:
    """Fit the exponential decay of E[F(X_0) F(X_t)] along a stationary OU ensemble.

    The rate is the slope of log C(h) over lags where the predicted
    correlation stays above ``floor`` times its value at 0; for single-rate
    kernels the prediction is (2π)² Σ k_i².
    """
    kernel = kernel.restrict(traj.K)
    F = kernel.evaluate(traj.coeffs)
    rep = StatReport("chaos-action")
    rates = kernel.rates()
    dt = float(traj.times[1] - traj.times[0])
    if not np.any(np.abs(kernel.g) > 0):
        rep.add("max |correlation| (null band)", float(np.max(np.abs(F))), math.nan, 0.0, "abs", 0.0)
        return rep
    lam = float(rates.min())
    if lags is None:
        hmax = max(2, int(math.log(1 / floor) / lam / dt))
        lags = np.unique(np.linspace(0, min(hmax, len(traj) // 4), 16).astype(int))
    C, se = autocorrelation(F, lags)
    good = C > 0
    reg = fit_line(lags[good] * dt, np.log(C[good]))
    rep.add("decay rate", -reg.slope, reg.stderr, lam, "rel", 0.10)
    rep.add("correlation at lag 0", float(C[0]), float(se[0]), kernel.variance(), "info")
    rep.metadata.update(lags=lags * dt, correlation=C, correlation_stderr=se,
                        predicted=kernel.variance() * np.exp(-lam * lags * dt) if len(rates) == 1 else None)
    return rep


# ----------------------------------------------------------------------------
# Kipnis-Varadhan bound and the martingale trick
# ----------------------------------------------------------------------------

def _window_sups(values: np.ndarray, times: np.ndarray, T: float, p: float) -> np.ndarray:
    """sup_{t<=T} |∫_0^t f ds|^p on every non-overlapping window of length T."""
    x = _replicas(values)
    dt = float(times[1] - times[0])
    s = int(round(T / dt))
    if s < 1 or s > len(x) - 1:
        raise ParameterError(f"window {T} does not fit the run")
    out = []
    for start in range(0, len(x) - s, s):
        seg = x[start:start + s + 1]
        integral = _left_riemann(seg, times[start:start + s + 1])
        out.append(np.max(np.abs(integral), axis=0) ** p)
    return np.concatenate(out)


def _kernel_series(kernel: ChaosKernel, data, times):
    """F(u_s) along a Trajectory, or a precomputed series with its times."""
    if isinstance(data, Trajectory):
        return kernel.restrict(data.K).evaluate(data.coeffs), data.times
    if times is None:
        raise ParameterError("a precomputed series needs its times")
    return np.asarray(data, float), np.asarray(times, float)


def kv_bound_check(kernel: ChaosKernel, data, T_list, times=None, max_ratio: float = 2.0,
                   bound: float = 24.0) -> StatReport:
    """E[sup_{t<=T} |∫ F ds|²] / (T ||F||²_{-1}) for each horizon T.

    ``data`` is a stationary Trajectory or the series F(u_s) itself.
    """
    norm = kv_norm(kernel)
    F, times = _kernel_series(kernel, data, times)
    rep = StatReport("kv-bound")
    consts = []
    for T in T_list:
        m, se = _mean_se(_window_sups(F, times, T, 2.0))
        c, cse = m / (T * norm), se / (T * norm)
        consts.append(c)
        rep.add(f"KV constant at T={T:g}", float(c), float(cse), bound, "le")
    rep.add("KV constant max/min over T", float(max(consts) / min(consts)), math.nan, max_ratio, "le")
    rep.metadata.update(kv_norm=norm, constants=consts)
    return rep


def martingale_trick_check(kernel: ChaosKernel, data, p: int, T_list, times=None,
                           slope_tol: float = 0.2) -> StatReport:
    """E[sup |∫ L_S F ds|^p] against T^{p/2} E[ℰ(F)^{p/2}] across horizons.

    ``data`` is a stationary Trajectory or the series (L_S F)(u_s).  The
    right side uses the closed-form energy moments; the slope of the left
    side in log T should be p/2.
    """
    if p % 2:
        raise ParameterError("closed-form right side needs even p")
    LF, times = _kernel_series(kernel.laplacian(), data, times)
    rhs_moment = kernel.energy_moment(p // 2)
    rep = StatReport("martingale-trick")
    lhs, consts = [], []
    for T in T_list:
        m, se = _mean_se(_window_sups(LF, times, T, float(p)))
        lhs.append(m)
        rhs = T ** (p / 2) * rhs_moment
        c = m / rhs if rhs > 0 else math.nan
        consts.append(c)
        rep.add(f"p={p} implied constant at T={T:g}", float(c), float(se / rhs) if rhs > 0 else math.nan,
                math.nan, "info")
    if all(v > 0 for v in lhs):
        reg = fit_line(np.log(T_list), np.log(lhs))
        rep.add(f"p={p} slope in T", reg.slope, reg.stderr, p / 2, "abs", slope_tol)
    else:
        rep.add(f"p={p} left side (all zero)", float(max(lhs)), math.nan, 0.0, "abs", 0.0)
    rep.metadata.update(lhs=lhs, constants=consts, energy_moment=rhs_moment)
    return rep
