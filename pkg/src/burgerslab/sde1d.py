"""One-dimensional diffusions dx = b(x) dt + √2 dw with a possibly rough drift.

The drift is the derivative of a potential B, and the invariant density on
the torus is exp(B)/Z.  Rough potentials (a Brownian bridge) give a drift
that only exists as a distribution; the smoothing level n replaces B by
B * ρ^n, whose derivative b_n is tabulated on a fine periodic grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import DivergenceError, ParameterError, StatisticsError
from .report import StatReport
from .stochastic_analysis import fit_line
from .torus_field import (
    Mollifier,
    SpectralField,
    derivative,
    mollify,
    sample_white_noise,
    theta_convolve,
    to_grid,
)

TABLE_SIZE = 2 ** 14


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Potential B and its smoothed derivatives b_n = (B * ρ^n)'.

    On the torus B is a band-limited periodic field; on the line only the
    linear (Ornstein-Uhlenbeck) drift b(x) = -rate x is supported.
    """

    potential: SpectralField | None = None
    domain: str = "torus"
    rate: float = 0.0
    mollifier: Mollifier = Mollifier()
    name: str = "custom"
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.domain not in ("torus", "line"):
            raise ParameterError(f"unknown domain {self.domain!r}")
        if self.domain == "torus" and self.potential is None:
            raise ParameterError("a torus drift needs a periodic potential")
        if self.domain == "line" and self.rate <= 0:
            raise ParameterError("the line drift is -rate x with rate > 0")

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, K: int = 1) -> "DriftSpec":
        return cls(SpectralField.zeros(K), name="zero")

    @classmethod
    def cosine(cls, amplitude: float = 1.0, K: int = 1) -> "DriftSpec":
        """B(x) = amplitude cos(2πx)."""
        return cls(SpectralField.from_modes({1: amplitude / 2}, K), name="cosine")

    @classmethod
    def from_potential_grid(cls, values, K: int | None = None, name: str = "grid") -> "DriftSpec":
        values = np.asarray(values, float)
        K = K or (len(values) - 1) // 2
        return cls(SpectralField.from_grid(values, K), name=name)

    @classmethod
    def brownian_bridge(cls, seed: int = 0, K: int = 2048) -> "DriftSpec":
        """A seeded mean-free periodic Brownian bridge, B = Θ * ξ (band K).

        Its derivative is band-limited white noise, the canonical rough drift.
        """
        xi = sample_white_noise(K, np.random.default_rng([seed, 0xB41D]), mean_zero=True)
        return cls(theta_convolve(xi), name=f"bridge(seed={seed})")

    @classmethod
    def ou(cls, rate: float = 1.0) -> "DriftSpec":
        """b(x) = -rate x on the line; B = -rate x² / 2."""
        return cls(None, domain="line", rate=rate, name=f"ou(rate={rate:g})")

    # -- evaluation --------------------------------------------------------
    def smoothed(self, n: float | None) -> SpectralField:
        m = self.mollifier if n is None else self.mollifier.with_scale(n)
        return mollify(self.potential, m)

    def potential_values(self, x, n: float | None = None) -> np.ndarray:
        if self.domain == "line":
            return -0.5 * self.rate * np.asarray(x, float) ** 2
        return self.smoothed(n).evaluate(np.asarray(x, float) % 1.0)

    def table(self, n: float | None = None) -> np.ndarray:
        """b_n on the grid j / TABLE_SIZE, with the periodic end point appended."""
        if n not in self._tables:
            b = to_grid(derivative(self.smoothed(n)).coeffs, TABLE_SIZE)
            self._tables[n] = np.append(b, b[0])
        return self._tables[n]

    def drift(self, x: np.ndarray, n: float | None = None) -> np.ndarray:
        """b_n(x); on the torus by linear interpolation of the spectral table."""
        x = np.asarray(x, float)
        if self.domain == "line":
            return -self.rate * x
        tab = self.table(n)
        s = (x % 1.0) * TABLE_SIZE
        i = np.minimum(s.astype(int), TABLE_SIZE - 1)
        f = s - i
        return tab[i] * (1.0 - f) + tab[i + 1] * f

    def drift_exact(self, x, n: float | None = None) -> np.ndarray:
        """b_n(x) by direct Fourier summation (slow, for checks)."""
        if self.domain == "line":
            return -self.rate * np.asarray(x, float)
        return derivative(self.smoothed(n)).evaluate(np.asarray(x, float) % 1.0)

    def band(self) -> int:
        return 0 if self.potential is None else self.potential.K


@dataclass(frozen=True, eq=False)
class Path1D:
    """Stored positions ``states[j]`` (replicas on axis 1) and the Brownian increments."""

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray
    dt: float
    domain: str = "torus"

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ParameterError("times and states disagree in length")
        if self.noise is not None and len(self.noise) != len(self.times) - 1:
            raise ParameterError("one Brownian increment per step is required")

    def wrapped(self) -> np.ndarray:
        return self.states % 1.0 if self.domain == "torus" else self.states


def brownian_increments(rng: np.random.Generator, n_steps: int, replicas: int, dt: float) -> np.ndarray:
    return math.sqrt(dt) * rng.standard_normal((n_steps, replicas))


def euler_maruyama(drift: DriftSpec, n: float | None, x0, dt: float, T: float,
                   rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> Path1D:
    """x_{j+1} = x_j + b_n(x_j) dt + √2 ΔW_j, every step stored.

    Pass ``noise`` (increments of variance dt, shape (n_steps, replicas)) to
    re-drive the same Brownian path at another level.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    n_steps = int(round(T / dt))
    x = np.atleast_1d(np.asarray(x0, float)).copy()
    if noise is None:
        if rng is None:
            raise ParameterError("need an rng or stored noise")
        noise = brownian_increments(rng, n_steps, x.size, dt)
    elif noise.shape[0] < n_steps:
        raise ParameterError("stored noise is shorter than the horizon")
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for j in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):      # checked just below
            x = x + drift.drift(x, n) * dt + math.sqrt(2.0) * noise[j]
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite position at step {j + 1}", step=j + 1)
        states[j + 1] = x
    return Path1D(dt * np.arange(n_steps + 1), states, noise[:n_steps], dt, drift.domain)


# ----------------------------------------------------------------------------
# invariant density
# ----------------------------------------------------------------------------

def _density_model(drift: DriftSpec, n: float | None):
    """(cdf, pdf, Z) of exp(B_n) / Z."""
    if drift.domain == "torus":
        grid = np.arange(TABLE_SIZE + 1) / TABLE_SIZE
        w = np.exp(drift.potential_values(grid[:-1], n))
        Z = float(w.mean())                     # trapezoid on a periodic grid: spectrally accurate
        wp = np.append(w, w[0])
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (wp[1:] + wp[:-1]))]) / TABLE_SIZE / Z

        def cdf(x):
            return np.interp(np.asarray(x) % 1.0, grid, cum)

        def pdf(x):
            return np.exp(drift.potential_values(x, n)) / Z
        return cdf, pdf, Z
    sd = 1.0 / math.sqrt(drift.rate)
    Z, _ = integrate.quad(lambda y: math.exp(-0.5 * drift.rate * y * y), -np.inf, np.inf)
    return (lambda x: stats.norm.cdf(x, scale=sd)), (lambda x: stats.norm.pdf(x, scale=sd)), Z


def invariant_density_check(drift: DriftSpec, n: float | None, T: float, dt: float, rng: np.random.Generator,
                            replicas: int = 1, burn_in: float = 1.0, thin: float = 0.25, bins: int = 20,
                            x0=None, alpha: float = 0.01, sup_target: float = 0.02) -> StatReport:
    """Occupation statistics of the Euler scheme against exp(B_n)/Z.

    Positions are recorded every ``thin`` time units after ``burn_in`` (so
    recorded samples are close to independent), pooled over replicas, and
    compared with the exact law through a χ² test on equiprobable bins and
    the sup-distance between empirical and exact distribution functions.
    """
    cdf, _, Z = _density_model(drift, n)
    x = np.zeros(replicas) if x0 is None else np.broadcast_to(np.asarray(x0, float), (replicas,)).copy()
    every = max(1, int(round(thin / dt)))
    burn = int(round(burn_in / dt))
    total = int(round(T / dt))
    samples = []
    for j in range(total):
        x = x + drift.drift(x, n) * dt + math.sqrt(2.0 * dt) * rng.standard_normal(replicas)
        if j + 1 > burn and (j + 1 - burn) % every == 0:
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"non-finite position at step {j + 1}", step=j + 1)
            samples.append(x.copy())
    if len(samples) * replicas < 5 * bins:
        raise StatisticsError(f"only {len(samples) * replicas} samples for {bins} bins")
    s = np.concatenate(samples)
    if drift.domain == "torus":
        s = s % 1.0
    u = np.sort(cdf(s))
    counts = np.bincount(np.minimum((u * bins).astype(int), bins - 1), minlength=bins)
    chi2 = stats.chisquare(counts)
    N = len(u)
    ecdf_hi = np.arange(1, N + 1) / N
    sup = float(max(np.max(ecdf_hi - u), np.max(u - (ecdf_hi - 1.0 / N))))
    rep = StatReport("invariant-density")
    rep.add("chi-square p-value", float(chi2.pvalue), math.nan, alpha, "ge")
    rep.add("sup distance of distribution functions", sup, math.nan, sup_target, "le")
    rep.add("samples", N, math.nan, math.nan, "info")
    rep.add("normalizing constant Z", Z, math.nan, math.nan, "info")
    rep.metadata.update(counts=counts, expected=N / bins)
    return rep


# ----------------------------------------------------------------------------
# time decorrelation of the drift functional
# ----------------------------------------------------------------------------

def drift_functionals(drift: DriftSpec, levels, path: Path1D) -> dict:
    """I_n(t) = ∫_0^t b_n(x_s) ds (left-point sums) for every level along one path."""
    out = {}
    for n in levels:
        b = drift.drift(path.states[:-1], n)
        out[n] = np.concatenate([np.zeros((1,) + b.shape[1:]), np.cumsum(b * path.dt, axis=0)])
    return out


def frozen_drift_values(drift: DriftSpec, levels, x0: float, T: float = 1.0) -> np.ndarray:
    """T b_n(x0): the functional with the diffusion switched off."""
    return np.array([T * float(drift.drift_exact(x0, n)) for n in levels])


def drift_functional_cauchy(drift: DriftSpec, levels, dt: float, T: float, replicas: int,
                            rng: np.random.Generator, drive_level: float | None = None) -> StatReport:
    """E[(I_n(T) - I_m(T))²] over all level pairs along paths driven at the finest level.

    Checks that the dyadic Cauchy terms E[(I_n - I_2n)²] decrease strictly
    and that their log-log slope in n is negative at 95% confidence.
    """
    levels = sorted(levels)
    if len(levels) < 2:
        raise ParameterError("need at least two levels")
    drive = drive_level if drive_level is not None else levels[-1]
    x0 = rng.random(replicas) if drift.domain == "torus" else np.zeros(replicas)
    path = euler_maruyama(drift, drive, x0, dt, T, rng)
    I = drift_functionals(drift, levels, path)
    final = {n: I[n][-1] for n in levels}
    L = len(levels)
    matrix = np.zeros((L, L))
    stderr = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            d2 = (final[levels[i]] - final[levels[j]]) ** 2
            matrix[i, j] = d2.mean()
            stderr[i, j] = d2.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else math.nan
    rep = StatReport("drift-cauchy")
    pairs = [(i, levels.index(2 * n)) for i, n in enumerate(levels) if 2 * n in levels]
    if not pairs:
        pairs = [(i, i + 1) for i in range(L - 1)]
    seq = np.array([matrix[i, j] for i, j in pairs])
    for (i, j), v in zip(pairs, seq):
        rep.add(f"E[(I_{levels[i]:g} - I_{levels[j]:g})^2]", float(v), float(stderr[i, j]), math.nan, "info")
    if len(seq) >= 2:
        with np.errstate(invalid="ignore", divide="ignore"):    # all-zero terms give nan
            ratio = float(np.max(seq[1:] / seq[:-1]))
        rep.add("largest ratio of successive Cauchy terms", ratio,
                math.nan, 1.0, "le", note="strict decrease")
    if len(seq) >= 3:
        reg = fit_line(np.log([levels[i] for i, _ in pairs]), np.log(seq))
        hi = reg.ci(0.95)[1]
        rep.add("Cauchy decay slope in n (95% upper bound)", float(hi), reg.stderr, 0.0, "le")
        rep.add("Cauchy decay slope in n", reg.slope, reg.stderr, math.nan, "info")
    rep.metadata.update(levels=levels, matrix=matrix, stderr=stderr, drive_level=drive)
    return rep
