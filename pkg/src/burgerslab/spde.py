"""Galerkin time integration of the stochastic Burgers equation and its relatives.

Three equations share one noise model, a cylindrical Wiener process W
truncated to the band |k| <= K:

* Burgers        du = Δu dt + ∂x(u²) dt + σ ∂x dW
* linear OU      dX = ΔX dt + σ ∂x dW
* heat (SHE)     dφ = Δφ dt + σ φ dW          (Itô)

with σ = sqrt(2) by default, which makes spatial white noise (unit variance
per complex mode) the invariant law of the first two.  Noise is stored in
standardized form: ``xi[step, ..., k]`` is a complex Gaussian with
``E|xi|^2 = 1`` (mode 0 real), and the Brownian coefficient increment is
``sqrt(dt) * xi``.  Feeding the same ``xi`` to different steppers couples
them.

Schemes
-------
Burgers: exponential Euler.  The linear part and the additive noise are
integrated exactly (OU transition per mode), the nonlinearity enters through
the Duhamel weight ``(1 - exp(-λ dt)) / λ`` with λ = (2πk)².
OU: exact transition.  SHE: heat semigroup applied to the explicit Itô
update ``φ + σ Π_K(φ dW)``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DivergenceError, ParameterError, PositivityError
from .torus_field import (
    IDENTITY,
    TWO_PI,
    Mollifier,
    SpectralField,
    dealiased_size,
    derivative,
    from_grid,
    laplacian,
    mollify,
    pair,
    pair_coeffs,
    product_dealiased,
    renorm_constant,
    square_coeffs,
    to_grid,
    wavenumbers,
)

SQRT2 = math.sqrt(2.0)

# Bound on dt (2πK)^2 accepted at configuration time, per scheme.  The
# linear part is integrated exactly, so these only guard the explicit
# treatment of the nonlinearity / multiplicative noise.
STABILITY_CONSTANT = {"expeuler": 8.0, "ou": math.inf, "she": 8.0}

DIVERGENCE_THRESHOLD = 1e8


@dataclass(frozen=True)
class SPDEConfig:
    K: int
    dt: float
    T: float
    scheme: str = "expeuler"
    seed: int = 0
    stride: int = 1
    noise_scale: float = SQRT2

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ParameterError(f"K must be a positive integer, got {self.K!r}")
        if not (self.dt > 0 and self.T > 0):
            raise ParameterError("dt and T must be positive")
        if self.scheme not in STABILITY_CONSTANT:
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if self.stride < 1:
            raise ParameterError("stride must be >= 1")
        cfl = self.dt * (TWO_PI * self.K) ** 2
        if cfl > STABILITY_CONSTANT[self.scheme]:
            raise ParameterError(
                f"dt (2πK)^2 = {cfl:.3g} exceeds the {self.scheme} bound "
                f"{STABILITY_CONSTANT[self.scheme]}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def stepper(self, nonlinearity_sign: float = 1.0):
        if self.scheme == "expeuler":
            return BurgersStepper(self.K, self.dt, self.noise_scale, nonlinearity_sign)
        if self.scheme == "ou":
            return OUStepper(self.K, self.dt, self.noise_scale)
        return SHEStepper(self.K, self.dt, self.noise_scale)


# ----------------------------------------------------------------------------
# noise
# ----------------------------------------------------------------------------

def _standard_block(rng: np.random.Generator, n_steps: int, K: int) -> np.ndarray:
    z = rng.standard_normal((n_steps, 2 * K + 1))
    xi = np.empty((n_steps, K + 1), dtype=complex)
    xi[:, 0] = z[:, 0]
    xi[:, 1:] = (z[:, 1:K + 1] + 1j * z[:, K + 1:]) / SQRT2
    return xi


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Standardized noise for ``n_steps`` steps, shape ``(n_steps, *batch, K+1)``."""

    xi: np.ndarray
    dt: float

    @property
    def K(self) -> int:
        return self.xi.shape[-1] - 1

    @property
    def n_steps(self) -> int:
        return self.xi.shape[0]

    @property
    def batch_shape(self) -> tuple:
        return self.xi.shape[1:-1]

    def increments(self) -> np.ndarray:
        """Brownian coefficient increments dW_k (variance dt per complex mode)."""
        return math.sqrt(self.dt) * self.xi

    def coarsen(self, factor: int) -> "NoiseRealization":
        """Same Brownian path seen with step ``factor * dt``."""
        n = self.n_steps // factor
        xi = self.xi[: n * factor].reshape((n, factor) + self.xi.shape[1:]).sum(axis=1)
        return NoiseRealization(xi / math.sqrt(factor), self.dt * factor)

    def reversed(self) -> "NoiseRealization":
        return NoiseRealization(self.xi[::-1], self.dt)


class NoiseStream:
    """Lazily drawn noise, one generator per replica.

    Replica ``r`` always consumes its own generator in the same order, so the
    numbers it sees do not depend on how many replicas share the batch.
    """

    def __init__(self, rngs: np.random.Generator | Sequence[np.random.Generator], K: int, dt: float):
        self.batched = not isinstance(rngs, np.random.Generator)
        self.rngs = list(rngs) if self.batched else [rngs]
        self.K = K
        self.dt = dt

    def draw(self, n_steps: int) -> NoiseRealization:
        blocks = [_standard_block(r, n_steps, self.K) for r in self.rngs]
        xi = np.stack(blocks, axis=1) if self.batched else blocks[0]
        return NoiseRealization(xi, self.dt)


def sample_noise(K: int, dt: float, n_steps: int, rngs) -> NoiseRealization:
    return NoiseStream(rngs, K, dt).draw(n_steps)


# ----------------------------------------------------------------------------
# steppers (array level, batched over leading axes)
# ----------------------------------------------------------------------------

class _LinearPart:
    def __init__(self, K: int, dt: float, noise_scale: float):
        k = wavenumbers(K)
        self.K = K
        self.dt = dt
        self.noise_scale = noise_scale
        self.lam = (TWO_PI * k) ** 2
        self.decay = np.exp(-self.lam * dt)
        safe = np.where(k > 0, self.lam, 1.0)
        self.duhamel = np.where(k > 0, -np.expm1(-self.lam * dt) / safe, dt)
        # exact OU convolution of sigma d(∂x W): variance sigma^2/2 (1 - e^{-2 λ dt})
        self.noise_amp = 1j * np.sqrt(0.5 * noise_scale ** 2 * -np.expm1(-2.0 * self.lam * dt))
        self.noise_amp[0] = 0.0


class OUStepper(_LinearPart):
    """Exact transition of dX = ΔX dt + σ ∂x dW, per mode."""

    def step(self, c: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.decay * c + self.noise_amp * xi


class BurgersStepper(_LinearPart):
    """Exponential Euler step for du = Δu dt + s ∂x Π_K(u²) dt + σ ∂x dW.

    ``nonlinearity_sign`` s = -1 gives the time-reversed equation.
    """

    def __init__(self, K: int, dt: float, noise_scale: float = SQRT2, nonlinearity_sign: float = 1.0):
        super().__init__(K, dt, noise_scale)
        self.M = dealiased_size(K)
        self.ik = TWO_PI * 1j * wavenumbers(K)
        self.sign = nonlinearity_sign
        self._weight = self.sign * self.duhamel * self.ik

    def nonlinearity(self, c: np.ndarray) -> np.ndarray:
        return self.sign * self.ik * square_coeffs(c, self.M)

    def step(self, c: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.decay * c + self._weight * square_coeffs(c, self.M) + self.noise_amp * xi


class SHEStepper(_LinearPart):
    """Semi-implicit Itô step for dφ = Δφ dt + σ φ dW.

    Raises PositivityError when the updated field is not strictly positive
    on the dealiased grid.
    """

    def __init__(self, K: int, dt: float, noise_scale: float = SQRT2):
        super().__init__(K, dt, noise_scale)
        self.M = dealiased_size(K)
        self.sqrt_dt = math.sqrt(dt)
        self.check_positivity = True

    def step(self, c: np.ndarray, xi: np.ndarray) -> np.ndarray:
        grid_phi = to_grid(c, self.M)
        grid_dw = to_grid(self.sqrt_dt * xi, self.M)
        new = self.decay * (c + self.noise_scale * from_grid(grid_phi * grid_dw, self.K))
        if self.check_positivity and np.min(to_grid(new, self.M)) <= 0.0:
            raise PositivityError("stochastic heat equation lost positivity")
        return new


def step_burgers(u: SpectralField, dt: float, xi: np.ndarray, noise_scale: float = SQRT2) -> SpectralField:
    return u.with_coeffs(BurgersStepper(u.K, dt, noise_scale).step(u.coeffs, np.asarray(xi)))


def step_ou(u: SpectralField, dt: float, xi: np.ndarray, noise_scale: float = SQRT2) -> SpectralField:
    return u.with_coeffs(OUStepper(u.K, dt, noise_scale).step(u.coeffs, np.asarray(xi)))


def step_she(phi: SpectralField, dt: float, xi: np.ndarray, noise_scale: float = SQRT2) -> SpectralField:
    return phi.with_coeffs(SHEStepper(phi.K, dt, noise_scale).step(phi.coeffs, np.asarray(xi)))


def burgers_nonlinearity(u: SpectralField) -> SpectralField:
    """The Galerkin drift ∂x Π_K (Π_K u)²."""
    return derivative(product_dealiased(u, u))


# ----------------------------------------------------------------------------
# trajectories
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored states ``coeffs[j]`` at ``times[j]`` plus the driving noise.

    ``coeffs`` has shape ``(n_times, *batch, K+1)``.  ``noise`` covers every
    step between the first and last stored time (``stride`` steps per stored
    interval).  ``drift_sign`` is -1 on a time-reversed trajectory.
    """

    times: np.ndarray
    coeffs: np.ndarray
    noise: NoiseRealization | None = None
    mean_zero: bool = False
    stride: int = 1
    drift_sign: float = 1.0

    def __len__(self) -> int:
        return len(self.times)

    @property
    def K(self) -> int:
        return self.coeffs.shape[-1] - 1

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[1:-1]

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.coeffs[j], self.mean_zero)

    def final(self) -> SpectralField:
        return self.field(-1)


def _check_state(c: np.ndarray, step: int):
    energy = np.vdot(c, c).real / max(1, c.size)
    if not np.isfinite(energy) or energy > DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"state diverged at step {step} (mean |coeff|^2 = {energy:.3g})", step=step)


def iterate_trajectory(u0: SpectralField, stepper, n_steps: int, noise, *, stride: int = 1,
                       chunk_steps: int = 256, t0: float = 0.0) -> Iterator[Trajectory]:
    """Advance ``u0`` and yield consecutive trajectory chunks.

    Consecutive chunks share their boundary state, so chunk-wise Riemann
    sums chain into the full-run sums.  ``noise`` is a NoiseRealization
    (consumed in order) or a NoiseStream.
    """
    if chunk_steps % stride:
        chunk_steps = max(stride, (chunk_steps // stride) * stride)
    c = np.array(u0.coeffs, dtype=complex)
    check = not isinstance(stepper, SHEStepper)
    done = 0
    while done < n_steps:
        n = min(chunk_steps, n_steps - done)
        if isinstance(noise, NoiseRealization):
            block = NoiseRealization(noise.xi[done:done + n], noise.dt)
            if block.n_steps < n:
                raise ParameterError("noise realization shorter than the requested run")
        else:
            block = noise.draw(n)
        stored, index = [c], [0]
        for i in range(n):
            try:
                c = stepper.step(c, block.xi[i])
            except PositivityError as exc:
                raise PositivityError(f"{exc} at step {done + i + 1}", step=done + i + 1,
                                      time=t0 + stepper.dt * (done + i + 1)) from None
            if check:
                _check_state(c, done + i + 1)
            if (i + 1) % stride == 0 or i == n - 1:
                stored.append(c)
                index.append(i + 1)
        times = t0 + stepper.dt * (done + np.asarray(index))
        yield Trajectory(times, np.stack(stored), block, u0.mean_zero, stride)
        done += n


def simulate(u0: SpectralField, stepper, n_steps: int, noise, *, stride: int = 1,
             chunk_steps: int = 1024) -> Trajectory:
    """Run to completion and return the whole (strided) trajectory."""
    chunks = list(iterate_trajectory(u0, stepper, n_steps, noise, stride=stride, chunk_steps=chunk_steps))
    return concatenate(chunks)


def concatenate(chunks: Sequence[Trajectory]) -> Trajectory:
    first = chunks[0]
    times = np.concatenate([first.times] + [c.times[1:] for c in chunks[1:]])
    coeffs = np.concatenate([first.coeffs] + [c.coeffs[1:] for c in chunks[1:]])
    noise = None
    if all(c.noise is not None for c in chunks):
        noise = NoiseRealization(np.concatenate([c.noise.xi for c in chunks]), first.noise.dt)
    return Trajectory(times, coeffs, noise, first.mean_zero, first.stride, first.drift_sign)


def white_noise_ensemble(K: int, rngs: Sequence[np.random.Generator], mean_zero: bool = False) -> SpectralField:
    """One white-noise sample per replica generator, stacked on a batch axis."""
    from .torus_field import sample_white_noise

    return SpectralField(np.stack([sample_white_noise(K, r, mean_zero).coeffs for r in rngs]), mean_zero)


# ----------------------------------------------------------------------------
# functionals along trajectories
# ----------------------------------------------------------------------------

def _left_riemann(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative left-point sums, starting at 0 at ``times[0]``."""
    dt = np.diff(times).reshape((-1,) + (1,) * (values.ndim - 1))
    out = np.zeros_like(values)
    np.cumsum(values[:-1] * dt, axis=0, out=out[1:])
    return out


def pair_series(traj: Trajectory, phi: SpectralField) -> np.ndarray:
    """u_t(φ) at every stored time, shape ``(n_times, *batch)``."""
    return pair_coeffs(traj.coeffs, phi.truncate(traj.K).coeffs)


def drift_integrand(traj: Trajectory, phi: SpectralField, m: Mollifier = IDENTITY) -> np.ndarray:
    """(u_s * ρ^N)²(-∂x φ) at every stored time."""
    test = -derivative(phi.truncate(traj.K)).coeffs
    c = traj.coeffs * m.multipliers(traj.K)
    M = dealiased_size(traj.K)
    return pair_coeffs(square_coeffs(c, M), test)


def drift_functional(traj: Trajectory, phi: SpectralField, m: Mollifier = IDENTITY) -> np.ndarray:
    """Left-point Riemann sums of the mollified Burgers drift tested against φ.

    On a reversed trajectory the sign follows the reversed equation.
    """
    if traj.stride > 1:
        warnings.warn(f"drift functional sampled every {traj.stride} steps; "
                      "the Riemann sum is coarser than the scheme", RuntimeWarning, stacklevel=2)
    return traj.drift_sign * _left_riemann(drift_integrand(traj, phi, m), traj.times)


def martingale_residual(traj: Trajectory, phi: SpectralField, m: Mollifier = IDENTITY) -> np.ndarray:
    """M_t(φ) = u_t(φ) - u_0(φ) - ∫ u_s(Δφ) ds - drift functional."""
    phi = phi.truncate(traj.K)
    return residual_from_series(pair_series(traj, phi), pair_series(traj, laplacian(phi)),
                                drift_integrand(traj, phi, m), traj.times, traj.drift_sign)


def residual_from_series(u_phi: np.ndarray, u_lap: np.ndarray, drift: np.ndarray, times: np.ndarray,
                         drift_sign: float = 1.0) -> np.ndarray:
    """The martingale residual assembled from scalar series.

    ``u_phi``, ``u_lap`` and ``drift`` are u_s(φ), u_s(Δφ) and the drift
    integrand at the stored times; reversing all three along axis 0 (with
    ``drift_sign = -1``) gives the residual of the time-reversed process.
    """
    return u_phi - u_phi[0] - _left_riemann(u_lap + drift_sign * drift, times)


def renormalized_square(u: SpectralField, m: Mollifier, phi: SpectralField,
                        normalization: str = "torus") -> np.ndarray | float:
    """((u * ρ^N)² - c_N)(φ) with c_N in the torus or the line normalization."""
    consts = renorm_constant(m, u.K)
    c_N = {"torus": consts.torus, "line": consts.line}[normalization]
    uN = mollify(u, m)
    raw = pair(product_dealiased(uN, uN), phi.truncate(u.K))
    return raw - c_N * phi.coeffs[0].real


def time_reverse(traj: Trajectory) -> Trajectory:
    """The process t -> u_{T - t} on the same time grid, with flipped drift sign."""
    t = traj.times
    times = t[0] + (t[-1] - t[::-1])
    noise = traj.noise.reversed() if traj.noise is not None else None
    return replace(traj, times=times, coeffs=traj.coeffs[::-1], noise=noise, drift_sign=-traj.drift_sign)


# ----------------------------------------------------------------------------
# trajectory dumps
# ----------------------------------------------------------------------------

def dump_trajectory(path, traj: Trajectory, header: dict | None = None) -> Path:
    """Text dump: ``#``-prefixed JSON header, then rows ``t, replica, k, re, im``."""
    path = Path(path)
    coeffs = traj.coeffs.reshape(len(traj), -1, traj.K + 1)
    n_t, n_r, n_k = coeffs.shape
    meta = {"cutoff": traj.K, "replicas": n_r, "mean_zero": traj.mean_zero, "stride": traj.stride,
            "drift_sign": traj.drift_sign, "batch_shape": list(traj.batch_shape), **(header or {})}
    t = np.repeat(traj.times, n_r * n_k)
    r = np.tile(np.repeat(np.arange(n_r), n_k), n_t)
    k = np.tile(np.arange(n_k), n_t * n_r)
    flat = coeffs.ravel()
    with path.open("w") as fh:
        fh.write("# " + json.dumps(meta) + "\n")
        fh.write("t,replica,k,re,im\n")
        np.savetxt(fh, np.column_stack([t, r, k, flat.real, flat.imag]), delimiter=",",
                   fmt=["%.12g", "%d", "%d", "%.17g", "%.17g"])
    return path


def load_trajectory(path) -> tuple:
    """Inverse of :func:`dump_trajectory`; returns (Trajectory, header)."""
    path = Path(path)
    with path.open() as fh:
        meta = json.loads(fh.readline()[1:])
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    n_r, n_k = meta["replicas"], meta["cutoff"] + 1
    n_t = len(data) // (n_r * n_k)
    coeffs = (data[:, 3] + 1j * data[:, 4]).reshape((n_t,) + tuple(meta["batch_shape"]) + (n_k,))
    times = data[:: n_r * n_k, 0]
    traj = Trajectory(times, coeffs, None, meta["mean_zero"], meta["stride"], meta["drift_sign"])
    return traj, meta
