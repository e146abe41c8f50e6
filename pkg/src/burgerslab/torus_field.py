"""Spectral fields on the torus T = R/Z.

A real periodic field is stored by its Fourier coefficients on the
non-negative half band ``k = 0..K``; the negative modes follow from
Hermitian symmetry ``u(-k) = conj(u(k))``.  The synthesis convention is

    u(x) = sum_{|k| <= K} u(k) exp(2 pi i k x),

so differentiation multiplies mode ``k`` by ``2 pi i k`` and the
antiderivative kernel Theta multiplies it by ``1 / (2 pi i k)`` for
``k != 0``.

Every array-level helper accepts leading batch axes: ``coeffs`` has shape
``(..., K + 1)``, which is how ensembles of replicas are advanced together.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.fft as sfft
from scipy import integrate

from .errors import ParameterError

TWO_PI = 2.0 * np.pi


# ----------------------------------------------------------------------------
# array-level helpers (used in the hot loops of the steppers)
# ----------------------------------------------------------------------------

def wavenumbers(K: int) -> np.ndarray:
    return np.arange(K + 1)


def dealiased_size(K: int) -> int:
    """Smallest FFT-friendly grid size M with M > 3K.

    On such a grid the product of two band-K fields is sampled without
    aliasing onto the modes |k| <= K, so the truncated product is exact.
    """
    return sfft.next_fast_len(3 * K + 1, real=True)


def grid_points(M: int) -> np.ndarray:
    return np.arange(M) / M


def to_grid(coeffs: np.ndarray, M: int | None = None) -> np.ndarray:
    """Evaluate half-band coefficients on the uniform grid ``j / M``."""
    K = coeffs.shape[-1] - 1
    if M is None:
        M = dealiased_size(K)
    if M // 2 < K or M < 2 * K + 1:
        raise ParameterError(f"grid of {M} points cannot resolve cutoff K={K}")
    padded = np.zeros(coeffs.shape[:-1] + (M // 2 + 1,), dtype=complex)
    padded[..., : K + 1] = coeffs
    return sfft.irfft(padded, n=M, axis=-1) * M


def from_grid(values: np.ndarray, K: int) -> np.ndarray:
    """Fourier coefficients ``k = 0..K`` of real grid samples (band projection)."""
    M = values.shape[-1]
    if M // 2 < K:
        raise ParameterError(f"grid of {M} points has no mode {K}")
    coeffs = sfft.rfft(values, axis=-1)[..., : K + 1] / M
    coeffs[..., 0] = coeffs[..., 0].real
    return coeffs


def square_coeffs(coeffs: np.ndarray, M: int | None = None) -> np.ndarray:
    """Band-K projection of the pointwise square, alias free."""
    K = coeffs.shape[-1] - 1
    g = to_grid(coeffs, M)
    return from_grid(g * g, K)


def pair_coeffs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_{|k|<=K} a(k) conj(b(k)) for half-band arrays (real result)."""
    K = min(a.shape[-1], b.shape[-1]) - 1
    a = a[..., : K + 1]
    b = b[..., : K + 1]
    head = (a[..., 0] * np.conj(b[..., 0])).real
    tail = (a[..., 1:] * np.conj(b[..., 1:])).real.sum(axis=-1)
    return head + 2.0 * tail


# ----------------------------------------------------------------------------
# value types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real periodic (generalized) function given by modes ``k = 0..K``.

    ``coeffs`` may carry leading batch axes; the last axis is the band.
    The array is copied on construction and frozen.
    """

    coeffs: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.ndim == 0 or c.shape[-1] < 2:
            raise ParameterError("a SpectralField needs cutoff K >= 1")
        scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
        if np.any(np.abs(c[..., 0].imag) > 1e-12 * scale):
            raise ParameterError("mode 0 of a real field must be real")
        c[..., 0] = c[..., 0].real
        if self.mean_zero:
            c[..., 0] = 0.0
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    # -- construction ------------------------------------------------------
    @classmethod
    def zeros(cls, K: int, batch_shape: tuple = (), mean_zero: bool = False):
        _check_cutoff(K)
        return cls(np.zeros(tuple(batch_shape) + (K + 1,), dtype=complex), mean_zero)

    @classmethod
    def constant(cls, value: float, K: int):
        _check_cutoff(K)
        c = np.zeros(K + 1, dtype=complex)
        c[0] = value
        return cls(c)

    @classmethod
    def from_modes(cls, modes: dict, K: int, mean_zero: bool = False):
        """Build from ``{k: amplitude}``; negative ``k`` is folded by conjugation."""
        _check_cutoff(K)
        c = np.zeros(K + 1, dtype=complex)
        for k, value in modes.items():
            k = int(k)
            if abs(k) > K:
                raise ParameterError(f"mode {k} outside band K={K}")
            if k >= 0:
                c[k] += value
            else:
                c[-k] += np.conj(value)
        if mean_zero:
            c[0] = 0.0
        return cls(c, mean_zero)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], K: int, M: int | None = None):
        """Band projection of a real periodic function sampled on M points.

        Exact for trigonometric polynomials of degree < M - K.
        """
        _check_cutoff(K)
        M = M or max(dealiased_size(K), 4 * K + 4)
        return cls(from_grid(np.asarray(f(grid_points(M)), dtype=float), K))

    @classmethod
    def from_grid(cls, values: np.ndarray, K: int, mean_zero: bool = False):
        return cls(from_grid(np.asarray(values, dtype=float), K), mean_zero)

    # -- inspection --------------------------------------------------------
    @property
    def K(self) -> int:
        return self.coeffs.shape[-1] - 1

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[..., 0].real

    def mode(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0.0
        value = self.coeffs[..., abs(k)]
        return value if k >= 0 else np.conj(value)

    def full_coeffs(self) -> np.ndarray:
        """Coefficients ordered ``k = -K..K``."""
        neg = np.conj(self.coeffs[..., :0:-1])
        return np.concatenate([neg, self.coeffs], axis=-1)

    def grid(self, M: int | None = None) -> np.ndarray:
        return to_grid(self.coeffs, M)

    def evaluate(self, x) -> np.ndarray:
        """Point values at arbitrary positions (direct sum, O(K) per point)."""
        x = np.asarray(x, dtype=float)
        k = wavenumbers(self.K)[1:]
        phase = np.exp(TWO_PI * 1j * np.multiply.outer(x.ravel(), k))
        c = self.coeffs
        tail = np.einsum("...k,xk->...x", c[..., 1:], phase)
        values = c[..., 0].real[..., None] + 2.0 * tail.real
        return values.reshape(self.batch_shape + x.shape)

    def with_coeffs(self, coeffs: np.ndarray, mean_zero: bool | None = None) -> "SpectralField":
        return SpectralField(coeffs, self.mean_zero if mean_zero is None else mean_zero)

    def truncate(self, K: int) -> "SpectralField":
        """Restrict to (or zero-pad up to) a new cutoff."""
        _check_cutoff(K)
        c = np.zeros(self.batch_shape + (K + 1,), dtype=complex)
        n = min(K, self.K) + 1
        c[..., :n] = self.coeffs[..., :n]
        return SpectralField(c, self.mean_zero)

    def __getitem__(self, index) -> "SpectralField":
        if not self.batch_shape:
            raise IndexError("unbatched field")
        return SpectralField(self.coeffs[index], self.mean_zero)

    # -- linear structure --------------------------------------------------
    def __add__(self, other):
        if isinstance(other, SpectralField):
            _check_same_band(self, other)
            return SpectralField(self.coeffs + other.coeffs, self.mean_zero and other.mean_zero)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            _check_same_band(self, other)
            return SpectralField(self.coeffs - other.coeffs, self.mean_zero and other.mean_zero)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar) and np.isreal(scalar):
            return SpectralField(self.coeffs * float(np.real(scalar)), self.mean_zero)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(-self.coeffs, self.mean_zero)

    def allclose(self, other: "SpectralField", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        return self.K == other.K and np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=rtol)


# Test functions obey exactly the same invariants.
TestFunction = SpectralField


def _check_cutoff(K):
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise ParameterError(f"cutoff K must be a positive integer, got {K!r}")


def _check_same_band(u: SpectralField, v: SpectralField):
    if u.K != v.K:
        raise ParameterError(f"cutoff mismatch: {u.K} != {v.K}")


# ----------------------------------------------------------------------------
# mollifiers
# ----------------------------------------------------------------------------

def _bump_ratio(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)

    def f(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a, b = f(t), f(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class Mollifier:
    """Even smoothing kernel given by its Fourier profile.

    The profile equals 1 on ``|xi| <= inner``, vanishes for ``|xi| >= outer``
    and interpolates with a C-infinity transition in between.  Mode ``k`` of a
    field is multiplied by ``profile(k / scale)``; ``scale = inf`` is the
    identity.
    """

    scale: float = math.inf
    inner: float = 0.5
    outer: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0):
            raise ParameterError(f"mollifier scale must be positive, got {self.scale}")
        if not (0 < self.inner < self.outer):
            raise ParameterError("mollifier profile needs 0 < inner < outer")

    @property
    def support(self) -> float:
        return self.outer

    def profile(self, xi) -> np.ndarray:
        a = np.abs(np.asarray(xi, dtype=float))
        return _bump_ratio((self.outer - a) / (self.outer - self.inner))

    def multipliers(self, K: int) -> np.ndarray:
        if math.isinf(self.scale):
            return np.ones(K + 1)
        return self.profile(wavenumbers(K) / self.scale)

    def with_scale(self, scale: float) -> "Mollifier":
        return Mollifier(scale, self.inner, self.outer)

    def covers(self, K: int) -> bool:
        """True when the profile is identically 1 on the whole band."""
        return math.isinf(self.scale) or K <= self.inner * self.scale

    def profile_l2(self) -> float:
        """Integral of profile(xi)^2 over the real line."""
        val, _ = integrate.quad(lambda x: float(self.profile(x)) ** 2, 0.0, self.outer,
                                points=[self.inner], epsabs=1e-13, epsrel=1e-12, limit=200)
        return 2.0 * val


IDENTITY = Mollifier()


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------

def sample_white_noise(K: int, rng: np.random.Generator, mean_zero: bool = False,
                       size: tuple | int | None = None) -> SpectralField:
    """Spatial white noise truncated to the band |k| <= K.

    Mode 0 is a real standard normal; mode k > 0 is ``(a + i b) / sqrt(2)``
    with independent standard normals, so ``E|u(k)|^2 = 1``.  The draw
    order is one block of ``2K + 1`` normals per sample (mode 0, real
    parts, imaginary parts); mode 0 is drawn even when it is discarded.
    """
    _check_cutoff(K)
    if size is None:
        size = ()
    elif isinstance(size, (int, np.integer)):
        size = (int(size),)
    z = rng.standard_normal(tuple(size) + (2 * K + 1,))
    c = np.empty(tuple(size) + (K + 1,), dtype=complex)
    c[..., 0] = 0.0 if mean_zero else z[..., 0]
    c[..., 1:] = (z[..., 1:K + 1] + 1j * z[..., K + 1:]) / np.sqrt(2.0)
    return SpectralField(c, mean_zero)


def mollify(u: SpectralField, m: Mollifier) -> SpectralField:
    return u.with_coeffs(u.coeffs * m.multipliers(u.K))


def theta_multipliers(K: int) -> np.ndarray:
    k = wavenumbers(K)
    out = np.zeros(K + 1, dtype=complex)
    out[1:] = 1.0 / (TWO_PI * 1j * k[1:])
    return out


def theta_convolve(u: SpectralField) -> SpectralField:
    """Convolution with the mean-free antiderivative kernel Theta."""
    return SpectralField(u.coeffs * theta_multipliers(u.K), mean_zero=True)


def derivative(u: SpectralField) -> SpectralField:
    return SpectralField(u.coeffs * (TWO_PI * 1j * wavenumbers(u.K)), mean_zero=True)


def laplacian(u: SpectralField) -> SpectralField:
    return SpectralField(u.coeffs * -(TWO_PI * wavenumbers(u.K)) ** 2, mean_zero=True)


def translate(u: SpectralField, x: float) -> SpectralField:
    """The shifted field y -> u(y - x), by modulation of the coefficients."""
    return u.with_coeffs(u.coeffs * np.exp(-TWO_PI * 1j * wavenumbers(u.K) * x))


def product_dealiased(u: SpectralField, v: SpectralField) -> SpectralField:
    """Exact band-K projection of the pointwise product u v."""
    _check_same_band(u, v)
    M = dealiased_size(u.K)
    g = to_grid(u.coeffs, M) * to_grid(v.coeffs, M)
    return SpectralField(from_grid(g, u.K))


def pair(u: SpectralField, phi: SpectralField) -> np.ndarray | float:
    """The L2 pairing  int_T u(x) phi(x) dx  via Plancherel."""
    out = pair_coeffs(u.coeffs, phi.coeffs)
    return float(out) if np.ndim(out) == 0 else out


def l2_norm_sq(u: SpectralField):
    return pair(u, u)


class RenormConstants(NamedTuple):
    """Both normalizations of the mollified white-noise square.

    ``torus`` is sum_{|k|<=K} profile(k/N)^2, the exact pointwise variance
    of the mollified band-limited noise; ``line`` is N * int profile^2, the
    squared L2(R) norm of the rescaled kernel, evaluated by adaptive
    Gauss-Kronrod quadrature on [0, outer] with a breakpoint at ``inner``.
    """

    torus: float
    line: float

    @property
    def discrepancy(self) -> float:
        return self.line - self.torus


def renorm_constant(m: Mollifier, K: int) -> RenormConstants:
    _check_cutoff(K)
    mult = m.multipliers(K)
    torus = float(mult[0] ** 2 + 2.0 * np.sum(mult[1:] ** 2))
    line = math.inf if math.isinf(m.scale) else m.scale * m.profile_l2()
    return RenormConstants(torus, line)


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def field_to_dict(u: SpectralField) -> dict:
    """JSON-ready form: cutoff, mean-zero flag and rows (k, Re, Im), k = 0..K."""
    if u.batch_shape:
        raise ParameterError("JSON serialization is for single fields; use .npz for ensembles")
    return {
        "cutoff": u.K,
        "mean_zero": bool(u.mean_zero),
        "modes": [[k, float(c.real), float(c.imag)] for k, c in enumerate(u.coeffs)],
    }


def field_from_dict(data: dict) -> SpectralField:
    K = int(data["cutoff"])
    c = np.zeros(K + 1, dtype=complex)
    for k, re, im in data["modes"]:
        c[int(k)] = complex(re, im)
    return SpectralField(c, bool(data.get("mean_zero", False)))


def save_field(path, u: SpectralField) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(field_to_dict(u)))
    elif path.suffix == ".npz":
        np.savez(path, cutoff=u.K, mean_zero=u.mean_zero,
                 k=wavenumbers(u.K), re=u.coeffs.real, im=u.coeffs.imag)
    else:
        raise ParameterError(f"unknown field format {path.suffix!r} (use .json or .npz)")
    return path


def load_field(path) -> SpectralField:
    path = Path(path)
    if path.suffix == ".json":
        return field_from_dict(json.loads(path.read_text()))
    if path.suffix == ".npz":
        with np.load(path) as data:
            return SpectralField(data["re"] + 1j * data["im"], bool(data["mean_zero"]))
    raise ParameterError(f"unknown field format {path.suffix!r} (use .json or .npz)")
