"""Exact samplers for the elementary distributions used by the chains.

All samplers take a :class:`numpy.random.Generator`.  Reproducible,
independent streams come from :class:`RngStream`, which seeds a PCG64 bit
generator through ``SeedSequence(seed, spawn_key=(stream_id,))``.

The generalized inverse Gaussian (GIG) sampler follows Hoermann & Leydold
(2014): ratio-of-uniforms with mode shift when ``lambda >= 1`` or
``omega > 1``, ratio-of-uniforms without shift for moderate ``omega``, and
their three-piece rejection hat for small ``omega``.  The per-element loop
is compiled with numba and draws a whole ``tau`` vector in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy import linalg

__all__ = [
    "RngStream",
    "GigParams",
    "MvnPrecisionParams",
    "NotPositiveDefiniteError",
    "sample_gig",
    "sample_gig_array",
    "gig_log_normalizer",
    "gig_logpdf",
    "sample_mvn_from_precision",
    "sample_inverse_gamma",
    "sample_gamma",
]

# Below this omega with lambda != 0 the GIG is indistinguishable in double
# precision from its Gamma / Inverse-Gamma limit.
_OMEGA_LIMIT = 1e-100


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class GigParams:
    """GIG with density kernel ``x**(lam-1) * exp(-(chi/x + psi*x)/2)`` on x > 0."""

    lam: float
    chi: float
    psi: float

    def __post_init__(self) -> None:
        _check_gig(self.lam, self.chi, self.psi)

    @property
    def omega(self) -> float:
        return math.sqrt(self.chi * self.psi)

    @property
    def eta(self) -> float:
        return math.sqrt(self.chi / self.psi)


def _check_gig(lam, chi, psi) -> None:
    lam, chi, psi = np.broadcast_arrays(np.asarray(lam, float), np.asarray(chi, float), np.asarray(psi, float))
    if not np.isfinite(lam.sum() + chi.sum() + psi.sum()):
        raise ValueError("GIG parameters must be finite")
    if psi.min(initial=np.inf) <= 0:
        raise ValueError("GIG requires psi > 0")
    if chi.min(initial=np.inf) < 0:
        raise ValueError("GIG requires chi >= 0")
    if lam.min(initial=np.inf) <= 0:
        bad = (lam <= 0) & (chi == 0)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0]) if bad.ndim else ()
            raise ValueError(f"improper GIG: lambda <= 0 with chi = 0 (at index {idx})")


def gig_log_normalizer(lam: float, chi: float, psi: float) -> float:
    """log of ``integral x**(lam-1) exp(-(chi/x + psi x)/2) dx``."""
    from .special import log_bessel_k

    _check_gig(lam, chi, psi)
    if chi == 0.0:
        return math.lgamma(lam) - lam * math.log(psi / 2.0)
    omega = math.sqrt(chi * psi)
    return math.log(2.0) + 0.5 * lam * math.log(chi / psi) + log_bessel_k(lam, omega)


def gig_logpdf(x, lam: float, chi: float, psi: float):
    """Normalized GIG log-density at ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = (lam - 1.0) * np.log(x) - 0.5 * (chi / x + psi * x)
    return np.where(x > 0, kern - gig_log_normalizer(lam, chi, psi), -np.inf)


@njit(cache=True)
def _log_quasi(x, lam, omega):
    if x <= 0.0:
        return -np.inf
    return (lam - 1.0) * math.log(x) - 0.5 * omega * (x + 1.0 / x)


@njit(cache=True)
def _mode(lam, omega):
    if lam < 1.0:
        return omega / (math.sqrt((1.0 - lam) ** 2 + omega * omega) + 1.0 - lam)
    return (math.sqrt((1.0 - lam) ** 2 + omega * omega) - (1.0 - lam)) / omega


@njit(cache=True)
def _rou_shift(lam, omega, rng):
    m = _mode(lam, omega)
    a2 = -2.0 * (lam + 1.0) / omega - m
    a1 = 2.0 * m * (lam - 1.0) / omega - 1.0
    p1 = a1 - a2 * a2 / 3.0
    q1 = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + m
    arg = -q1 * math.sqrt(-27.0 / p1**3) / 2.0
    arg = min(1.0, max(-1.0, arg))
    phi = math.acos(arg)
    s1 = -math.sqrt(-4.0 * p1 / 3.0)
    root1 = s1 * math.cos(phi / 3.0 + math.pi / 3.0) - a2 / 3.0
    root2 = -s1 * math.cos(phi / 3.0) - a2 / 3.0
    lm = _log_quasi(m, lam, omega)
    vmin = (root1 - m) * math.exp(0.5 * (_log_quasi(root1, lam, omega) - lm))
    vmax = (root2 - m) * math.exp(0.5 * (_log_quasi(root2, lam, omega) - lm))
    while True:
        u = rng.random()
        v = vmin + (vmax - vmin) * rng.random()
        x = v / u + m
        if x > 0.0 and 2.0 * math.log(u) <= _log_quasi(x, lam, omega) - lm:
            return x


@njit(cache=True)
def _rou_noshift(lam, omega, rng):
    m = _mode(lam, omega)
    log_umax = 0.5 * _log_quasi(m, lam, omega)
    xplus = ((1.0 + lam) + math.sqrt((1.0 + lam) ** 2 + omega * omega)) / omega
    vmax = xplus * math.exp(0.5 * _log_quasi(xplus, lam, omega) - log_umax)
    while True:
        u = rng.random()
        v = vmax * rng.random()
        x = v / u
        if 2.0 * math.log(u) <= _log_quasi(x, lam, omega) - 2.0 * log_umax:
            return x


@njit(cache=True)
def _hl_small_omega(lam, omega, rng):
    m = _mode(lam, omega)
    x0 = omega / (1.0 - lam)
    two_om = 2.0 / omega
    xs = max(x0, two_om)
    k1 = math.exp(_log_quasi(m, lam, omega))
    a1 = k1 * x0
    k2 = 0.0
    a2 = 0.0
    if x0 < two_om:
        k2 = math.exp(-omega)
        if lam > 0.0:
            a2 = k2 * (two_om**lam - x0**lam) / lam
        else:
            a2 = k2 * math.log(2.0 / (omega * omega))
    k3 = xs ** (lam - 1.0)
    a3 = 2.0 * k3 * math.exp(-xs * omega / 2.0) / omega
    total = a1 + a2 + a3
    while True:
        u = rng.random()
        v = total * rng.random()
        if v <= a1:
            x = x0 * v / a1
            h = k1
        elif v <= a1 + a2:
            if lam > 0.0:
                x = (x0**lam + (v - a1) * lam / k2) ** (1.0 / lam)
            else:
                x = omega * math.exp((v - a1) * math.exp(omega))
            h = k2 * x ** (lam - 1.0)
        else:
            z = math.exp(-xs * omega / 2.0) - omega * (v - a1 - a2) / (2.0 * k3)
            if z <= 0.0:
                continue
            x = -2.0 / omega * math.log(z)
            h = k3 * math.exp(-x * omega / 2.0)
        if x > 0.0 and math.isfinite(x) and math.log(u * h) <= _log_quasi(x, lam, omega):
            return x


@njit(cache=True)
def _gig_standard(lam, omega, rng):
    """One draw with density proportional to y**(lam-1) exp(-omega (y + 1/y) / 2), lam >= 0."""
    if lam >= 1.0 or omega > 1.0:
        return _rou_shift(lam, omega, rng)
    if omega >= min(0.5, 2.0 * math.sqrt(1.0 - lam) / 3.0):
        return _rou_noshift(lam, omega, rng)
    return _hl_small_omega(lam, omega, rng)


@njit(cache=True)
def _gig_draws(lam, chi, psi, rng):
    out = np.empty(lam.size)
    for i in range(lam.size):
        la = lam[i]
        omega = math.sqrt(chi[i] * psi[i])
        if la > 0.0 and omega < _OMEGA_LIMIT:
            out[i] = rng.gamma(la, 2.0 / psi[i])
        elif la < 0.0 and omega < _OMEGA_LIMIT:
            out[i] = 1.0 / rng.gamma(-la, 2.0 / chi[i])
        else:
            y = _gig_standard(abs(la), omega, rng)
            if la < 0.0:
                y = 1.0 / y
            out[i] = math.sqrt(chi[i] / psi[i]) * y
    return out


def sample_gig_array(lam, chi, psi, rng: np.random.Generator) -> np.ndarray:
    """One GIG draw per element of the broadcast parameter arrays.

    ``chi == 0`` with ``lam > 0`` gives an exact ``Gamma(lam, rate=psi/2)``
    draw; ``lam <= 0`` with ``chi == 0`` raises ``ValueError``.
    """
    lam, chi, psi = np.broadcast_arrays(np.asarray(lam, float), np.asarray(chi, float), np.asarray(psi, float))
    _check_gig(lam, chi, psi)
    shape = lam.shape
    draws = _gig_draws(np.ascontiguousarray(lam.ravel()), np.ascontiguousarray(chi.ravel()),
                       np.ascontiguousarray(psi.ravel()), rng)
    return draws.reshape(shape)


def sample_gig(params: GigParams, rng: np.random.Generator, size: int | None = None):
    """Draw from ``GIG(lam, chi, psi)``; a float when ``size`` is None."""
    n = 1 if size is None else int(size)
    draws = sample_gig_array(np.full(n, params.lam), np.full(n, params.chi), np.full(n, params.psi), rng)
    return float(draws[0]) if size is None else draws


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization of a precision matrix failed."""


@dataclass
class MvnPrecisionParams:
    """Normal with ``mean = precision^{-1} linear_term`` and covariance ``scale * precision^{-1}``.

    The lower Cholesky factor is computed on construction.
    """

    precision: np.ndarray
    linear_term: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.precision = np.asarray(self.precision, dtype=float)
        self.linear_term = np.asarray(self.linear_term, dtype=float)
        p = self.linear_term.shape[0]
        if self.precision.shape != (p, p):
            raise ValueError(f"precision shape {self.precision.shape} does not match p={p}")
        try:
            self.chol = np.linalg.cholesky(self.precision)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("precision matrix is not positive definite") from None
        if not np.all(np.isfinite(self.chol)):
            raise NotPositiveDefiniteError("precision matrix Cholesky factor is not finite")

    @cached_property
    def whitened_linear(self) -> np.ndarray:
        """``L^{-1} linear_term``."""
        return linalg.solve_triangular(self.chol, self.linear_term, lower=True, check_finite=False)

    @cached_property
    def mean(self) -> np.ndarray:
        return linalg.solve_triangular(self.chol.T, self.whitened_linear, lower=False, check_finite=False)

    def logpdf(self, x, scale: float = 1.0) -> float:
        """Log-density at ``x`` using only the precision parameterization."""
        x = np.asarray(x, dtype=float)
        p = x.shape[-1]
        r = self.chol.T @ x - self.whitened_linear
        logdet_prec = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return float(
            -0.5 * p * math.log(2.0 * math.pi * scale) + 0.5 * logdet_prec - 0.5 * (r @ r) / scale
        )


def sample_mvn_from_precision(params: MvnPrecisionParams, scale: float, rng: np.random.Generator) -> np.ndarray:
    """``mean + sqrt(scale) * L^{-T} z`` with ``z`` standard normal."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    z = rng.standard_normal(params.linear_term.shape[0])
    rhs = params.whitened_linear + math.sqrt(scale) * z
    return linalg.solve_triangular(params.chol.T, rhs, lower=False, check_finite=False)


def sample_gamma(shape: float, rate: float, rng: np.random.Generator, size=None):
    """Gamma draw with the given shape and rate (mean ``shape / rate``)."""
    if not (shape > 0 and rate > 0):
        raise ValueError(f"Gamma requires shape > 0 and rate > 0, got ({shape!r}, {rate!r})")
    return rng.gamma(shape, 1.0 / rate, size=size)


def sample_inverse_gamma(shape: float, rate: float, rng: np.random.Generator, size=None):
    """Reciprocal of a ``Gamma(shape, rate)`` draw (mean ``rate / (shape - 1)``)."""
    if not (shape > 0 and rate > 0):
        raise ValueError(f"Inverse-Gamma requires shape > 0 and rate > 0, got ({shape!r}, {rate!r})")
    return 1.0 / rng.gamma(shape, 1.0 / rate, size=size)
