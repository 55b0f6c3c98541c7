"""Autocorrelation, effective sample size and batch-means errors for chain output.

The autocovariance uses the biased ``1/N`` normalization at every lag, which
keeps the sequence positive semi-definite.  Reported ACF values are raw; only
the ESS truncates, using Geyer's initial positive sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChainState, Dataset

__all__ = [
    "AcfReport",
    "ConstantSeriesError",
    "functional_value",
    "functional_series",
    "autocorrelation",
    "autocovariance",
    "effective_sample_size",
    "batch_means_se",
]


class ConstantSeriesError(ValueError):
    """The series has zero sample variance, so autocorrelations are undefined."""


@dataclass(frozen=True)
class AcfReport:
    lags: np.ndarray
    acf: np.ndarray
    series_mean: float
    series_var: float
    n_samples: int

    def lag(self, k: int) -> float:
        return float(self.acf[k - 1])


def functional_value(state: ChainState, data: Dataset) -> float:
    """``||Y - X beta||^2 + sigma2``."""
    r = data.Y - data.X @ state.beta
    return float(r @ r + state.sigma2)


def functional_series(beta: np.ndarray, sigma2: np.ndarray, data: Dataset) -> np.ndarray:
    """:func:`functional_value` for a stack of draws (rows of ``beta``)."""
    r = data.Y[None, :] - np.asarray(beta) @ data.X.T
    return np.einsum("ij,ij->i", r, r) + np.asarray(sigma2)


def _validated(series, min_len: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"series must be 1-D, got shape {x.shape}")
    if x.size < min_len:
        raise ValueError(f"series of length {x.size} is too short; need at least {min_len}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains NaN or Inf")
    return x


def autocovariance(series, max_lag: int | None = None) -> np.ndarray:
    """Biased sample autocovariances ``c_0 .. c_max_lag`` via FFT."""
    x = _validated(series, 2)
    n = x.size
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov


def autocorrelation(series, max_lag: int) -> AcfReport:
    """Sample ACF at lags ``1..max_lag`` with ``1/N`` normalization.

    Raises
    ------
    ValueError
        If ``max_lag < 1`` or the series is not longer than ``3 * max_lag``.
    ConstantSeriesError
        If the series has zero variance.
    """
    if max_lag < 1:
        raise ValueError(f"max_lag must be positive, got {max_lag}")
    x = _validated(series, 3 * max_lag + 1)
    n = x.size
    mean = float(x.mean())
    xc = x - mean
    c0 = float(xc @ xc) / n
    if not c0 > 0.0 or c0 <= (np.finfo(float).eps * max(abs(mean), 1.0)) ** 2:
        raise ConstantSeriesError("series is constant; autocorrelation undefined")
    acf = np.array([float(xc[:-k] @ xc[k:]) / n for k in range(1, max_lag + 1)]) / c0
    return AcfReport(np.arange(1, max_lag + 1), acf, mean, c0, n)


def effective_sample_size(series) -> float:
    """``N / (1 + 2 sum_k rho_k)`` truncated by Geyer's initial positive sequence, clamped to ``N``."""
    x = _validated(series, 4)
    n = x.size
    acov = autocovariance(x)
    if not acov[0] > 0.0:
        raise ConstantSeriesError("series is constant; ESS undefined")
    rho = acov / acov[0]
    # Pair sums Gamma_m = rho_{2m} + rho_{2m+1}; stop at the first negative one.
    n_pairs = (rho.size) // 2
    pairs = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    neg = np.flatnonzero(pairs < 0.0)
    stop = neg[0] if neg.size else n_pairs
    tau = -1.0 + 2.0 * float(np.sum(pairs[:stop]))
    if tau <= 0.0:
        return float(n)
    return float(min(n / tau, n))


def batch_means_se(series, n_batches: int | None = None) -> float:
    """Standard error of the mean from non-overlapping batch means.

    Defaults to ``floor(sqrt(N))`` batches of equal size; a remainder at the
    start of the series is dropped.
    """
    x = _validated(series, 4)
    n = x.size
    if n_batches is None:
        n_batches = int(math.isqrt(n))
    if not 2 <= n_batches <= n // 2:
        raise ValueError(f"n_batches must be in [2, N/2], got {n_batches}")
    size = n // n_batches
    means = x[n - size * n_batches :].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
