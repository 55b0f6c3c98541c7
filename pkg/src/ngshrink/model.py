"""Normal-Gamma shrinkage regression: data, hyperparameters and full conditionals.

Model::

    Y | beta, tau, sigma2 ~ N_n(X beta, sigma2 I)
    beta | sigma2, tau    ~ N_p(0, sigma2 D_tau)
    sigma2                ~ Inverse-Gamma(alpha, xi)
    tau_j                 ~ Gamma(a, b)   (shape, rate)

Every solve against ``A_tau = X'X + D_tau^{-1}`` goes through a Cholesky
factor of the p x p matrix; neither ``A_tau^{-1}`` nor the n x n projector is
ever formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rand_dists import GigParams, MvnPrecisionParams, NotPositiveDefiniteError

__all__ = [
    "Hyperparams",
    "Dataset",
    "ChainState",
    "TauVector",
    "InverseGammaParams",
    "ImproperConditionalError",
    "log_joint",
    "precision_factor",
    "cond_beta",
    "cond_sigma2_given_beta_tau",
    "cond_sigma2_given_tau",
    "cond_tau",
    "cond_tau_arrays",
    "log_cond_tau_density",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ImproperConditionalError(ValueError):
    """A full conditional is not a proper distribution at the given state."""


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants: ``tau_j ~ Gamma(a, b)``, ``sigma2 ~ Inverse-Gamma(alpha, xi)``.

    ``alpha = 0`` or ``xi = 0`` give improper priors; the Gibbs chains accept
    them but posterior propriety is then the caller's concern.  The PX-DA
    chain needs ``xi > 0``.
    """

    a: float
    b: float
    alpha: float = 0.0
    xi: float = 1.0

    def __post_init__(self) -> None:
        for name in ("a", "b", "alpha", "xi"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"hyperparameter {name} must be finite, got {v!r}")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"need a > 0 and b > 0, got a={self.a}, b={self.b}")
        if self.alpha < 0 or self.xi < 0:
            raise ValueError(f"need alpha >= 0 and xi >= 0, got alpha={self.alpha}, xi={self.xi}")

    @property
    def pxda_allowed(self) -> bool:
        return self.xi > 0

    @property
    def tau_order(self) -> float:
        """GIG order ``a - 1/2`` of the tau full conditional."""
        return self.a - 0.5


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (n x p) and response ``Y`` with cached Gram quantities."""

    X: np.ndarray
    Y: np.ndarray
    gram: np.ndarray = field(init=False, repr=False)
    xty: np.ndarray = field(init=False, repr=False)
    yty: float = field(init=False, repr=False)
    lambda_max: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or Y.ndim != 1:
            raise ValueError(f"X must be 2-D and Y 1-D, got shapes {X.shape} and {Y.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
        if Y.shape[0] != n:
            raise ValueError(f"X has {n} rows but Y has length {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("X and Y must not contain NaN or Inf")
        gram = X.T @ X
        gram = 0.5 * (gram + gram.T)
        eig = np.linalg.eigvalsh(gram)
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "Y", _readonly(Y))
        object.__setattr__(self, "gram", _readonly(gram))
        object.__setattr__(self, "xty", _readonly(X.T @ Y))
        object.__setattr__(self, "yty", float(Y @ Y))
        object.__setattr__(self, "lambda_max", float(max(eig[-1], 0.0)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ChainState:
    """Current ``(beta, sigma2)`` of any of the chains."""

    beta: np.ndarray
    sigma2: float

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1:
            raise ValueError(f"beta must be 1-D, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2!r}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma2", float(self.sigma2))


@dataclass(frozen=True)
class TauVector:
    """Local shrinkage scales; all entries strictly positive."""

    tau: np.ndarray

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1:
            raise ValueError(f"tau must be 1-D, got shape {tau.shape}")
        bad = np.flatnonzero(~(tau > 0) | ~np.isfinite(tau))
        if bad.size:
            raise ValueError(f"tau[{bad[0]}] = {tau[bad[0]]!r} is not positive and finite")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class InverseGammaParams:
    shape: float
    rate: float


def _tau(tau) -> np.ndarray:
    return tau.tau if isinstance(tau, TauVector) else np.asarray(tau, dtype=float)


def log_joint(state: ChainState, tau, data: Dataset, hp: Hyperparams) -> float:
    """Log of the joint posterior density of ``(beta, tau, sigma2)`` given ``Y``, up to a constant.

    The constant dropped is the normalizer of the posterior; all
    ``2 pi`` factors of the two normal densities are kept.
    """
    t = _tau(tau)
    beta, s2 = state.beta, state.sigma2
    n, p = data.n, data.p
    resid = data.Y - data.X @ beta
    log_s2 = math.log(s2)
    return float(
        -0.5 * (resid @ resid) / s2
        - 0.5 * n * (_LOG_2PI + log_s2)
        - 0.5 * np.sum(beta**2 / t) / s2
        - 0.5 * p * (_LOG_2PI + log_s2)
        + np.sum((hp.a - 1.5) * np.log(t) - hp.b * t)
        - (hp.alpha + 1.0) * log_s2
        - hp.xi / s2
    )


def precision_factor(tau, data: Dataset) -> MvnPrecisionParams:
    """``A_tau = X'X + D_tau^{-1}`` with linear term ``X'Y``, Cholesky-factored."""
    t = _tau(tau)
    with np.errstate(divide="ignore", over="ignore"):
        inv_t = 1.0 / t
    bad = np.flatnonzero(~np.isfinite(inv_t) | ~(t > 0))
    if bad.size:
        raise NotPositiveDefiniteError(f"A_tau is not positive definite: tau[{bad[0]}] = {t[bad[0]]!r}")
    A = data.gram + np.diag(inv_t)
    try:
        return MvnPrecisionParams(A, data.xty)
    except NotPositiveDefiniteError:
        j = int(np.argmin(t))
        raise NotPositiveDefiniteError(
            f"Cholesky of A_tau failed; smallest scale is tau[{j}] = {t[j]!r}"
        ) from None


def cond_beta(tau, sigma2: float, data: Dataset) -> tuple[MvnPrecisionParams, float]:
    """``beta | sigma2, tau, Y``: precision ``A_tau``, linear term ``X'Y``, scale ``sigma2``."""
    return precision_factor(tau, data), float(sigma2)


def cond_sigma2_given_beta_tau(beta, tau, data: Dataset, hp: Hyperparams) -> InverseGammaParams:
    """``sigma2 | beta, tau, Y`` (the three-block update)."""
    t = _tau(tau)
    beta = np.asarray(beta, dtype=float)
    resid = data.Y - data.X @ beta
    rate = 0.5 * (resid @ resid + np.sum(beta**2 / t) + 2.0 * hp.xi)
    return InverseGammaParams(0.5 * (data.n + data.p + 2.0 * hp.alpha), float(rate))


def cond_sigma2_given_tau(
    tau, data: Dataset, hp: Hyperparams, factor: MvnPrecisionParams | None = None
) -> InverseGammaParams:
    """``sigma2 | tau, Y`` with ``beta`` integrated out (the two-block update).

    ``factor`` may pass a precomputed :func:`precision_factor` for the same
    ``tau`` to avoid a second Cholesky.
    """
    if factor is None:
        factor = precision_factor(tau, data)
    w = factor.whitened_linear
    quad = data.yty - float(w @ w)
    if quad < 0.0:
        if quad < -1e-8 * data.yty:
            raise FloatingPointError(
                f"negative residual quadratic form {quad!r} (Y'Y = {data.yty!r}); A_tau solve is unstable"
            )
        quad = 0.0
    return InverseGammaParams(0.5 * (data.n + 2.0 * hp.alpha), 0.5 * (quad + 2.0 * hp.xi))


def cond_tau_arrays(beta, sigma2: float, hp: Hyperparams) -> tuple[float, np.ndarray, float]:
    """GIG parameters ``(lam, chi, psi)`` of ``tau_j | beta, sigma2, Y``; ``chi`` is a vector."""
    beta = np.asarray(beta, dtype=float)
    lam = hp.a - 0.5
    chi = beta * beta / sigma2
    if lam <= 0:
        zero = np.flatnonzero(chi == 0.0)
        if zero.size:
            raise ImproperConditionalError(
                f"tau[{zero[0]}] conditional is improper: beta[{zero[0]}] = 0 with a = {hp.a} <= 1/2"
            )
    return lam, chi, 2.0 * hp.b


def cond_tau(state: ChainState, hp: Hyperparams) -> list[GigParams]:
    """Independent ``GIG(a - 1/2, chi=beta_j^2/sigma2, psi=2b)`` conditionals, one per coordinate."""
    lam, chi, psi = cond_tau_arrays(state.beta, state.sigma2, hp)
    return [GigParams(lam, float(c), psi) for c in chi]


def log_cond_tau_density(tau_j, beta_j: float, sigma2: float, hp: Hyperparams):
    """Normalized log-density of one ``tau_j`` given ``beta_j`` and ``sigma2``.

    Uses the closed-form normalizer
    ``(2 b sigma2)^{(a-1/2)/2} / (2 |beta_j|^{a-1/2} K_{a-1/2}(sqrt(2 b beta_j^2 / sigma2)))``.
    """
    from .special import log_bessel_k

    lam = hp.a - 0.5
    tau_j = np.asarray(tau_j, dtype=float)
    if beta_j == 0.0:
        if lam <= 0:
            raise ImproperConditionalError(f"improper tau conditional: beta_j = 0 with a = {hp.a}")
        log_norm = lam * math.log(hp.b) - math.lgamma(lam)
    else:
        ab = abs(beta_j)
        log_norm = (
            0.5 * lam * math.log(2.0 * hp.b * sigma2)
            - math.log(2.0)
            - lam * math.log(ab)
            - log_bessel_k(lam, math.sqrt(2.0 * hp.b * beta_j**2 / sigma2))
        )
    with np.errstate(divide="ignore"):
        kern = (lam - 1.0) * np.log(tau_j) - 0.5 * (2.0 * hp.b * tau_j + beta_j**2 / (sigma2 * tau_j))
    return np.where(tau_j > 0, log_norm + kern, -np.inf)
