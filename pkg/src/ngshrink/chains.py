"""Three-block Gibbs, two-block Gibbs and Haar PX-DA sandwich kernels.

All three chains live on ``(beta, sigma2)``; ``tau`` is drawn and discarded
inside each step.  The PX-DA chain inserts a draw of a scalar ``g`` from the
group density ``f_G`` and continues the two-block update at ``g * tau``.

Sampling ``f_G``
----------------
Write ``M = D^{1/2} X'X D^{1/2}`` with eigenpairs ``(mu_i, v_i)`` and
``w = V' D^{1/2} X'Y``.  Then, up to a constant,

    f_G(g) = g^{pa-1} exp(-g b sum(tau)) * A(g) * B(g)
    A(g)   = (Y'Y - sum_i w_i^2 g / (1 + g mu_i) + 2 xi)^{-(n/2 + alpha)}   (increasing)
    B(g)   = prod_i (1 + g mu_i)^{-1/2}                                    (decreasing)

``A <= (2 xi)^{-(n/2+alpha)}`` and ``B <= 1`` give the plain
``Gamma(pa, b sum(tau))`` envelope.  Its acceptance rate collapses when the
data are informative, so the default sampler works in ``u = log g`` with a
piecewise envelope: on each panel ``[u_l, u_r]`` it uses
``A(e^{u_r}) B(e^{u_l})`` for the monotone factors and a tangent line for
the concave Gamma part ``pa u - b sum(tau) e^u``.  Both bounds are exact, so
the sampler is exact; the panels are refined where the envelope carries mass
and is loose.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .model import ChainState, Dataset, Hyperparams, ImproperConditionalError
from .rand_dists import NotPositiveDefiniteError, RngStream, _gig_draws

__all__ = [
    "ChainKind",
    "RunConfig",
    "SampleTrace",
    "GroupElement",
    "GroupDensity",
    "SteppedEnvelope",
    "ChainError",
    "PxDaDisabledError",
    "EnvelopeViolationError",
    "step_three_block",
    "step_two_block",
    "step_haar_pxda",
    "sample_group_element",
    "run_chain",
]

# Slack added to every panel bound to absorb rounding in the log-density.
_BOUND_SLACK = 1e-11
_VIOLATION_TOL = 1e-9
# Target log-looseness per envelope panel.
_PANEL_SLACK = 0.25
_MAX_TRIALS = 10_000_000
_CHI_FLOOR = 2.2250738585072014e-308
_N_INIT = 16
_ROUNDS = 4
_MAX_POINTS = 2048
_ENV_STEPPED = 0
_ENV_GAMMA = 1

# Kernel status codes, turned into exceptions by ``_raise``.
_E_IMPROPER = 1
_E_TAU = 2
_E_CHOL = 3
_E_RESID = 4
_E_RATE = 5
_E_ENVELOPE = 6
_E_NO_ACCEPT = 7


class ChainKind(enum.Enum):
    ThreeBlock = "three_block"
    TwoBlock = "two_block"
    HaarPxDa = "haar_pxda"

    @classmethod
    def parse(cls, text: str) -> "ChainKind":
        key = text.strip().lower().replace("-", "_")
        aliases = {"three_block": cls.ThreeBlock, "threeblock": cls.ThreeBlock, "three": cls.ThreeBlock,
                   "two_block": cls.TwoBlock, "twoblock": cls.TwoBlock, "two": cls.TwoBlock,
                   "haar_pxda": cls.HaarPxDa, "haarpxda": cls.HaarPxDa, "pxda": cls.HaarPxDa,
                   "sandwich": cls.HaarPxDa}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown chain kind {text!r}") from None


# Each chain kind draws from its own stream for a given seed.
_STREAM_ID = {ChainKind.ThreeBlock: 0, ChainKind.TwoBlock: 1, ChainKind.HaarPxDa: 2}


class ChainError(RuntimeError):
    """A kernel failed during :func:`run_chain`; ``iteration`` is 0-based."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause


class PxDaDisabledError(ValueError):
    """The PX-DA chain needs ``xi > 0`` for its rejection envelope."""


class EnvelopeViolationError(RuntimeError):
    """The rejection bound for ``f_G`` was exceeded; indicates a bug, never expected."""


@dataclass(frozen=True)
class GroupElement:
    """Multiplicative group member acting on ``tau`` as ``tau -> g * tau``."""

    g: float

    def __post_init__(self) -> None:
        if not (self.g > 0 and math.isfinite(self.g)):
            raise ValueError(f"group element must be positive and finite, got {self.g!r}")


@dataclass(frozen=True)
class RunConfig:
    """Run length and seeding of one chain.

    ``burn_in`` defaults to 10% of ``iterations``.  ``init=None`` starts at
    ``beta_j = 1, sigma2 = 1``.  ``clamp_beta`` opts into flooring
    ``chi_j = beta_j**2 / sigma2`` at the smallest normal double before each
    ``tau`` draw, which keeps the ``tau`` conditional proper when ``a <= 1/2``.
    """

    kind: ChainKind
    iterations: int
    burn_in: Optional[int] = None
    thin: int = 1
    seed: int = 0
    init: Optional[ChainState] = None
    envelope: str = "stepped"
    clamp_beta: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ChainKind):
            object.__setattr__(self, "kind", ChainKind.parse(str(self.kind)))
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 10)
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(f"need 0 <= burn_in < iterations, got burn_in={self.burn_in}, iterations={self.iterations}")
        if self.thin < 1:
            raise ValueError(f"thin must be positive, got {self.thin}")
        if self.envelope not in ("stepped", "gamma"):
            raise ValueError(f"envelope must be 'stepped' or 'gamma', got {self.envelope!r}")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class SampleTrace:
    """Post burn-in, thinned draws stored as arrays."""

    beta: np.ndarray
    sigma2: np.ndarray
    meta: RunConfig
    pxda_acceptance_rate: Optional[float] = None

    def __len__(self) -> int:
        return self.sigma2.shape[0]

    @property
    def states(self) -> list[ChainState]:
        return [ChainState(b, float(s)) for b, s in zip(self.beta, self.sigma2)]


# ---------------------------------------------------------------------------
# Group density f_G
# ---------------------------------------------------------------------------


@njit(cache=True)
def _log_ab(g, mu, w2, yty, k, two_xi):
    """log A(g) and log B(g) for finite g >= 0."""
    q = yty
    lb = 0.0
    for i in range(mu.size):
        gm = g * mu[i]
        q -= w2[i] * g / (1.0 + gm)
        lb -= 0.5 * math.log1p(gm)
    if q < 0.0:
        q = 0.0
    return -k * math.log(q + two_xi), lb


@njit(cache=True)
def _gamma_part(u, shape, rate):
    return shape * u - rate * math.exp(u)


@njit(cache=True)
def _gamma_root(c, shape, rate, right):
    """Root of ``shape u - rate e^u = c`` on the chosen side of the mode."""
    u0 = math.log(shape / rate)
    step = 1.0
    if right:
        lo, hi = u0, u0 + step
        while _gamma_part(hi, shape, rate) > c:
            lo = hi
            step *= 2.0
            hi = u0 + step
    else:
        lo, hi = u0 - step, u0
        while _gamma_part(lo, shape, rate) > c and lo > -745.0:
            hi = lo
            step *= 2.0
            lo = u0 - step
        if lo <= -745.0:
            return -745.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        above = _gamma_part(mid, shape, rate) > c
        if above == right:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * (1.0 + abs(mid)):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _log_int_exp(s, a, b):
    """log of the integral of exp(s x) over [a, b]; a may be -inf, b may be +inf."""
    if math.isinf(a):
        return s * b - math.log(s)
    if math.isinf(b):
        return s * a - math.log(-s)
    width = b - a
    if abs(s) * width < 1e-12:
        return s * a + math.log(width)
    if s > 0.0:
        return s * b + math.log(-math.expm1(-s * width)) - math.log(s)
    return s * a + math.log(-math.expm1(s * width)) - math.log(-s)


@njit(cache=True)
def _log_b_slope(g, mu):
    """log B(g) and its derivative in ``u = log g``."""
    lb = 0.0
    d = 0.0
    for i in range(mu.size):
        gm = g * mu[i]
        lb -= 0.5 * math.log1p(gm)
        d -= 0.5 * gm / (1.0 + gm)
    return lb, d


@njit(cache=True)
def _panel_tables(breaks, shape, rate, mu, w2, yty, k, two_xi, log_a_inf):
    """Envelope pieces ``bound + line + slope (u - tangent)`` and their log masses.

    Interior and right-tail panels bound ``A`` by its value at the right end and
    the concave part ``pa u - rate e^u + log B`` by its tangent at the panel
    midpoint (the left end for the right tail).  The left tail bounds ``B`` by 1
    and uses the Gamma part's tangent at ``breaks[0]``, whose slope is positive.
    Also returns ``log A`` at the breaks and each interior panel's largest
    tangent gap, used to decide refinement.
    """
    m = breaks.size
    la = np.empty(m)
    conc = np.empty(m)
    for i in range(m):
        g = math.exp(breaks[i])
        la_i, lb_i = _log_ab(g, mu, w2, yty, k, two_xi)
        la[i] = la_i
        conc[i] = _gamma_part(breaks[i], shape, rate) + lb_i
    npan = m + 1
    lo = np.empty(npan)
    hi = np.empty(npan)
    hb = np.empty(npan)
    t = np.empty(npan)
    s = np.empty(npan)
    lt = np.empty(npan)
    gap = np.zeros(npan)
    logw = np.empty(npan)
    lo[0] = -np.inf
    hi[0] = breaks[0]
    hb[0] = la[0]
    t[0] = breaks[0]
    lt[0] = _gamma_part(t[0], shape, rate)
    s[0] = shape - rate * math.exp(t[0])
    for j in range(1, npan):
        lo[j] = breaks[j - 1]
        if j < m:
            hi[j] = breaks[j]
            hb[j] = la[j]
            t[j] = 0.5 * (lo[j] + hi[j])
        else:
            hi[j] = np.inf
            hb[j] = log_a_inf
            t[j] = lo[j]
        g = math.exp(t[j])
        lb_t, dlb_t = _log_b_slope(g, mu)
        lt[j] = _gamma_part(t[j], shape, rate) + lb_t
        s[j] = shape - rate * g + dlb_t
        if j < m:
            gap[j] = max(lt[j] + s[j] * (lo[j] - t[j]) - conc[j - 1], lt[j] + s[j] * (hi[j] - t[j]) - conc[j])
    for j in range(npan):
        hb[j] += _BOUND_SLACK * (1.0 + abs(hb[j]) + abs(lt[j]))
        logw[j] = hb[j] + lt[j] + _log_int_exp(s[j], lo[j] - t[j], hi[j] - t[j])
    return lo, hi, hb, t, s, lt, logw, la, gap


@njit(cache=True)
def _build_breaks(shape, rate, mu, w2, yty, k, two_xi, log_a_inf, n_init, max_rounds, max_points, slack):
    u0 = math.log(shape / rate)
    # Locate the Gamma bulk, scan the target there for a reference height.
    f0 = _gamma_part(u0, shape, rate)
    g_lo = _gamma_root(f0 - 40.0, shape, rate, False)
    g_hi = _gamma_root(f0 - 40.0, shape, rate, True)
    ref = -np.inf
    for i in range(n_init):
        u = g_lo + (g_hi - g_lo) * i / (n_init - 1)
        la, lb = _log_ab(math.exp(u), mu, w2, yty, k, two_xi)
        val = _gamma_part(u, shape, rate) + la + lb
        if val > ref:
            ref = val
    # Outside [u_lo, u_hi] the target is below ref - 40 since A <= A(inf), B <= 1.
    c = ref - 40.0 - log_a_inf
    u_lo = min(_gamma_root(c, shape, rate, False), u0 - 1.0)
    u_hi = max(_gamma_root(c, shape, rate, True), u0 + 1.0)
    u_hi = min(u_hi, 709.0)
    breaks = np.empty(n_init)
    for i in range(n_init):
        breaks[i] = u_lo + (u_hi - u_lo) * i / (n_init - 1)
    for _ in range(max_rounds):
        lo, hi, hb, t, s, lt, logw, la, gap = _panel_tables(breaks, shape, rate, mu, w2, yty, k, two_xi, log_a_inf)
        wmax = logw.max()
        m = breaks.size
        pieces = np.ones(m + 1, dtype=np.int64)
        extra = 0
        for j in range(1, m):
            if logw[j] < wmax - 12.0:
                continue
            # Bound looseness is linear and tangent gap quadratic in the width.
            need = max((la[j] - la[j - 1]) / slack, math.sqrt(max(gap[j], 0.0) / slack))
            if need > 1.0:
                pieces[j] = min(int(math.ceil(need)), 256)
                extra += pieces[j] - 1
        if extra == 0 or m + extra > max_points:
            return breaks, (lo, hi, hb, t, s, lt, logw)
        new = np.empty(m + extra)
        pos = 0
        for j in range(m):
            new[pos] = breaks[j]
            pos += 1
            if j + 1 < m:
                nj = pieces[j + 1]
                for r in range(1, nj):
                    new[pos] = breaks[j] + (breaks[j + 1] - breaks[j]) * r / nj
                    pos += 1
        breaks = new
    lo, hi, hb, t, s, lt, logw, _, _ = _panel_tables(breaks, shape, rate, mu, w2, yty, k, two_xi, log_a_inf)
    return breaks, (lo, hi, hb, t, s, lt, logw)


@njit(cache=True)
def _sample_stepped(shape, rate, mu, w2, yty, k, two_xi, tables, rng, max_trials):
    lo, hi, hb, t, s, lt, logw = tables
    wmax = logw.max()
    cum = np.cumsum(np.exp(logw - wmax))
    total = cum[-1]
    for trial in range(1, max_trials + 1):
        j = np.searchsorted(cum, rng.random() * total, side="right")
        if j >= cum.size:
            j = cum.size - 1
        v = rng.random()
        a = lo[j] - t[j]
        b = hi[j] - t[j]
        sj = s[j]
        if math.isinf(a):
            x = b + math.log(1.0 - v) / sj
        elif math.isinf(b):
            x = a + math.log1p(-v) / sj
        elif abs(sj) * (b - a) < 1e-12:
            x = a + v * (b - a)
        elif sj > 0.0:
            x = b + math.log(v + (1.0 - v) * math.exp(-sj * (b - a))) / sj
        else:
            x = a + math.log1p(-v * (-math.expm1(sj * (b - a)))) / sj
        u = t[j] + x
        if u < lo[j]:
            u = lo[j]
        if u > hi[j]:
            u = hi[j]
        g = math.exp(u)
        if g <= 0.0 or math.isinf(g):
            continue
        la_u, lb_u = _log_ab(g, mu, w2, yty, k, two_xi)
        log_ratio = _gamma_part(u, shape, rate) + la_u + lb_u - (hb[j] + lt[j] + sj * (u - t[j]))
        if log_ratio > _VIOLATION_TOL:
            return -log_ratio, trial
        if math.log(rng.random()) <= log_ratio:
            return g, trial
    return 0.0, max_trials


@njit(cache=True)
def _sample_gamma_env(shape, rate, mu, w2, yty, k, two_xi, rng, max_trials):
    log_bound = -k * math.log(two_xi)
    for trial in range(1, max_trials + 1):
        g = rng.gamma(shape, 1.0 / rate)
        if g <= 0.0:
            continue
        la, lb = _log_ab(g, mu, w2, yty, k, two_xi)
        log_ratio = la + lb - log_bound
        if log_ratio > _VIOLATION_TOL:
            return -log_ratio, trial
        if math.log(rng.random()) <= log_ratio:
            return g, trial
    return 0.0, max_trials


@njit(cache=True)
def _group_setup(tau, gram, xty, yty, n, a, b, alpha, xi):
    """Spectral reduction of ``f_G``: Gamma shape and rate, ``k``, ``mu``, ``w^2``, ``log A(inf)``."""
    p = tau.size
    sq = np.sqrt(tau)
    M = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            M[i, j] = sq[i] * gram[i, j] * sq[j]
    mu, V = np.linalg.eigh(M)
    w2 = np.zeros(p)
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += V[j, i] * sq[j] * xty[j]
        w2[i] = acc * acc
    # Directions with numerically zero eigenvalue carry no signal.
    thr = 1e-13 * max(mu[p - 1], 0.0) * p
    q_inf = yty
    for i in range(p):
        if mu[i] <= thr:
            mu[i] = 0.0
            w2[i] = 0.0
        else:
            q_inf -= w2[i] / mu[i]
    if q_inf < 0.0:
        q_inf = 0.0
    k = 0.5 * n + alpha
    return p * a, b * tau.sum(), k, mu, w2, -k * math.log(q_inf + 2.0 * xi)


@njit(cache=True)
def _draw_g(tau, gram, xty, yty, n, a, b, alpha, xi, env_code, rng, max_trials):
    shape, rate, k, mu, w2, log_a_inf = _group_setup(tau, gram, xty, yty, n, a, b, alpha, xi)
    if env_code == _ENV_STEPPED:
        _, tables = _build_breaks(shape, rate, mu, w2, yty, k, 2.0 * xi, log_a_inf,
                                  _N_INIT, _ROUNDS, _MAX_POINTS, _PANEL_SLACK)
        return _sample_stepped(shape, rate, mu, w2, yty, k, 2.0 * xi, tables, rng, max_trials)
    return _sample_gamma_env(shape, rate, mu, w2, yty, k, 2.0 * xi, rng, max_trials)


@dataclass
class SteppedEnvelope:
    """Panels in ``u = log g``: on panel ``j`` the envelope of the log-density in ``u`` is
    ``bound[j] + line[j] + slope[j] * (u - tangent[j])``."""

    lower: np.ndarray
    upper: np.ndarray
    bound: np.ndarray
    tangent: np.ndarray
    slope: np.ndarray
    line: np.ndarray
    log_mass: np.ndarray

    def log_value(self, g) -> np.ndarray:
        """Log of the envelope as a density in ``g`` (same scale as :meth:`GroupDensity.log_kernel`)."""
        u = np.log(np.asarray(g, dtype=float))
        j = np.searchsorted(self.upper[:-1], u, side="left")
        return self.bound[j] + self.line[j] + self.slope[j] * (u - self.tangent[j]) - u


@dataclass
class GroupDensity:
    """Unnormalized ``f_G`` for a fixed ``tau``, reduced to a spectral form."""

    tau: np.ndarray
    data: Dataset
    hp: Hyperparams
    shape: float = field(init=False)
    rate: float = field(init=False)
    k: float = field(init=False)
    mu: np.ndarray = field(init=False, repr=False)
    w2: np.ndarray = field(init=False, repr=False)
    log_a_inf: float = field(init=False)

    def __post_init__(self) -> None:
        hp, data = self.hp, self.data
        if not hp.pxda_allowed:
            raise PxDaDisabledError("the PX-DA chain requires xi > 0")
        t = np.ascontiguousarray(getattr(self.tau, "tau", self.tau), dtype=float)
        if t.shape != (data.p,) or not np.all(t > 0) or not np.all(np.isfinite(t)):
            raise ValueError(f"tau must be a positive finite vector of length {data.p}")
        self.tau = t
        self.shape, self.rate, self.k, self.mu, self.w2, self.log_a_inf = _group_setup(
            t, data.gram, data.xty, data.yty, data.n, hp.a, hp.b, hp.alpha, hp.xi
        )

    def _args(self):
        return self.shape, self.rate, self.mu, self.w2, self.data.yty, self.k, 2.0 * self.hp.xi

    def log_ab(self, g) -> tuple[np.ndarray, np.ndarray]:
        """``log A(g)`` and ``log B(g)`` elementwise."""
        g = np.atleast_1d(np.asarray(g, dtype=float))
        gm = g[:, None] * self.mu[None, :]
        q = self.data.yty - np.sum(self.w2[None, :] * g[:, None] / (1.0 + gm), axis=1)
        q = np.maximum(q, 0.0)
        return -self.k * np.log(q + 2.0 * self.hp.xi), -0.5 * np.sum(np.log1p(gm), axis=1)

    def log_kernel(self, g) -> np.ndarray:
        """``log f_G(g)`` up to an additive constant (density in ``g``)."""
        g = np.atleast_1d(np.asarray(g, dtype=float))
        la, lb = self.log_ab(g)
        return (self.shape - 1.0) * np.log(g) - self.rate * g + la + lb

    def log_gamma_envelope(self, g) -> np.ndarray:
        """The plain ``Gamma(pa, b sum(tau))`` bound on the same scale as :meth:`log_kernel`."""
        g = np.atleast_1d(np.asarray(g, dtype=float))
        return (self.shape - 1.0) * np.log(g) - self.rate * g - self.k * math.log(2.0 * self.hp.xi)

    def _build(self):
        shape, rate, mu, w2, yty, k, two_xi = self._args()
        return _build_breaks(shape, rate, mu, w2, yty, k, two_xi, self.log_a_inf,
                             _N_INIT, _ROUNDS, _MAX_POINTS, _PANEL_SLACK)

    def breakpoints(self) -> np.ndarray:
        """Panel boundaries in ``u = log g``."""
        return self._build()[0]

    def stepped_envelope(self) -> SteppedEnvelope:
        return SteppedEnvelope(*self._build()[1])

    def sample(self, rng: np.random.Generator, envelope: str = "stepped",
               max_trials: int = _MAX_TRIALS) -> tuple[float, int]:
        """One exact draw of ``g`` and the number of proposals used."""
        shape, rate, mu, w2, yty, k, two_xi = self._args()
        if envelope == "stepped":
            g, trials = _sample_stepped(shape, rate, mu, w2, yty, k, two_xi, self._build()[1], rng, max_trials)
        elif envelope == "gamma":
            g, trials = _sample_gamma_env(shape, rate, mu, w2, yty, k, two_xi, rng, max_trials)
        else:
            raise ValueError(f"unknown envelope {envelope!r}")
        if g < 0.0:
            _raise(_E_ENVELOPE, 0, -g)
        if g == 0.0:
            _raise(_E_NO_ACCEPT, 0, float(max_trials))
        return g, int(trials)


def sample_group_element(tau, data: Dataset, hp: Hyperparams, rng: np.random.Generator,
                         envelope: str = "stepped") -> tuple[GroupElement, int]:
    """Exact draw from ``f_G`` by rejection; returns the element and the trial count."""
    g, trials = GroupDensity(tau, data, hp).sample(rng, envelope)
    return GroupElement(g), trials


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

_KIND_CODE = {ChainKind.ThreeBlock: 0, ChainKind.TwoBlock: 1, ChainKind.HaarPxDa: 2}
_ENV_CODE = {"stepped": _ENV_STEPPED, "gamma": _ENV_GAMMA}


def _raise(code: int, idx: int, info: float):
    if code == _E_IMPROPER:
        raise ImproperConditionalError(
            f"tau[{idx}] conditional is improper: beta[{idx}] = 0 with a <= 1/2"
        )
    if code == _E_TAU:
        raise NotPositiveDefiniteError(f"A_tau is not positive definite: tau[{idx}] = {info!r}")
    if code == _E_CHOL:
        raise NotPositiveDefiniteError(f"Cholesky of A_tau failed at pivot {idx} (value {info!r})")
    if code == _E_RESID:
        raise FloatingPointError(f"negative residual quadratic form {info!r}; A_tau solve is unstable")
    if code == _E_RATE:
        raise FloatingPointError(f"sigma2 conditional has nonpositive rate {info!r}")
    if code == _E_ENVELOPE:
        raise EnvelopeViolationError(f"f_G envelope exceeded by log ratio {info:.3e}")
    if code == _E_NO_ACCEPT:
        raise RuntimeError(f"f_G rejection sampler did not accept within {int(info)} trials")
    raise RuntimeError(f"kernel failed with code {code}")  # pragma: no cover


@njit(cache=True)
def _cholesky(A):
    """Lower Cholesky factor; second value is the failing pivot or -1."""
    p = A.shape[0]
    L = np.zeros((p, p))
    for j in range(p):
        d = A[j, j]
        for q in range(j):
            d -= L[j, q] * L[j, q]
        if not (d > 0.0) or not math.isfinite(d):
            return L, j, d
        d = math.sqrt(d)
        L[j, j] = d
        for i in range(j + 1, p):
            v = A[i, j]
            for q in range(j):
                v -= L[i, q] * L[j, q]
            L[i, j] = v / d
    return L, -1, 0.0


@njit(cache=True)
def _forward(L, rhs):
    p = rhs.size
    x = np.empty(p)
    for i in range(p):
        v = rhs[i]
        for q in range(i):
            v -= L[i, q] * x[q]
        x[i] = v / L[i, i]
    return x


@njit(cache=True)
def _backward(L, rhs):
    """Solve ``L' x = rhs``."""
    p = rhs.size
    x = np.empty(p)
    for i in range(p - 1, -1, -1):
        v = rhs[i]
        for q in range(i + 1, p):
            v -= L[q, i] * x[q]
        x[i] = v / L[i, i]
    return x


@njit(cache=True)
def _tau_step(beta, sigma2, a, b, clamp, rng):
    p = beta.size
    lam = a - 0.5
    chi = np.empty(p)
    for j in range(p):
        chi[j] = beta[j] * beta[j] / sigma2
        # beta_j**2 underflows long before beta_j does, so the floor acts on chi.
        if clamp and chi[j] < _CHI_FLOOR:
            chi[j] = _CHI_FLOOR
        if lam <= 0.0 and chi[j] == 0.0:
            return chi, _E_IMPROPER, j, 0.0
    tau = _gig_draws(np.full(p, lam), chi, np.full(p, 2.0 * b), rng)
    return tau, 0, -1, 0.0


@njit(cache=True)
def _factor(tau, gram):
    p = tau.size
    A = gram.copy()
    for j in range(p):
        inv = 1.0 / tau[j] if tau[j] > 0.0 else np.inf
        if not math.isfinite(inv):
            return A, _E_TAU, j, tau[j]
        A[j, j] += inv
    L, fail, d = _cholesky(A)
    if fail >= 0:
        return L, _E_CHOL, fail, d
    return L, 0, -1, 0.0


@njit(cache=True)
def _finish_two(tau, gram, xty, yty, n, alpha, xi, rng):
    """``sigma2 | tau`` then ``beta | sigma2, tau``."""
    p = tau.size
    L, code, idx, info = _factor(tau, gram)
    if code != 0:
        return np.zeros(p), 1.0, code, idx, info
    w = _forward(L, xty)
    quad = yty - np.dot(w, w)
    if quad < 0.0:
        if quad < -1e-8 * yty:
            return np.zeros(p), 1.0, _E_RESID, -1, quad
        quad = 0.0
    rate = 0.5 * (quad + 2.0 * xi)
    if not rate > 0.0:
        return np.zeros(p), 1.0, _E_RATE, -1, rate
    sigma2 = 1.0 / rng.gamma(0.5 * n + alpha, 1.0 / rate)
    sd = math.sqrt(sigma2)
    rhs = np.empty(p)
    for i in range(p):
        rhs[i] = w[i] + sd * rng.standard_normal()
    return _backward(L, rhs), sigma2, 0, -1, 0.0


@njit(cache=True)
def _finish_three(tau, sigma2, X, Y, gram, xty, alpha, xi, rng):
    """``beta | sigma2, tau`` then ``sigma2 | beta, tau``."""
    n, p = X.shape
    L, code, idx, info = _factor(tau, gram)
    if code != 0:
        return np.zeros(p), 1.0, code, idx, info
    w = _forward(L, xty)
    sd = math.sqrt(sigma2)
    rhs = np.empty(p)
    for i in range(p):
        rhs[i] = w[i] + sd * rng.standard_normal()
    beta = _backward(L, rhs)
    ss = 2.0 * xi
    for r in range(n):
        e = Y[r]
        for j in range(p):
            e -= X[r, j] * beta[j]
        ss += e * e
    for j in range(p):
        ss += beta[j] * beta[j] / tau[j]
    rate = 0.5 * ss
    if not rate > 0.0:
        return beta, 1.0, _E_RATE, -1, rate
    return beta, 1.0 / rng.gamma(0.5 * (n + p) + alpha, 1.0 / rate), 0, -1, 0.0


@njit(cache=True)
def _step(kind, beta, sigma2, X, Y, gram, xty, yty, a, b, alpha, xi, clamp, env_code, rng):
    """One transition; returns ``(beta, sigma2, trials, code, idx, info)``."""
    tau, code, idx, info = _tau_step(beta, sigma2, a, b, clamp, rng)
    if code != 0:
        return beta, sigma2, 0, code, idx, info
    if kind == 0:
        nb, ns, code, idx, info = _finish_three(tau, sigma2, X, Y, gram, xty, alpha, xi, rng)
        return nb, ns, 0, code, idx, info
    trials = 0
    if kind == 2:
        g, trials = _draw_g(tau, gram, xty, yty, X.shape[0], a, b, alpha, xi, env_code, rng, _MAX_TRIALS)
        if g < 0.0:
            return beta, sigma2, trials, _E_ENVELOPE, -1, -g
        if g == 0.0:
            return beta, sigma2, trials, _E_NO_ACCEPT, -1, float(trials)
        tau = g * tau
    nb, ns, code, idx, info = _finish_two(tau, gram, xty, yty, X.shape[0], alpha, xi, rng)
    return nb, ns, trials, code, idx, info


@njit(cache=True)
def _run(kind, beta, sigma2, iterations, burn_in, thin, n_keep,
         X, Y, gram, xty, yty, a, b, alpha, xi, clamp, env_code, rng):
    p = beta.size
    betas = np.empty((n_keep, p))
    sig = np.empty(n_keep)
    total = 0
    kept = 0
    for it in range(iterations):
        beta, sigma2, trials, code, idx, info = _step(
            kind, beta, sigma2, X, Y, gram, xty, yty, a, b, alpha, xi, clamp, env_code, rng
        )
        if code != 0:
            return betas, sig, total, code, idx, info, it
        total += trials
        if it >= burn_in and (it - burn_in) % thin == 0 and kept < n_keep:
            betas[kept] = beta
            sig[kept] = sigma2
            kept += 1
    return betas, sig, total, 0, -1, 0.0, iterations


def _call_step(kind: ChainKind, state: ChainState, data: Dataset, hp: Hyperparams, rng, envelope="stepped"):
    if kind is ChainKind.HaarPxDa and not hp.pxda_allowed:
        raise PxDaDisabledError("the PX-DA chain requires xi > 0")
    beta, sigma2, _, code, idx, info = _step(
        _KIND_CODE[kind], state.beta, state.sigma2, data.X, data.Y, data.gram, data.xty, data.yty,
        hp.a, hp.b, hp.alpha, hp.xi, False, _ENV_CODE[envelope], rng,
    )
    if code != 0:
        _raise(code, idx, info)
    return ChainState(beta, sigma2)


def step_three_block(state: ChainState, data: Dataset, hp: Hyperparams, rng: np.random.Generator) -> ChainState:
    """``tau | beta, sigma2``, then ``beta | sigma2, tau``, then ``sigma2 | beta, tau``."""
    return _call_step(ChainKind.ThreeBlock, state, data, hp, rng)


def step_two_block(state: ChainState, data: Dataset, hp: Hyperparams, rng: np.random.Generator) -> ChainState:
    """``tau | beta, sigma2``, then ``sigma2 | tau`` and ``beta | sigma2, tau`` at the new ``sigma2``."""
    return _call_step(ChainKind.TwoBlock, state, data, hp, rng)


def _hooked_step(beta, sigma2, data, hp, rng, group_sampler, clamp=False):
    tau, code, idx, info = _tau_step(beta, sigma2, hp.a, hp.b, clamp, rng)
    if code != 0:
        _raise(code, idx, info)
    g = group_sampler(tau.copy(), data, hp, rng)
    g = GroupElement(g.g if isinstance(g, GroupElement) else float(g)).g
    beta, sigma2, code, idx, info = _finish_two(g * tau, data.gram, data.xty, data.yty, data.n, hp.alpha, hp.xi, rng)
    if code != 0:
        _raise(code, idx, info)
    return beta, sigma2


def step_haar_pxda(
    state: ChainState,
    data: Dataset,
    hp: Hyperparams,
    rng: np.random.Generator,
    group_sampler: Callable | None = None,
    envelope: str = "stepped",
) -> ChainState:
    """Two-block step with ``tau`` replaced by ``g * tau``, ``g ~ f_G``, between the blocks.

    ``group_sampler(tau, data, hp, rng)`` overrides the ``f_G`` draw and may
    return a float or a :class:`GroupElement`.
    """
    if not hp.pxda_allowed:
        raise PxDaDisabledError("the PX-DA chain requires xi > 0")
    if group_sampler is None:
        return _call_step(ChainKind.HaarPxDa, state, data, hp, rng, envelope)
    beta, sigma2 = _hooked_step(state.beta, state.sigma2, data, hp, rng, group_sampler)
    return ChainState(beta, sigma2)


def run_chain(config: RunConfig, data: Dataset, hp: Hyperparams, group_sampler: Callable | None = None) -> SampleTrace:
    """Iterate one kernel from ``config.init`` and keep thinned post burn-in draws.

    ``group_sampler`` replaces the ``f_G`` draw of the PX-DA chain (testing hook).
    """
    kind = config.kind
    if kind is ChainKind.HaarPxDa and not hp.pxda_allowed:
        raise PxDaDisabledError("the PX-DA chain requires xi > 0")
    init = config.init if config.init is not None else ChainState(np.ones(data.p), 1.0)
    if init.beta.shape[0] != data.p:
        raise ValueError(f"initial beta has length {init.beta.shape[0]}, expected p={data.p}")
    rng = RngStream(config.seed, _STREAM_ID[kind]).generator()
    n_keep = config.n_kept
    if group_sampler is not None and kind is ChainKind.HaarPxDa:
        betas = np.empty((n_keep, data.p))
        sig = np.empty(n_keep)
        beta, sigma2 = init.beta.copy(), init.sigma2
        kept = 0
        for it in range(config.iterations):
            try:
                beta, sigma2 = _hooked_step(beta, sigma2, data, hp, rng, group_sampler, config.clamp_beta)
            except Exception as exc:
                raise ChainError(it, exc) from exc
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0 and kept < n_keep:
                betas[kept] = beta
                sig[kept] = sigma2
                kept += 1
        return SampleTrace(betas, sig, config, None)
    betas, sig, total, code, idx, info, it = _run(
        _KIND_CODE[kind], init.beta.copy(), init.sigma2, config.iterations, config.burn_in, config.thin, n_keep,
        data.X, data.Y, data.gram, data.xty, data.yty, hp.a, hp.b, hp.alpha, hp.xi,
        bool(config.clamp_beta), _ENV_CODE[config.envelope], rng,
    )
    if code != 0:
        try:
            _raise(code, idx, info)
        except Exception as exc:
            raise ChainError(int(it), exc) from exc
    rate = config.iterations / total if kind is ChainKind.HaarPxDa and total > 0 else None
    return SampleTrace(betas, sig, config, rate)
