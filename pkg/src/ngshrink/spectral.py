"""Numerical evidence on the trace-class boundary of the two-block chain.

The two-block Markov operator is trace class exactly when the integral of its
diagonal kernel

    k((beta, sigma2), (beta, sigma2)) = E_tau[ pi(beta, sigma2 | tau, Y) ],
    tau ~ pi(tau | beta, sigma2, Y),

over ``(beta, sigma2)`` is finite.  For ``p = 1`` the ``tau`` expectation is a
1-D integral, so the kernel can be evaluated by nested Gauss-Legendre
quadrature and its integral restricted to ``|beta| > eps`` tracked as
``eps -> 0``.  Verdicts are evidence at finite precision, never proofs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .model import ChainState, Dataset, Hyperparams, ImproperConditionalError, cond_tau_arrays
from .rand_dists import _gig_draws
from .special import QuadratureError, log_bessel_k_array

__all__ = [
    "Verdict",
    "DiagKernelEstimate",
    "TraceGrid",
    "TraceProbeReport",
    "SlopeFit",
    "unit_instance",
    "diag_kernel",
    "diag_kernel_quadrature",
    "trace_probe",
    "small_beta_asymptotics_check",
]

_LOG_2PI = math.log(2.0 * math.pi)


class Verdict(enum.Enum):
    ConvergentEvidence = "ConvergentEvidence"
    LogDivergenceEvidence = "LogDivergenceEvidence"
    Inconclusive = "Inconclusive"


@dataclass(frozen=True)
class DiagKernelEstimate:
    value: float
    std_err: float
    n_mc: int


@dataclass(frozen=True)
class TraceGrid:
    """Quadrature layout for :func:`trace_probe`.

    ``sigma2`` is integrated over ``sigma2_range`` and ``|beta|`` over
    ``[eps, beta_max]``, both with ``nodes_per_decade`` Gauss-Legendre nodes
    per decade in log scale.  The ``tau`` integral uses ``tau_panels`` panels
    of ``tau_nodes`` nodes in ``log tau`` over a window where the integrand
    is within ``exp(-tau_drop)`` of its peak.
    """

    cutoffs: tuple[float, ...] = tuple(10.0 ** -k for k in range(1, 11))
    sigma2_range: tuple[float, float] = (1e-4, 1e4)
    beta_max: float = 1e3
    nodes_per_decade: int = 16
    tau_panels: int = 8
    tau_nodes: int = 16
    tau_drop: float = 60.0
    tol: float = 1e-3
    n_tail: int = 3
    slope_sigmas: float = 10.0
    # A beta decade is flagged when its half-order rule disagrees by more than this.
    cell_tol: float = 1e-4

    def __post_init__(self) -> None:
        c = np.asarray(self.cutoffs, dtype=float)
        if c.size < 3 or np.any(c <= 0) or np.any(np.diff(c) >= 0):
            raise ValueError("cutoffs must be a strictly decreasing sequence of at least 3 positive values")
        if not 0 < self.sigma2_range[0] < self.sigma2_range[1]:
            raise ValueError(f"invalid sigma2_range {self.sigma2_range}")
        if not self.beta_max > c[0]:
            raise ValueError("beta_max must exceed the largest cutoff")


@dataclass
class TraceProbeReport:
    a: float
    cutoffs: np.ndarray
    restricted_integrals: np.ndarray
    verdict: Verdict
    slope: float
    slope_se: float
    relative_increments: np.ndarray
    truncation_estimate: float
    cell_errors: np.ndarray = field(repr=False)
    nonconverged_cells: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "cutoffs": [float(c) for c in self.cutoffs],
            "restricted_integrals": [float(r) for r in self.restricted_integrals],
            "verdict": self.verdict.value,
            "log_slope": self.slope,
            "log_slope_se": self.slope_se,
            "relative_increments": [float(r) for r in self.relative_increments],
            "truncation_estimate": self.truncation_estimate,
            "nonconverged_cells": list(self.nonconverged_cells),
        }


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    abs_beta: np.ndarray
    values: np.ndarray


def unit_instance() -> Dataset:
    """``n = p = 1``, ``X = 1``, ``Y = 1``."""
    return Dataset(np.ones((1, 1)), np.ones(1))


def _check_small(data: Dataset, p_max: int) -> None:
    if data.p > p_max:
        raise ValueError(f"only p <= {p_max} is supported here, got p={data.p}")


def _log_ig(x, shape, rate):
    return shape * np.log(rate) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def diag_kernel(state: ChainState, data: Dataset, hp: Hyperparams, n_mc: int,
                rng: np.random.Generator) -> DiagKernelEstimate:
    """Rao-Blackwellized Monte Carlo estimate of the diagonal two-block kernel.

    Averages ``pi(sigma2 | tau, Y) * pi(beta | sigma2, tau, Y)`` over
    ``tau ~ pi(tau | beta, sigma2, Y)``.  Requires ``p <= 3``.
    """
    _check_small(data, 3)
    if n_mc < 2:
        raise ValueError(f"n_mc must be at least 2, got {n_mc}")
    beta, s2 = state.beta, state.sigma2
    lam, chi, psi = cond_tau_arrays(beta, s2, hp)
    p = data.p
    lam_rep = np.full(n_mc * p, lam)
    tau = _gig_draws(lam_rep, np.tile(chi, n_mc), np.full(n_mc * p, psi), rng).reshape(n_mc, p)
    logv = _log_pi_beta_sigma2_given_tau(beta, s2, tau, data, hp)
    m = logv.max()
    v = np.exp(logv - m)
    scale = math.exp(m)
    return DiagKernelEstimate(float(scale * v.mean()), float(scale * v.std(ddof=1) / math.sqrt(n_mc)), n_mc)


def _log_pi_beta_sigma2_given_tau(beta, s2, tau, data: Dataset, hp: Hyperparams) -> np.ndarray:
    """``log pi(beta, sigma2 | tau, Y)`` for each row of ``tau``."""
    p = data.p
    A = data.gram[None, :, :] + np.einsum("ij,ni->nij", np.eye(p), 1.0 / tau)
    L = np.linalg.cholesky(A)
    w = np.linalg.solve(L, np.broadcast_to(data.xty, tau.shape)[..., None])[..., 0]
    quad = np.maximum(data.yty - np.einsum("ni,ni->n", w, w), 0.0)
    shape = 0.5 * data.n + hp.alpha
    log_ig = _log_ig(s2, shape, 0.5 * (quad + 2.0 * hp.xi))
    r = np.einsum("nji,j->ni", L, beta) - w
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    log_n = -0.5 * p * (_LOG_2PI + math.log(s2)) + 0.5 * logdet - 0.5 * np.einsum("ni,ni->n", r, r) / s2
    return log_ig + log_n


def _log_integrand_p1(v, beta, s2, data: Dataset, hp: Hyperparams, log_gig_norm):
    """log of the ``tau`` integrand in ``v = log tau`` for ``p = 1`` (broadcasting).

    The exponents of the Inverse-Gamma and normal factors are combined
    analytically into ``-(||Y - X beta||^2 + 2 xi) / (2 sigma2)`` so no large
    terms cancel when ``sigma2`` is small.
    """
    g, xy, yy = float(data.gram[0, 0]), float(data.xty[0]), data.yty
    lam = hp.a - 0.5
    tau = np.exp(v)
    A = g + 1.0 / tau
    quad = np.maximum(yy - xy * xy / A, 0.0)
    shape = 0.5 * data.n + hp.alpha
    chi = beta * beta / s2
    log_gig = lam * v - 0.5 * (chi / tau + 2.0 * hp.b * tau) - log_gig_norm
    resid = yy - 2.0 * beta * xy + g * beta * beta
    return (
        log_gig
        + shape * np.log(0.5 * (quad + 2.0 * hp.xi))
        - special.gammaln(shape)
        - (shape + 1.0) * np.log(s2)
        - 0.5 * (_LOG_2PI + np.log(s2))
        + 0.5 * np.log(A)
        - 0.5 * (resid + 2.0 * hp.xi + chi * s2 / tau) / s2
    )


def _log_gig_norm(lam, chi, psi):
    """log of ``2 (chi/psi)^{lam/2} K_lam(sqrt(chi psi))`` elementwise, ``chi > 0``."""
    chi = np.asarray(chi, dtype=float)
    return math.log(2.0) + 0.5 * lam * np.log(chi / psi) + log_bessel_k_array(lam, np.sqrt(chi * psi))


def diag_kernel_quadrature(state: ChainState, data: Dataset, hp: Hyperparams, epsrel: float = 1e-10) -> float:
    """Diagonal kernel for ``p = 1`` by adaptive quadrature over ``log tau``."""
    _check_small(data, 1)
    beta = float(state.beta[0])
    s2 = state.sigma2
    cond_tau_arrays(state.beta, s2, hp)
    if beta == 0.0:
        raise ImproperConditionalError("the quadrature form needs beta != 0")
    lgn = float(_log_gig_norm(hp.a - 0.5, beta * beta / s2, 2.0 * hp.b))
    lo, hi = _tau_window(hp.a - 0.5, np.array(beta * beta / s2), 2.0 * hp.b, 60.0)
    lo, hi = float(lo), float(hi)
    grid = np.linspace(lo, hi, 401)
    vals = _log_integrand_p1(grid, beta, s2, data, hp, lgn)
    peak = float(vals.max())
    vpk = float(grid[np.argmax(vals)])

    def f(v):
        return math.exp(float(_log_integrand_p1(v, beta, s2, data, hp, lgn)) - peak)

    val, err = integrate.quad(f, lo, hi, points=[vpk], epsabs=0.0, epsrel=epsrel, limit=400)
    if not (val > 0 and err <= 1e3 * epsrel * val):
        raise QuadratureError(f"tau quadrature failed: value={val!r}, error={err!r}")
    return val * math.exp(peak)


def _tau_window(lam, chi, psi, drop):
    """``log tau`` interval where ``GIG(lam - 1/2, 2 chi, psi)`` (in ``log tau``) is within ``drop`` of its mode.

    This law captures the small-``tau`` behaviour of the full integrand;
    remaining factors are bounded and slowly varying.
    """
    lam2 = lam - 0.5
    chi2 = 2.0 * chi
    disc = np.sqrt(lam2 * lam2 + psi * chi2)
    mode = np.where(lam2 >= 0, (lam2 + disc) / psi, chi2 / np.maximum(disc - lam2, 1e-300))
    vm = np.log(mode)

    def f(v):
        return lam2 * v - 0.5 * (chi2 * np.exp(-v) + psi * np.exp(v))

    target = f(vm) - drop
    out = []
    for sign in (-1.0, 1.0):
        step = np.ones_like(vm)
        while True:
            edge = vm + sign * step
            more = f(edge) > target
            if not np.any(more):
                break
            step = np.where(more, 2.0 * step, step)
        lo = np.minimum(vm, edge)
        hi = np.maximum(vm, edge)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            inside = f(mid) > target
            if sign < 0:
                hi = np.where(inside, mid, hi)
                lo = np.where(inside, lo, mid)
            else:
                lo = np.where(inside, mid, lo)
                hi = np.where(inside, hi, mid)
        out.append(0.5 * (lo + hi))
    return out[0], out[1]


def _gl_log_panels(lo, hi, n_panels, n_nodes):
    """Composite Gauss-Legendre nodes and weights on ``[lo, hi]`` (arrays broadcast)."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = lo[..., None] + (hi - lo)[..., None] * np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 * np.diff(edges, axis=-1)
    mid = 0.5 * (edges[..., 1:] + edges[..., :-1])
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w
    shp = nodes.shape[:-2] + (n_panels * n_nodes,)
    return nodes.reshape(shp), weights.reshape(shp)


def _decade_rule(lo: float, hi: float, per_decade: int):
    """Gauss-Legendre rule in ``log x`` with one panel per decade (partial ends allowed)."""
    a, b = math.log10(lo), math.log10(hi)
    edges = np.unique(np.concatenate([[a], np.arange(math.ceil(a), math.floor(b) + 1), [b]]))
    x, w = np.polynomial.legendre.leggauss(per_decade)
    nodes, weights, panel = [], [], []
    for i, (l, r) in enumerate(zip(edges[:-1], edges[1:])):
        half = 0.5 * (r - l) * math.log(10.0)
        mid = 0.5 * (r + l) * math.log(10.0)
        nodes.append(mid + half * x)
        weights.append(half * w)
        panel.append(np.full(per_decade, i))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(panel), 10.0 ** edges


def _log_kernel_grid(log_beta, log_s2, data, hp, grid: TraceGrid):
    """log diagonal kernel at the tensor grid ``beta x sigma2`` (shape ``(B, S)``)."""
    beta = np.exp(log_beta)[:, None]
    s2 = np.exp(log_s2)[None, :]
    lam = hp.a - 0.5
    psi = 2.0 * hp.b
    chi = beta * beta / s2
    lgn = _log_gig_norm(lam, chi, psi)
    lo, hi = _tau_window(lam, chi, psi, grid.tau_drop)
    v, w = _gl_log_panels(lo, hi, grid.tau_panels, grid.tau_nodes)
    vals = _log_integrand_p1(v, beta[..., None], s2[..., None], data, hp, lgn[..., None])
    m = vals.max(axis=-1)
    return m + np.log(np.sum(w * np.exp(vals - m[..., None]), axis=-1))


def trace_probe(a: float, data: Dataset | None = None, hp_rest: Hyperparams | None = None,
                grid: TraceGrid | None = None) -> TraceProbeReport:
    """Restricted integrals ``R(eps)`` of the diagonal kernel over ``|beta| > eps``.

    ``hp_rest`` supplies ``b, alpha, xi`` (its ``a`` is replaced by ``a``);
    defaults are ``b = 1, xi = 1, alpha = 1`` on :func:`unit_instance`.
    """
    data = unit_instance() if data is None else data
    _check_small(data, 1)
    base = hp_rest if hp_rest is not None else Hyperparams(a=1.0, b=1.0, alpha=1.0, xi=1.0)
    hp = Hyperparams(a=a, b=base.b, alpha=base.alpha, xi=base.xi)
    grid = TraceGrid() if grid is None else grid
    cutoffs = np.asarray(grid.cutoffs, dtype=float)

    ls, ws, _, _ = _decade_rule(grid.sigma2_range[0], grid.sigma2_range[1], grid.nodes_per_decade)
    # beta panels: one per decade from the smallest cutoff to beta_max.
    lb, wb, pb, bedges = _decade_rule(cutoffs[-1], grid.beta_max, grid.nodes_per_decade)
    lb2, wb2, pb2, _ = _decade_rule(cutoffs[-1], grid.beta_max, grid.nodes_per_decade // 2)

    def panel_masses(lbeta, wbeta, pbeta):
        lk = _log_kernel_grid(lbeta, ls, data, hp, grid)
        # Jacobians sigma2 and beta for the log-scale rules; factor 2 for beta < 0.
        inner = special.logsumexp(lk + ls[None, :] + np.log(ws)[None, :], axis=1)
        contrib = math.log(2.0) + inner + lbeta + np.log(wbeta)
        n_pan = int(pbeta.max()) + 1
        return np.array([np.exp(special.logsumexp(contrib[pbeta == i])) for i in range(n_pan)]), lk

    masses, lk = panel_masses(lb, wb, pb)
    masses2, _ = panel_masses(lb2, wb2, pb2)
    cell_err = np.abs(masses - masses2) / np.maximum(masses, 1e-300)

    # R(eps_k) = mass of all panels above eps_k.
    lower_edges = bedges[:-1]
    restricted = np.array([masses[lower_edges >= c * (1 - 1e-12)].sum() for c in cutoffs])
    restricted = np.maximum.accumulate(restricted)
    incr = np.abs(np.diff(restricted)) / np.maximum(restricted[:-1], 1e-300)

    x = np.log(1.0 / cutoffs)
    X = np.column_stack([np.ones_like(x), x])
    coef, res, *_ = np.linalg.lstsq(X, restricted, rcond=None)
    dof = max(x.size - 2, 1)
    resid = restricted - X @ coef
    s2hat = float(resid @ resid) / dof
    cov = s2hat * np.linalg.inv(X.T @ X)
    slope, slope_se = float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0)))

    if np.all(incr[-grid.n_tail:] < grid.tol):
        verdict = Verdict.ConvergentEvidence
    elif slope > grid.slope_sigmas * slope_se and slope > 0:
        verdict = Verdict.LogDivergenceEvidence
    else:
        verdict = Verdict.Inconclusive

    # Mass in the outermost decades of sigma2 and the top decade of beta, as a
    # proxy for what lies beyond the truncated ranges.
    edge_s = np.zeros(ls.size, dtype=bool)
    edge_s[: grid.nodes_per_decade] = True
    edge_s[-grid.nodes_per_decade:] = True
    edge_mass = 2.0 * np.sum(np.exp(lk[:, edge_s] + ls[None, edge_s] + np.log(ws)[None, edge_s]
                                    + (lb + np.log(wb))[:, None]))
    top = 2.0 * np.sum(np.exp(lk[pb == pb.max()] + ls[None, :] + np.log(ws)[None, :]
                              + (lb + np.log(wb))[pb == pb.max()][:, None]))
    trunc = float((edge_mass + top) / max(restricted[-1], 1e-300))

    bad = [
        {"beta_lo": float(bedges[i]), "beta_hi": float(bedges[i + 1]), "rel_err": float(cell_err[i])}
        for i in range(cell_err.size)
        if cell_err[i] > grid.cell_tol
    ]
    return TraceProbeReport(float(a), cutoffs, restricted, verdict, slope, slope_se, incr, trunc, cell_err, bad)


def _log_case4_integrand(abs_beta, a, b, sigma2):
    """log of ``E[tau^{-1/2} exp(-beta^2 / (2 sigma2 tau))]`` under the ``tau`` conditional.

    Closed form ``(2 b sigma2)^{1/4} 2^{(a-1)/2} |beta|^{-1/2}
    K_{a-1}(sqrt(4b) |beta| / sigma) / K_{a-1/2}(sqrt(2b) |beta| / sigma)``; this is the
    ``tau``-dependent part of the diagonal kernel that governs small ``|beta|``.
    """
    sigma = math.sqrt(sigma2)
    x1 = math.sqrt(4.0 * b) * abs_beta / sigma
    x2 = math.sqrt(2.0 * b) * abs_beta / sigma
    return (
        0.25 * math.log(2.0 * b * sigma2)
        + 0.5 * (a - 1.0) * math.log(2.0)
        - 0.5 * np.log(abs_beta)
        + log_bessel_k_array(a - 1.0, x1)
        - log_bessel_k_array(a - 0.5, x2)
    )


def small_beta_asymptotics_check(a: float, hp: Hyperparams | None = None, sigma2: float = 1.0,
                                 beta_range: tuple[float, float] = (1e-8, 1e-2), n_points: int = 61,
                                 beta_scale: float = 1.0) -> SlopeFit:
    """Log-log slope of the small-``|beta|`` diagonal-kernel integrand.

    ``beta_scale`` multiplies the ``|beta|`` grid (used to check that rescaling
    ``sigma2`` by ``c^2`` and ``beta`` by ``c`` leaves the slope unchanged).
    A slope near ``-1`` is the non-integrable ``1/|beta|`` law.
    """
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    b = 1.0 if hp is None else hp.b
    betas = beta_scale * np.logspace(math.log10(beta_range[0]), math.log10(beta_range[1]), n_points)
    vals = _log_case4_integrand(betas, a, b, sigma2)
    slope, intercept = np.polyfit(np.log(betas), vals, 1)
    return SlopeFit(float(slope), float(intercept), betas, vals)
