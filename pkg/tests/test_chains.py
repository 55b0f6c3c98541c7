import math

import numpy as np
import pytest

from ngshrink.chains import (
    ChainError,
    ChainKind,
    EnvelopeViolationError,
    GroupDensity,
    GroupElement,
    PxDaDisabledError,
    RunConfig,
    run_chain,
    sample_group_element,
    step_haar_pxda,
    step_three_block,
    step_two_block,
)
from ngshrink.cli import simulate_dataset
from ngshrink.diagnostics import batch_means_se
from ngshrink.model import ChainState, Dataset, Hyperparams, ImproperConditionalError
from ngshrink.rand_dists import RngStream
from oracles import fg_cdf, ks_distance, log_fg_direct, mean_and_se

HP = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=1.0)


def gen(seed=3):
    return RngStream(seed, 0).generator()


@pytest.mark.parametrize("step", [step_three_block, step_two_block, step_haar_pxda])
def test_step_determinism(step, small_data):
    s0 = ChainState(np.ones(3), 1.0)
    a = step(s0, small_data, HP, gen())
    b = step(s0, small_data, HP, gen())
    assert np.array_equal(a.beta, b.beta) and a.sigma2 == b.sigma2
    c = step(s0, small_data, HP, gen(4))
    assert not np.array_equal(a.beta, c.beta)


def test_pxda_with_unit_group_is_two_block(small_data):
    r1, r2 = gen(), gen()
    s1 = s2 = ChainState(np.ones(3), 1.0)
    for _ in range(50):
        s1 = step_two_block(s1, small_data, HP, r1)
        s2 = step_haar_pxda(s2, small_data, HP, r2, group_sampler=lambda *args: GroupElement(1.0))
        assert np.array_equal(s1.beta, s2.beta) and s1.sigma2 == s2.sigma2


def test_run_chain_matches_steps(small_data):
    cfg = RunConfig(ChainKind.TwoBlock, 20, 0, seed=9)
    trace = run_chain(cfg, small_data, HP)
    rng = RngStream(9, 1).generator()
    s = ChainState(np.ones(3), 1.0)
    for i in range(20):
        s = step_two_block(s, small_data, HP, rng)
        assert np.array_equal(trace.beta[i], s.beta) and trace.sigma2[i] == s.sigma2


def test_trace_length_and_determinism(small_data):
    for kind in ChainKind:
        cfg = RunConfig(kind, 100, 50, thin=5, seed=1)
        t1, t2 = run_chain(cfg, small_data, HP), run_chain(cfg, small_data, HP)
        assert len(t1) == 10 and t1.beta.shape == (10, 3) and len(t1.states) == 10
        assert np.array_equal(t1.beta, t2.beta) and np.array_equal(t1.sigma2, t2.sigma2)
    assert run_chain(RunConfig(ChainKind.TwoBlock, 100, 50, 5), small_data, HP).pxda_acceptance_rate is None
    rate = run_chain(RunConfig(ChainKind.HaarPxDa, 100, 50, 5), small_data, HP).pxda_acceptance_rate
    assert 0 < rate <= 1


def test_run_config_validation():
    assert RunConfig(ChainKind.TwoBlock, 1000).burn_in == 100
    assert RunConfig("sandwich", 10).kind is ChainKind.HaarPxDa
    for kwargs in [dict(iterations=0), dict(iterations=10, burn_in=10), dict(iterations=10, thin=0),
                   dict(iterations=10, envelope="box")]:
        with pytest.raises(ValueError):
            RunConfig(ChainKind.TwoBlock, **kwargs)
    with pytest.raises(ValueError):
        ChainKind.parse("four_block")


def test_default_init_smoke_on_simulated_design():
    data = simulate_dataset(10, 15, 1)
    for a in (0.75, 0.3):
        hp = Hyperparams(a=a, b=2.0, alpha=0.0, xi=100.0)
        for kind in ChainKind:
            trace = run_chain(RunConfig(kind, 10_000, seed=2), data, hp)
            assert np.all(np.isfinite(trace.beta)) and np.all(trace.sigma2 > 0)


def test_error_carries_iteration(small_data):
    calls = []

    def hook(tau, data, hp, rng):
        calls.append(1)
        if len(calls) == 4:
            raise ValueError("boom")
        return 1.0

    with pytest.raises(ChainError) as info:
        run_chain(RunConfig(ChainKind.HaarPxDa, 10, 0), small_data, HP, group_sampler=hook)
    assert info.value.iteration == 3 and isinstance(info.value.cause, ValueError)


def test_improper_tau_conditional_and_clamp(small_data):
    hp = Hyperparams(a=0.3, b=1.0, alpha=1.0, xi=1.0)
    init = ChainState(np.array([1.0, 0.0, 1.0]), 1.0)
    with pytest.raises(ChainError) as info:
        run_chain(RunConfig(ChainKind.TwoBlock, 10, 0, init=init), small_data, hp)
    assert info.value.iteration == 0 and isinstance(info.value.cause, ImproperConditionalError)
    assert "tau[1]" in str(info.value)
    trace = run_chain(RunConfig(ChainKind.TwoBlock, 10, 0, init=init, clamp_beta=True), small_data, hp)
    assert len(trace) == 10


def test_pxda_disabled_without_xi(small_data):
    hp = Hyperparams(a=0.75, b=2.0, alpha=1.0, xi=0.0)
    with pytest.raises(PxDaDisabledError):
        run_chain(RunConfig(ChainKind.HaarPxDa, 10), small_data, hp)
    with pytest.raises(PxDaDisabledError):
        step_haar_pxda(ChainState(np.ones(3), 1.0), small_data, hp, gen())
    # The Gibbs chains still run with an improper prior.
    assert len(run_chain(RunConfig(ChainKind.TwoBlock, 10, 0), small_data, hp)) == 10


def test_zero_design_beta_variance():
    # With X = 0 the posterior factorizes: sigma2 ~ IG(alpha + n/2, xi + Y'Y/2), tau_j ~ Gamma(a, b).
    Y = np.array([0.5, -1.0, 2.0, 0.3, -0.7, 1.1])
    data = Dataset(np.zeros((6, 2)), Y)
    hp = Hyperparams(a=1.5, b=2.0, alpha=2.0, xi=1.0)
    expected = (hp.xi + Y @ Y / 2) / (hp.alpha + 3 - 1) * hp.a / hp.b
    trace = run_chain(RunConfig(ChainKind.ThreeBlock, 100_000, 1000, seed=5), data, hp)
    for j in range(2):
        s = trace.beta[:, j] ** 2
        assert abs(s.mean() - expected) < 3 * batch_means_se(s)


# ---------------------------------------------------------------- group density


def test_group_density_zero_design_is_gamma():
    data = Dataset(np.zeros((3, 1)), np.array([1.0, 2.0, -1.0]))
    hp = Hyperparams(a=0.8, b=1.5, alpha=0.5, xi=1.0)
    tau = np.array([0.7])
    rng = gen()
    draws = np.array([sample_group_element(tau, data, hp, rng)[0].g for _ in range(40_000)])
    m, se = mean_and_se(draws)
    assert abs(m - hp.a / (hp.b * tau[0])) < 3 * se


def test_group_density_matches_direct_formula(small_data):
    tau = np.array([0.3, 1.2, 4.0])
    gd = GroupDensity(tau, small_data, HP)
    g = np.logspace(-4, 4, 41)
    ref = log_fg_direct(g, tau, small_data.X, small_data.Y, HP.a, HP.b, HP.alpha, HP.xi)
    diff = gd.log_kernel(g) - ref
    assert np.ptp(diff) < 1e-9


def test_group_density_ks_small_design(small_data):
    tau = np.array([0.3, 1.2, 4.0])
    gd = GroupDensity(tau, small_data, HP)
    rng = gen(8)
    draws = np.array([gd.sample(rng)[0] for _ in range(50_000)])
    cdf = fg_cdf(tau, small_data.X, small_data.Y, HP.a, HP.b, HP.alpha, HP.xi)
    assert ks_distance(draws, cdf) < 0.01


def test_gamma_envelope_sampler_agrees(small_data):
    # The plain Gamma envelope is exact but slow; use a mild instance.
    hp = Hyperparams(a=0.75, b=2.0, alpha=0.0, xi=5.0)
    tau = np.array([0.5, 0.5, 0.5])
    rng = gen(2)
    draws = np.array([sample_group_element(tau, small_data, hp, rng, "gamma")[0].g for _ in range(5_000)])
    cdf = fg_cdf(tau, small_data.X, small_data.Y, hp.a, hp.b, hp.alpha, hp.xi)
    assert ks_distance(draws, cdf) < 1.63 / math.sqrt(draws.size)


def test_envelopes_dominate_on_grid():
    g = np.logspace(-6, 6, 601)
    r = np.random.default_rng(77)
    for _ in range(100):
        n, p = int(r.integers(1, 12)), int(r.integers(1, 8))
        data = Dataset(r.standard_normal((n, p)) * r.uniform(0.1, 5), r.standard_normal(n) * r.uniform(0.1, 20))
        hp = Hyperparams(a=r.uniform(0.2, 2), b=r.uniform(0.1, 3), alpha=r.uniform(0, 2), xi=10 ** r.uniform(-2, 2))
        tau = 10 ** r.uniform(-3, 2, p)
        gd = GroupDensity(tau, data, hp)
        target = gd.log_kernel(g)
        assert np.all(target - gd.log_gamma_envelope(g) <= 1e-9)
        assert np.all(target - gd.stepped_envelope().log_value(g) <= 1e-9)


def test_tight_region_ratio_below_one():
    data = simulate_dataset(10, 15, 1)
    hp = Hyperparams(a=0.75, b=2.0, alpha=0.0, xi=100.0)
    gd = GroupDensity(np.ones(15), data, hp)
    g = np.logspace(0, 8, 200)
    assert np.all(gd.log_kernel(g) - gd.log_gamma_envelope(g) < 0)


def test_group_density_validation(small_data):
    with pytest.raises(PxDaDisabledError):
        GroupDensity(np.ones(3), small_data, Hyperparams(a=1.0, b=1.0, xi=0.0))
    with pytest.raises(ValueError):
        GroupDensity(np.array([1.0, -1.0, 1.0]), small_data, HP)
    with pytest.raises(ValueError):
        GroupDensity(np.ones(3), small_data, HP).sample(gen(), "box")
    with pytest.raises(ValueError):
        GroupElement(0.0)
    assert issubclass(EnvelopeViolationError, RuntimeError)
