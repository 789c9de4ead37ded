import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import Toy1D
from valbound.lipschitz import (
    CORRECTED,
    PAPER,
    ErrorProfile,
    GaussianPolicyField,
    InfeasibleError,
    LipschitzSpec,
    SamplePoint,
    delta_error_bound,
    error_profile,
    extrema_bounds,
    gaussian_density_constant,
    gaussian_v_estimate,
    lipschitz_constants,
    lq_recurrence,
    propagated_bounds,
    v_error_bound,
)

SQRT_2_OVER_PI = math.sqrt(2 / math.pi)


def constants(L_Q):
    # LipschitzConstants with a chosen L_Q for the error-bound checks
    from valbound.lipschitz import LipschitzConstants

    return LipschitzConstants(L_N=0.1, L_V=1.0, L_Q=L_Q, L_Delta=1.0, contraction=0.5)


def test_extrema_examples():
    assert extrema_bounds([2.0], 1.0, 3.0) == (5.0, -1.0)
    assert extrema_bounds([1.0, 4.0], 1.0, 3.0) == (4.0, 1.0)
    pts = [SamplePoint((0.1,), (0.2,), 1.0), SamplePoint(0.3, 0.4, 4.0)]
    assert extrema_bounds(pts, 1.0, 3.0) == (4.0, 1.0)
    with pytest.raises(ValueError, match="empty"):
        extrema_bounds([], 1.0, 1.0)
    with pytest.raises(ValueError):
        extrema_bounds([1.0], 0.0, 1.0)
    with pytest.raises(ValueError, match="finite"):
        SamplePoint(0.0, 0.0, math.nan)


def test_extrema_random_lipschitz_functions(rng):
    # piecewise-linear 1-Lipschitz functions on [0, 2] x [0, 1] (1-metric, D = 3)
    xs, ys = np.linspace(0, 2, 81), np.linspace(0, 1, 41)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    for _ in range(100):
        centers = rng.uniform([0, 0], [2, 1], size=(4, 2))
        signs = rng.choice([-1.0, 1.0], size=4)
        offs = rng.normal(size=4)
        f = np.max([s * (np.abs(X - c[0]) + np.abs(Y - c[1])) + o for c, s, o in zip(centers, signs, offs)], axis=0)
        idx = rng.choice(f.size, size=int(rng.integers(1, 30)), replace=False)
        sup_upper, inf_lower = extrema_bounds(f.ravel()[idx], 1.0, 3.0)
        assert f.max() <= sup_upper + 1e-12 and f.min() >= inf_lower - 1e-12


def test_density_constant():
    assert gaussian_density_constant(1.0) == pytest.approx(0.2420, abs=1e-4)
    assert gaussian_density_constant(1.0) == pytest.approx((2 * math.pi * math.e) ** -0.5, rel=1e-15)


def test_constants_closed_form():
    spec = LipschitzSpec(1.0, 0.5, 1.0, 1.0, 1.0)
    c = lipschitz_constants(spec, 0.5, 1.0)
    L_N = (2 * math.pi * math.e) ** -0.5
    assert c.L_N == pytest.approx(L_N, rel=1e-15)
    assert c.L_Q == pytest.approx(1.25 / (1 - 0.25 * (1 + L_N)), rel=1e-14)
    assert c.L_V == pytest.approx(c.L_Q * (1 + L_N) + 1.0, rel=1e-14)
    assert c.L_Delta == max(1.0, c.L_Q, 0.25 * c.L_V)


@given(
    st.floats(0.1, 5.0), st.floats(0.05, 1.0), st.floats(0.3, 3.0), st.floats(0.1, 0.95), st.floats(0.1, 10.0)
)
def test_recurrence_matches_closed_form(L_r, L_p, sigma_min, gamma, beta):
    spec = LipschitzSpec(L_r, L_p, 1.0, 1.0, sigma_min)
    try:
        c = lipschitz_constants(spec, gamma, beta)
    except InfeasibleError:
        assert gamma * L_p * (1 + gaussian_density_constant(sigma_min)) >= 1
        return
    if c.contraction > 0.95:
        return  # 1000 steps are not enough to settle
    assert lq_recurrence(spec, gamma, beta, 1000) == pytest.approx(c.L_Q, rel=1e-10, abs=1e-10)


def test_infeasible_raises():
    with pytest.raises(InfeasibleError, match="gamma"):
        lipschitz_constants(LipschitzSpec(1.0, 2.0, 1.0, 1.0, 0.5), 0.9, 1.0)


def test_spec_validation_and_diameter():
    assert LipschitzSpec(1.0, 1.0, 2.0, 3.0, 1.0).diameter == 5.0
    assert LipschitzSpec(1.0, 1.0, 3.0, 4.0, 1.0, p_norm=2).diameter == pytest.approx(5.0)
    with pytest.raises(ValueError):
        LipschitzSpec(0.0, 1.0, 1.0, 1.0, 1.0)


def test_v_estimate_examples():
    assert gaussian_v_estimate(0.0, 1.0, 1.0) == pytest.approx(0.5 * math.log(2 * math.pi) + 0.5, abs=1e-15)
    assert gaussian_v_estimate(0.0, 1.0, 1.0) == pytest.approx(1.4189, abs=1e-4)
    assert gaussian_v_estimate(2.0, 0.5, 4.0, log_prior_density=-math.log(6)) == pytest.approx(
        2.0 + (0.5 * math.log(2 * math.pi * 0.25) + 0.5 - math.log(6)) / 4.0
    )
    with pytest.raises(ValueError):
        gaussian_v_estimate(0.0, 0.0, 1.0)


def test_v_estimate_monte_carlo():
    # Q(s, a) = a, mu = 0, sigma = 1, beta = 1: E[Q - log pi] is the entropy
    a = np.random.default_rng(7).normal(size=10**6)
    samples = a - (-0.5 * a**2 - 0.5 * math.log(2 * math.pi))
    mean, se = samples.mean(), samples.std(ddof=1) / math.sqrt(a.size)
    assert abs(gaussian_v_estimate(0.0, 1.0, 1.0) - mean) <= 3 * se


def test_v_error_bound_examples():
    c = constants(1.0)
    assert v_error_bound(c, 0.0, 1.0, 0.0, PAPER) == pytest.approx(SQRT_2_OVER_PI)
    assert v_error_bound(c, 0.0, 1.0, 0.0, CORRECTED) == pytest.approx(SQRT_2_OVER_PI)
    assert v_error_bound(c, 0.5, 1e-12, 0.3) == pytest.approx(0.3)
    assert v_error_bound(c, 0.5, 1e-12, 0.3, PAPER) == pytest.approx(0.3)
    with pytest.raises(ValueError, match="variant"):
        v_error_bound(c, 0.0, 1.0, 0.0, "other")


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(-3.0, 3.0), st.floats(1.0, 3.0))
def test_v_error_bound_monotone(s1, s2, mu, scale):
    lo, hi = sorted((s1, s2))
    c = constants(1.0)
    assert v_error_bound(c, mu, lo, 0.0) <= v_error_bound(c, mu, hi, 0.0)
    for variant in (PAPER, CORRECTED):
        assert v_error_bound(c, mu, lo, 0.0, variant) <= v_error_bound(constants(scale), mu, lo, 0.0, variant)


def test_corrected_bound_monte_carlo(rng):
    # Q(s, a) = |a - c| is 1-Lipschitz; the one-point estimate uses Q(mu)
    c = constants(1.0)
    paper_violations = 0
    for _ in range(100):
        mu, sigma, kink = rng.uniform(-3, 3), rng.uniform(0.1, 2.0), rng.uniform(-3, 3)
        a = rng.normal(mu, sigma, size=200_000)
        vals = np.abs(a - kink)
        err = abs(vals.mean() - abs(mu - kink))
        slack = 3 * vals.std() / math.sqrt(a.size)
        assert err <= v_error_bound(c, mu, sigma, 0.0, CORRECTED) + slack
        paper_violations += err > v_error_bound(c, mu, sigma, 0.0, PAPER) + slack
    print(f"paper-variant V-error bound exceeded in {paper_violations}/100 Monte-Carlo cases")


def test_paper_variant_violated_off_centre(rng):
    # Q(a) = |a - mu| shifts the kink onto the mean: error = sigma sqrt(2/pi) for any mu
    mu, sigma = 2.0, 1.0
    a = rng.normal(mu, sigma, size=10**6)
    err = np.abs(a - mu).mean()
    c = constants(1.0)
    assert err > v_error_bound(c, mu, sigma, 0.0, PAPER) + 0.1
    assert err <= v_error_bound(c, mu, sigma, 0.0, CORRECTED) + 0.01


def test_delta_error_bound_examples(rng):
    eps = 0.3
    prof = ErrorProfile(A=np.full(4, eps), variant=CORRECTED)
    dist = rng.dirichlet(np.ones(4))
    assert delta_error_bound(0.9, prof, dist) == pytest.approx(0.9 * eps)
    A = rng.uniform(0, 1, size=4)
    prof = ErrorProfile(A=A, variant=CORRECTED)
    assert delta_error_bound(0.9, prof, np.eye(4)[2]) == pytest.approx(0.9 * A[2])
    rows = rng.dirichlet(np.ones(4), size=3)
    expect = [0.9 * sum(r[i] * A[i] for i in range(4)) for r in rows]
    assert np.allclose(delta_error_bound(0.9, prof, rows), expect)
    with pytest.raises(ValueError, match="states"):
        delta_error_bound(0.9, prof, np.ones(3) / 3)


def test_policy_field_validation():
    with pytest.raises(ValueError):
        GaussianPolicyField(np.zeros(3), 0.1, sigma_min=0.5)
    with pytest.raises(ValueError):
        GaussianPolicyField(np.zeros(3), 1.0, epsilon=-1.0)


def test_propagated_reduces_to_exact_bounds(rng):
    # zero error terms, spread equal to the residual range, dataset = full table
    from valbound.bounds import standard_bounds, delta_standard
    from valbound.envs import random_mdp

    m = random_mdp(rng, 6, 3, 0.9)
    v = rng.normal(size=6)
    d = delta_standard(m, v).delta
    spec = LipschitzSpec(1.0, 0.1, 1.0, 1.0, 1.0)
    c = lipschitz_constants(spec, 0.9, 1.0)
    diameter = (d.max() - d.min()) / c.L_Delta
    prof = ErrorProfile(A=np.zeros(6), variant=CORRECTED)
    succ = m.transition.reshape(-1, 6)
    lo, up = propagated_bounds(m.reward.ravel(), succ, v, prof, d.ravel(), succ, c, diameter, 0.9)
    exact = standard_bounds(m, v)
    assert np.allclose(lo.reshape(m.shape), exact.lower, atol=1e-12)
    assert np.allclose(up.reshape(m.shape), exact.upper, atol=1e-12)


def test_propagated_single_point():
    from valbound.lipschitz import LipschitzConstants

    c = LipschitzConstants(L_N=0.1, L_V=1.0, L_Q=1.0, L_Delta=1.0, contraction=0.5)
    prof = ErrorProfile(A=np.zeros(1), variant=CORRECTED)
    lo, up = propagated_bounds([1.0], np.ones((1, 1)), np.array([2.0]), prof, [0.5], np.ones((1, 1)), c, 0.0, 0.5)
    assert lo[0] == up[0] == pytest.approx(1.0 + 0.5 * 2.0 + 0.5 * 2.0 * 0.5)


def test_propagated_errors():
    from valbound.lipschitz import LipschitzConstants

    bad = LipschitzConstants(L_N=1.0, L_V=1.0, L_Q=1.0, L_Delta=1.0, contraction=1.2)
    good = LipschitzConstants(L_N=0.1, L_V=1.0, L_Q=1.0, L_Delta=1.0, contraction=0.5)
    prof = ErrorProfile(A=np.zeros(1), variant=CORRECTED)
    args = ([1.0], np.ones((1, 1)), np.array([2.0]), prof)
    with pytest.raises(InfeasibleError):
        propagated_bounds(*args, [0.5], np.ones((1, 1)), bad, 1.0, 0.5)
    with pytest.raises(ValueError, match="empty"):
        propagated_bounds(*args, [], np.ones((0, 1)), good, 1.0, 0.5)


@pytest.fixture(scope="module")
def toy_run():
    toy = Toy1D()
    q_star = toy.q_star()
    w = np.exp(toy.beta * (q_star - q_star.max(axis=1, keepdims=True)))
    mu = np.clip((w / w.sum(axis=1, keepdims=True)) @ toy.a, -1.5, 1.5)
    sigma = 0.5
    q_pi = toy.policy_q(mu, sigma)
    spec = LipschitzSpec(L_r=1.0, L_p=0.5, diameter_state=1.0, diameter_action=6.0, sigma_min=0.5)
    c = lipschitz_constants(spec, toy.gamma, toy.beta)
    policy = GaussianPolicyField(mu, np.full_like(mu, sigma), 0.0, sigma_min=0.5)
    prof = error_profile(c, policy, CORRECTED)
    v_bar = gaussian_v_estimate(toy.interp_actions(q_pi, mu), policy.sigma, toy.beta, -math.log(6.0))
    S, A = toy.shape
    idx = np.random.default_rng(3).choice(S * A, size=300, replace=False)
    W_data = toy.W[idx]
    d_bar = toy.r.ravel()[idx] + toy.gamma * (W_data @ v_bar) - q_pi.ravel()[idx]
    lo, up = propagated_bounds(toy.r.ravel(), toy.W, v_bar, prof, d_bar, W_data, c, spec.diameter, toy.gamma)
    return toy, q_star, q_pi, lo.reshape(S, A), up.reshape(S, A)


def test_toy_propagated_contains_q_star(toy_run):
    _, q_star, _, lo, up = toy_run
    assert np.all(lo <= q_star) and np.all(q_star <= up)


def test_toy_propagated_looser_than_exact(toy_run):
    toy, _, q_pi, lo, up = toy_run
    exact_lo, exact_up = toy.exact_bounds(q_pi)
    assert np.all(up >= exact_up) and np.all(lo <= exact_lo)
