"""Risk-averse policy-gradient estimators, trust region, train/evaluate."""

import dataclasses

import numpy as np
import pytest

from _tabular import (THETA0, TabularMdp, TabularPolicy, exact_gradients,
                      exact_moments, pooled_gradients, sample_batch)
from cvahedge.book_env import BookEnv, TrajectoryBatch, zero_policy
from cvahedge.errors import InconsistentInputError, StateError
from cvahedge.market_sim import MarketParams, build_batch, build_grid
from cvahedge.pricing import CdsSpec
from cvahedge.trvo import (TrvoConfig, config_from_dict, estimate_stats,
                           evaluate, initial_policy, mean_gradient,
                           step_tables, train, trust_region_update,
                           volatility_gradient)


def make_batch(reward_lists, coefs=None, weights=None, defaulted=None):
    """Hand-built trajectory batch with zero states/actions."""
    b = len(reward_lists)
    n = max(len(r) for r in reward_lists)
    rewards = np.zeros((b, n))
    lengths = np.zeros(b, dtype=int)
    for e, r in enumerate(reward_lists):
        rewards[e, :len(r)] = r
        lengths[e] = len(r)
    weights = np.ones(b) if weights is None else np.asarray(weights, float)
    coefs = np.full(b, 1.0 / b) if coefs is None else np.asarray(coefs, float)
    defaulted = (np.zeros(b, dtype=bool) if defaulted is None
                 else np.asarray(defaulted, dtype=bool))
    return TrajectoryBatch(states=np.zeros((b, n, 1)),
                           actions=np.zeros((b, n, 1)), rewards=rewards,
                           lengths=lengths, weights=weights, coefs=coefs,
                           defaulted=defaulted,
                           book_values=np.zeros((b, n + 1)))


@pytest.fixture(scope="module")
def env():
    return BookEnv(MarketParams(), build_grid(12, 5),
                   (CdsSpec(maturity=1.0, coupon=0.0103),))


@pytest.fixture(scope="module")
def hot_env():
    """Environment with a default probability around 1% per episode."""
    params = dataclasses.replace(MarketParams(), m_bar=1.0, lambda0=0.30,
                                 theta_p=0.30, theta_q=0.30)
    return BookEnv(params, build_grid(12, 5),
                   (CdsSpec(maturity=1.0, coupon=0.0103),))


# ----------------------------------------------------------- batch statistics

def test_stats_single_episode_undiscounted():
    stats = estimate_stats(make_batch([[1.0, 1.0, 1.0]]), gamma=1.0, beta=0.5)
    assert stats.j_hat == pytest.approx(3.0)
    assert stats.gamma_bar == pytest.approx(3.0)
    assert stats.j_norm == pytest.approx(1.0)
    assert stats.nu2_hat == pytest.approx(0.0, abs=1e-15)
    assert stats.sigma2_hat == pytest.approx(0.0, abs=1e-15)
    assert stats.eta_hat == pytest.approx(3.0)
    np.testing.assert_allclose(stats.q_hat[0], [3.0, 2.0, 1.0])
    np.testing.assert_allclose(stats.x_hat[0], 0.0, atol=1e-15)


def test_discounted_horizon_of_three_steps():
    stats = estimate_stats(make_batch([[1.0, 1.0, 1.0]]), gamma=0.95, beta=0.0)
    assert stats.gammas[0] == pytest.approx(2.8525, abs=1e-12)


def test_two_episode_hand_computation():
    gamma, beta = 0.9, 2.0
    stats = estimate_stats(make_batch([[1.0, 0.0], [2.0, 1.0, 0.0]]),
                           gamma=gamma, beta=beta)
    g = np.array([1.0, 2.0 + 0.9])
    gam = np.array([1.9, 2.71])
    j_hat = g.mean()
    j = j_hat / gam.mean()
    nu2 = 0.5 * ((1 - j) ** 2 + 0.9 * j ** 2
                 + (2 - j) ** 2 + 0.9 * (1 - j) ** 2 + 0.81 * j ** 2)
    assert stats.j_hat == pytest.approx(j_hat, rel=1e-14)
    assert stats.j_norm == pytest.approx(j, rel=1e-14)
    assert stats.nu2_hat == pytest.approx(nu2, rel=1e-13)
    assert stats.sigma2_hat == pytest.approx(
        0.5 * ((1 - j_hat) ** 2 + (2.9 - j_hat) ** 2), rel=1e-13)
    assert stats.eta_hat == pytest.approx(j_hat - beta * nu2, rel=1e-13)
    np.testing.assert_allclose(stats.q_hat[0, :2], [1.0, 0.0])
    np.testing.assert_allclose(stats.q_hat[1], [2.9, 1.0, 0.0])


def test_to_go_values_and_padding():
    rng = np.random.default_rng(0)
    batch = make_batch([list(rng.normal(size=4)), list(rng.normal(size=2))])
    stats = estimate_stats(batch, gamma=0.9, beta=1.0)
    np.testing.assert_allclose(stats.q_hat[:, 0], stats.returns, rtol=1e-13)
    # recursion q_i = r_i + gamma q_{i+1} on the long episode
    r = batch.rewards[0]
    for i in range(3):
        assert stats.q_hat[0, i] == pytest.approx(
            r[i] + 0.9 * stats.q_hat[0, i + 1], rel=1e-12)
    # padded region stays zero for the short episode
    assert stats.q_hat[1, 2] == 0.0
    assert stats.x_hat[1, 2] == 0.0
    resid = batch.rewards[1, :2] - stats.j_norm
    assert stats.x_hat[1, 0] == pytest.approx(
        resid[0] ** 2 + 0.9 * resid[1] ** 2, rel=1e-12)


def test_weighted_batch_statistics():
    w = np.array([0.9, 0.9, 0.08, 0.12])
    defaulted = np.array([False, False, True, True])
    coefs = w / 2              # both groups have two episodes
    batch = make_batch([[1.0], [2.0], [-3.0], [-1.0, -1.0]],
                       coefs=coefs, weights=w, defaulted=defaulted)
    stats = estimate_stats(batch, gamma=1.0, beta=0.0)
    g = np.array([1.0, 2.0, -3.0, -2.0])
    assert stats.j_hat == pytest.approx(float(coefs @ g), rel=1e-14)
    gam = np.array([1.0, 1.0, 1.0, 2.0])
    assert stats.gamma_bar == pytest.approx(float(coefs @ gam), rel=1e-14)


def test_j_ref_override():
    batch = make_batch([[1.0, 2.0], [0.0, 1.0]])
    stats = estimate_stats(batch, gamma=1.0, beta=0.0, j_ref=0.0)
    assert stats.j_norm == 0.0
    assert stats.nu2_hat == pytest.approx(0.5 * (1 + 4 + 0 + 1), rel=1e-14)


def test_estimate_stats_validation():
    batch = make_batch([[1.0]])
    with pytest.raises(InconsistentInputError):
        estimate_stats(batch, gamma=0.0, beta=0.0)
    with pytest.raises(InconsistentInputError):
        estimate_stats(batch, gamma=1.2, beta=0.0)
    with pytest.raises(InconsistentInputError):
        estimate_stats(batch, gamma=0.9, beta=-1.0)
    empty = TrajectoryBatch(states=np.zeros((0, 1, 1)),
                            actions=np.zeros((0, 1, 1)),
                            rewards=np.zeros((0, 1)),
                            lengths=np.zeros(0, dtype=int),
                            weights=np.zeros(0), coefs=np.zeros(0),
                            defaulted=np.zeros(0, dtype=bool),
                            book_values=np.zeros((0, 2)))
    with pytest.raises(InconsistentInputError):
        estimate_stats(empty, gamma=0.9, beta=0.0)


# ------------------------------------------------------- gradient estimators

def test_tabular_policy_logp_grad_matches_fd():
    policy = TabularPolicy(THETA0)
    rng = np.random.default_rng(4)
    states = rng.integers(0, 2, size=(30, 1)).astype(float)
    actions = rng.integers(0, 2, size=(30, 1)).astype(float)
    w = rng.normal(size=30)
    grad = policy.weighted_logp_grad(states, actions, w)
    theta0 = policy.get_flat()
    fd = np.empty(4)
    h = 1e-6
    for k in range(4):
        for sign in (1, -1):
            theta = theta0.copy()
            theta[k] += sign * h
            policy.set_flat(theta)
            val = float(w @ policy.log_prob(states, actions))
            if sign == 1:
                up = val
        fd[k] = (up - val) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)


def test_gradients_match_enumerated_truth():
    """Score-function grad J and grad nu2 agree with finite differences of
    the exactly enumerated objectives on the tabular MDP."""
    mdp = TabularMdp()
    gamma = 0.9
    policy = TabularPolicy(THETA0)
    exact = exact_moments(mdp, THETA0, gamma)
    truth = exact_gradients(mdp, THETA0, gamma)
    est = pooled_gradients(mdp, policy, n_episodes=400_000, gamma=gamma,
                           seed=123, j_ref=exact["j_norm"])
    scale_j = np.max(np.abs(truth["grad_j"]))
    scale_nu = np.max(np.abs(truth["grad_nu2"]))
    np.testing.assert_allclose(est["grad_j"], truth["grad_j"],
                               atol=0.02 * scale_j)
    np.testing.assert_allclose(est["grad_nu2"], truth["grad_nu2"],
                               atol=0.02 * scale_nu)


def test_volatility_gradient_with_estimated_mean_and_baselines():
    """The default path (batch-estimated normalized mean, linear baselines)
    stays consistent with the enumerated gradient."""
    mdp = TabularMdp()
    gamma = 0.9
    policy = TabularPolicy(THETA0)
    policy.normalizer = lambda x: x      # baselines standardize via this
    truth = exact_gradients(mdp, THETA0, gamma)
    rng = np.random.default_rng(77)
    grad_j = np.zeros(4)
    grad_nu2 = np.zeros(4)
    n_batches = 40
    for _ in range(n_batches):
        batch = sample_batch(mdp, policy, 10_000, rng)
        stats = estimate_stats(batch, gamma, beta=0.0)
        tables = step_tables(batch, stats, policy, use_baselines=True)
        grad_j += mean_gradient(batch, stats, policy, tables=tables)
        grad_nu2 += volatility_gradient(batch, stats, policy, tables=tables)
    grad_j /= n_batches
    grad_nu2 /= n_batches
    np.testing.assert_allclose(grad_j, truth["grad_j"],
                               atol=0.03 * np.max(np.abs(truth["grad_j"])))
    np.testing.assert_allclose(grad_nu2, truth["grad_nu2"],
                               atol=0.03 * np.max(np.abs(truth["grad_nu2"])))


def test_reward_scaling_moves_gradients_quadratically():
    mdp = TabularMdp()
    policy = TabularPolicy(THETA0)
    rng = np.random.default_rng(9)
    batch = sample_batch(mdp, policy, 2_000, rng)
    scaled = dataclasses.replace(batch, rewards=3.0 * batch.rewards)
    s1 = estimate_stats(batch, 0.9, beta=0.0)
    s3 = estimate_stats(scaled, 0.9, beta=0.0)
    assert s3.j_hat == pytest.approx(3.0 * s1.j_hat, rel=1e-12)
    assert s3.nu2_hat == pytest.approx(9.0 * s1.nu2_hat, rel=1e-12)
    g1 = volatility_gradient(batch, s1, policy, use_baselines=False)
    g3 = volatility_gradient(scaled, s3, policy, use_baselines=False)
    np.testing.assert_allclose(g3, 9.0 * g1, rtol=1e-11)
    m1 = mean_gradient(batch, s1, policy, use_baselines=False)
    m3 = mean_gradient(scaled, s3, policy, use_baselines=False)
    np.testing.assert_allclose(m3, 3.0 * m1, rtol=1e-11)


# ------------------------------------------------------------- trust region

def test_zero_gradient_leaves_parameters_unchanged(env):
    config = TrvoConfig(n_episodes=8, iterations=1, seed=0)
    policy = initial_policy(env, config)
    paths = build_batch(env.params, env.grid, 8, seed=0)
    traj = env.run_batch(policy.as_sampler(np.random.default_rng(0)), paths)
    stats = estimate_stats(traj, 0.95, beta=0.0)
    theta0 = policy.get_flat()
    info = trust_region_update(policy, np.zeros_like(theta0), traj, stats)
    assert not info["accepted"]
    np.testing.assert_array_equal(policy.get_flat(), theta0)
    with pytest.raises(StateError):
        trust_region_update(policy, np.full_like(theta0, np.nan), traj, stats)


def test_trust_region_step_respects_kl_and_improves(env):
    config = TrvoConfig(beta=100.0, n_episodes=64, iterations=1, seed=1)
    policy = initial_policy(env, config)
    paths = build_batch(env.params, env.grid, 64, seed=1)
    traj = env.run_batch(policy.as_sampler(np.random.default_rng(1)), paths)
    stats = estimate_stats(traj, 0.95, beta=config.beta)
    tables = step_tables(traj, stats, policy, use_baselines=True)
    grad = (mean_gradient(traj, stats, policy, tables=tables)
            - config.beta * volatility_gradient(traj, stats, policy,
                                                tables=tables))
    theta0 = policy.get_flat()
    info = trust_region_update(policy, grad, traj, stats, kl_limit=0.01,
                               tables=tables)
    assert info["accepted"]
    assert 0.0 < info["kl"] <= 0.01 + 1e-12
    assert info["improve"] > 0.0
    assert np.any(policy.get_flat() != theta0)


# ------------------------------------------------------------ train/evaluate

def test_train_is_deterministic_and_logs(env):
    config = TrvoConfig(beta=10.0, gamma=0.95, n_episodes=24, iterations=3,
                        seed=5, freeze_normalizer_after=2)
    p1, curve1 = train(env, config)
    p2, curve2 = train(env, config)
    np.testing.assert_array_equal(p1.get_flat(), p2.get_flat())
    assert curve1 == curve2
    assert [row["iteration"] for row in curve1] == [0, 1, 2]
    for row in curve1:
        assert set(row) == {"iteration", "neg_eta", "j_hat", "nu2_hat",
                            "kl", "step_frac"}
        assert np.isfinite(row["neg_eta"])
        assert row["kl"] <= config.kl_limit + 1e-12
    p3, _ = train(env, dataclasses.replace(config, seed=6))
    assert np.any(p3.get_flat() != p1.get_flat())
    assert p1.normalizer.frozen


def test_train_importance_sampling_mode(hot_env):
    config = TrvoConfig(beta=50.0, n_episodes=16, iterations=2, seed=2,
                        mode="is", b0=3, freeze_normalizer_after=1)
    policy, curve = train(hot_env, config)
    assert len(curve) == 2
    assert all(np.isfinite(row["neg_eta"]) for row in curve)


def test_config_validation():
    with pytest.raises(InconsistentInputError):
        TrvoConfig(mode="is", b0=0).validate()
    with pytest.raises(InconsistentInputError):
        TrvoConfig(mode="naive", b0=5).validate()
    with pytest.raises(InconsistentInputError):
        TrvoConfig(gamma=0.0).validate()
    with pytest.raises(InconsistentInputError):
        config_from_dict({"beta": 1.0, "bogus": 2})
    cfg = config_from_dict({"beta": 1.0, "gamma": 0.9})
    assert cfg.beta == 1.0 and cfg.gamma == 0.9


def test_evaluate_matches_estimate_stats(env):
    paths = build_batch(env.params, env.grid, 300, seed=11)
    traj = env.run_batch(zero_policy, paths)
    stats = estimate_stats(traj, gamma=1.0, beta=0.5)
    ev = evaluate(zero_policy, env, 300, seed=11, beta=0.5, gamma=1.0,
                  chunk_size=300)
    assert ev.j_hat == pytest.approx(stats.j_hat, rel=1e-12)
    assert ev.nu2_hat == pytest.approx(stats.nu2_hat, rel=1e-10)
    assert ev.sigma2_hat == pytest.approx(stats.sigma2_hat, rel=1e-10)
    assert ev.eta_hat == pytest.approx(stats.eta_hat, rel=1e-12)
    assert ev.gamma_bar == pytest.approx(stats.gamma_bar, rel=1e-14)


def test_evaluate_chunking_is_exact_for_naive(env):
    one = evaluate(zero_policy, env, 200, seed=3, beta=2.0, chunk_size=200)
    many = evaluate(zero_policy, env, 200, seed=3, beta=2.0, chunk_size=64)
    assert many.j_hat == pytest.approx(one.j_hat, rel=1e-13)
    assert many.nu2_hat == pytest.approx(one.nu2_hat, rel=1e-13)
    assert many.se_eta == pytest.approx(one.se_eta, rel=1e-13)
    np.testing.assert_array_equal(one.returns, many.returns)


def test_evaluate_importance_sampling_agrees_with_naive(hot_env):
    naive = evaluate(zero_policy, hot_env, 6000, seed=21, chunk_size=2000)
    rare = evaluate(zero_policy, hot_env, 3000, seed=22, mode="is", b0=300,
                    chunk_size=1500)
    se = np.hypot(naive.se_j, rare.se_j)
    assert abs(naive.j_hat - rare.j_hat) < 3 * se
    assert naive.default_fraction == pytest.approx(
        np.mean(naive.defaulted), rel=1e-14)
    assert 0.0 < rare.default_fraction < 0.1


def test_eta_contributions_average_to_eta(hot_env):
    ev = evaluate(zero_policy, hot_env, 500, seed=4, beta=3.0, mode="is",
                  b0=50, chunk_size=500)
    assert np.mean(ev.eta_contributions()) == pytest.approx(ev.eta_hat,
                                                            rel=1e-12)
    assert float(ev.coefs @ ev.nu2_terms()) == pytest.approx(ev.nu2_hat,
                                                             rel=1e-12)


def test_variance_bound_against_discounted_volatility(env):
    ev = evaluate(zero_policy, env, 2000, seed=6, gamma=0.95,
                  chunk_size=1000)
    assert ev.sigma2_hat <= np.max(ev.gammas) * ev.nu2_hat * 1.05


def test_evaluate_validation(env):
    with pytest.raises(InconsistentInputError):
        evaluate(zero_policy, env, 1, seed=0)
    with pytest.raises(InconsistentInputError):
        evaluate(zero_policy, env, 100, seed=0, mode="is", b0=99,
                 chunk_size=10)


def test_initial_policy_noise_scales(env):
    config = TrvoConfig(seed=0)
    policy = initial_policy(env, config)
    probe = build_batch(env.params, env.grid, 1, seed=0)
    _, features = env.reset(probe[0])
    expected = 0.1 * np.array([abs(features[6]), abs(features[7])])
    np.testing.assert_allclose(np.exp(policy.log_std), expected, rtol=1e-12)
    mean0 = policy.mean_action(features[None])[0]
    assert np.all(np.abs(mean0) < 10 * expected)
