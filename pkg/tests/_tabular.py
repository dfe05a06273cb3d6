"""Tiny stochastic-horizon tabular MDP with exact enumeration.

Used to validate the policy-gradient estimators against brute-force
truth: two live states, two actions, at most three steps, and a per-step
termination ("default") probability so the horizon is random. Rewards
are deterministic given (state, action, terminated), which keeps the
exact enumeration of every trajectory cheap while still exercising the
stochastic-horizon corrections in the estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cvahedge.book_env import TrajectoryBatch
from cvahedge.market_sim import coefficients_for


@dataclass
class TabularMdp:
    horizon: int = 3
    # transition[s, a] = distribution over next live states
    transition: np.ndarray = field(default_factory=lambda: np.array(
        [[[0.7, 0.3], [0.4, 0.6]],
         [[0.2, 0.8], [0.6, 0.4]]]))
    # default_prob[s, a] = chance the episode terminates after this step
    default_prob: np.ndarray = field(default_factory=lambda: np.array(
        [[0.05, 0.15], [0.10, 0.25]]))
    # reward[s, a], plus default_reward when the step terminates by default
    reward: np.ndarray = field(default_factory=lambda: np.array(
        [[1.0, -0.5], [0.3, 1.5]]))
    default_reward: float = -0.8

    @property
    def n_states(self) -> int:
        return 2

    @property
    def n_actions(self) -> int:
        return 2


THETA0 = np.array([[0.2, -0.1], [0.3, 0.5]])


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TabularPolicy:
    """Row-softmax policy over the tabular MDP, with the same gradient
    interface the trust-region estimators use for the network policy."""

    def __init__(self, theta: np.ndarray):
        self.theta = np.asarray(theta, dtype=float).copy()

    def get_flat(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def set_flat(self, flat: np.ndarray) -> None:
        self.theta = flat.reshape(self.theta.shape).copy()

    def probs(self) -> np.ndarray:
        return softmax_rows(self.theta)

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        s = states[:, 0].astype(int)
        a = actions[:, 0].astype(int)
        logp = np.log(self.probs())
        return logp[s, a]

    def weighted_logp_grad(self, states: np.ndarray, actions: np.ndarray,
                           step_weights: np.ndarray) -> np.ndarray:
        s = states[:, 0].astype(int)
        a = actions[:, 0].astype(int)
        pi = self.probs()[s]
        grad = np.zeros_like(self.theta)
        np.add.at(grad, (s, a), step_weights)
        np.add.at(grad, s, -step_weights[:, None] * pi)
        return grad.ravel()


def enumerate_trajectories(mdp: TabularMdp, theta: np.ndarray,
                           start_state: int = 0):
    """All (probability, rewards) pairs of the MDP under softmax(theta)."""
    pi = softmax_rows(theta)
    out = []

    def walk(s, depth, prob, rewards):
        for a in range(mdp.n_actions):
            p_a = prob * pi[s, a]
            r = mdp.reward[s, a]
            d = mdp.default_prob[s, a]
            out.append((p_a * d, rewards + [r + mdp.default_reward]))
            p_live = p_a * (1.0 - d)
            if depth + 1 == mdp.horizon:
                out.append((p_live, rewards + [r]))
            else:
                for s2 in range(mdp.n_states):
                    walk(s2, depth + 1, p_live * mdp.transition[s, a, s2],
                         rewards + [r])

    walk(start_state, 0, 1.0, [])
    return out


def exact_moments(mdp: TabularMdp, theta: np.ndarray, gamma: float) -> dict:
    """Exact J_hat, E[Gamma], normalized J, and nu2 under softmax(theta)."""
    trajs = enumerate_trajectories(mdp, theta)
    probs = np.array([p for p, _ in trajs])
    assert abs(probs.sum() - 1.0) < 1e-12
    j_hat = gamma_bar = 0.0
    for p, rewards in trajs:
        disc = gamma ** np.arange(len(rewards))
        j_hat += p * float(disc @ rewards)
        gamma_bar += p * float(disc.sum())
    j_norm = j_hat / gamma_bar
    nu2 = 0.0
    for p, rewards in trajs:
        disc = gamma ** np.arange(len(rewards))
        nu2 += p * float(disc @ (np.asarray(rewards) - j_norm) ** 2)
    return {"j_hat": j_hat, "gamma_bar": gamma_bar, "j_norm": j_norm,
            "nu2": nu2}


def exact_gradients(mdp: TabularMdp, theta: np.ndarray, gamma: float,
                    step: float = 1e-5) -> dict:
    """Central finite differences of the exact J_hat and nu2 in theta.

    nu2 is differentiated as a whole, including the dependence of the
    normalized mean on theta; the score-function estimator with the
    ratio-normalized mean must match this."""
    grad_j = np.zeros(theta.size)
    grad_nu2 = np.zeros(theta.size)
    for k in range(theta.size):
        bump = np.zeros(theta.size)
        bump[k] = step
        up = exact_moments(mdp, theta + bump.reshape(theta.shape), gamma)
        dn = exact_moments(mdp, theta - bump.reshape(theta.shape), gamma)
        grad_j[k] = (up["j_hat"] - dn["j_hat"]) / (2 * step)
        grad_nu2[k] = (up["nu2"] - dn["nu2"]) / (2 * step)
    return {"grad_j": grad_j, "grad_nu2": grad_nu2}


def sample_batch(mdp: TabularMdp, policy: TabularPolicy, n_episodes: int,
                 rng: np.random.Generator) -> TrajectoryBatch:
    """Vectorized rollout of n_episodes, packaged as a TrajectoryBatch."""
    n, h = n_episodes, mdp.horizon
    pi = policy.probs()
    states = np.zeros((n, h, 1))
    actions = np.zeros((n, h, 1))
    rewards = np.zeros((n, h))
    lengths = np.full(n, h, dtype=int)
    s = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    ever_defaulted = np.zeros(n, dtype=bool)
    for i in range(h):
        a = (rng.random(n) > pi[s, 0]).astype(int)
        dies = rng.random(n) < mdp.default_prob[s, a]
        r = mdp.reward[s, a] + np.where(dies, mdp.default_reward, 0.0)
        states[alive, i, 0] = s[alive]
        actions[alive, i, 0] = a[alive]
        rewards[alive, i] = r[alive]
        newly = alive & dies
        lengths[newly] = i + 1
        ever_defaulted |= newly
        alive &= ~dies
        s = (rng.random(n) > mdp.transition[s, a, 0]).astype(int)
    weights = np.ones(n)
    return TrajectoryBatch(
        states=states, actions=actions, rewards=rewards, lengths=lengths,
        weights=weights, coefs=coefficients_for("naive", weights,
                                                ever_defaulted),
        defaulted=ever_defaulted, book_values=np.zeros((n, h + 1)))


def pooled_gradients(mdp: TabularMdp, policy: TabularPolicy,
                     n_episodes: int, gamma: float, seed: int,
                     j_ref: float, chunk: int = 250_000) -> dict:
    """Monte Carlo grad J / grad nu2 pooled over many episodes.

    Baselines are disabled and the exact normalized mean is injected so
    the comparison against the enumerated gradient is noise-limited only.
    """
    from cvahedge.trvo import (estimate_stats, mean_gradient,
                               volatility_gradient)
    rng = np.random.default_rng(seed)
    grad_j = np.zeros(policy.theta.size)
    grad_nu2 = np.zeros(policy.theta.size)
    done = 0
    while done < n_episodes:
        size = min(chunk, n_episodes - done)
        batch = sample_batch(mdp, policy, size, rng)
        stats = estimate_stats(batch, gamma, beta=0.0, j_ref=j_ref)
        grad_j += size * mean_gradient(batch, stats, policy,
                                       use_baselines=False)
        grad_nu2 += size * volatility_gradient(batch, stats, policy,
                                               use_baselines=False)
        done += size
    return {"grad_j": grad_j / done, "grad_nu2": grad_nu2 / done}
