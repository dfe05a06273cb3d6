"""Risk-averse policy gradients for stochastic-horizon hedging episodes.

The learning objective is eta = J - beta * nu2, where J is the expected
discounted reward sum over an episode, nu2 is the discounted per-step
reward volatility around the normalized mean reward, and beta >= 0 sets
the risk aversion. Both terms admit REINFORCE-style gradient estimators
from the same batch of trajectories; nu2 uses a per-step "volatility
advantage" X_hat (the discounted sum of squared residuals from step i
onward), which yields the exact gradient when the normalized mean J is
defined as J_hat divided by the mean discounted horizon E[Gamma].

Policy updates are natural-gradient trust-region steps: conjugate
gradients on the Fisher matrix, a KL-capped step size, and backtracking
on an importance-ratio surrogate of eta.

Estimators support both naive batches and rare-default importance
sampling: every statistic is a weighted sum with the per-episode
coefficients carried by the trajectory batch, so the same code path
serves both sampling modes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .book_env import BookEnv, TrajectoryBatch, zero_policy
from .errors import InconsistentInputError, StateError
from .market_sim import build_batch, coefficients_for
from .policy import GaussianPolicy

__all__ = [
    "BatchStats", "EvalStats", "TrvoConfig", "estimate_stats",
    "mean_gradient", "volatility_gradient", "trust_region_update",
    "train", "evaluate",
]


# --------------------------------------------------------------------------
# batch statistics
# --------------------------------------------------------------------------

@dataclass
class BatchStats:
    """Weighted estimates from one trajectory batch at fixed (gamma, beta)."""

    gamma: float
    beta: float
    j_hat: float            # E[sum_i gamma^(i-1) r_i]
    gamma_bar: float        # E[Gamma], mean discounted horizon
    j_norm: float           # j_hat / gamma_bar (or an injected reference)
    nu2_hat: float          # E[sum_i gamma^(i-1) (r_i - j_norm)^2]
    sigma2_hat: float       # E[(G - j_hat)^2], return variance
    eta_hat: float          # j_hat - beta * nu2_hat
    q_hat: np.ndarray       # (B, N) reward-to-go, zero beyond episode end
    x_hat: np.ndarray       # (B, N) squared-residual-to-go, zero beyond end
    returns: np.ndarray     # (B,) discounted episode returns G
    gammas: np.ndarray      # (B,) discounted horizons Gamma


def _discount_row(gamma: float, n_steps: int) -> np.ndarray:
    return gamma ** np.arange(n_steps)


def _reverse_cumsum(values: np.ndarray, gamma: float) -> np.ndarray:
    """out[:, i] = sum_{j >= i} gamma^(j-i) values[:, j]."""
    out = np.empty_like(values)
    acc = np.zeros(len(values))
    for i in range(values.shape[1] - 1, -1, -1):
        acc = values[:, i] + gamma * acc
        out[:, i] = acc
    return out


def estimate_stats(batch: TrajectoryBatch, gamma: float, beta: float,
                   j_ref: float | None = None) -> BatchStats:
    """Weighted risk/return statistics and per-step advantages for a batch.

    j_ref optionally overrides the normalized mean used in the volatility
    residuals (exact-reference tests); by default it is j_hat / E[Gamma],
    the choice for which the score-function volatility gradient is exact.
    """
    if len(batch) == 0:
        raise InconsistentInputError("empty trajectory batch")
    if not 0.0 < gamma <= 1.0:
        raise InconsistentInputError(f"gamma must be in (0, 1], got {gamma}")
    if not np.isfinite(beta) or beta < 0.0:
        raise InconsistentInputError(f"beta must be finite and >= 0: {beta}")

    mask = batch.step_mask
    rewards = np.where(mask, batch.rewards, 0.0)
    c = batch.coefs
    disc = _discount_row(gamma, rewards.shape[1])

    returns = rewards @ disc
    lengths = batch.lengths.astype(float)
    if gamma == 1.0:
        gammas = lengths
    else:
        gammas = (1.0 - gamma ** lengths) / (1.0 - gamma)

    j_hat = float(c @ returns)
    gamma_bar = float(c @ gammas)
    j_norm = j_hat / gamma_bar if j_ref is None else float(j_ref)

    sq = np.where(mask, (rewards - j_norm) ** 2, 0.0)
    nu2_hat = float(c @ (sq @ disc))
    sigma2_hat = float(c @ (returns - j_hat) ** 2)
    eta_hat = j_hat - beta * nu2_hat
    if not np.isfinite(eta_hat):
        raise StateError("non-finite batch statistics")

    q_hat = _reverse_cumsum(rewards, gamma)
    x_hat = _reverse_cumsum(sq, gamma)
    return BatchStats(gamma=gamma, beta=beta, j_hat=j_hat,
                      gamma_bar=gamma_bar, j_norm=j_norm, nu2_hat=nu2_hat,
                      sigma2_hat=sigma2_hat, eta_hat=eta_hat,
                      q_hat=q_hat * mask, x_hat=x_hat * mask,
                      returns=returns, gammas=gammas)


# --------------------------------------------------------------------------
# gradient estimators
# --------------------------------------------------------------------------

@dataclass
class StepTables:
    """Flattened per-step quantities shared by gradients and the surrogate."""

    states: np.ndarray       # (S, F)
    actions: np.ndarray      # (S, A)
    c_step: np.ndarray       # (S,) episode coefficient, uniform across steps
    disc: np.ndarray         # (S,) gamma^i at each step
    q_centered: np.ndarray   # (S,) Q_hat minus its state baseline
    x_centered: np.ndarray   # (S,) X_hat minus its state baseline

    @property
    def fisher_weights(self) -> np.ndarray:
        return self.c_step / self.c_step.sum()


def _linear_baseline(z: np.ndarray, y: np.ndarray,
                     w: np.ndarray) -> np.ndarray:
    """Weighted ridge fit of y on [1, z]; returns fitted values."""
    design = np.column_stack([np.ones(len(z)), z])
    wn = w / w.sum()
    a = design.T @ (wn[:, None] * design)
    a += 1e-10 * np.trace(a) / len(a) * np.eye(len(a))
    coef = np.linalg.solve(a, design.T @ (wn * y))
    return design @ coef


def step_tables(batch: TrajectoryBatch, stats: BatchStats,
                policy, use_baselines: bool = True) -> StepTables:
    mask = batch.step_mask
    n_steps = mask.shape[1]
    states = batch.states[mask]
    actions = batch.actions[mask]
    c_step = np.broadcast_to(batch.coefs[:, None], mask.shape)[mask]
    disc = np.broadcast_to(_discount_row(stats.gamma, n_steps),
                           mask.shape)[mask]
    q = stats.q_hat[mask]
    x = stats.x_hat[mask]
    if use_baselines:
        z = policy.normalizer(states)
        q = q - _linear_baseline(z, q, c_step)
        x = x - _linear_baseline(z, x, c_step)
    return StepTables(states=states, actions=actions, c_step=c_step,
                      disc=disc, q_centered=q, x_centered=x)


def mean_gradient(batch: TrajectoryBatch, stats: BatchStats, policy,
                  use_baselines: bool = True,
                  tables: StepTables | None = None) -> np.ndarray:
    """Score-function estimate of grad J (flat parameter vector)."""
    t = tables or step_tables(batch, stats, policy, use_baselines)
    return policy.weighted_logp_grad(
        t.states, t.actions, t.c_step * t.disc * t.q_centered)


def volatility_gradient(batch: TrajectoryBatch, stats: BatchStats, policy,
                        use_baselines: bool = True,
                        tables: StepTables | None = None) -> np.ndarray:
    """Score-function estimate of grad nu2 via squared-residual-to-go."""
    t = tables or step_tables(batch, stats, policy, use_baselines)
    return policy.weighted_logp_grad(
        t.states, t.actions, t.c_step * t.disc * t.x_centered)


# --------------------------------------------------------------------------
# trust-region step
# --------------------------------------------------------------------------

def _conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray],
                        b: np.ndarray, iters: int) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    if rs == 0.0:
        return x
    for _ in range(iters):
        ap = matvec(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if rs_new < 1e-12 * rs:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def trust_region_update(policy, grad_eta: np.ndarray,
                        batch: TrajectoryBatch, stats: BatchStats,
                        kl_limit: float = 0.01, *,
                        use_baselines: bool = True,
                        tables: StepTables | None = None,
                        damping: float = 0.1, cg_iters: int = 15,
                        backtracks: int = 10,
                        fisher_subsample: int = 1) -> dict:
    """Natural-gradient step capped at kl_limit, in place on the policy.

    Solves F x = grad_eta by conjugate gradients, scales to the KL cap,
    then backtracks until the importance-ratio surrogate of eta improves
    while the empirical KL(old || new) stays within the cap. If no
    candidate is accepted the parameters are restored unchanged.

    fisher_subsample > 1 estimates the curvature on every k-th step
    (renormalized weights) to cheapen the conjugate-gradient solve; the
    KL cap in the line search is still checked on the full batch.
    """
    if not np.all(np.isfinite(grad_eta)):
        raise StateError("non-finite policy gradient")
    info = {"kl": 0.0, "step_frac": 0.0, "accepted": False, "improve": 0.0}
    if not np.any(grad_eta):
        return info

    t = tables or step_tables(batch, stats, policy, use_baselines)
    w = t.fisher_weights
    f_states, f_w = t.states, w
    if fisher_subsample > 1:
        f_states = t.states[::fisher_subsample]
        f_w = w[::fisher_subsample]
        total = float(f_w.sum())
        if total <= 0.0:
            return info
        f_w = f_w / total

    fvp = policy.fisher_operator(f_states, f_w, damping)
    x = _conjugate_gradient(fvp, grad_eta, cg_iters)
    quad = float(x @ fvp(x))
    if quad <= 0.0:
        return info
    full_step = np.sqrt(2.0 * kl_limit / quad) * x

    theta0 = policy.get_flat()
    mu_old, _ = policy.mean_std(t.states)
    log_std_old = policy.log_std.copy()
    logp_old = policy.log_prob(t.states, t.actions)
    adv = t.c_step * t.disc * (t.q_centered - stats.beta * t.x_centered)
    surr_old = float(adv.sum())         # importance ratios are 1 at theta0

    for k in range(backtracks):
        frac = 0.5 ** k
        policy.set_flat(theta0 + frac * full_step)
        kl = policy.kl_mean(t.states, mu_old, log_std_old, w)
        ratio = np.exp(policy.log_prob(t.states, t.actions) - logp_old)
        improve = float(adv @ ratio) - surr_old
        if np.isfinite(kl) and kl <= kl_limit and improve > 0.0:
            info.update(kl=kl, step_frac=frac, accepted=True,
                        improve=improve)
            return info
    policy.set_flat(theta0)
    return info


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrvoConfig:
    """Hyper-parameters for risk-averse trust-region training."""

    beta: float = 0.0
    gamma: float = 0.95
    n_episodes: int = 500          # episodes per batch
    mode: str = "naive"            # "naive" or "is"
    b0: int = 0                    # defaulted episodes per batch under "is"
    kl_limit: float = 0.01
    iterations: int = 150
    seed: int = 0
    use_baselines: bool = True
    freeze_normalizer_after: int = 10
    damping: float = 0.1
    cg_iters: int = 15
    backtracks: int = 10
    fisher_subsample: int = 1      # curvature on every k-th step
    log_std_scale: float = 0.1     # initial std vs. the delta-hedge action
    hidden: tuple = (10, 10)

    def validate(self) -> None:
        if self.mode not in ("naive", "is"):
            raise InconsistentInputError(f"unknown mode {self.mode!r}")
        if self.mode == "is" and not 1 <= self.b0 < self.n_episodes:
            raise InconsistentInputError(
                "importance sampling needs 1 <= b0 < n_episodes")
        if self.mode == "naive" and self.b0:
            raise InconsistentInputError("b0 requires mode='is'")
        if not 0.0 < self.gamma <= 1.0:
            raise InconsistentInputError("gamma must be in (0, 1]")
        if self.beta < 0.0 or self.kl_limit <= 0.0:
            raise InconsistentInputError("beta >= 0 and kl_limit > 0 needed")
        if self.n_episodes < 2 or self.iterations < 0:
            raise InconsistentInputError("need >= 2 episodes, >= 0 iterations")
        if self.fisher_subsample < 1:
            raise InconsistentInputError("fisher_subsample must be >= 1")


def initial_policy(env: BookEnv, config: TrvoConfig) -> GaussianPolicy:
    """Policy whose mean starts near the zero action with exploration noise
    sized as a fraction of the delta-hedge action at the initial state."""
    probe = build_batch(env.params, env.grid, 1, seed=config.seed)
    _, features = env.reset(probe[0])
    scale = np.empty(env.n_actions)
    scale[:-1] = abs(features[6])       # CVA credit sensitivity
    scale[-1] = abs(features[7])        # CVA FX sensitivity
    scale = np.maximum(scale, 1e-8)
    log_std_init = np.log(config.log_std_scale * scale)
    return GaussianPolicy(env.n_features, env.n_actions,
                          hidden=config.hidden, log_std_init=log_std_init,
                          seed=config.seed)


def train(env: BookEnv, config: TrvoConfig,
          callback: Callable[[dict], None] | None = None
          ) -> tuple[GaussianPolicy, list[dict]]:
    """Run trust-region training; returns the policy and learning curve.

    The learning curve has one row per iteration with keys
    (iteration, neg_eta, j_hat, nu2_hat, kl, step_frac). Everything is
    deterministic given config.seed.
    """
    config.validate()
    policy = initial_policy(env, config)

    # Seed the feature normalizer from a costless zero-action batch so the
    # first real rollout already sees standardized features.
    warm = build_batch(env.params, env.grid, min(64, config.n_episodes),
                       seed=config.seed)
    warm_traj = env.run_batch(zero_policy, warm)
    policy.normalizer.update(warm_traj.states[warm_traj.step_mask])

    curve: list[dict] = []
    for it in range(config.iterations):
        paths = build_batch(env.params, env.grid, config.n_episodes,
                            seed=config.seed, mode=config.mode, b0=config.b0,
                            episode_offset=it * config.n_episodes)
        rng = np.random.default_rng([config.seed, 7919, it])
        traj = env.run_batch(policy.as_sampler(rng), paths)

        stats = estimate_stats(traj, config.gamma, config.beta)
        tables = step_tables(traj, stats, policy, config.use_baselines)
        grad_j = mean_gradient(traj, stats, policy, tables=tables)
        grad_nu2 = volatility_gradient(traj, stats, policy, tables=tables)
        grad_eta = grad_j - config.beta * grad_nu2
        info = trust_region_update(
            policy, grad_eta, traj, stats, config.kl_limit, tables=tables,
            damping=config.damping, cg_iters=config.cg_iters,
            backtracks=config.backtracks,
            fisher_subsample=config.fisher_subsample)

        if it + 1 >= config.freeze_normalizer_after:
            policy.normalizer.freeze()
        else:
            policy.normalizer.update(traj.states[traj.step_mask])

        row = {"iteration": it, "neg_eta": -stats.eta_hat,
               "j_hat": stats.j_hat, "nu2_hat": stats.nu2_hat,
               "kl": info["kl"], "step_frac": info["step_frac"]}
        curve.append(row)
        if callback is not None:
            callback(row)
    return policy, curve


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalStats:
    """Out-of-sample estimates with standard errors and per-episode terms.

    Per-episode arrays are kept so that paired significance tests across
    policies evaluated on common random numbers remain possible.
    """

    beta: float
    gamma: float
    n_episodes: int
    j_hat: float
    gamma_bar: float
    j_norm: float
    nu2_hat: float
    sigma2_hat: float
    eta_hat: float
    se_j: float
    se_nu2: float
    se_eta: float
    default_fraction: float
    returns: np.ndarray          # (n,) discounted returns G
    sq_sums: np.ndarray          # (n,) sum_i gamma^(i-1) r_i^2
    gammas: np.ndarray           # (n,) discounted horizons
    weights: np.ndarray          # (n,) sampling weights
    coefs: np.ndarray            # (n,) estimator coefficients
    defaulted: np.ndarray        # (n,) bool

    def nu2_terms(self) -> np.ndarray:
        """Per-episode values whose weighted sum is nu2_hat (j frozen)."""
        return (self.sq_sums - 2.0 * self.j_norm * self.returns
                + self.j_norm ** 2 * self.gammas)

    def eta_contributions(self) -> np.ndarray:
        """Per-episode terms averaging to eta_hat (for paired tests)."""
        h = self.returns - self.beta * self.nu2_terms()
        return self.n_episodes * self.coefs * h


def _group_se(values: np.ndarray, weights: np.ndarray,
              defaulted: np.ndarray, mode: str) -> float:
    """Standard error of sum(c * values) with group-mean coefficients."""
    if mode == "naive":
        return float(np.std(values, ddof=1) / np.sqrt(len(values)))
    var = 0.0
    for mask in (defaulted, ~defaulted):
        n = int(mask.sum())
        if n > 1:
            var += np.var(values[mask] * weights[mask], ddof=1) / n
    return float(np.sqrt(var))


def evaluate(policy_fn: Callable[[np.ndarray], np.ndarray], env: BookEnv,
             n_episodes: int, seed: int, *, beta: float = 0.0,
             gamma: float = 1.0, mode: str = "naive", b0: int = 0,
             chunk_size: int = 2000,
             episode_offset: int = 0) -> EvalStats:
    """Evaluate a policy callable on fresh episodes (undiscounted default).

    Episodes are generated in chunks to bound memory; per-episode
    aggregates are pooled so the estimates match a single large batch.
    Under importance sampling the b0 defaulted episodes are drawn per
    chunk, keeping the defaulted fraction constant across chunk sizes.
    """
    if n_episodes < 2:
        raise InconsistentInputError("need at least two episodes")
    parts = []
    done = 0
    while done < n_episodes:
        size = min(chunk_size, n_episodes - done)
        b0_chunk = 0
        if mode == "is":
            b0_chunk = max(1, round(b0 * size / n_episodes))
            if b0_chunk >= size:
                raise InconsistentInputError(
                    "b0 too large for evaluation chunking")
        paths = build_batch(env.params, env.grid, size, seed=seed,
                            mode=mode, b0=b0_chunk,
                            episode_offset=episode_offset + done)
        traj = env.run_batch(policy_fn, paths)
        mask = traj.step_mask
        rewards = np.where(mask, traj.rewards, 0.0)
        disc = _discount_row(gamma, rewards.shape[1])
        lengths = traj.lengths.astype(float)
        gammas = lengths if gamma == 1.0 else \
            (1.0 - gamma ** lengths) / (1.0 - gamma)
        parts.append((rewards @ disc, (rewards * rewards) @ disc, gammas,
                      traj.weights, traj.defaulted))
        done += size

    returns, sq_sums, gammas, weights, defaulted = map(
        np.concatenate, zip(*parts))
    coefs = coefficients_for(mode, weights, defaulted)

    j_hat = float(coefs @ returns)
    gamma_bar = float(coefs @ gammas)
    j_norm = j_hat / gamma_bar
    nu2_terms = sq_sums - 2.0 * j_norm * returns + j_norm ** 2 * gammas
    nu2_hat = float(coefs @ nu2_terms)
    sigma2_hat = float(coefs @ (returns - j_hat) ** 2)
    eta_hat = j_hat - beta * nu2_hat
    eta_terms = returns - beta * nu2_terms
    return EvalStats(
        beta=beta, gamma=gamma, n_episodes=n_episodes, j_hat=j_hat,
        gamma_bar=gamma_bar, j_norm=j_norm, nu2_hat=nu2_hat,
        sigma2_hat=sigma2_hat, eta_hat=eta_hat,
        se_j=_group_se(returns, weights, defaulted, mode),
        se_nu2=_group_se(nu2_terms, weights, defaulted, mode),
        se_eta=_group_se(eta_terms, weights, defaulted, mode),
        default_fraction=float(coefs @ defaulted),
        returns=returns, sq_sums=sq_sums, gammas=gammas, weights=weights,
        coefs=coefs, defaulted=defaulted)


def config_from_dict(values: dict) -> TrvoConfig:
    """TrvoConfig from a plain dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(TrvoConfig)}
    unknown = set(values) - names
    if unknown:
        raise InconsistentInputError(
            f"unknown training options: {sorted(unknown)}")
    config = TrvoConfig(**values)
    config.validate()
    return config
