"""Correlated FX/credit market simulator on a trading-hours calendar.

Simulates a GBM FX rate and a CIR default intensity on an intraday grid,
accumulates the integrated (real-world) hazard, and draws default times
either naively by inverse-hazard sampling or under an importance-sampling
measure change that fixes the number of defaulted episodes per batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InconsistentInputError

HOURS_PER_YEAR = 24.0 * 365.0
INTRADAY_HOURS = 2.0
OVERNIGHT_HOURS = 14.0
WEEKEND_HOURS = 48.0


@dataclass
class MarketParams:
    """Market model parameters (EUR is the accounting currency).

    FX rate phi is the EUR price of one USD unit; the hedged item is the
    CVA of a USD/EUR forward with maturity `maturity`. The default
    intensity follows a CIR process; real-world default arrives with
    intensity m_bar * lambda.
    """

    maturity: float = 5.0          # FX forward maturity T, years
    notional_usd: float = 1.1      # forward USD leg notional
    notional_eur: float = 1.0      # forward EUR leg notional
    recovery: float = 0.4          # counterparty recovery rate
    rate_eur: float = 0.033        # EUR funding (and discount) rate
    rate_usd: float = 0.045        # USD funding rate
    rate_collateral: float = 0.033  # collateral remuneration rate
    fx0: float = 1.0               # initial FX rate phi_0
    fx_vol_p: float = 0.10         # FX volatility, real-world measure
    fx_vol_q: float = 0.10         # FX volatility, pricing measure
    fx_drift_p: float = 0.0        # FX drift, real-world measure
    fx_drift_q: float = -0.012     # FX drift, pricing measure (r_eur - r_usd)
    corr_p: float = 0.0            # FX/intensity Brownian correlation, real-world
    corr_q: float = 0.0            # FX/intensity Brownian correlation, pricing
    lambda0: float = 0.0166        # initial default intensity
    kappa_p: float = 0.3769        # CIR mean reversion, real-world
    theta_p: float = 0.0187        # CIR long-term mean, real-world
    sigma_lam_p: float = 0.1922    # CIR volatility, real-world
    kappa_q: float = 0.3769        # CIR mean reversion, pricing measure
    theta_q: float = 0.0187        # CIR long-term mean, pricing measure
    sigma_lam_q: float = 0.1922    # CIR volatility, pricing measure
    m_bar: float = 0.0             # real-world intensity multiplier (0 = no defaults)
    cost_fx: float = 5e-5          # FX semi-spread, EUR per USD traded
    cost_lambda: float = 8.3e-4    # intensity semi-spread behind CDS bid/ask

    def validate(self) -> None:
        if self.maturity <= 0:
            raise InconsistentInputError("maturity must be positive")
        if not 0.0 <= self.recovery < 1.0:
            raise InconsistentInputError("recovery must lie in [0, 1)")
        for name in ("fx0", "lambda0", "m_bar", "cost_fx", "cost_lambda",
                     "sigma_lam_p", "sigma_lam_q", "fx_vol_p", "fx_vol_q",
                     "kappa_p", "kappa_q", "theta_p", "theta_q"):
            if getattr(self, name) < 0:
                raise InconsistentInputError(f"{name} must be non-negative")
        for name in ("corr_p", "corr_q"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise InconsistentInputError(f"{name} must lie in [-1, 1]")


@dataclass(frozen=True)
class TimeGrid:
    """Intraday trading grid: node times in years plus the step gaps in hours."""

    times: np.ndarray          # (n_steps + 1,) node times, years, times[0] = 0
    gap_hours: np.ndarray      # (n_steps,) hours between consecutive nodes
    n_days: int
    steps_per_day: int

    @property
    def n_steps(self) -> int:
        return len(self.gap_hours)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        """Step sizes in years."""
        return self.gap_hours / HOURS_PER_YEAR


def build_grid(n_days: int, steps_per_day: int) -> TimeGrid:
    """Build the trading calendar grid.

    Steps within a day are 2h apart; the gap that carries over to the next
    day's first step is 14h, plus 48h whenever the completed day closes a
    five-day trading week.
    """
    if n_days < 1 or steps_per_day < 1:
        raise InconsistentInputError("n_days and steps_per_day must be >= 1")
    n_steps = n_days * steps_per_day
    gaps = np.full(n_steps, INTRADAY_HOURS)
    i = np.arange(1, n_steps + 1)
    overnight = (i > 1) & ((i - 1) % steps_per_day == 0)
    gaps[overnight] = OVERNIGHT_HOURS
    completed_day = (i - 1) // steps_per_day
    gaps[overnight & (completed_day % 5 == 0)] += WEEKEND_HOURS
    times = np.concatenate([[0.0], np.cumsum(gaps) / HOURS_PER_YEAR])
    return TimeGrid(times=times, gap_hours=gaps, n_days=n_days,
                    steps_per_day=steps_per_day)


def _step_paths(params: MarketParams, grid: TimeGrid,
                z_fx: np.ndarray, z_perp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance FX (exact log-Euler GBM) and intensity (full-truncation CIR Euler).

    z_fx, z_perp: (n_paths, n_steps) standard normals; returns
    (phi, lam) with shape (n_paths, n_steps + 1).
    """
    n_paths, n_steps = z_fx.shape
    dt = grid.dt
    sqdt = np.sqrt(dt)
    rho = params.corr_p
    z_lam = rho * z_fx + np.sqrt(1.0 - rho * rho) * z_perp

    phi = np.empty((n_paths, n_steps + 1))
    lam = np.empty((n_paths, n_steps + 1))
    phi[:, 0] = params.fx0
    lam[:, 0] = params.lambda0
    mu, sig = params.fx_drift_p, params.fx_vol_p
    kap, th, vol = params.kappa_p, params.theta_p, params.sigma_lam_p
    for i in range(n_steps):
        phi[:, i + 1] = phi[:, i] * np.exp(
            (mu - 0.5 * sig * sig) * dt[i] + sig * sqdt[i] * z_fx[:, i])
        lpos = np.maximum(lam[:, i], 0.0)
        lam[:, i + 1] = np.maximum(
            lam[:, i] + kap * (th - lpos) * dt[i]
            + vol * np.sqrt(lpos) * sqdt[i] * z_lam[:, i],
            1e-12)
    return phi, lam


def simulate_factors(params: MarketParams, grid: TimeGrid,
                     rng: np.random.Generator,
                     n_paths: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Simulate (phi, lam) paths under the real-world measure."""
    z = rng.standard_normal((n_paths, 2, grid.n_steps))
    return _step_paths(params, grid, z[:, 0], z[:, 1])


def integrated_hazard(params: MarketParams, grid: TimeGrid,
                      lam: np.ndarray) -> np.ndarray:
    """Cumulative real-world hazard  m_bar * integral of lambda, trapezoidal.

    lam: (..., n_steps + 1) -> same shape cumulative hazard, zero at node 0.
    """
    dt = grid.dt
    increments = 0.5 * (lam[..., :-1] + lam[..., 1:]) * dt * params.m_bar
    out = np.zeros_like(lam)
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def _invert_hazard(hazard: np.ndarray, times: np.ndarray,
                   level: np.ndarray) -> np.ndarray:
    """Solve hazard(tau) = level by linear interpolation on the grid.

    hazard: (B, N+1) nondecreasing rows starting at 0; level: (B,) with
    0 < level <= hazard[:, -1]. Returns tau (B,).
    """
    hit = hazard >= level[:, None]
    idx = np.argmax(hit, axis=1)          # first node with hazard >= level
    idx = np.maximum(idx, 1)
    lo = hazard[np.arange(len(level)), idx - 1]
    hi = hazard[np.arange(len(level)), idx]
    seg = hi - lo
    frac = np.where(seg > 0, (level - lo) / np.where(seg > 0, seg, 1.0), 0.0)
    return times[idx - 1] + frac * (times[idx] - times[idx - 1])


def sample_default_naive(hazard: np.ndarray, times: np.ndarray,
                         u: np.ndarray) -> np.ndarray:
    """Inverse-hazard default times; inf when the horizon hazard is exhausted.

    hazard: (B, N+1) cumulative hazard paths; u: (B,) uniforms in (0, 1).
    """
    hazard = np.atleast_2d(hazard)
    u = np.atleast_1d(u)
    level = -np.log(u)
    total = hazard[:, -1]
    tau = np.full(len(u), np.inf)
    hit = level <= total
    if np.any(hit):
        tau[hit] = _invert_hazard(hazard[hit], times, level[hit])
    return tau


def sample_default_conditional(hazard: np.ndarray, times: np.ndarray,
                               u: np.ndarray,
                               defaulted: np.ndarray) -> np.ndarray:
    """Default times under the measure that fixes the default indicator.

    Defaulted episodes draw tau from the hazard law conditioned on
    tau <= horizon; surviving episodes carry tau = inf (hazard beyond the
    horizon is not modelled). Requires positive horizon hazard for every
    defaulted episode.
    """
    hazard = np.atleast_2d(hazard)
    u = np.atleast_1d(u)
    defaulted = np.atleast_1d(defaulted)
    total = hazard[:, -1]
    if np.any(defaulted & (total <= 0.0)):
        raise InconsistentInputError(
            "cannot condition on default: zero hazard over the horizon")
    tau = np.full(len(u), np.inf)
    if np.any(defaulted):
        # (1 - exp(-H(tau))) / (1 - exp(-H(t_N))) = u  =>  H(tau) = -log(1 - u*(1-e^-H_N))
        pd = -np.expm1(-total[defaulted])
        level = -np.log1p(-u[defaulted] * pd)
        tau[defaulted] = _invert_hazard(hazard[defaulted], times, level)
    return tau


@dataclass
class EpisodePath:
    """One simulated market scenario on the trading grid."""

    grid: TimeGrid
    phi: np.ndarray        # (N+1,) FX path
    lam: np.ndarray        # (N+1,) intensity path
    hazard: np.ndarray     # (N+1,) cumulative real-world hazard
    tau: float             # default time, inf if none before the horizon
    defaulted: bool        # default before the horizon
    weight: float          # importance weight (1 under naive sampling)
    settle_idx: int        # first grid node index with t >= min(tau, horizon)


@dataclass
class PathBatch:
    """A batch of episodes with stacked arrays (index to get an EpisodePath)."""

    grid: TimeGrid
    phi: np.ndarray        # (B, N+1)
    lam: np.ndarray        # (B, N+1)
    hazard: np.ndarray     # (B, N+1)
    tau: np.ndarray        # (B,)
    defaulted: np.ndarray  # (B,) bool
    weight: np.ndarray     # (B,)
    mode: str              # "naive" or "is"
    settle_idx: np.ndarray = field(init=False)  # (B,) int

    def __post_init__(self):
        capped = np.minimum(self.tau, self.grid.horizon)
        self.settle_idx = np.searchsorted(self.grid.times, capped, side="left")

    def __len__(self) -> int:
        return len(self.tau)

    def __getitem__(self, i: int) -> EpisodePath:
        return EpisodePath(grid=self.grid, phi=self.phi[i], lam=self.lam[i],
                           hazard=self.hazard[i], tau=float(self.tau[i]),
                           defaulted=bool(self.defaulted[i]),
                           weight=float(self.weight[i]),
                           settle_idx=int(self.settle_idx[i]))


def _episode_normals(seed: int, episodes: np.ndarray, n_steps: int):
    """Per-episode substreams: reproducible regardless of batch or chunk layout."""
    z = np.empty((len(episodes), 2, n_steps))
    u = np.empty(len(episodes))
    for row, ep in enumerate(episodes):
        rng = np.random.default_rng([int(seed), int(ep)])
        z[row] = rng.standard_normal((2, n_steps))
        u[row] = rng.uniform()
    return z, u


def build_batch(params: MarketParams, grid: TimeGrid, n_episodes: int,
                seed: int, mode: str = "naive", b0: int = 0,
                episode_offset: int = 0) -> PathBatch:
    """Simulate a batch of episodes with per-episode RNG streams.

    mode "naive": defaults drawn by inverse hazard, unit weights.
    mode "is": exactly b0 episodes (the trailing ones) default; weights are
    exp(-H_N) for survivors and 1 - exp(-H_N) for defaulted episodes, and
    batch expectations are the sum of the two group means.
    episode_offset shifts the per-episode stream indices (for chunked runs).
    """
    params.validate()
    if mode not in ("naive", "is"):
        raise InconsistentInputError(f"unknown sampling mode {mode!r}")
    if mode == "naive" and b0:
        raise InconsistentInputError("b0 only applies to importance sampling")
    if mode == "is" and not 1 <= b0 < n_episodes:
        raise InconsistentInputError("importance sampling needs 1 <= b0 < n_episodes")

    episodes = np.arange(episode_offset, episode_offset + n_episodes)
    z, u = _episode_normals(seed, episodes, grid.n_steps)
    phi, lam = _step_paths(params, grid, z[:, 0], z[:, 1])
    hazard = integrated_hazard(params, grid, lam)

    if mode == "naive":
        tau = sample_default_naive(hazard, grid.times, u)
        defaulted = np.isfinite(tau)
        weight = np.ones(n_episodes)
    else:
        defaulted = np.zeros(n_episodes, dtype=bool)
        defaulted[n_episodes - b0:] = True
        tau = sample_default_conditional(hazard, grid.times, u, defaulted)
        p_survive = np.exp(-hazard[:, -1])
        weight = np.where(defaulted, 1.0 - p_survive, p_survive)
    return PathBatch(grid=grid, phi=phi, lam=lam, hazard=hazard, tau=tau,
                     defaulted=defaulted, weight=weight, mode=mode)


def coefficients_for(mode: str, weights: np.ndarray,
                     defaulted: np.ndarray) -> np.ndarray:
    """Per-episode coefficients c such that E[f] is estimated by sum(c * f).

    Naive batches: c = 1/B. Importance-sampled batches: the expectation is
    the survivor-group mean of (weight * f) plus the defaulted-group mean of
    (weight * f), i.e. c = weight / group size.
    """
    if mode == "naive":
        return np.full(len(weights), 1.0 / len(weights))
    c = np.empty(len(weights))
    for mask in (defaulted, ~defaulted):
        n = int(mask.sum())
        if n:
            c[mask] = weights[mask] / n
    return c


def estimator_coefficients(batch: PathBatch) -> np.ndarray:
    """Estimator coefficients for one path batch (see coefficients_for)."""
    return coefficients_for(batch.mode, batch.weight, batch.defaulted)
