"""Hedging-book MDP: balance ledger, state features, rewards.

The book holds one unit of the CVA liability plus hedge positions in CDS
contracts and a USD cash account, all funded from an EUR cash account.
CDS positions are collateralized futures-style: after every rebalance the
per-contract collateral balance is reset to minus the position's mid value,
so a contract plus its collateral nets to zero book value and mark-to-market
gains are realized into cash at the next rebalance.

Each decision step: (1) the action — target hedge sensitivities, one
intensity slot per CDS plus one FX slot — is converted to notionals with
the instruments' own current sensitivities; (2) trades execute at mid with
proportional costs (CDS: quoted semi-spread per unit notional; USD:
a fixed friction per unit traded and per unit of interest converted);
(3) balances accrue simple interest over the step; (4) the market moves to
the next node, coupons pay, and — if the reference name defaulted inside
the step — the default settles at that node: the CVA leg pays the loss
given default on positive exposure, each CDS unit pays the loss given
default, values drop to zero and collateral returns to cash.

The reward is the book-value change over the step, so undiscounted episode
returns telescope to terminal book value minus initial book value (zero at
reset, by the offsetting-cash convention) on every path, costs included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateHedgeError,
    InconsistentInputError,
    StateError,
)
from .market_sim import (
    EpisodePath,
    MarketParams,
    PathBatch,
    TimeGrid,
    estimator_coefficients,
)
from .pricing import (
    CdsSpec,
    CdsTable,
    cva_quad_greeks,
    fx_forward_exposure,
)

#: number of scalar features ahead of the per-CDS (value, d/d lam) pairs
N_BASE_FEATURES = 8
DAYS_PER_YEAR = 365.0


@dataclass
class BookState:
    """Ledger of one episode's book between decision steps."""

    n_cds: np.ndarray          # (M,) CDS notionals
    n_usd_cash: float          # USD funding balance (units of USD)
    n_eur_cash: float          # EUR funding balance
    collateral: np.ndarray     # (M,) EUR collateral balances
    step_index: int
    terminated: bool


@dataclass
class Trajectory:
    """One rolled-out episode: states/actions at 0..eps-1, rewards 1..eps."""

    states: np.ndarray         # (eps, F)
    actions: np.ndarray        # (eps, A)
    rewards: np.ndarray        # (eps,)
    weight: float              # importance weight of the path
    defaulted: bool

    @property
    def length(self) -> int:
        return len(self.rewards)


@dataclass
class TrajectoryBatch:
    """Stacked rollouts on a common grid, padded past each episode's end."""

    states: np.ndarray         # (B, N, F), zero-padded
    actions: np.ndarray        # (B, N, A), zero-padded
    rewards: np.ndarray        # (B, N), zero-padded
    lengths: np.ndarray        # (B,) int, episode lengths (eps)
    weights: np.ndarray        # (B,) importance weights
    coefs: np.ndarray          # (B,) estimator coefficients (sum to 1)
    defaulted: np.ndarray      # (B,) bool
    book_values: np.ndarray    # (B, N+1) pre-action book value at each node

    def __len__(self) -> int:
        return len(self.lengths)

    @property
    def step_mask(self) -> np.ndarray:
        """(B, N) bool: True where step i < episode length."""
        n = self.rewards.shape[1]
        return np.arange(n)[None, :] < self.lengths[:, None]

    def episode(self, e: int) -> Trajectory:
        eps = int(self.lengths[e])
        return Trajectory(states=self.states[e, :eps], actions=self.actions[e, :eps],
                          rewards=self.rewards[e, :eps],
                          weight=float(self.weights[e]),
                          defaulted=bool(self.defaulted[e]))


@dataclass
class _Marks:
    """Batched pricer outputs at one grid node."""

    cva: np.ndarray            # (B,)
    cva_dphi: np.ndarray       # (B,)
    cva_dlam: np.ndarray       # (B,)
    cds_mid: np.ndarray        # (B, M)
    cds_semi: np.ndarray       # (B, M)
    cds_dlam: np.ndarray       # (B, M)


@dataclass
class _Ledger:
    """Batched balances; every field is (B,) or (B, M)."""

    n_cds: np.ndarray
    n_usd: np.ndarray
    cash: np.ndarray
    coll: np.ndarray

    @classmethod
    def zeros(cls, n_episodes: int, n_cds: int) -> "_Ledger":
        return cls(n_cds=np.zeros((n_episodes, n_cds)),
                   n_usd=np.zeros(n_episodes),
                   cash=np.zeros(n_episodes),
                   coll=np.zeros((n_episodes, n_cds)))


class BookEnv:
    """The hedging book wrapped as a finite-horizon MDP on a trading grid.

    Episodes run until the earlier of the trading horizon and the first
    grid node at or after the default time. Policies are callables mapping
    a batch of state vectors (B, F) to actions (B, M+1): per-CDS intensity
    sensitivities followed by the FX sensitivity (equal to the USD notional).
    """

    def __init__(self, params: MarketParams, grid: TimeGrid,
                 cds_specs: Sequence[CdsSpec],
                 quadratic_impact: float = 0.0, n_sub: int = 60):
        params.validate()
        for spec in cds_specs:
            if spec.maturity <= grid.horizon + 1e-9:
                raise InconsistentInputError(
                    "hedge CDS matures inside the trading horizon; "
                    "expiry handling is out of scope")
        self.params = params
        self.grid = grid
        self.cds_specs = tuple(cds_specs)
        self.quadratic_impact = float(quadratic_impact)
        self.n_sub = int(n_sub)
        self._tables = [CdsTable(grid.times, spec, params)
                        for spec in self.cds_specs]
        self._coupon_steps = self._index_coupons()

    # ------------------------------------------------------------ layout

    @property
    def n_cds(self) -> int:
        return len(self.cds_specs)

    @property
    def n_features(self) -> int:
        return N_BASE_FEATURES + 2 * self.n_cds

    @property
    def n_actions(self) -> int:
        return self.n_cds + 1

    def _index_coupons(self):
        """For each step i, the coupon dates of each CDS in (t_i, t_{i+1}]."""
        times = self.grid.times
        out = []
        for spec in self.cds_specs:
            dates = 0.25 * np.arange(1, int(round(spec.maturity / 0.25)) + 1)
            dates = dates[dates <= self.grid.horizon + 1e-12]
            # date in (t_i, t_{i+1}] pays during step i
            step_of = np.searchsorted(times, dates - 1e-12, side="left") - 1
            out.append(list(zip(step_of, dates)))
        return out

    # ------------------------------------------------------------- marks

    def _marks(self, node: int, phi: np.ndarray, lam: np.ndarray) -> _Marks:
        t = float(self.grid.times[node])
        cva, dphi, dlam = cva_quad_greeks(phi, lam, t, self.params,
                                          n_sub=self.n_sub)
        b = len(phi)
        mid = np.empty((b, self.n_cds))
        semi = np.empty((b, self.n_cds))
        der = np.empty((b, self.n_cds))
        for m, table in enumerate(self._tables):
            mid[:, m], semi[:, m], der[:, m] = table.greeks(node, lam)
        return _Marks(cva=cva, cva_dphi=dphi, cva_dlam=dlam,
                      cds_mid=mid, cds_semi=semi, cds_dlam=der)

    def _features(self, node: int, phi, lam, led: _Ledger,
                  marks: _Marks) -> np.ndarray:
        t = float(self.grid.times[node])
        b = len(phi)
        out = np.empty((b, self.n_features))
        out[:, 0] = (self.params.maturity - t) * DAYS_PER_YEAR
        out[:, 1] = lam
        out[:, 2] = phi
        out[:, 3] = np.sum(led.n_cds * marks.cds_dlam, axis=1)
        out[:, 4] = led.n_usd
        out[:, 5] = marks.cva
        out[:, 6] = marks.cva_dlam
        out[:, 7] = marks.cva_dphi
        out[:, N_BASE_FEATURES::2] = marks.cds_mid
        out[:, N_BASE_FEATURES + 1::2] = marks.cds_dlam
        return out

    def _book_value(self, phi, led: _Ledger, marks: _Marks,
                    cva_alive) -> np.ndarray:
        hedges = np.sum(led.n_cds * marks.cds_mid + led.coll, axis=1)
        return (np.where(cva_alive, marks.cva, 0.0)
                + led.cash + led.n_usd * phi + hedges)

    # ------------------------------------------------------------ dynamics

    def _apply_action(self, led: _Ledger, marks: _Marks, action: np.ndarray,
                      phi: np.ndarray) -> None:
        """Rebalance at mid, reset collateral, charge costs. Mutates led."""
        if not np.all(np.isfinite(action)):
            raise InconsistentInputError("non-finite action")
        a_lam = action[:, :-1]
        a_phi = action[:, -1]
        if np.any(np.abs(marks.cds_dlam) < 1e-12):
            raise DegenerateHedgeError(
                "CDS intensity sensitivity vanished; cannot map the action "
                "to a notional")
        n_new = a_lam / marks.cds_dlam
        d_n = n_new - led.n_cds
        d_usd = a_phi - led.n_usd
        cost = (np.sum(marks.cds_semi * np.abs(d_n), axis=1)
                + self.params.cost_fx * np.abs(d_usd))
        if self.quadratic_impact:
            cost = cost + self.quadratic_impact * (
                np.sum(d_n * d_n, axis=1) + d_usd * d_usd)
        coll_new = -n_new * marks.cds_mid
        led.cash += (np.sum(-d_n * marks.cds_mid - (coll_new - led.coll),
                            axis=1) - d_usd * phi - cost)
        led.coll = coll_new
        led.n_cds = n_new
        led.n_usd = a_phi + 0.0 * led.n_usd   # copy, keep (B,) float

    def _advance(self, led: _Ledger, step: int, phi_next, lam_next,
                 tau: np.ndarray, settling: np.ndarray) -> None:
        """Accrue, sweep USD interest, pay coupons, settle defaults."""
        p = self.params
        dt = float(self.grid.dt[step])
        led.cash *= 1.0 + p.rate_eur * dt
        led.coll *= 1.0 + p.rate_collateral * dt
        usd_int = led.n_usd * p.rate_usd * dt
        led.cash += usd_int * phi_next - p.cost_fx * np.abs(usd_int)
        for m, coupons in enumerate(self._coupon_steps):
            for (coupon_step, date) in coupons:
                if coupon_step == step:
                    paid = np.where(date < tau, 1.0, 0.0)
                    led.cash += (paid * led.n_cds[:, m]
                                 * self.cds_specs[m].coupon * 0.25)
        if np.any(settling):
            t_next = float(self.grid.times[step + 1])
            expo = fx_forward_exposure(phi_next, t_next, p)
            loss = (1.0 - p.recovery) * np.maximum(expo, 0.0)
            led.cash = np.where(
                settling,
                led.cash - loss - (1.0 - p.recovery) * np.sum(led.n_cds, axis=1)
                + np.sum(led.coll, axis=1),
                led.cash)
            led.n_cds = np.where(settling[:, None], 0.0, led.n_cds)
            led.coll = np.where(settling[:, None], 0.0, led.coll)

    # ------------------------------------------------------------ rollouts

    def run_batch(self, policy: Callable[[np.ndarray], np.ndarray],
                  batch: PathBatch) -> TrajectoryBatch:
        """Roll the policy over every episode of the batch, vectorized."""
        n_ep, n_steps = len(batch), self.grid.n_steps
        lengths = np.where(batch.defaulted, batch.settle_idx, n_steps)
        led = _Ledger.zeros(n_ep, self.n_cds)
        states = np.zeros((n_ep, n_steps, self.n_features))
        actions = np.zeros((n_ep, n_steps, self.n_actions))
        rewards = np.zeros((n_ep, n_steps))
        values = np.zeros((n_ep, n_steps + 1))

        marks = self._marks(0, batch.phi[:, 0], batch.lam[:, 0])
        led.cash = -marks.cva.copy()
        value = self._book_value(batch.phi[:, 0], led, marks, True)
        values[:, 0] = value
        alive = np.ones(n_ep, dtype=bool)
        for i in range(n_steps):
            state = self._features(i, batch.phi[:, i], batch.lam[:, i],
                                   led, marks)
            act = np.asarray(policy(state), dtype=float)
            states[alive, i] = state[alive]
            actions[alive, i] = act[alive]
            act = np.where(alive[:, None], act,
                           np.column_stack([led.n_cds * marks.cds_dlam,
                                            led.n_usd]))
            self._apply_action(led, marks, act, batch.phi[:, i])
            settling = alive & batch.defaulted & (batch.settle_idx == i + 1)
            self._advance(led, i, batch.phi[:, i + 1], batch.lam[:, i + 1],
                          batch.tau, settling)
            marks = self._marks(i + 1, batch.phi[:, i + 1],
                                batch.lam[:, i + 1])
            value_next = self._book_value(batch.phi[:, i + 1], led, marks,
                                          ~(batch.defaulted
                                            & (batch.settle_idx <= i + 1)))
            rewards[alive, i] = (value_next - value)[alive]
            values[alive, i + 1] = value_next[alive]
            value = value_next
            alive &= ~settling
        return TrajectoryBatch(
            states=states, actions=actions, rewards=rewards, lengths=lengths,
            weights=batch.weight.copy(), coefs=estimator_coefficients(batch),
            defaulted=batch.defaulted.copy(), book_values=values)

    # ----------------------------------------------- single-episode ops

    def _as_batch(self, path: EpisodePath) -> PathBatch:
        return PathBatch(
            grid=path.grid, phi=path.phi[None, :], lam=path.lam[None, :],
            hazard=path.hazard[None, :], tau=np.array([path.tau]),
            defaulted=np.array([path.defaulted]),
            weight=np.array([path.weight]), mode="naive")

    def reset(self, path: EpisodePath) -> tuple[BookState, np.ndarray]:
        """Start an episode: zero hedge, cash offsetting the CVA value."""
        marks = self._marks(0, path.phi[:1], path.lam[:1])
        led = _Ledger.zeros(1, self.n_cds)
        led.cash = -marks.cva.copy()
        book = BookState(n_cds=np.zeros(self.n_cds),
                         n_usd_cash=0.0, n_eur_cash=float(led.cash[0]),
                         collateral=np.zeros(self.n_cds),
                         step_index=0, terminated=False)
        state = self._features(0, path.phi[:1], path.lam[:1], led, marks)[0]
        return book, state

    def step(self, book: BookState, action: np.ndarray,
             path: EpisodePath) -> tuple[BookState, np.ndarray, float, bool]:
        """Apply one action and advance one grid step. Mutates `book`."""
        if book.terminated:
            raise StateError("step() on a terminated episode")
        i = book.step_index
        led = _Ledger(n_cds=book.n_cds[None, :].copy(),
                      n_usd=np.array([book.n_usd_cash]),
                      cash=np.array([book.n_eur_cash]),
                      coll=book.collateral[None, :].copy())
        phi_i, lam_i = path.phi[i:i + 1], path.lam[i:i + 1]
        phi_n, lam_n = path.phi[i + 1:i + 2], path.lam[i + 1:i + 2]
        marks = self._marks(i, phi_i, lam_i)
        value = self._book_value(phi_i, led, marks, True)
        act = np.asarray(action, dtype=float).reshape(1, self.n_actions)
        self._apply_action(led, marks, act, phi_i)
        settling = np.array([path.defaulted and path.settle_idx == i + 1])
        self._advance(led, i, phi_n, lam_n, np.array([path.tau]), settling)
        marks_next = self._marks(i + 1, phi_n, lam_n)
        cva_alive = not (path.defaulted and path.settle_idx <= i + 1)
        value_next = self._book_value(phi_n, led, marks_next, cva_alive)
        reward = float(value_next[0] - value[0])

        book.n_cds = led.n_cds[0]
        book.n_usd_cash = float(led.n_usd[0])
        book.n_eur_cash = float(led.cash[0])
        book.collateral = led.coll[0]
        book.step_index = i + 1
        done = bool(settling[0]) or (i + 1 == self.grid.n_steps)
        book.terminated = done
        state = self._features(i + 1, phi_n, lam_n, led, marks_next)[0]
        return book, state, reward, done

    def run_episode(self, policy: Callable[[np.ndarray], np.ndarray],
                    path: EpisodePath) -> Trajectory:
        """Roll one episode with the single-step driver."""
        book, state = self.reset(path)
        states, acts, rews = [], [], []
        done = False
        while not done:
            action = np.asarray(policy(state[None, :]), dtype=float)[0]
            states.append(state)
            acts.append(action)
            book, state, reward, done = self.step(book, action, path)
            rews.append(reward)
        return Trajectory(states=np.array(states), actions=np.array(acts),
                          rewards=np.array(rews), weight=path.weight,
                          defaulted=path.defaulted)


def zero_policy(states: np.ndarray) -> np.ndarray:
    """The do-nothing benchmark: all target sensitivities zero."""
    n_cds_pairs = (states.shape[1] - N_BASE_FEATURES) // 2
    return np.zeros((states.shape[0], n_cds_pairs + 1))
