"""Analytic reference hedging strategies for the CVA book.

All benchmarks are deterministic functions of the observed state:

* delta hedge — cancels the book's first-order sensitivities to the
  default intensity and the FX rate; with several CDS the intensity leg
  is carried entirely by the longest-maturity contract.
* jump hedge — sizes the (single) CDS so the book value does not jump
  if the counterparty defaults immediately; FX leg as in the delta hedge.
* two-CDS baseline — with two distinct maturities, solves the 2x2 linear
  system that cancels the intensity sensitivity and the default jump
  simultaneously.
* zero action — holds nothing (the unhedged book).

The hedger carries negative CDS notionals in the usual regimes (bought
protection against a long-risk exposure); positions here are stated per
unit notional sold protection, so protection bought shows up as N < 0.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from .book_env import DAYS_PER_YEAR, N_BASE_FEATURES, BookEnv, zero_policy
from .errors import (DegenerateHedgeError, InconsistentInputError,
                     SingularHedgeError)
from .pricing import fx_forward_exposure

__all__ = ["BenchmarkKind", "benchmark_policy", "delta_hedge_action",
           "jump_hedge_action", "two_cds_baseline_action"]

_SENS_FLOOR = 1e-12


class BenchmarkKind(enum.Enum):
    DELTA_HEDGE = "delta"
    JUMP_HEDGE = "jump"
    TWO_CDS_BASELINE = "two-cds"
    ZERO_ACTION = "zero"


def _n_cds_from_states(states: np.ndarray) -> int:
    return (states.shape[1] - N_BASE_FEATURES) // 2


def _cds_columns(states: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(mid, dlam) columns of CDS m."""
    return (states[:, N_BASE_FEATURES + 2 * m],
            states[:, N_BASE_FEATURES + 2 * m + 1])


def _default_jumps(states: np.ndarray, env: BookEnv) -> np.ndarray:
    """Book-value jump if default happens now: for the CVA leg and per unit
    notional of each CDS. Column 0 is the CVA jump, columns 1.. the CDS."""
    p = env.params
    t = p.maturity - states[:, 0] / DAYS_PER_YEAR
    exposure = fx_forward_exposure(states[:, 2], t, p)
    lgd = 1.0 - p.recovery
    out = np.empty((len(states), 1 + env.n_cds))
    # losing the close-out amount, released of the CVA liability
    out[:, 0] = -lgd * np.maximum(exposure, 0.0) - states[:, 5]
    for m in range(env.n_cds):
        mid, _ = _cds_columns(states, m)
        out[:, 1 + m] = -lgd - mid
    return out


def delta_hedge_actions(states: np.ndarray, env: BookEnv) -> np.ndarray:
    """Cancel (CVA dlam, CVA dphi); intensity leg on the longest CDS."""
    states = np.atleast_2d(states)
    m = _n_cds_from_states(states)
    longest = int(np.argmax([s.maturity for s in env.cds_specs]))
    _, dlam = _cds_columns(states, longest)
    if np.any((np.abs(dlam) < _SENS_FLOOR) & (states[:, 6] != 0.0)):
        raise DegenerateHedgeError(
            "CDS intensity sensitivity vanished; delta hedge undefined")
    actions = np.zeros((len(states), m + 1))
    actions[:, longest] = -states[:, 6]
    actions[:, m] = -states[:, 7]
    return actions


def jump_hedge_actions(states: np.ndarray, env: BookEnv) -> np.ndarray:
    """Cancel the default jump with the single CDS; FX leg as delta hedge."""
    if env.n_cds != 1:
        raise InconsistentInputError(
            "jump hedge is defined for a single-CDS book")
    states = np.atleast_2d(states)
    jumps = _default_jumps(states, env)
    if np.any(np.abs(jumps[:, 1]) < _SENS_FLOOR):
        raise DegenerateHedgeError(
            "CDS default jump vanished; jump hedge undefined")
    notional = -jumps[:, 0] / jumps[:, 1]
    _, dlam = _cds_columns(states, 0)
    actions = np.empty((len(states), 2))
    actions[:, 0] = notional * dlam
    actions[:, 1] = -states[:, 7]
    return actions


def two_cds_baseline_actions(states: np.ndarray, env: BookEnv) -> np.ndarray:
    """Cancel intensity sensitivity and default jump with two CDS.

    Solves, per state, the system
        N1 * dlam1 + N2 * dlam2 = -CVA_dlam
        N1 * jump1 + N2 * jump2 = -CVA_jump
    and returns the equivalent sensitivity targets (N_m * dlam_m, -CVA_dphi).
    """
    if env.n_cds != 2:
        raise InconsistentInputError(
            "the two-CDS baseline needs exactly two CDS")
    m1, m2 = (s.maturity for s in env.cds_specs)
    if abs(m1 - m2) < 1e-12:
        raise SingularHedgeError(
            "two-CDS baseline needs distinct maturities")
    states = np.atleast_2d(states)
    jumps = _default_jumps(states, env)
    _, dlam1 = _cds_columns(states, 0)
    _, dlam2 = _cds_columns(states, 1)
    det = dlam1 * jumps[:, 2] - dlam2 * jumps[:, 1]
    scale = (np.abs(dlam1 * jumps[:, 2]) + np.abs(dlam2 * jumps[:, 1])
             + _SENS_FLOOR)
    if np.any(np.abs(det) < 1e-10 * scale):
        raise SingularHedgeError("two-CDS hedge system is singular")
    b1 = -states[:, 6]
    b2 = -jumps[:, 0]
    n1 = (b1 * jumps[:, 2] - dlam2 * b2) / det
    n2 = (dlam1 * b2 - b1 * jumps[:, 1]) / det
    actions = np.empty((len(states), 3))
    actions[:, 0] = n1 * dlam1
    actions[:, 1] = n2 * dlam2
    actions[:, 2] = -states[:, 7]
    return actions


def delta_hedge_action(state: np.ndarray, env: BookEnv) -> np.ndarray:
    return delta_hedge_actions(state[None], env)[0]


def jump_hedge_action(state: np.ndarray, env: BookEnv) -> np.ndarray:
    return jump_hedge_actions(state[None], env)[0]


def two_cds_baseline_action(state: np.ndarray, env: BookEnv) -> np.ndarray:
    return two_cds_baseline_actions(state[None], env)[0]


def benchmark_policy(kind: BenchmarkKind | str,
                     env: BookEnv) -> Callable[[np.ndarray], np.ndarray]:
    """Policy callable for the requested benchmark, bound to the book."""
    kind = BenchmarkKind(kind)
    if kind is BenchmarkKind.ZERO_ACTION:
        return zero_policy
    if kind is BenchmarkKind.DELTA_HEDGE:
        return lambda states: delta_hedge_actions(states, env)
    if kind is BenchmarkKind.JUMP_HEDGE:
        return lambda states: jump_hedge_actions(states, env)
    if env.n_cds != 2:
        raise InconsistentInputError(
            "the two-CDS baseline needs exactly two CDS")
    maturities = [s.maturity for s in env.cds_specs]
    if abs(maturities[0] - maturities[1]) < 1e-12:
        raise SingularHedgeError("two-CDS baseline needs distinct maturities")
    return lambda states: two_cds_baseline_actions(states, env)
