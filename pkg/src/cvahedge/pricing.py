"""Pricing: CIR survival, FX-forward exposure, CDS quotes, and CVA.

Two independent CVA routes are provided on purpose:

* `cva_quadrature` — survival-weighted Black-call quadrature, exact when the
  pricing-measure FX/intensity correlation is zero;
* `cva_pde` — a two-dimensional Douglas ADI finite-difference solver that
  also covers nonzero correlation.

They share nothing beyond the market parameters, so they can cross-validate
each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .errors import ExtrapolationError, WrongPricerError
from .market_sim import MarketParams

# --------------------------------------------------------------- survival


def _cir_affine(tau, kappa, theta, sigma):
    """CIR zero-coupon coefficients: survival = A * exp(-B * lam)."""
    tau = np.asarray(tau, dtype=float)
    if sigma * sigma < 1e-14:
        # deterministic intensity: integral of the mean-reverting path
        if kappa < 1e-14:
            B = tau
            A = np.ones_like(tau)
        else:
            B = -np.expm1(-kappa * tau) / kappa
            A = np.exp(-theta * (tau - B))
        return A, B
    h = math.sqrt(kappa * kappa + 2.0 * sigma * sigma)
    g = np.expm1(h * tau)                       # e^{h tau} - 1
    denom = 2.0 * h + (kappa + h) * g
    B = 2.0 * g / denom
    A = (2.0 * h * np.exp(0.5 * (kappa + h) * tau) / denom) \
        ** (2.0 * kappa * theta / (sigma * sigma))
    return A, B


def survival_probability(lam, t, T, params: MarketParams):
    """Pricing-measure survival probability from intensity level lam at t to T.

    Broadcasts over lam and T - t; requires T >= t.
    """
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau < -1e-12):
        raise ValueError("survival_probability needs T >= t")
    tau = np.maximum(tau, 0.0)
    A, B = _cir_affine(tau, params.kappa_q, params.theta_q, params.sigma_lam_q)
    return A * np.exp(-B * np.asarray(lam, dtype=float))


# --------------------------------------------------------------- exposure


def fx_forward_exposure(phi, t, params: MarketParams):
    """Exposure of the FX forward: phi * P_usd(t,T) * N_usd - P_eur(t,T) * N_eur."""
    t = np.asarray(t, dtype=float)
    if np.any(t > params.maturity + 1e-12):
        raise ValueError("exposure queried past the forward maturity")
    rem = params.maturity - t
    return (np.asarray(phi, dtype=float) * np.exp(-params.rate_usd * rem)
            * params.notional_usd
            - np.exp(-params.rate_eur * rem) * params.notional_eur)


def fx_forward_exposure_dphi(t, params: MarketParams):
    """Exact FX delta of the exposure (independent of phi)."""
    t = np.asarray(t, dtype=float)
    if np.any(t > params.maturity + 1e-12):
        raise ValueError("exposure queried past the forward maturity")
    return np.exp(-params.rate_usd * (params.maturity - t)) * params.notional_usd


def black_call(fwd, strike, vol_sqrt_t):
    """Undiscounted Black call on a forward."""
    fwd = np.asarray(fwd, dtype=float)
    strike = np.asarray(strike, dtype=float)
    v = np.asarray(vol_sqrt_t, dtype=float)
    scalar = fwd.ndim == strike.ndim == v.ndim == 0
    fwd, strike, v = np.atleast_1d(*np.broadcast_arrays(fwd, strike, v))
    out = np.maximum(fwd - strike, 0.0)
    ok = (v > 0) & (fwd > 0) & (strike > 0)
    if np.any(ok):
        d1 = (np.log(fwd[ok] / strike[ok]) + 0.5 * v[ok] ** 2) / v[ok]
        out[ok] = fwd[ok] * ndtr(d1) - strike[ok] * ndtr(d1 - v[ok])
    return out[0] if scalar else out


# --------------------------------------------------------------------- CDS


@dataclass(frozen=True)
class CdsSpec:
    """A quarterly-coupon CDS written at time 0."""

    maturity: float        # years
    coupon: float          # annualized premium rate


@dataclass(frozen=True)
class PriceQuote:
    """Bid/ask pair; mid and semi-spread are derived exactly."""

    bid: np.ndarray | float
    ask: np.ndarray | float

    @property
    def mid(self):
        return 0.5 * (self.bid + self.ask)

    @property
    def semi_spread(self):
        return 0.5 * (self.ask - self.bid)


def _coupon_times(maturity: float) -> np.ndarray:
    n = int(round(maturity / 0.25))
    return 0.25 * np.arange(1, n + 1)


def _protection_edges(t: float, maturity: float, mesh: float = 1.0 / 12.0):
    n = max(1, int(math.ceil((maturity - t) / mesh - 1e-9)))
    return np.linspace(t, maturity, n + 1)


def cds_legs(lam, t, spec: CdsSpec, params: MarketParams, mesh: float = 1.0 / 12.0):
    """(annuity, protection) legs per unit notional from intensity level lam.

    annuity = sum of discounted, survival-weighted quarterly accruals (the
    premium leg equals coupon * annuity); protection = discounted expected
    loss (1 - recovery) on a monthly default mesh. Vectorized over lam.
    """
    if t >= spec.maturity - 1e-12:
        raise ValueError("CDS expired")
    lam = np.asarray(lam, dtype=float)
    pay = _coupon_times(spec.maturity)
    pay = pay[pay > t + 1e-12]
    disc_pay = np.exp(-params.rate_eur * (pay - t))
    A_pay, B_pay = _cir_affine(pay - t, params.kappa_q, params.theta_q,
                               params.sigma_lam_q)
    sp_pay = A_pay * np.exp(-np.multiply.outer(lam, B_pay))
    annuity = 0.25 * sp_pay @ disc_pay

    edges = _protection_edges(t, spec.maturity, mesh)
    A_e, B_e = _cir_affine(edges - t, params.kappa_q, params.theta_q,
                           params.sigma_lam_q)
    sp_e = A_e * np.exp(-np.multiply.outer(lam, B_e))
    mids = 0.5 * (edges[:-1] + edges[1:])
    disc_mid = np.exp(-params.rate_eur * (mids - t))
    protection = (1.0 - params.recovery) * (sp_e[..., :-1] - sp_e[..., 1:]) @ disc_mid
    return annuity, protection


def _cds_value(lam, t, spec, params, mesh=1.0 / 12.0):
    annuity, protection = cds_legs(lam, t, spec, params, mesh)
    return spec.coupon * annuity - protection


def cds_price(lam, t, spec: CdsSpec, params: MarketParams) -> PriceQuote:
    """Bid/ask quote for one unit of sold protection (long the credit risk).

    The quote re-prices at intensity bumps of +/- the intensity semi-spread;
    value decreases in intensity, so the up-bump is the bid. The down-bump
    is clamped at zero intensity.
    """
    lam = np.asarray(lam, dtype=float)
    g = params.cost_lambda
    bid = _cds_value(lam + g, t, spec, params)
    ask = _cds_value(np.maximum(lam - g, 0.0), t, spec, params)
    return PriceQuote(bid=bid, ask=ask)


def par_coupon(params: MarketParams, maturity: float, t: float = 0.0,
               lam=None) -> float:
    """Coupon that makes the quote mid vanish at intensity lam (default lam0)."""
    lam = params.lambda0 if lam is None else lam
    g = params.cost_lambda
    a_up, p_up = cds_legs(lam + g, t, CdsSpec(maturity, 0.0), params)
    a_dn, p_dn = cds_legs(max(lam - g, 0.0), t, CdsSpec(maturity, 0.0), params)
    return float((p_up + p_dn) / (a_up + a_dn))


def _quote_weights(t: float, spec: CdsSpec, params: MarketParams,
                   mesh: float = 1.0 / 12.0):
    """Exponential-sum form of the CDS value: v(lam) = sum_n w_n e^{-B_n lam}.

    Folds coupon leg and protection leg (telescoped over the mesh) into one
    weight/exponent pair so batched quotes cost a single exp array.
    """
    if t >= spec.maturity - 1e-12:
        raise ValueError("CDS expired")
    kq, thq, sgq = params.kappa_q, params.theta_q, params.sigma_lam_q
    pay = _coupon_times(spec.maturity)
    pay = pay[pay > t + 1e-12]
    A_p, B_p = _cir_affine(pay - t, kq, thq, sgq)
    w_pay = spec.coupon * 0.25 * np.exp(-params.rate_eur * (pay - t)) * A_p

    edges = _protection_edges(t, spec.maturity, mesh)
    A_e, B_e = _cir_affine(edges - t, kq, thq, sgq)
    mids = 0.5 * (edges[:-1] + edges[1:])
    u = np.exp(-params.rate_eur * (mids - t))
    lgd = 1.0 - params.recovery
    w_e = np.empty_like(edges)
    w_e[0] = -lgd * u[0]
    w_e[1:-1] = -lgd * (u[1:] - u[:-1])
    w_e[-1] = lgd * u[-1]
    w_e *= A_e

    weights = np.concatenate([w_pay, w_e])
    exponents = np.concatenate([B_p, B_e])
    return weights, exponents


def cds_quote_greeks(lam, t, spec: CdsSpec, params: MarketParams,
                     mesh: float = 1.0 / 12.0):
    """(mid, semi_spread, d mid / d lam) of the bid/ask quote, vectorized.

    Same quoting rule as cds_price: re-price at lam +/- the intensity
    half-width, down-bump clamped at zero (where the ask is locally flat
    in lam, so its derivative contribution vanishes).
    """
    w, b = _quote_weights(t, spec, params, mesh)
    g = params.cost_lambda
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    expo = np.exp(-np.multiply.outer(lam, b))
    w_up = w * np.exp(-b * g)
    w_dn = w * np.exp(b * g)
    bid = expo @ w_up
    dbid = -(expo @ (w_up * b))
    ask = expo @ w_dn
    dask = -(expo @ (w_dn * b))
    clamped = lam < g
    if np.any(clamped):
        ask[clamped] = np.sum(w)          # value at zero intensity
        dask[clamped] = 0.0
    mid = 0.5 * (bid + ask)
    semi = 0.5 * (ask - bid)
    dmid = 0.5 * (dbid + dask)
    return mid, semi, dmid


class CdsTable:
    """Per-grid-node CDS quote evaluator for rollout batches.

    Precomputes the exponential-sum weights of cds_quote_greeks at every
    node time, so a batch of (mid, semi-spread, d/d lam) marks costs one
    (episodes x terms) exp plus a few mat-vecs per node.
    """

    def __init__(self, times: np.ndarray, spec: CdsSpec, params: MarketParams,
                 mesh: float = 1.0 / 12.0):
        self.spec = spec
        self.gamma = params.cost_lambda
        self._nodes = []
        for t in times:
            w, b = _quote_weights(float(t), spec, params, mesh)
            self._nodes.append((
                b, w * np.exp(-b * self.gamma), w * np.exp(b * self.gamma),
                float(np.sum(w))))

    def greeks(self, node: int, lam: np.ndarray):
        """(mid, semi_spread, d mid / d lam) at grid node index `node`."""
        b, w_up, w_dn, v_zero = self._nodes[node]
        lam = np.asarray(lam, dtype=float)
        expo = np.exp(-np.multiply.outer(lam, b))
        bid = expo @ w_up
        dbid = -(expo @ (w_up * b))
        ask = expo @ w_dn
        dask = -(expo @ (w_dn * b))
        clamped = lam < self.gamma
        if np.any(clamped):
            ask = np.where(clamped, v_zero, ask)
            dask = np.where(clamped, 0.0, dask)
        return (0.5 * (bid + ask), 0.5 * (ask - bid), 0.5 * (dbid + dask))


# ------------------------------------------------------- CVA (quadrature)


def _quad_nodes(t: float, params: MarketParams, n_sub: int):
    """Per-sub-interval coefficients for the survival-weighted call quadrature."""
    T = params.maturity
    edges = np.linspace(t, T, n_sub + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    disc_eur = np.exp(-params.rate_eur * (mids - t))
    p_usd = np.exp(-params.rate_usd * (T - mids))
    p_eur = np.exp(-params.rate_eur * (T - mids))
    strike = p_eur * params.notional_eur / (p_usd * params.notional_usd)
    fwd_mult = np.exp(params.fx_drift_q * (mids - t))
    vol = params.fx_vol_q * np.sqrt(mids - t)
    A_e, B_e = _cir_affine(edges - t, params.kappa_q, params.theta_q,
                           params.sigma_lam_q)
    return disc_eur, p_usd, strike, fwd_mult, vol, A_e, B_e


def cva_quadrature(phi, lam, t, params: MarketParams, n_sub: int = 60):
    """CVA of the FX forward by survival-weighted Black-call quadrature.

    Valid only when the pricing-measure FX/intensity correlation is zero
    (the default-time distribution then factorizes from the FX law); use
    cva_pde otherwise. Broadcasts over phi and lam. CVA is nonpositive.
    """
    value, _, _ = cva_quad_greeks(phi, lam, t, params, n_sub)
    return value


def cva_quad_greeks(phi, lam, t, params: MarketParams, n_sub: int = 60):
    """(value, dphi, dlam) of the quadrature CVA, derivatives in closed form."""
    if abs(params.corr_q) > 1e-12:
        raise WrongPricerError(
            "quadrature CVA assumes zero pricing-measure correlation; "
            "use cva_pde")
    if t > params.maturity + 1e-12:
        raise ValueError("CVA queried past the forward maturity")
    phi = np.asarray(phi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    phi, lam = np.broadcast_arrays(phi, lam)
    if params.maturity - t < 1e-12:
        z = np.zeros(phi.shape)
        return z, z.copy(), z.copy()

    disc_eur, p_usd, strike, fwd_mult, vol, A_e, B_e = _quad_nodes(
        t, params, n_sub)
    sp = A_e * np.exp(-np.multiply.outer(lam, B_e))      # (..., n_sub+1)
    q = sp[..., :-1] - sp[..., 1:]                       # default probs
    dq = (B_e * A_e) * np.exp(-np.multiply.outer(lam, B_e))
    dq = -dq[..., :-1] + dq[..., 1:]                     # d q / d lam

    fwd = np.multiply.outer(phi, fwd_mult)               # (..., n_sub)
    d1 = (np.log(fwd / strike) + 0.5 * vol * vol) / vol
    call = fwd * ndtr(d1) - strike * ndtr(d1 - vol)
    dcall_dphi = ndtr(d1) * fwd_mult

    lead = -(1.0 - params.recovery) * params.notional_usd * disc_eur * p_usd
    value = np.sum(lead * call * q, axis=-1)
    dphi = np.sum(lead * dcall_dphi * q, axis=-1)
    dlam = np.sum(lead * call * dq, axis=-1)
    return value, dphi, dlam


# -------------------------------------------------------------- CVA (PDE)


def _d1_weights(x):
    """Nonuniform central first-derivative weights (lo, mid, up) per node."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    lo = -hp / (hm * (hm + hp))
    mid = (hp - hm) / (hm * hp)
    up = hm / (hp * (hm + hp))
    return lo, mid, up


def _d2_weights(x):
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    lo = 2.0 / (hm * (hm + hp))
    mid = -2.0 / (hm * hp)
    up = 2.0 / (hp * (hm + hp))
    return lo, mid, up


class CvaPde:
    """Backward Douglas ADI solver for the CVA pricing PDE.

    State (phi, lam); operator split into a phi-direction part, a
    lam-direction part carrying the full discounting term, and an explicit
    mixed-derivative term. Dirichlet data on the phi edges and the upper
    lam edge come from the zero-correlation quadrature (far-field
    approximation when the correlation is nonzero); the lam = 0 edge is
    degenerate (inward drift, vanishing diffusion) and is evolved with a
    one-sided stencil.
    """

    def __init__(self, params: MarketParams, n_phi: int = 200,
                 n_lam: int = 120, steps_per_year: float = 730.0,
                 phi_span: float = 3.0):
        params.validate()
        self.params = params
        self.phi_grid = np.geomspace(params.fx0 / phi_span,
                                     params.fx0 * phi_span, n_phi)
        self.lam_max = 8.0 * params.theta_q
        self.lam_grid = np.linspace(0.0, self.lam_max, n_lam)
        self.steps_per_year = steps_per_year
        self._slices: dict[float, np.ndarray] = {}
        self._qparams = self._uncorrelated_params()

    def _uncorrelated_params(self) -> MarketParams:
        from dataclasses import replace
        return replace(self.params, corr_q=0.0)

    # ---- operators -----------------------------------------------------

    def _build_operators(self):
        p, x, y = self.params, self.phi_grid, self.lam_grid
        # phi direction (per lam row): drift + diffusion, no discounting
        lo1d, mid1d, up1d = _d1_weights(x)
        lo2d, mid2d, up2d = _d2_weights(x)
        xc = x[1:-1]
        conv = p.fx_drift_q * xc
        diff = 0.5 * p.fx_vol_q ** 2 * xc ** 2
        self._L1 = (conv * lo1d + diff * lo2d,
                    conv * mid1d + diff * mid2d,
                    conv * up1d + diff * up2d)
        # lam direction: CIR drift + diffusion + full discounting -(r + lam)
        dy = y[1] - y[0]
        yc = y[1:-1]
        conv = p.kappa_q * (p.theta_q - yc)
        diff = 0.5 * p.sigma_lam_q ** 2 * yc
        lo = -conv / (2 * dy) + diff / dy ** 2
        mid = -2 * diff / dy ** 2 - (p.rate_eur + yc)
        up = conv / (2 * dy) + diff / dy ** 2
        # degenerate lam = 0 row: one-sided drift, no diffusion
        mid0 = -p.kappa_q * p.theta_q / dy - p.rate_eur
        up0 = p.kappa_q * p.theta_q / dy
        self._L2 = (lo, np.concatenate([[mid0], mid]),
                    np.concatenate([[up0], up]))
        # mixed term coefficient on the interior
        self._cross = (p.corr_q * p.fx_vol_q * p.sigma_lam_q
                       * np.sqrt(yc)[:, None] * xc[None, :])
        self._dx2 = x[2:] - x[:-2]
        self._dy2 = 2 * dy

    def _apply_l1(self, psi):
        out = np.zeros_like(psi)
        lo, mid, up = self._L1
        out[:, 1:-1] = lo * psi[:, :-2] + mid * psi[:, 1:-1] + up * psi[:, 2:]
        return out

    def _apply_l2(self, psi):
        out = np.zeros_like(psi)
        lo, mid, up = self._L2
        out[1:-1, :] = (lo[:, None] * psi[:-2, :]
                        + mid[1:, None] * psi[1:-1, :]
                        + up[1:, None] * psi[2:, :])
        out[0, :] = mid[0] * psi[0, :] + up[0] * psi[1, :]
        return out

    def _apply_mixed(self, psi):
        out = np.zeros_like(psi)
        if abs(self.params.corr_q) < 1e-15:
            return out
        num = (psi[2:, 2:] - psi[2:, :-2] - psi[:-2, 2:] + psi[:-2, :-2])
        out[1:-1, 1:-1] = self._cross * num / (self._dy2 * self._dx2)
        return out

    def _banded_phi(self, dt):
        lo, mid, up = self._L1
        n = len(self.phi_grid)
        ab = np.zeros((3, n))
        ab[1, 0] = ab[1, -1] = 1.0               # Dirichlet edges
        ab[1, 1:-1] = 1.0 - 0.5 * dt * mid
        ab[0, 2:] = -0.5 * dt * up                # superdiag
        ab[2, :-2] = -0.5 * dt * lo               # subdiag
        return ab

    def _banded_lam(self, dt):
        lo, mid, up = self._L2
        n = len(self.lam_grid)
        ab = np.zeros((3, n))
        ab[1, 0] = 1.0 - 0.5 * dt * mid[0]
        ab[0, 1] = -0.5 * dt * up[0]
        ab[1, 1:-1] = 1.0 - 0.5 * dt * mid[1:]
        ab[0, 2:] = -0.5 * dt * up[1:]
        ab[2, :-2] = -0.5 * dt * lo
        ab[1, -1] = 1.0                           # Dirichlet top edge
        ab[2, -2] = 0.0
        return ab

    # ---- boundary & source --------------------------------------------

    def _boundaries(self, t):
        q = self._qparams
        left = cva_quadrature(self.phi_grid[0], self.lam_grid, t, q)
        right = cva_quadrature(self.phi_grid[-1], self.lam_grid, t, q)
        top = cva_quadrature(self.phi_grid, self.lam_max, t, q)
        return left, right, top

    def _source(self, t):
        p = self.params
        epos = np.maximum(fx_forward_exposure(self.phi_grid, t, p), 0.0)
        return (1.0 - p.recovery) * self.lam_grid[:, None] * epos[None, :]

    def _set_boundaries(self, psi, bounds):
        left, right, top = bounds
        psi[:, 0] = left
        psi[:, -1] = right
        psi[-1, :] = top

    # ---- march ---------------------------------------------------------

    def solve(self, t: float) -> np.ndarray:
        """March from maturity down to t; returns (and caches) the slice."""
        key = round(float(t), 12)
        if key in self._slices:
            return self._slices[key]
        p = self.params
        if not -1e-12 <= t <= p.maturity + 1e-12:
            raise ExtrapolationError("PDE query time outside [0, maturity]")
        horizon = p.maturity - t
        n_steps = max(2, int(math.ceil(horizon * self.steps_per_year)))
        dt = horizon / n_steps
        self._build_operators()
        ab1 = self._banded_phi(dt)
        ab2 = self._banded_lam(dt)

        psi = np.zeros((len(self.lam_grid), len(self.phi_grid)))
        for n in range(n_steps):
            t_old = p.maturity - n * dt
            t_new = t_old - dt
            f_mid = self._source(t_old - 0.5 * dt)
            bounds = self._boundaries(t_new)
            l1 = self._apply_l1(psi)
            l2 = self._apply_l2(psi)
            y0 = psi + dt * (l1 + l2 + self._apply_mixed(psi) - f_mid)
            rhs = y0 - 0.5 * dt * l1
            rhs[:, 0] = bounds[0]
            rhs[:, -1] = bounds[1]
            y1 = solve_banded((1, 1), ab1, rhs.T).T
            y1[-1, :] = bounds[2]
            rhs = y1 - 0.5 * dt * l2
            rhs[-1, :] = bounds[2]
            psi = solve_banded((1, 1), ab2, rhs)
            self._set_boundaries(psi, bounds)
        self._slices[key] = psi
        return psi

    def value(self, phi, lam, t: float):
        """Bilinear interpolation of the t-slice; errors outside the grid."""
        psi = self.solve(t)
        phi = np.asarray(phi, dtype=float)
        lam = np.asarray(lam, dtype=float)
        x, y = self.phi_grid, self.lam_grid
        if (np.any(phi < x[0]) or np.any(phi > x[-1])
                or np.any(lam < y[0]) or np.any(lam > y[-1])):
            raise ExtrapolationError("query point outside the PDE grid")
        jx = np.clip(np.searchsorted(x, phi, side="right"), 1, len(x) - 1)
        jy = np.clip(np.searchsorted(y, lam, side="right"), 1, len(y) - 1)
        wx = (phi - x[jx - 1]) / (x[jx] - x[jx - 1])
        wy = (lam - y[jy - 1]) / (y[jy] - y[jy - 1])
        v00 = psi[jy - 1, jx - 1]
        v01 = psi[jy - 1, jx]
        v10 = psi[jy, jx - 1]
        v11 = psi[jy, jx]
        return ((1 - wy) * ((1 - wx) * v00 + wx * v01)
                + wy * ((1 - wx) * v10 + wx * v11))


_PDE_CACHE: dict[tuple, CvaPde] = {}


def cva_pde(phi, lam, t, params: MarketParams, n_phi: int = 200,
            n_lam: int = 120, steps_per_year: float = 730.0) -> np.ndarray:
    """CVA via the ADI PDE solver (cached per parameter set and resolution)."""
    key = (tuple(getattr(params, f) for f in (
        "maturity", "notional_usd", "notional_eur", "recovery", "rate_eur",
        "rate_usd", "fx0", "fx_vol_q", "fx_drift_q", "corr_q", "kappa_q",
        "theta_q", "sigma_lam_q")), n_phi, n_lam, steps_per_year)
    solver = _PDE_CACHE.get(key)
    if solver is None:
        solver = CvaPde(params, n_phi=n_phi, n_lam=n_lam,
                        steps_per_year=steps_per_year)
        _PDE_CACHE[key] = solver
    return solver.value(phi, lam, t)


# ------------------------------------------------------------ sensitivities


def sensitivities(pricer, phi, lam, rel_bump_phi: float = 1e-4,
                  abs_bump_lam: float = 1e-4):
    """Central finite-difference (dphi, dlam) of pricer(phi, lam).

    The intensity bump switches to a one-sided forward difference when the
    down-bump would push the intensity negative.
    """
    phi = np.asarray(phi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    h_phi = rel_bump_phi * phi
    dphi = (pricer(phi + h_phi, lam) - pricer(phi - h_phi, lam)) / (2 * h_phi)
    h = abs_bump_lam
    down_ok = lam - h >= 0.0
    lam_dn = np.where(down_ok, lam - h, lam)
    up = pricer(phi, lam + h)
    dn = pricer(phi, lam_dn)
    dlam = np.where(down_ok, (up - dn) / (2 * h), (up - dn) / h)
    return dphi, dlam
