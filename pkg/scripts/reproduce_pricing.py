#!/usr/bin/env python3
"""Reproduce the pricing numbers behind the shipped presets.

Prints the initial-state CVA for each scenario (quadrature and, with
--pde, the ADI PDE cross-check on a probe grid) plus the par coupons
used by the bundled CDS specs.
"""

import argparse

import numpy as np

from cvahedge.config import available_presets, load_config
from cvahedge.pricing import cva_pde, cva_quadrature, par_coupon


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pde", action="store_true",
                        help="also run the PDE cross-check (slower)")
    args = parser.parse_args()

    for name in available_presets():
        config = load_config(name)
        market = config.market
        cva0 = cva_quadrature(market.fx0, market.lambda0, 0.0, market)
        print(f"{name}: CVA(t0) = {cva0:.6e}")
        for spec in config.cds:
            par = par_coupon(market, spec.maturity)
            print(f"  {spec.maturity:g}Y CDS: preset coupon {spec.coupon:.6f}"
                  f", par coupon {par:.6f}")

    if args.pde:
        market = load_config("nodefault-100bp").market
        phis = np.linspace(0.85, 1.15, 5)
        print("\nPDE vs quadrature, relative difference (rows: intensity):")
        for lam in np.linspace(0.004, 0.05, 5):
            quad = cva_quadrature(phis, lam, 0.0, market)
            pde = cva_pde(phis, lam, 0.0, market)
            rel = np.abs(pde - quad) / np.abs(quad)
            cells = " ".join(f"{r:.2e}" for r in rel)
            print(f"  lam={lam:.3f}: {cells}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
