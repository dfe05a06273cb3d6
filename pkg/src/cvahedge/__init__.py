"""Risk-averse reinforcement learning for CVA hedging.

Modules
-------
market_sim   correlated FX/credit simulation and rare-default importance sampling
pricing      CDS and CVA pricers (survival quadrature and a 2-D ADI PDE)
book_env     the hedging-book MDP (rewards, costs, collateral, default settlement)
policy       Gaussian tanh-MLP policy with manual backprop
trvo         stochastic-horizon mean/volatility estimators and trust-region training
benchmarks   deterministic hedging baselines
config       dataclass configs and YAML presets
harness      evaluation, frontier, and significance testing
cli          command-line entry point
"""

__version__ = "0.1.0"
