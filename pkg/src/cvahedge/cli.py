"""Command-line entry point.

Subcommands::

    simulate   draw market paths and write per-node rows to CSV
    price      print a CVA value or CDS quote under a config's parameters
    train      train one risk-averse agent; write learning curve + checkpoint
    evaluate   out-of-sample evaluation of one policy; write a summary CSV
    frontier   benchmarks + one agent per beta on a common seed; frontier CSV
    compare    paired significance test between two policies

Shared flags: ``--config`` (path or bundled preset name), ``--beta``,
``--seed``, ``--episodes``, ``--iterations``, ``--b0``,
``--mode naive|is``, ``--out``. Exit code 0 on success; errors print a
message to stderr and return a nonzero code.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .benchmarks import BenchmarkKind, benchmark_policy
from .config import (ExperimentConfig, available_presets, config_hash,
                     load_config)
from .errors import InconsistentInputError
from .harness import (COMPARE_FIELDS, CURVE_FIELDS, FRONTIER_FIELDS,
                      compare_policies, frontier, frontier_rows,
                      load_checkpoint, path_rows, save_checkpoint,
                      trajectory_rows, write_csv)
from .market_sim import build_batch
from .pricing import CdsSpec, cds_quote_greeks, cva_pde, cva_quadrature, par_coupon
from .trvo import evaluate, train

__all__ = ["main"]

POLICY_ALIASES = {
    "zero": "zero", "zero-action": "zero",
    "delta": "delta", "delta-hedge": "delta",
    "jump": "jump", "jump-hedge": "jump",
    "two-cds": "two-cds", "two-cds-baseline": "two-cds",
    "agent": "agent",
}

EVAL_FIELDS = ["label", "beta", "gamma", "episodes", "seed", "mode", "b0",
               "j_hat", "nu2_hat", "eta_hat", "se_j", "se_nu2", "se_eta",
               "default_fraction"]


def _parse_betas(text: str) -> tuple[float, ...]:
    try:
        betas = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise InconsistentInputError(f"bad --beta value {text!r}") from exc
    if not betas:
        raise InconsistentInputError("--beta needs at least one value")
    return betas


def _apply_overrides(config: ExperimentConfig,
                     args: argparse.Namespace) -> ExperimentConfig:
    """Fold command-line overrides into the loaded configuration.

    ``--seed``/``--episodes`` refer to training for ``train`` and to
    episode generation (out-of-sample or simulation) everywhere else;
    ``--iterations``, ``--mode`` and ``--b0`` always target the training
    loop except under ``simulate``/``evaluate``, where mode/b0 select the
    sampling scheme of the generated episodes directly (handled by the
    subcommands themselves).
    """
    train_updates: dict = {}
    config_updates: dict = {}
    if args.command == "train":
        if args.seed is not None:
            train_updates["seed"] = args.seed
        if args.episodes is not None:
            train_updates["n_episodes"] = args.episodes
    else:
        if args.seed is not None:
            config_updates["eval_seed"] = args.seed
        if args.episodes is not None:
            config_updates["eval_episodes"] = args.episodes
    if args.iterations is not None:
        train_updates["iterations"] = args.iterations
    if args.command in ("train", "frontier"):
        if args.mode is not None:
            train_updates["mode"] = args.mode
        if args.b0 is not None:
            train_updates["b0"] = args.b0
    if args.beta is not None:
        betas = _parse_betas(args.beta)
        config_updates["betas"] = betas
        train_updates["beta"] = betas[0]
    if args.out is not None:
        config_updates["out_dir"] = args.out
    if train_updates:
        config_updates["train"] = dataclasses.replace(config.train,
                                                      **train_updates)
    if config_updates:
        config = dataclasses.replace(config, **config_updates)
    config.validate()
    return config


def _resolve_policy(config: ExperimentConfig, args: argparse.Namespace,
                    env, which: str = "policy"):
    """(label, callable) for a --policy/--policy-a/--policy-b choice."""
    raw = getattr(args, which.replace("-", "_"))
    label = POLICY_ALIASES.get(raw)
    if label is None:
        raise InconsistentInputError(
            f"unknown {which} {raw!r}; choose from "
            f"{sorted(set(POLICY_ALIASES))}")
    if label != "agent":
        return label, benchmark_policy(BenchmarkKind(label), env)
    ckpt = getattr(args, which.replace("policy", "checkpoint")
                   .replace("-", "_"))
    if ckpt is None:
        raise InconsistentInputError(
            f"--{which} agent needs a --{which.replace('policy', 'checkpoint')}")
    policy, meta = load_checkpoint(ckpt)
    own_hash = config_hash(config)
    if meta.get("config_hash") not in (None, own_hash):
        print(f"warning: checkpoint {ckpt} was trained under a different "
              f"configuration (hash {meta.get('config_hash')} != {own_hash})",
              file=sys.stderr)
    stem = Path(ckpt).stem
    stem = stem[6:] if stem.startswith("agent-") else stem
    return f"agent:{stem}", policy.as_mean()


# ------------------------------------------------------------- subcommands

def _cmd_simulate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    n_episodes = args.episodes if args.episodes is not None else 10
    seed = args.seed if args.seed is not None else config.eval_seed
    mode = args.mode or "naive"
    b0 = args.b0 if args.b0 is not None else \
        (config.train.b0 if mode == "is" else 0)
    batch = build_batch(config.market, config.build_grid(), n_episodes,
                        seed=seed, mode=mode, b0=b0)
    fields, rows = path_rows(batch)
    out = Path(args.out or config.out_dir)
    path = write_csv(out / f"paths-seed{seed}.csv", fields, rows)
    frac = float(np.mean(batch.defaulted))
    print(f"simulated {n_episodes} episodes ({mode}), default fraction "
          f"{frac:.4f}, wrote {path}")
    return 0


def _cmd_price(config: ExperimentConfig, args: argparse.Namespace) -> int:
    params = config.market
    t = args.t
    phi = args.phi if args.phi is not None else params.fx0
    lam = args.lam if args.lam is not None else params.lambda0
    if args.instrument == "cva":
        pricer = cva_pde if args.method == "pde" else cva_quadrature
        value = pricer(phi, lam, t, params)
        print(f"cva[{args.method}](t={t:g}, phi={phi:g}, lam={lam:g}) "
              f"= {value:.9e}")
        return 0
    maturity = args.maturity if args.maturity is not None \
        else config.cds[0].maturity
    coupon = args.coupon if args.coupon is not None else config.cds[0].coupon
    spec = CdsSpec(maturity=maturity, coupon=coupon)
    mid, semi, dmid = (float(np.atleast_1d(x)[0])
                       for x in cds_quote_greeks(lam, t, spec, params))
    par = par_coupon(params, maturity, t=t, lam=lam)
    print(f"cds(maturity={maturity:g}, coupon={coupon:g}, t={t:g}, "
          f"lam={lam:g}): mid = {mid:.9e}, bid = {mid - semi:.9e}, "
          f"ask = {mid + semi:.9e}, dmid/dlam = {dmid:.9e}, "
          f"par_coupon = {par:.9e}")
    return 0


def _cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> int:
    env = config.build_env()
    cfg = config.train
    policy, curve = train(env, cfg)
    out = Path(args.out or config.out_dir)
    label = f"beta{cfg.beta:g}-seed{cfg.seed}"
    curve_path = write_csv(out / f"curve-{label}.csv", CURVE_FIELDS, curve)
    ckpt_path = save_checkpoint(out / f"agent-{label}.npz", policy,
                                {"beta": cfg.beta, "name": config.name,
                                 "config_hash": config_hash(config)})
    if curve:
        print(f"trained {cfg.iterations} iterations "
              f"(B={cfg.n_episodes}, beta={cfg.beta:g}, mode={cfg.mode}): "
              f"final in-sample -eta = {curve[-1]['neg_eta']:.6e}")
    else:
        print("trained 0 iterations: checkpoint holds the initial policy")
    print(f"wrote {curve_path} and {ckpt_path}")
    return 0


def _cmd_evaluate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    env = config.build_env()
    label, policy_fn = _resolve_policy(config, args, env)
    beta = config.betas[0]
    mode = args.mode or "naive"
    b0 = args.b0 if args.b0 is not None else \
        (config.train.b0 if mode == "is" else 0)
    ev = evaluate(policy_fn, env, config.eval_episodes, config.eval_seed,
                  beta=beta, gamma=1.0, mode=mode, b0=b0)
    out = Path(args.out or config.out_dir)
    row = {"label": label, "beta": beta, "gamma": 1.0,
           "episodes": ev.n_episodes, "seed": config.eval_seed,
           "mode": mode, "b0": b0, "j_hat": ev.j_hat,
           "nu2_hat": ev.nu2_hat, "eta_hat": ev.eta_hat, "se_j": ev.se_j,
           "se_nu2": ev.se_nu2, "se_eta": ev.se_eta,
           "default_fraction": ev.default_fraction}
    path = write_csv(out / f"eval-{label.replace(':', '-')}-"
                           f"seed{config.eval_seed}.csv",
                     EVAL_FIELDS, [row])
    if args.dump_trajectories:
        n_dump = min(args.dump_trajectories, config.eval_episodes)
        batch = build_batch(config.market, env.grid, n_dump,
                            seed=config.eval_seed, mode=mode,
                            b0=min(b0, n_dump - 1) if mode == "is" else 0)
        traj = env.run_batch(policy_fn, batch)
        t_fields, t_rows = trajectory_rows(traj, env)
        t_path = write_csv(out / f"trajectories-{label.replace(':', '-')}-"
                                 f"seed{config.eval_seed}.csv",
                           t_fields, t_rows)
        print(f"wrote {t_path}")
    print(f"{label}: J = {ev.j_hat:.6e} (se {ev.se_j:.2e}), "
          f"nu2 = {ev.nu2_hat:.6e} (se {ev.se_nu2:.2e}), "
          f"eta[beta={beta:g}] = {ev.eta_hat:.6e} (se {ev.se_eta:.2e}), "
          f"defaults {ev.default_fraction:.4f}")
    print(f"wrote {path}")
    return 0


def _cmd_frontier(config: ExperimentConfig, args: argparse.Namespace) -> int:
    out = Path(args.out or config.out_dir)
    points, artifacts = frontier(
        config, progress=lambda msg: print(msg, file=sys.stderr))
    path = write_csv(out / "frontier.csv", FRONTIER_FIELDS,
                     frontier_rows(points, config))
    for beta, curve in artifacts["curves"].items():
        write_csv(out / f"curve-beta{beta:g}-seed{config.train.seed}.csv",
                  CURVE_FIELDS, curve)
    for beta, policy in artifacts["policies"].items():
        save_checkpoint(out / f"agent-beta{beta:g}-seed{config.train.seed}.npz",
                        policy, {"beta": beta, "name": config.name,
                                 "config_hash": config_hash(config)})
    for p in points:
        print(f"{p.label:>16s}: nu2 = {p.nu2_hat:.6e}  J = {p.j_hat:.6e}  "
              f"eta = {p.eta_hat:.6e}")
    print(f"wrote {path}")
    return 0


def _cmd_compare(config: ExperimentConfig, args: argparse.Namespace) -> int:
    env = config.build_env()
    label_a, fn_a = _resolve_policy(config, args, env, "policy-a")
    label_b, fn_b = _resolve_policy(config, args, env, "policy-b")
    beta = config.betas[0]
    row = compare_policies(env, label_a, fn_a, label_b, fn_b,
                           config.eval_episodes, config.eval_seed, beta)
    out = Path(args.out or config.out_dir)
    safe_a = label_a.replace(":", "-")
    safe_b = label_b.replace(":", "-")
    path = write_csv(out / f"compare-{safe_a}-vs-{safe_b}-"
                           f"seed{config.eval_seed}.csv",
                     COMPARE_FIELDS, [row])
    stars = row["stars"] or "n.s."
    print(f"eta[{label_a}] = {row['eta_a']:.6e}, "
          f"eta[{label_b}] = {row['eta_b']:.6e}, "
          f"diff = {row['mean_diff']:.6e}, t = {row['t_stat']:.3f}, "
          f"p = {row['p_value']:.4g} {stars}")
    print(f"wrote {path}")
    return 0


# ------------------------------------------------------------------ parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvahedge",
        description="CVA hedging: simulation, pricing, risk-averse "
                    "training, and frontier evaluation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="nodefault-100bp",
                        help="config file path or bundled preset name "
                             f"(presets: {', '.join(available_presets())})")
    common.add_argument("--beta", default=None,
                        help="risk aversion; comma list allowed (frontier)")
    common.add_argument("--seed", type=int, default=None,
                        help="training seed (train) or episode seed (others)")
    common.add_argument("--episodes", type=int, default=None,
                        help="batch size (train) or episode count (others)")
    common.add_argument("--iterations", type=int, default=None,
                        help="training iterations (0 = initial policy)")
    common.add_argument("--b0", type=int, default=None,
                        help="defaulted episodes per importance-sampled batch")
    common.add_argument("--mode", choices=("naive", "is"), default=None,
                        help="episode sampling scheme")
    common.add_argument("--out", default=None,
                        help="output directory (default: config out_dir)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="draw market paths and dump them to CSV")

    price = sub.add_parser("price", parents=[common],
                           help="print CVA value or CDS quote")
    price.add_argument("instrument", choices=("cva", "cds"))
    price.add_argument("--t", type=float, default=0.0)
    price.add_argument("--phi", type=float, default=None)
    price.add_argument("--lam", type=float, default=None)
    price.add_argument("--method", choices=("quadrature", "pde"),
                       default="quadrature")
    price.add_argument("--maturity", type=float, default=None)
    price.add_argument("--coupon", type=float, default=None)

    sub.add_parser("train", parents=[common],
                   help="train one agent; write curve CSV + checkpoint")

    ev = sub.add_parser("evaluate", parents=[common],
                        help="out-of-sample evaluation of one policy")
    ev.add_argument("--policy", default="zero",
                    help="zero | delta | jump | two-cds | agent "
                         "(hedge-suffixed aliases accepted)")
    ev.add_argument("--checkpoint", default=None,
                    help="agent checkpoint (.npz) for --policy agent")
    ev.add_argument("--dump-trajectories", type=int, default=0,
                    metavar="N", help="also dump N episodes' steps to CSV")

    sub.add_parser("frontier", parents=[common],
                   help="train per beta, evaluate all policies, frontier CSV")

    cmp_p = sub.add_parser("compare", parents=[common],
                           help="paired significance test of two policies")
    cmp_p.add_argument("--policy-a", required=True)
    cmp_p.add_argument("--policy-b", required=True)
    cmp_p.add_argument("--checkpoint-a", default=None)
    cmp_p.add_argument("--checkpoint-b", default=None)
    return parser


_COMMANDS = {"simulate": _cmd_simulate, "price": _cmd_price,
             "train": _cmd_train, "evaluate": _cmd_evaluate,
             "frontier": _cmd_frontier, "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        config = _apply_overrides(config, args)
        return _COMMANDS[args.command](config, args)
    except Exception as exc:  # CLI boundary: report, do not traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
