"""Experiment orchestration: frontier runs, paired tests, CSV artifacts.

Every artifact is written deterministically: fixed float formatting
(12 significant digits), LF line endings, and seeded episode generation,
so repeating a command with the same configuration reproduces files
byte for byte. All policies inside one frontier run are evaluated on a
common out-of-sample seed (common random numbers), which makes paired
significance tests across policies valid.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .benchmarks import BenchmarkKind, benchmark_policy
from .book_env import N_BASE_FEATURES, BookEnv, TrajectoryBatch
from .config import ExperimentConfig
from .errors import InconsistentInputError, SingularHedgeError
from .market_sim import PathBatch
from .policy import GaussianPolicy
from .trvo import EvalStats, evaluate, train

__all__ = ["FrontierPoint", "SignificanceResult", "frontier",
           "significance_test", "compare_policies", "write_csv",
           "benchmark_policies", "path_rows", "trajectory_rows",
           "feature_names", "action_names", "save_checkpoint",
           "load_checkpoint"]


def save_checkpoint(path: str | Path, policy: GaussianPolicy,
                    meta: dict | None = None) -> Path:
    """Policy weights plus string/scalar metadata in one .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = policy.to_arrays()
    for key, value in (meta or {}).items():
        arrays[f"meta_{key}"] = np.array(value)
    np.savez(path, **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[GaussianPolicy, dict]:
    with np.load(path) as data:
        arrays = dict(data)
    meta = {}
    for key in list(arrays):
        if key.startswith("meta_"):
            value = arrays.pop(key)
            meta[key[5:]] = value.item() if value.ndim == 0 else value
    return GaussianPolicy.from_arrays(arrays), meta


# --------------------------------------------------------------- CSV output

def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, fieldnames: Sequence[str],
              rows: Sequence[dict]) -> Path:
    """Deterministic CSV: fixed field order, .12g floats, LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames),
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row[k]) for k in fieldnames})
    return path


def feature_names(n_cds: int) -> list[str]:
    names = ["days_to_maturity", "intensity", "fx", "book_dlam", "book_usd",
             "cva", "cva_dlam", "cva_dphi"]
    for m in range(n_cds):
        names += [f"cds{m}_mid", f"cds{m}_dlam"]
    return names


def action_names(n_cds: int) -> list[str]:
    return [f"act_dlam{m}" for m in range(n_cds)] + ["act_dphi"]


def path_rows(batch: PathBatch) -> tuple[list[str], list[dict]]:
    """Per-node market rows of a simulated path batch."""
    fields = ["episode", "node", "time", "fx", "intensity", "hazard",
              "defaulted", "tau", "weight"]
    times = batch.grid.times
    rows = []
    for e in range(len(batch)):
        tau = batch.tau[e]
        for node in range(len(times)):
            rows.append({
                "episode": e, "node": node, "time": float(times[node]),
                "fx": float(batch.phi[e, node]),
                "intensity": float(batch.lam[e, node]),
                "hazard": float(batch.hazard[e, node]),
                "defaulted": bool(batch.defaulted[e]),
                "tau": float(tau) if np.isfinite(tau) else float("inf"),
                "weight": float(batch.weight[e])})
    return fields, rows


def trajectory_rows(traj: TrajectoryBatch, env: BookEnv,
                    max_episodes: int | None = None
                    ) -> tuple[list[str], list[dict]]:
    """Per-step rows (state, action, reward) of rolled-out episodes."""
    f_names = feature_names(env.n_cds)
    a_names = action_names(env.n_cds)
    fields = (["episode", "step", "time", "reward", "done"]
              + f_names + a_names)
    rows = []
    n_ep = len(traj) if max_episodes is None else min(len(traj), max_episodes)
    for e in range(n_ep):
        eps = int(traj.lengths[e])
        for i in range(eps):
            row = {"episode": e, "step": i,
                   "time": float(env.grid.times[i]),
                   "reward": float(traj.rewards[e, i]),
                   "done": i + 1 == eps}
            row.update(zip(f_names, map(float, traj.states[e, i])))
            row.update(zip(a_names, map(float, traj.actions[e, i])))
            rows.append(row)
    return fields, rows


# ----------------------------------------------------------------- frontier

@dataclass
class FrontierPoint:
    """One policy's out-of-sample performance (benchmarks carry beta=0)."""

    label: str
    beta: float
    j_hat: float
    nu2_hat: float
    eta_hat: float
    se_j: float
    se_nu2: float
    se_eta: float

    @classmethod
    def from_eval(cls, label: str, ev: EvalStats) -> "FrontierPoint":
        return cls(label=label, beta=ev.beta, j_hat=ev.j_hat,
                   nu2_hat=ev.nu2_hat, eta_hat=ev.eta_hat, se_j=ev.se_j,
                   se_nu2=ev.se_nu2, se_eta=ev.se_eta)


FRONTIER_FIELDS = ["label", "beta", "j_hat", "nu2_hat", "eta_hat",
                   "se_j", "se_nu2", "se_eta", "episodes", "seed"]
CURVE_FIELDS = ["iteration", "neg_eta", "j_hat", "nu2_hat", "kl",
                "step_frac"]


def benchmark_policies(env: BookEnv) -> dict[str, Callable]:
    """Benchmarks applicable to this book, in a stable order."""
    out = {"zero": benchmark_policy(BenchmarkKind.ZERO_ACTION, env),
           "delta": benchmark_policy(BenchmarkKind.DELTA_HEDGE, env)}
    if env.n_cds == 1:
        out["jump"] = benchmark_policy(BenchmarkKind.JUMP_HEDGE, env)
    elif env.n_cds == 2:
        try:
            out["two-cds"] = benchmark_policy(
                BenchmarkKind.TWO_CDS_BASELINE, env)
        except SingularHedgeError:
            pass
    return out


def frontier(config: ExperimentConfig, *, env: BookEnv | None = None,
             include_benchmarks: bool = True,
             agents: dict[float, GaussianPolicy] | None = None,
             progress: Callable[[str], None] | None = None
             ) -> tuple[list[FrontierPoint], dict]:
    """Train an agent per beta (unless given) and evaluate everything on a
    common out-of-sample seed. Returns frontier points and artifacts
    (learning curves per beta, trained policies)."""
    say = progress or (lambda _msg: None)
    env = env or config.build_env()
    jobs: list[tuple[str, float, Callable]] = []
    if include_benchmarks:
        for label, fn in benchmark_policies(env).items():
            jobs.append((label, 0.0, fn))

    curves: dict[float, list[dict]] = {}
    policies: dict[float, GaussianPolicy] = {}
    for beta in config.betas:
        if agents is not None and beta in agents:
            policy = agents[beta]
        else:
            say(f"training agent beta={beta:g}")
            train_cfg = dataclasses.replace(config.train, beta=beta)
            policy, curve = train(env, train_cfg)
            curves[beta] = curve
        policies[beta] = policy
        jobs.append((f"agent-beta{beta:g}", beta, policy.as_mean()))

    points = []
    for label, beta, fn in jobs:
        say(f"evaluating {label} on {config.eval_episodes} episodes")
        ev = evaluate(fn, env, config.eval_episodes, config.eval_seed,
                      beta=beta, gamma=1.0)
        points.append(FrontierPoint.from_eval(label, ev))
    return points, {"curves": curves, "policies": policies, "env": env}


def frontier_rows(points: Sequence[FrontierPoint],
                  config: ExperimentConfig) -> list[dict]:
    rows = []
    for p in points:
        row = dataclasses.asdict(p)
        row["episodes"] = config.eval_episodes
        row["seed"] = config.eval_seed
        rows.append(row)
    return rows


# ------------------------------------------------------- significance tests

@dataclass
class SignificanceResult:
    n: int
    mean_diff: float
    t_stat: float
    p_value: float
    stars: str


def _stars(p_value: float) -> str:
    if p_value < 0.001:
        return "***"
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


def significance_test(contrib_a: np.ndarray,
                      contrib_b: np.ndarray) -> SignificanceResult:
    """Paired two-sided t-test on per-episode objective contributions.

    Valid when both policies were evaluated on common random numbers, so
    differences are one sample of iid episode effects.
    """
    a = np.asarray(contrib_a, dtype=float)
    b = np.asarray(contrib_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InconsistentInputError(
            "paired test needs two equal-length 1-D contribution arrays")
    if len(a) < 2:
        raise InconsistentInputError("paired test needs >= 2 episodes")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    n = len(diff)
    if sd == 0.0:
        t_stat = 0.0 if mean == 0.0 else np.inf * np.sign(mean)
        p_value = 1.0 if mean == 0.0 else 0.0
    else:
        t_stat = mean / (sd / np.sqrt(n))
        p_value = float(2.0 * sps.t.sf(abs(t_stat), n - 1))
    return SignificanceResult(n=n, mean_diff=mean, t_stat=float(t_stat),
                              p_value=p_value, stars=_stars(p_value))


COMPARE_FIELDS = ["label_a", "label_b", "beta", "episodes", "seed",
                  "eta_a", "eta_b", "mean_diff", "t_stat", "p_value",
                  "stars"]


def compare_policies(env: BookEnv, label_a: str, policy_a: Callable,
                     label_b: str, policy_b: Callable, n_episodes: int,
                     seed: int, beta: float, *, gamma: float = 1.0,
                     mode: str = "naive", b0: int = 0) -> dict:
    """Evaluate two policies on common episodes and test eta_A - eta_B."""
    ev_a = evaluate(policy_a, env, n_episodes, seed, beta=beta, gamma=gamma,
                    mode=mode, b0=b0)
    ev_b = evaluate(policy_b, env, n_episodes, seed, beta=beta, gamma=gamma,
                    mode=mode, b0=b0)
    sig = significance_test(ev_a.eta_contributions(), ev_b.eta_contributions())
    return {"label_a": label_a, "label_b": label_b, "beta": beta,
            "episodes": n_episodes, "seed": seed, "eta_a": ev_a.eta_hat,
            "eta_b": ev_b.eta_hat, "mean_diff": sig.mean_diff,
            "t_stat": sig.t_stat, "p_value": sig.p_value,
            "stars": sig.stars}
