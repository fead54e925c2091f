"""Experiment orchestration and the command-line front end.

Config is a flat key=value text file; command-line flags override file
values, and the effective configuration is echoed into the summary for
provenance.  Every replication i uses the independent generator seeded with
base_seed + i, so runs are reproducible byte-for-byte.  Wall-clock timing is
written to a separate timing file, never into the summary, precisely so that
reruns with the same config and seed produce identical result files.

Subcommands:
  run        -- run an experiment (main learner, baseline, or constant +1)
  audit      -- run an experiment and report only the fairness audit summary
  benchmark  -- brute-force constrained optimum for an instance
  lowerbound -- emit the hard two-distribution instance and its exact tables
  slope      -- fit the log-log regret growth exponent across summaries
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bandit import Schedule, apple_to_bandit_loss, make_schedule, run
from .core import (
    MixturePolicy,
    RateFunctional,
    group_index,
    load_instance,
    policy_sample,
    save_instance,
)
from .fair_csc import concentration_radius
from .instances import (
    brute_force_best_fair,
    explore_then_exploit,
    kl_divergence,
    lowerbound_pair,
    random_tabular,
)
from .metrics import (
    audit_fairness,
    delta_rate,
    hypothesis_loss_vector,
    true_gap_vector,
    true_policy_loss,
    write_audit_csv,
)

ALGORITHMS = ("FairBandit", "ExploreThenExploit", "ConstantPlus")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, as plain picklable values."""

    instance_source: str = "lowerbound"
    instance_gamma: float = 0.05
    T: int = 1000
    gamma: float = 0.1
    delta: float = 0.05
    T0: int | None = None
    alpha: float | None = None
    nu: float | None = None
    eta: float | None = None
    mu_floor_constant: float = 0.1
    mu_max: float = 0.25
    epoch_mode: str = "every_round"
    theory_constants: bool = False
    fold_exploration: bool = False
    warm_start: bool = False
    benchmark_gamma: float = 0.0
    replications: int = 1
    base_seed: int = 0
    algorithm: str = "FairBandit"
    output_dir: str = "results"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )


_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}

_CONFIG_TYPES = {
    "instance_source": str,
    "instance_gamma": float,
    "T": int,
    "gamma": float,
    "delta": float,
    "T0": int,
    "alpha": float,
    "nu": float,
    "eta": float,
    "mu_floor_constant": float,
    "mu_max": float,
    "epoch_mode": str,
    "theory_constants": bool,
    "fold_exploration": bool,
    "warm_start": bool,
    "benchmark_gamma": float,
    "replications": int,
    "base_seed": int,
    "algorithm": str,
    "output_dir": str,
}


def parse_config_file(path: str) -> dict:
    """Flat key=value lines; blank lines and '#' comments allowed."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            typ = _CONFIG_TYPES[key]
            try:
                if typ is bool:
                    low = val.lower()
                    if low in _TRUTHY:
                        values[key] = True
                    elif low in _FALSY:
                        values[key] = False
                    else:
                        raise ValueError(f"not a boolean: {val!r}")
                else:
                    values[key] = typ(val)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {exc}")
    return values


def build_instance(cfg: ExperimentConfig):
    """Resolve instance_source into (distribution, hypothesis class).

    Sources: "lowerbound" (the hard pair's d1, at instance_gamma),
    "file:<path>" (the text schema), or "random:<contexts>,<hypotheses>,<seed>".
    """
    src = cfg.instance_source
    if src == "lowerbound":
        pair = lowerbound_pair(cfg.instance_gamma)
        return pair.d1, pair.hclass
    if src.startswith("file:"):
        return load_instance(src[len("file:"):])
    if src.startswith("random:"):
        try:
            k, m, seed = (int(v) for v in src[len("random:"):].split(","))
        except ValueError:
            raise ValueError(
                f"bad random instance spec {src!r}; "
                "expected random:<contexts>,<hypotheses>,<seed>"
            )
        return random_tabular(k, m, seed)
    raise ValueError(f"unknown instance_source {src!r}")


def build_schedule(cfg: ExperimentConfig, num_hypotheses: int) -> Schedule:
    sched = make_schedule(
        cfg.T, cfg.gamma, cfg.delta, num_hypotheses,
        alpha=cfg.alpha,
        nu=cfg.nu if cfg.nu is not None else 1.0 / cfg.T,
        eta=cfg.eta if cfg.eta is not None else 1.0 / cfg.T**2,
        mu_floor_constant=cfg.mu_floor_constant,
        mu_max=cfg.mu_max,
        epoch_mode=cfg.epoch_mode,
        theory_constants=cfg.theory_constants,
        fold_exploration=cfg.fold_exploration,
        warm_start=cfg.warm_start,
    )
    if cfg.T0 is not None:
        sched = Schedule(**{**asdict(sched), "T0": cfg.T0})
    return sched


_TRACE_COLUMNS = (
    "round,phase,mu_t,num_Q_atoms,cd_iterations,oracle_calls,"
    "action,propensity,bandit_loss,true_policy_loss,true_gap"
)


class _TraceWriter:
    """Accumulates per-round rows and fills in exact loss/gap per policy."""

    def __init__(self, d, hclass):
        self.d = d
        self.loss_vec = hypothesis_loss_vector(hclass, d)
        self.gap_vec = true_gap_vector(hclass, d, RateFunctional.FALSE_POSITIVE)
        self.rows: list[dict] = []
        self._cache: dict = {}

    def policy_stats(self, pi: MixturePolicy):
        key = pi.canonical_key()
        out = self._cache.get(key)
        if out is None:
            loss = float(sum(w * self.loss_vec[i] for i, w in pi.atoms))
            gap = float(sum(w * self.gap_vec[i] for i, w in pi.atoms))
            out = (loss, gap)
            self._cache[key] = out
        return out

    def write(self, path, trajectory):
        stats = [self.policy_stats(pi) for _, pi in trajectory]
        with open(path, "w") as fh:
            fh.write(_TRACE_COLUMNS + "\n")
            for row, (loss, gap) in zip(self.rows, stats):
                fh.write(
                    f"{row['round']},{row['phase']},{row['mu_t']!r},"
                    f"{row['num_Q_atoms']},{row['cd_iterations']},"
                    f"{row['oracle_calls']},{row['action']},"
                    f"{row['propensity']!r},{row['bandit_loss']!r},"
                    f"{loss!r},{gap!r}\n"
                )
        return [loss for loss, _ in stats]


def _constant_plus_run(d, hclass, sched, rng, on_round):
    """Degenerate baseline: deploy +1 every round."""
    from .core import Dataset

    plus_pm = MixturePolicy.point_mass(hclass, hclass.plus_index)
    contexts, groups, labels = d.sample_n(rng, sched.T)
    exploration = Dataset.from_arrays(
        contexts[: sched.T0], groups[: sched.T0], labels[: sched.T0], d.num_contexts
    )
    trajectory = []
    for r in range(1, sched.T + 1):
        trajectory.append((r, plus_pm))
        if on_round is not None:
            loss = apple_to_bandit_loss(1, int(labels[r - 1]))
            on_round(dict(round=r, phase=1, mu_t=0.0, num_Q_atoms=0,
                          cd_iterations=0, oracle_calls=0, action=1,
                          propensity=1.0, bandit_loss=loss))
    return trajectory, exploration


def _ete_trace_rows(trajectory, exploration, d, rng, on_round):
    """Replay the explore-then-exploit trajectory as logged interactions."""
    n_explore = len(exploration)
    for r, pi in trajectory:
        if r <= n_explore:
            e = exploration.examples[r - 1]
            loss = apple_to_bandit_loss(1, e.label)
            on_round(dict(round=r, phase=1, mu_t=0.0, num_Q_atoms=0,
                          cd_iterations=0, oracle_calls=0, action=1,
                          propensity=1.0, bandit_loss=loss))
        else:
            e = d.sample(rng)
            idx = policy_sample(pi, rng)
            action = int(
                pi.hclass.prediction_matrix[idx, e.context, group_index(e.group)]
            )
            p = pi.prob_action(e.context, e.group, action)
            loss = apple_to_bandit_loss(action, e.label if action == 1 else None)
            on_round(dict(round=r, phase=2, mu_t=0.0, num_Q_atoms=0,
                          cd_iterations=0, oracle_calls=0, action=action,
                          propensity=p, bandit_loss=loss))


def _replication_job(cfg: ExperimentConfig, i: int) -> dict:
    """One seeded replication: run, trace CSV, audit CSV, regret accounting."""
    d, hclass = build_instance(cfg)
    sched = build_schedule(cfg, len(hclass))
    rng = np.random.default_rng(cfg.base_seed + i)
    writer = _TraceWriter(d, hclass)
    on_round = writer.rows.append

    if cfg.algorithm == "FairBandit":
        trajectory, _history, exploration = run(d, hclass, sched, rng, on_round)
    elif cfg.algorithm == "ExploreThenExploit":
        trajectory, exploration = explore_then_exploit(
            d, hclass, cfg.T, cfg.gamma, cfg.delta, rng
        )
        _ete_trace_rows(trajectory, exploration, d, rng, on_round)
    else:
        trajectory, exploration = _constant_plus_run(d, hclass, sched, rng, on_round)

    beta = concentration_radius(exploration, len(hclass), cfg.delta)
    threshold = cfg.gamma + beta
    _, benchmark_loss = brute_force_best_fair(d, hclass, cfg.benchmark_gamma)

    os.makedirs(cfg.output_dir, exist_ok=True)
    trace_path = os.path.join(cfg.output_dir, f"rep_{i:03d}_trace.csv")
    losses = writer.write(trace_path, trajectory)
    records = audit_fairness([pi for _, pi in trajectory], d, threshold)
    audit_path = os.path.join(cfg.output_dir, f"rep_{i:03d}_audit.csv")
    write_audit_csv(audit_path, records)

    regret_curve = np.cumsum(np.asarray(losses) - benchmark_loss)
    return dict(
        replication=i,
        seed=cfg.base_seed + i,
        beta=beta,
        T0=sched.T0,
        benchmark_loss=benchmark_loss,
        cumulative_regret=float(regret_curve[-1]),
        regret_curve=[float(v) for v in regret_curve],
        violated=bool(any(r.violated for r in records)),
        max_abs_gap=float(max(abs(r.true_gap) for r in records)),
    )


def _worker_count() -> int:
    raw = os.environ.get("FAIRTASTE_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FAIRTASTE_WORKERS must be an integer, got {raw!r}")
    return max(n, 1)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run all replications, write per-run CSVs, and emit the summary JSON.

    The summary carries the effective config, per-replication seeds and
    betas, regret statistics, the mean cumulative-regret curve, and the
    fraction of replications with any audited fairness violation.  Timing
    goes to a separate file so the summary is reproducible byte-for-byte.
    """
    started = time.time()
    workers = _worker_count()
    indices = list(range(cfg.replications))
    if workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication_job, [cfg] * len(indices), indices))
    else:
        results = [_replication_job(cfg, i) for i in indices]
    results.sort(key=lambda r: r["replication"])

    regrets = [r["cumulative_regret"] for r in results]
    n = len(regrets)
    mean_regret = sum(regrets) / n
    stderr = (
        math.sqrt(sum((v - mean_regret) ** 2 for v in regrets) / (n - 1) / n)
        if n > 1
        else 0.0
    )
    curve = np.mean(
        np.asarray([r["regret_curve"] for r in results], dtype=float), axis=0
    )
    summary = dict(
        config=asdict(cfg),
        T=cfg.T,
        T0=results[0]["T0"],
        benchmark_loss=results[0]["benchmark_loss"],
        seeds=[r["seed"] for r in results],
        betas=[r["beta"] for r in results],
        mean_cumulative_regret=mean_regret,
        stderr_cumulative_regret=stderr,
        per_replication_regret=regrets,
        mean_regret_curve=[float(v) for v in curve],
        violation_fraction=sum(r["violated"] for r in results) / n,
        max_abs_gap=max(r["max_abs_gap"] for r in results),
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(cfg.output_dir, "timing.txt"), "w") as fh:
        fh.write(f"wall_clock_seconds={time.time() - started!r}\n")
    return summary


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    points_used: list
    excluded: list


def regret_slope(points) -> SlopeFit:
    """Least-squares slope of log(mean regret) against log(T).

    ``points`` is an iterable of (T, mean_regret) pairs or summary dicts.
    Nonpositive regrets cannot enter the log fit; those points are excluded
    and reported.  At least 3 usable points are required.
    """
    pairs = []
    for p in points:
        if isinstance(p, dict):
            pairs.append((float(p["T"]), float(p["mean_cumulative_regret"])))
        else:
            t, v = p
            pairs.append((float(t), float(v)))
    used = [(t, v) for t, v in pairs if v > 0]
    excluded = [(t, v) for t, v in pairs if v <= 0]
    if len(used) < 3:
        raise ValueError(
            f"need at least 3 positive-regret grid points, have {len(used)}"
        )
    x = np.log([t for t, _ in used])
    y = np.log([v for _, v in used])
    slope, intercept = np.polyfit(x, y, 1)
    return SlopeFit(float(slope), float(intercept), used, excluded)


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--replications", type=int)
    p.add_argument("--T", type=int, dest="T")
    p.add_argument("--T0", type=int, dest="T0")
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--mu-max", type=float, dest="mu_max")
    p.add_argument("--mu-constant", type=float, dest="mu_floor_constant")
    p.add_argument("--epoch-mode", dest="epoch_mode",
                   choices=("every_round", "doubling"))
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--instance", dest="instance_source")
    p.add_argument("--instance-gamma", type=float, dest="instance_gamma")
    p.add_argument("--benchmark-gamma", type=float, dest="benchmark_gamma")
    p.add_argument("--out", dest="output_dir")


def _config_from_args(args) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for key in _CONFIG_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return ExperimentConfig(**values)


def _cmd_run(args) -> int:
    summary = run_experiment(_config_from_args(args))
    print(
        f"replications={len(summary['seeds'])} "
        f"T={summary['T']} T0={summary['T0']} "
        f"mean_regret={summary['mean_cumulative_regret']:.4f} "
        f"violation_fraction={summary['violation_fraction']:.3f}"
    )
    print(f"results in {_config_from_args(args).output_dir}")
    return 0


def _cmd_audit(args) -> int:
    summary = run_experiment(_config_from_args(args))
    print(
        f"violation_fraction={summary['violation_fraction']:.3f} "
        f"max_abs_gap={summary['max_abs_gap']!r} "
        f"betas=[{min(summary['betas']):.4f}, {max(summary['betas']):.4f}]"
    )
    return 0


def _cmd_benchmark(args) -> int:
    cfg = _config_from_args(args)
    d, hclass = build_instance(cfg)
    pi, loss = brute_force_best_fair(d, hclass, cfg.benchmark_gamma)
    gap = delta_rate(pi, d, RateFunctional.FALSE_POSITIVE)
    atoms = [
        {"index": i, "tag": hclass[i].tag, "weight": w} for i, w in pi.atoms
    ]
    print(json.dumps(
        {"gamma": cfg.benchmark_gamma, "loss": loss, "gap": gap, "atoms": atoms},
        indent=1, sort_keys=True,
    ))
    return 0


def _cmd_lowerbound(args) -> int:
    pair = lowerbound_pair(args.instance_gamma)
    tables = {}
    for name, dist in (("d1", pair.d1), ("d2", pair.d2)):
        losses = hypothesis_loss_vector(pair.hclass, dist)
        gaps = true_gap_vector(pair.hclass, dist, RateFunctional.FALSE_POSITIVE)
        tables[name] = {
            pair.hclass[i].tag: {"loss": float(losses[i]), "delta_fpr": float(gaps[i])}
            for i in range(len(pair.hclass))
        }
    tables["kl_d1_d2"] = kl_divergence(pair.d1, pair.d2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_instance(os.path.join(args.out, "d1.txt"), pair.d1, pair.hclass)
        save_instance(os.path.join(args.out, "d2.txt"), pair.d2, pair.hclass)
        with open(os.path.join(args.out, "tables.json"), "w") as fh:
            json.dump(tables, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(json.dumps(tables, indent=1, sort_keys=True))
    return 0


def _cmd_slope(args) -> int:
    points = []
    for path in args.summaries:
        with open(path) as fh:
            s = json.load(fh)
        points.append((s["T"], s["mean_cumulative_regret"]))
    fit = regret_slope(points)
    for t, v in fit.excluded:
        print(f"note: excluded nonpositive regret {v!r} at T={int(t)}",
              file=sys.stderr)
    print(f"slope={fit.slope!r} points={len(fit.points_used)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fairtaste",
        description="online fair classification under apple-tasting feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", _cmd_run), ("audit", _cmd_audit),
                     ("benchmark", _cmd_benchmark)):
        p = sub.add_parser(name)
        _add_run_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("lowerbound")
    p.add_argument("--instance-gamma", type=float, default=0.05,
                   dest="instance_gamma")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_lowerbound)

    p = sub.add_parser("slope")
    p.add_argument("summaries", nargs="+", help="summary.json paths")
    p.set_defaults(fn=_cmd_slope)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
