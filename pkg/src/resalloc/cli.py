"""Command-line front end: simulate, train, evaluate, sweep and export.

Every command that writes files also writes ``manifest.json`` next to them,
recording the argv, resolved configuration, seeds and artifact names. Flags
are the only input; environment variables are ignored.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .harness import (EvalReport, Replication, compare, evaluate, export_long,
                      export_summary, mark_tied_best, read_csv, sweep, sweep_values)
from .model import ArrivalSpec, load_model, with_arrivals
from .scenarios import ALL, arrival_pattern, builtin_scenario
from .sim import run_episode

log = logging.getLogger("resalloc")

POLICY_NAMES = ("spt", "fifo", "random", "matching", "svfa", "drl")
TRAIN_DIRECTIVES = ("train-svfa", "train-drl")

PRESETS = {
    "desk": {
        "horizon": 5000.0,
        "eval.n": 30,
        "bo.trials": 10,
        "bo.n_initial": 5,
        "bo.sims_per_trial": 20,
        "ppo.n_steps": 4096,
        "ppo.batch_size": 256,
        "ppo.learning_rate": 3e-4,
        "ppo.max_steps": 200_000,
        "ppo.eval_interval": 2,
        "ppo.eval_episodes": 3,
    },
    "full": {
        "horizon": 5000.0,
        "eval.n": 100,
        "bo.trials": 20,
        "bo.n_initial": 8,
        "bo.sims_per_trial": 5000,
        "ppo.n_steps": 25600,
        "ppo.batch_size": 256,
        "ppo.learning_rate": 3e-5,
        "ppo.max_steps": 20_000_000,
        "ppo.eval_interval": 1,
        "ppo.eval_episodes": 5,
    },
}


class CLIError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    model: str | list[str]
    policy: str | list[str] | None
    seed: int
    config: dict
    artifacts: list[str] = field(default_factory=list)
    version: str = __version__

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- arg helpers
def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _count(text: str) -> int:
    """Integer that also accepts float notation such as ``1e5``."""
    v = float(text)
    if v != int(v) or v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _policy_spec(text: str) -> str:
    name = text.partition(":")[0]
    if name not in POLICY_NAMES and text not in TRAIN_DIRECTIVES:
        raise argparse.ArgumentTypeError(
            f"unknown policy {text!r}; choose from {', '.join(POLICY_NAMES + TRAIN_DIRECTIVES)}")
    if name in ("svfa", "drl") and not text.partition(":")[2]:
        raise argparse.ArgumentTypeError(f"policy {name!r} needs a file: {name}:<path>")
    return text


def _override(text: str) -> tuple[str, object]:
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"--set expects key=value, got {text!r}")
    return key.strip(), _scalar(val.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    seed = common.add_mutually_exclusive_group()
    seed.add_argument("--seed", type=int, help="master seed (required unless --no-seed)")
    seed.add_argument("--no-seed", action="store_true", help="draw a fresh seed and record it")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    common.add_argument("--set", dest="overrides", type=_override, action="append", default=[],
                        metavar="KEY=VALUE", help="config override, e.g. ppo.learning_rate=1e-4")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    common.add_argument("--arrivals", choices=("constant", "pattern"), default="constant")
    common.add_argument("--lam", type=float, default=None, help="mean arrival rate")
    common.add_argument("--horizon", type=float, default=None)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="resalloc", description="Resource allocation in business processes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one episode and print its statistics")
    s.add_argument("--model", required=True)
    s.add_argument("--policy", type=_policy_spec, default="spt")
    s.add_argument("--trace", type=Path, help="write the event trace as CSV")

    t = sub.add_parser("train", parents=[common], help="train an SVFA or DRL policy")
    t.add_argument("method", choices=("svfa", "drl"))
    t.add_argument("--model", required=True)
    t.add_argument("--out", type=Path, default=None)
    t.add_argument("--trials", type=_count)
    t.add_argument("--sims-per-trial", type=_count)
    t.add_argument("--max-steps", type=_count)
    t.add_argument("--postpone-penalty", type=float)
    t.add_argument("--temporal", action="store_true", help="add the arrival-pattern phase feature")

    for name, help_ in (("evaluate", "evaluate policies over replications"),
                        ("sweep", "evaluate policies across arrival rates")):
        e = sub.add_parser(name, parents=[common], help=help_)
        e.add_argument("--model", nargs="+", required=True)
        e.add_argument("--policy", nargs="+", type=_policy_spec, required=True)
        e.add_argument("-n", "--replications", type=_count)
        e.add_argument("--out", type=Path, default=None)
        e.add_argument("--welch", action="store_true", help="Welch instead of pooled t-test")
        e.add_argument("--sweep", required=(name == "sweep"), metavar="START:STOP:STEP")

    x = sub.add_parser("export", help="rebuild summary or table output from a long-format CSV")
    x.add_argument("input", type=Path, help="long-format CSV (replications.csv)")
    x.add_argument("--format", choices=("summary", "markdown"), default="summary")
    x.add_argument("--out", type=Path, default=None, help="file to write (stdout if omitted)")
    x.add_argument("--welch", action="store_true")
    return p


# --------------------------------------------------------------------------- config
def resolve_config(args) -> dict:
    cfg = dict(PRESETS[args.preset])
    for key, val in args.overrides:
        cfg[key] = val
    if args.horizon is not None:
        cfg["horizon"] = args.horizon
    for flag, key in (("trials", "bo.trials"), ("sims_per_trial", "bo.sims_per_trial"),
                      ("max_steps", "ppo.max_steps"), ("postpone_penalty", "ppo.postpone_penalty"),
                      ("replications", "eval.n")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "temporal", False):
        cfg["ppo.temporal"] = True
    cfg["arrivals"] = args.arrivals
    cfg["lam"] = args.lam
    if "bo.trials" in cfg and "bo.n_initial" in cfg:
        cfg["bo.n_initial"] = min(cfg["bo.n_initial"], cfg["bo.trials"])
    return cfg


def section(cfg: dict, prefix: str) -> dict:
    return {k[len(prefix) + 1:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if args.no_seed:
        return int(np.random.SeedSequence().entropy % (2**31))
    raise CLIError("a seed is required: pass --seed N, or --no-seed to draw and record one")


def load_model_arg(name: str, lam: float | None, arrivals: str):
    if name in ALL:
        return builtin_scenario(name, 0.5 if lam is None else lam, arrivals)
    path = Path(name)
    if not path.exists():
        raise CLIError(f"unknown model {name!r}: not a built-in scenario or a file")
    model = load_model(path.read_text())
    if arrivals == "pattern":
        rate = lam if lam is not None else model.arrivals.average_rate()
        model = with_arrivals(model, arrival_pattern(rate))
    elif lam is not None:
        if model.arrivals.kind == "pattern":
            model = with_arrivals(model, model.arrivals.scaled(lam))
        else:
            model = with_arrivals(model, ArrivalSpec.constant(lam))
    return model


def _default_out(command: str, seed: int) -> Path:
    return Path("runs") / f"{command}-seed{seed}"


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# --------------------------------------------------------------------------- commands
def cmd_simulate(args, cfg: dict, seed: int) -> int:
    from .policies import make_policy

    model = load_model_arg(args.model, args.lam, args.arrivals)
    policy = make_policy(args.policy, model)
    stats = run_episode(model, policy, cfg["horizon"], seed, record_trace=args.trace is not None)
    for k, v in stats.as_rows():
        print(f"{k}: {v}")
    if args.trace is not None:
        args.trace.parent.mkdir(parents=True, exist_ok=True)
        _write_rows(args.trace, ["activity", "case", "time", "resource", "lifecycle"], stats.trace)
        RunManifest("simulate", args.argv, model.name, args.policy, seed, cfg,
                    [args.trace.name]).write(args.trace.with_name(args.trace.name + ".manifest.json"))
    return 0


def _train_svfa(model, cfg: dict, seed: int, jobs: int, out: Path) -> list[str]:
    from .svfa import BOConfig, bayes_optimize, save_weights

    bo = BOConfig(horizon=cfg["horizon"], seed=seed, jobs=jobs, **section(cfg, "bo")).check()
    res = bayes_optimize(model, bo)
    save_weights(res.weights, out / "weights.json")
    keys = ["trial"] + [f"w{i}" for i in range(1, 8)] + ["objective", "incumbent"]
    _write_rows(out / "history.csv", keys, ([row[k] for k in keys] for row in res.history))
    print(f"best objective {res.objective:.4f} with weights {[round(w, 4) for w in res.weights]}")
    return ["weights.json", "history.csv"]


def ppo_config(cfg: dict):
    from .drl.ppo import PPOConfig

    return PPOConfig(horizon=cfg["horizon"], **section(cfg, "ppo")).check()


def _train_drl(model, cfg: dict, seed: int, out: Path) -> list[str]:
    from .drl.checkpoint import save_checkpoint
    from .drl.ppo import ppo_train

    pcfg = ppo_config(cfg)
    res = ppo_train(model, pcfg, seed=seed)
    save_checkpoint(out / "checkpoint.npz", res.net, model, pcfg.to_dict(), pcfg.temporal)
    _write_rows(out / "training_log.csv", ["episode", "steps", "total_reward", "mean_cycle_time"],
                ([e["episode"], e["steps"], float(e["total_reward"]), float(e["mean_cycle_time"])]
                 for e in res.episodes))
    _write_rows(out / "eval_log.csv", ["update", "steps", "mean_cycle_time", "best"],
                ([e["update"], e["steps"], float(e["mean_cycle_time"]), float(e["best"])]
                 for e in res.evaluations))
    print(f"trained {res.steps} steps over {len(res.episodes)} episodes")
    if res.evaluations:
        print(f"best greedy evaluation mean cycle time {res.evaluations[-1]['best']:.4f}")
    return ["checkpoint.npz", "training_log.csv", "eval_log.csv"]


def cmd_train(args, cfg: dict, seed: int) -> int:
    model = load_model_arg(args.model, args.lam, args.arrivals)
    out = args.out or _default_out(f"train-{args.method}-{model.name}", seed)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "svfa":
        arts = _train_svfa(model, cfg, seed, args.jobs, out)
    else:
        arts = _train_drl(model, cfg, seed, out)
    RunManifest(f"train {args.method}", args.argv, model.name, args.method, seed, cfg,
                arts).write(out / "manifest.json")
    print(f"wrote {', '.join(arts)} to {out}")
    return 0


def _policy_for(spec: str, cfg: dict, seed: int, jobs: int):
    """A spec string, or for training directives a callable that trains on
    the model it is given and returns the learned policy."""
    if spec == "train-svfa":
        def train(model):
            from .svfa import BOConfig, SVFAPolicy, bayes_optimize
            bo = BOConfig(horizon=cfg["horizon"], seed=seed, jobs=jobs, **section(cfg, "bo")).check()
            return SVFAPolicy(bayes_optimize(model, bo).weights)
        return train
    if spec == "train-drl":
        def train(model):
            from .drl.env import DRLPolicy
            from .drl.ppo import ppo_train
            pcfg = ppo_config(cfg)
            return DRLPolicy(ppo_train(model, pcfg, seed=seed).net, model, temporal=pcfg.temporal)
        return train
    return spec


def cmd_evaluate(args, cfg: dict, seed: int) -> int:
    lams = sweep_values(args.sweep) if args.sweep else [args.lam]
    n = cfg["eval.n"]
    reports: list[EvalReport] = []
    comparisons = []
    for name in args.model:
        policies = {spec: _policy_for(spec, cfg, seed, args.jobs) for spec in args.policy}
        if args.sweep:
            cell = sweep(lambda lam: load_model_arg(name, lam, args.arrivals), lams, policies, n,
                         cfg["horizon"], seed, args.jobs)
            groups = [cell[i:i + len(policies)] for i in range(0, len(cell), len(policies))]
        else:
            model = load_model_arg(name, args.lam, args.arrivals)
            cell = [evaluate(model, p, n, cfg["horizon"], seed, args.jobs, name=spec, lam=args.lam)
                    for spec, p in policies.items()]
            groups = [cell]
        for g in groups:
            mark_tied_best(g, args.welch)
            for i in range(len(g)):
                for j in range(i + 1, len(g)):
                    comparisons.append((g[i], compare(g[i], g[j], args.welch)))
        reports.extend(cell)

    print(format_table(reports))
    out = args.out or _default_out(args.command, seed)
    out.mkdir(parents=True, exist_ok=True)
    export_long(reports, out / "replications.csv")
    export_summary(reports, out / "summary.csv")
    _write_rows(out / "comparisons.csv", ["model", "lam", "a", "b", "t", "p", "significant"],
                ([r.model, "" if r.lam is None else float(r.lam), c.a, c.b, float(c.t), float(c.p),
                  int(c.significant)] for r, c in comparisons))
    arts = ["replications.csv", "summary.csv", "comparisons.csv"]
    RunManifest(args.command, args.argv, list(args.model), list(args.policy), seed, cfg,
                arts).write(out / "manifest.json")
    print(f"wrote {', '.join(arts)} to {out}")
    return 0


def format_table(reports) -> str:
    lines = ["| model | policy | lam | mean cycle time | 95% CI | tied best |",
             "|---|---|---|---|---|---|"]
    for r in reports:
        lam = "" if r.lam is None else f"{r.lam:g}"
        mark = "*" if r.tied_best else ""
        lines.append(f"| {r.model} | {r.policy} | {lam} | {r.mean:.3f} | ±{r.ci_half_width:.3f} | {mark} |")
    return "\n".join(lines)


def reports_from_long(path: Path) -> list[EvalReport]:
    groups: dict[tuple, list[dict]] = {}
    for row in read_csv(path):
        groups.setdefault((row["model"], row["policy"], row["lam"]), []).append(row)
    out = []
    for (model, policy, lam), rows in groups.items():
        reps = [Replication(int(r["seed"]), float(r["mean_cycle_time"]), int(r["n_completed"]),
                            int(r["n_truncated"]), {"max": float(r["max_utilization"])}) for r in rows]
        seeds = [r.seed for r in reps]
        out.append(EvalReport(policy, model, float(rows[0]["horizon"]), min(seeds), reps,
                              float(lam) if lam else None))
    return out


def cmd_export(args) -> int:
    reports = reports_from_long(args.input)
    by_cell: dict[tuple, list[EvalReport]] = {}
    for r in reports:
        by_cell.setdefault((r.model, r.lam), []).append(r)
    for cell in by_cell.values():
        mark_tied_best(cell, args.welch)
    if args.format == "markdown":
        text = format_table(reports) + "\n"
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    if args.out is None:
        raise CLIError("--out is required for the summary format")
    export_summary(reports, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export":
            return cmd_export(args)
        seed = resolve_seed(args)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(args, cfg, seed)
        if args.command == "train":
            return cmd_train(args, cfg, seed)
        return cmd_evaluate(args, cfg, seed)
    except CLIError as exc:
        parser.error(str(exc))  # exits 2
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
