"""Command-line driver: ``cbl run``, ``cbl trace`` and ``cbl graph check``.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration.

Config files are JSON.  Either a preset::

    {"preset": "benign", "actions": 10, "horizons": [2000], "M": 50, "seed": 7,
     "policies": ["ucb", "cucb", "hacucb"], "marginal_source": "exact",
     "out": "results", "svg": true, "strict_protocol": false}

or an explicit list of runs, each naming an environment (a preset object, a
path to an environment JSON file, or an inline environment document)::

    {"runs": [{"name": "mine", "env": {"file": "env.json"}, "policy": "cucb",
               "M": 20, "seed": 1, "marginal_source": "perturbed:0.1"}],
     "horizons": [1000], "out": "results"}
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .causal_graph import classify, parse_dag
from .environment import Environment, make_benign_env, make_worstcase_env
from .errors import ConfigError, CycleError, DomainError, ParameterError
from .harness import RunConfig, Trace, run_horizons, run_many, run_one
from .policies import parse_policy_name

log = logging.getLogger("cbl")

PRESETS = ("benign", "worstcase")
DEFAULT_POLICIES = ("ucb", "cucb", "hacucb")
BAD_CONFIG = (ConfigError, ParameterError, DomainError, CycleError)


def fmt(x) -> str:
    return f"{x:.17g}"


@dataclass
class EnvSpec:
    """Environment source; presets are rebuilt per horizon because their gap depends on T."""

    name: str
    preset: str | None = None
    actions: int = 0
    env: Environment | None = None

    def build(self, T: int) -> Environment:
        if self.preset == "benign":
            return make_benign_env(self.actions or 10, T)
        if self.preset == "worstcase":
            return make_worstcase_env(self.actions or 2)
        return self.env


@dataclass
class RunSpec:
    env: EnvSpec
    policy: str
    M: int
    seed: int
    marginal_source: object = "exact"
    delta: float | None = None


@dataclass
class ExperimentConfig:
    runs: list
    horizons: list
    out: Path
    svg: bool = False
    strict_protocol: bool = False
    common_random_numbers: bool = True
    corral: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not self.horizons:
            raise ConfigError("horizon grid is empty")
        if any(int(h) != h or h < 2 for h in self.horizons):
            raise ConfigError("horizons must be integers >= 2")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError("horizon grid must be strictly increasing")
        if not self.runs:
            raise ConfigError("no runs configured")
        for r in self.runs:
            parse_policy_name(r.policy)
            if r.policy == "corral" and not self.corral:
                raise ConfigError("corral is not enabled (pass --enable-corral)")
            for T in (self.horizons if self.strict_protocol else self.horizons[-1:]):
                RunConfig(r.env.build(int(T)), r.policy, int(T), r.M, r.seed, r.delta,
                          r.marginal_source, self.common_random_numbers).prior()


def _env_spec(doc, base: Path, index: int) -> EnvSpec:
    if isinstance(doc, str):
        doc = {"preset": doc} if doc in PRESETS else {"file": doc}
    if not isinstance(doc, dict):
        raise ConfigError(f"bad environment entry {doc!r}")
    if "preset" in doc:
        if doc["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {doc['preset']!r}")
        return EnvSpec(doc.get("name", doc["preset"]), doc["preset"], int(doc.get("actions", 0)))
    if "file" in doc:
        path = (base / doc["file"])
        try:
            env = Environment.from_json(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read environment file {path}: {exc}") from None
        return EnvSpec(doc.get("name", path.stem), env=env)
    return EnvSpec(doc.get("name", f"env{index}"), env=Environment.from_dict(doc))


def _parse_horizons(text) -> list:
    if isinstance(text, list):
        return [int(x) for x in text]
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad horizon list {text!r}") from None


def _policies(text) -> list:
    items = text if isinstance(text, list) else [p.strip() for p in str(text).split(",")]
    return [p for p in items if p]


def load_config(args) -> ExperimentConfig:
    doc, base = {}, Path.cwd()
    if args.config:
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from None
        base = path.parent
    # command-line flags override file values
    for key, val in (("preset", args.preset), ("actions", args.actions), ("M", args.M),
                     ("seed", args.seed), ("marginal_source", args.marginal_source),
                     ("out", args.out), ("policies", args.policies), ("horizons", args.T)):
        if val is not None:
            doc[key] = val
    corral = bool(args.enable_corral or doc.get("enable_corral", False))
    M = int(doc.get("M", 50))
    seed = int(doc.get("seed", 0))
    source = doc.get("marginal_source", "exact")
    runs = []
    if "runs" in doc:
        for i, r in enumerate(doc["runs"]):
            if "policy" not in r:
                raise ConfigError(f"run {i} names no policy")
            spec = _env_spec(r.get("env"), base, i)
            spec.name = r.get("name", spec.name)
            runs.append(RunSpec(spec, r["policy"], int(r.get("M", M)),
                                int(r.get("seed", seed)), r.get("marginal_source", source),
                                r.get("delta")))
    elif "preset" in doc or "env" in doc:
        spec = _env_spec(doc.get("env") or {"preset": doc["preset"], "actions": doc.get("actions", 0)},
                         base, 0)
        default = list(DEFAULT_POLICIES) + (["corral"] if corral else [])
        for p in _policies(doc.get("policies", default)):
            runs.append(RunSpec(spec, p, M, seed, source, doc.get("delta")))
    else:
        raise ConfigError("give --preset, --config or --env")
    if "horizons" not in doc:
        raise ConfigError("no horizon given (use --T)")
    cfg = ExperimentConfig(
        runs=runs, horizons=_parse_horizons(doc["horizons"]), out=Path(doc.get("out", "results")),
        svg=bool(args.svg or doc.get("svg", False)),
        strict_protocol=bool(args.strict_protocol or doc.get("strict_protocol", False)),
        common_random_numbers=not (args.independent_streams or doc.get("independent_streams", False)),
        corral=corral)
    cfg.validate()
    return cfg


def _file_name(env_name: str, policy: str) -> str:
    return f"{env_name}__{policy.replace(':', '-')}.csv"


def write_curve_csv(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "regret_mean", "regret_se", "replicates"])
        for t, mean, se, m in rows:
            w.writerow([t, fmt(mean), fmt(se), m])


def execute(cfg: ExperimentConfig) -> list:
    cfg.out.mkdir(parents=True, exist_ok=True)
    panels, written = {}, []
    for r in cfg.runs:
        if cfg.strict_protocol:
            base = RunConfig(r.env.build(cfg.horizons[0]), r.policy, cfg.horizons[0], r.M, r.seed,
                             r.delta, r.marginal_source, cfg.common_random_numbers)
            results = run_horizons(base, cfg.horizons, env_for=r.env.build)
            rows = [(T, c.final, c.final_se, c.replicates) for T, c in results]
        else:
            T = cfg.horizons[-1]
            c = run_many(RunConfig(r.env.build(T), r.policy, T, r.M, r.seed, r.delta,
                                   r.marginal_source, cfg.common_random_numbers))
            rows = [(t + 1, c.mean[t], c.se[t], c.replicates) for t in range(T)]
        path = cfg.out / _file_name(r.env.name, r.policy)
        write_curve_csv(path, rows)
        written.append(path)
        arr = np.array([row[:3] for row in rows], dtype=float)
        panels.setdefault(r.env.name, []).append((r.policy, arr[:, 0], arr[:, 1], arr[:, 2]))
        log.info("wrote %s", path)
    if cfg.svg:
        from .plotting import plot_regret

        written.append(plot_regret(panels, cfg.out / "regret.svg"))
    return written


def cmd_run(args) -> int:
    try:
        cfg = load_config(args)
    except BAD_CONFIG as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        for path in execute(cfg):
            print(path)
    except BAD_CONFIG as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_trace(args) -> int:
    try:
        if args.T is None or len(_parse_horizons(args.T)) != 1:
            raise ConfigError("trace needs a single horizon --T")
        T = _parse_horizons(args.T)[0]
        if args.env:
            spec = _env_spec({"file": args.env}, Path.cwd(), 0)
        elif args.preset:
            spec = _env_spec({"preset": args.preset, "actions": args.actions or 0}, Path.cwd(), 0)
        else:
            raise ConfigError("give --preset or --env")
        parse_policy_name(args.policy)
        if args.policy == "corral" and not args.enable_corral:
            raise ConfigError("corral is not enabled (pass --enable-corral)")
        env = spec.build(T)
        rc = RunConfig(env, args.policy, T, 1, args.seed or 0,
                       marginal_source=args.marginal_source or "exact")
        marginals = rc.prior().table
    except BAD_CONFIG as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        trace = Trace()
        run_one(env, args.policy, T, args.seed or 0, marginals=marginals, trace=trace)
        w = csv.writer(sys.stdout, lineterminator="\n")
        hac = args.policy == "hacucb"
        w.writerow(["t", "action", "context", "reward"] + (["phase", "flag"] if hac else []))
        for t, a, z, y, phase in trace.rows:
            extra = [phase, str(phase != "Fallback").lower()] if hac else []
            w.writerow([t, a, z, fmt(y)] + extra)
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_graph_check(args) -> int:
    try:
        g = parse_dag(Path(args.file).read_text())
        if g.reward is None or not g.actions or not g.contexts:
            raise ConfigError("graph needs @action, @context and @reward declarations")
        verdict = classify(g)
    except OSError as exc:
        print(f"error: cannot read {args.file}: {exc}", file=sys.stderr)
        return 2
    except BAD_CONFIG as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(" ".join(f"{k}={str(v).lower()}" for k, v in verdict.items()))
    return 0


def _add_run_flags(p):
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--T", help="horizon, or comma-separated increasing horizon grid")
    p.add_argument("--M", type=int, help="Monte Carlo replicates")
    p.add_argument("--seed", type=int)
    p.add_argument("--actions", type=int, help="number of actions for presets")
    p.add_argument("--marginal-source", help="exact | perturbed:<eps>")
    p.add_argument("--enable-corral", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments and write regret CSVs")
    _add_run_flags(run)
    run.add_argument("--config", help="JSON experiment config")
    run.add_argument("--policies", help="comma-separated policy names")
    run.add_argument("--out", help="output directory")
    run.add_argument("--svg", action="store_true", help="also render regret.svg")
    run.add_argument("--strict-protocol", action="store_true",
                     help="fresh simulation per horizon in the grid")
    run.add_argument("--independent-streams", action="store_true",
                     help="do not share random streams across policies")
    run.set_defaults(func=cmd_run)

    trace = sub.add_parser("trace", help="print one run round by round as CSV")
    _add_run_flags(trace)
    trace.add_argument("--policy", required=True)
    trace.add_argument("--env", help="environment JSON file")
    trace.set_defaults(func=cmd_trace)

    graph = sub.add_parser("graph", help="causal graph tools")
    gsub = graph.add_subparsers(dest="graph_command", required=True)
    check = gsub.add_parser("check", help="d-separation and front-door verdicts")
    check.add_argument("file")
    check.set_defaults(func=cmd_graph_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
