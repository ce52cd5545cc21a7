"""Monte Carlo regret harness.

Regret is the expected regret given the chosen actions: each round adds
``max_a mean(a) - mean(A_t)``, computed from the environment's exact arm
means rather than from the sampled reward.

Random streams: replicate ``i`` of a run with base seed ``s`` samples the
environment from ``Generator(Philox(s + i))`` (two uniforms per round) and
gives randomised policies the independent stream
``Generator(Philox(SeedSequence(s + i, spawn_key=(1,))))``.  Philox is
counter-based, so a replicate's draws never depend on how replicates are
grouped or ordered.  By default every policy sees the same streams (common
random numbers).
"""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, MarginalTable, sample
from .errors import ConfigError
from .policies import HACUCB, make_policy, parse_policy_name
from .stats import SufficientStats


def env_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def policy_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1,))))


def prior_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2,))))


# Prior marginals ----------------------------------------------------------------

def parse_marginal_source(source):
    """Normalise ``"exact"``, ``"perturbed:<eps>"``, ``("perturbed", eps)`` or a table."""
    if isinstance(source, str):
        if source == "exact":
            return "exact", None
        if source.startswith("perturbed:"):
            try:
                eps = float(source.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad perturbation size in {source!r}") from None
            return "perturbed", eps
        raise ConfigError(f"unknown marginal source {source!r}")
    if isinstance(source, tuple) and len(source) == 2 and source[0] == "perturbed":
        return "perturbed", float(source[1])
    if isinstance(source, (MarginalTable, np.ndarray, list)):
        return "custom", source
    raise ConfigError(f"unknown marginal source {source!r}")


def perturb_row(row, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Shift mass ``eps/2`` between two random coordinates (un-halved TV exactly ``eps``)."""
    row = np.array(row, dtype=float)
    half = eps / 2.0
    if eps == 0.0:
        return row
    donors = np.flatnonzero(row >= half)
    if donors.size == 0 or row.size < 2:
        raise ConfigError(f"cannot move mass {half:g} within row {row.tolist()}")
    d = int(rng.choice(donors))
    r = int(rng.choice([j for j in range(row.size) if j != d]))
    row[d] -= half
    row[r] += half
    return np.clip(row, 0.0, 1.0)


def make_prior_marginals(env: Environment, source="exact", rng=None) -> MarginalTable:
    kind, arg = parse_marginal_source(source)
    if kind == "exact":
        return MarginalTable(env.marginal.copy())
    if kind == "custom":
        table = MarginalTable(np.asarray(arg, dtype=float))
        if table.shape != env.marginal.shape:
            raise ConfigError(f"custom marginal shape {table.shape} != {env.marginal.shape}")
        return table
    if not 0.0 <= arg <= 2.0:
        raise ConfigError(f"perturbation {arg} outside [0, 2]")
    rng = prior_stream(0) if rng is None else rng
    return MarginalTable(np.stack([perturb_row(row, arg, rng) for row in env.marginal]))


# Single runs -----------------------------------------------------------------------

@dataclass
class Trace:
    rows: list = field(default_factory=list)


def run_one(env: Environment, policy: str, T: int, seed: int, *, marginals=None,
            delta=None, trace: Trace | None = None, return_policy: bool = False):
    """Simulate one replicate; returns the per-round regret increments.

    Draws the environment one round at a time through ``sample``; ``run_many``
    replays the same streams in batch and must agree with this bit for bit.
    """
    if T < 1:
        raise ConfigError("horizon must be at least 1")
    pol = make_policy(policy, env, T, marginals=marginals, delta=delta, rngs=policy_stream(seed))
    rng = env_stream(seed)
    s = SufficientStats(env.n_actions, env.n_contexts)
    gaps = env.gaps()
    inc = np.empty(T)
    for t in range(T):
        a = pol.select(s)
        z, y = sample(env, a, rng)
        s.update(a, z, y)
        pol.observe(a, z, y)
        inc[t] = gaps[a]
        if trace is not None:
            trace.rows.append((t + 1, env.actions[a], env.contexts[z], y, pol.phase_label()))
    return (inc, pol) if return_policy else inc


def _run_batch(env: Environment, policy: str, T: int, seeds, marginals, delta):
    """Simulate replicates ``seeds`` in lockstep.

    Returns (increments of shape (len(seeds), T), diagnostics dict).
    """
    B = len(seeds)
    u = np.stack([env_stream(int(sd)).random((T, 2)) for sd in seeds])
    pol = make_policy(policy, env, T, marginals=marginals, delta=delta, batch=B,
                      rngs=[policy_stream(int(sd)) for sd in seeds])
    s = SufficientStats(env.n_actions, env.n_contexts, batch=B)
    actions = np.empty((B, T), dtype=np.int64)
    for t in range(T):
        a = np.broadcast_to(pol.select(s), (B,))
        z, y = env.draw(a, u[:, t, 0], u[:, t, 1])
        s.update(a, z, y)
        pol.observe(a, z, y)
        actions[:, t] = a
    diag = {}
    if isinstance(pol, HACUCB):
        diag = {"switch_round": pol.state.switch_round.copy(),
                "replaced": pol.state.replaced.copy()}
    return env.gaps()[actions], diag


# Many runs ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    env: Environment
    policy: str
    T: int
    M: int = 1
    base_seed: int = 0
    delta: float | None = None
    marginal_source: object = "exact"
    common_random_numbers: bool = True

    def __post_init__(self):
        parse_policy_name(self.policy)
        if self.T < 1:
            raise ConfigError("horizon T must be at least 1")
        if self.M < 1:
            raise ConfigError("replicate count M must be at least 1")
        kind, arg = parse_marginal_source(self.marginal_source)
        if kind == "perturbed" and not 0.0 <= arg <= 2.0:
            raise ConfigError(f"perturbation {arg} outside [0, 2]")

    def seeds(self) -> np.ndarray:
        base = self.base_seed
        if not self.common_random_numbers:
            base += zlib.crc32(self.policy.encode()) << 20
        return base + np.arange(self.M)

    def prior(self) -> MarginalTable:
        return make_prior_marginals(self.env, self.marginal_source, prior_stream(self.base_seed))


@dataclass
class RegretCurve:
    """Mean cumulative regret per round over replicates, with standard errors."""

    mean: np.ndarray
    se: np.ndarray
    replicates: int
    cumulative: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def final(self) -> float:
        return float(self.mean[-1])

    @property
    def final_se(self) -> float:
        return float(self.se[-1])

    def at(self, t: int) -> float:
        return float(self.mean[t - 1])

    @classmethod
    def from_increments(cls, inc: np.ndarray, diagnostics=None) -> "RegretCurve":
        cum = np.cumsum(inc, axis=1)
        M = cum.shape[0]
        se = cum.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros(cum.shape[1])
        return cls(cum.mean(axis=0), se, M, cum, diagnostics or {})


def worker_count() -> int:
    cap = os.environ.get("CBL_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"CBL_THREADS must be an integer, got {cap!r}") from None
    return n


def _chunk_job(args):
    env, policy, T, seeds, marginals, delta = args
    return _run_batch(env, policy, T, seeds, marginals, delta)


def run_many(cfg: RunConfig, *, workers: int | None = None, chunk_size: int | None = None,
             replicate_order=None) -> RegretCurve:
    """Run ``cfg.M`` replicates and aggregate their cumulative regret.

    Replicates are grouped into chunks (run in a process pool when more than
    one worker is allowed); results are written back by replicate index, so
    grouping and ``replicate_order`` never change the curve.
    """
    seeds = cfg.seeds()
    marginals = cfg.prior().table
    order = np.arange(cfg.M) if replicate_order is None else np.asarray(replicate_order)
    if sorted(order.tolist()) != list(range(cfg.M)):
        raise ConfigError("replicate_order must be a permutation of range(M)")
    workers = worker_count() if workers is None else workers
    if chunk_size is None:
        chunk_size = max(1, math.ceil(cfg.M / workers))
    chunks = [order[i:i + chunk_size] for i in range(0, cfg.M, chunk_size)]
    jobs = [(cfg.env, cfg.policy, cfg.T, seeds[c], marginals, cfg.delta) for c in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_chunk_job, jobs))
    else:
        results = [_chunk_job(j) for j in jobs]
    inc = np.empty((cfg.M, cfg.T))
    diag = {}
    for c, (chunk_inc, chunk_diag) in zip(chunks, results):
        inc[c] = chunk_inc
        for k, v in chunk_diag.items():
            diag.setdefault(k, np.empty(cfg.M, dtype=v.dtype))[c] = v
    return RegretCurve.from_increments(inc, diag)


def run_horizons(cfg: RunConfig, horizons, env_for=None, **kw):
    """Strict protocol: a fresh simulation per horizon, each with new replicate streams.

    Horizon ``k`` uses base seed ``cfg.base_seed + k * cfg.M``; ``env_for(T)``
    rebuilds the environment when it depends on the horizon.  Returns a list
    of (T, RegretCurve).
    """
    out = []
    for k, T in enumerate(horizons):
        env = cfg.env if env_for is None else env_for(int(T))
        sub = RunConfig(env, cfg.policy, int(T), cfg.M, cfg.base_seed + k * cfg.M,
                        cfg.delta, cfg.marginal_source, cfg.common_random_numbers)
        out.append((int(T), run_many(sub, **kw)))
    return out
