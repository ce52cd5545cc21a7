"""Finite post-action-context bandit environments.

An environment assigns to every action a distribution over a finite context
set and, for every (action, context) pair, a reward law on [0, 1].  Laws are
kept symbolic (Bernoulli or point mass) so expected values and structural
properties can be decided exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ParameterError

ROW_TOL = 1e-12
TIE_TOL = 1e-12

BERNOULLI = "bernoulli"
POINT_MASS = "point_mass"


@dataclass(frozen=True)
class RewardLaw:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in (BERNOULLI, POINT_MASS):
            raise ParameterError(f"unknown reward kind {self.kind!r}")
        if not 0.0 <= self.param <= 1.0:
            raise ParameterError(f"{self.kind} parameter {self.param} outside [0, 1]")

    @classmethod
    def bernoulli(cls, mean: float) -> "RewardLaw":
        return cls(BERNOULLI, float(mean))

    @classmethod
    def point_mass(cls, value: float) -> "RewardLaw":
        return cls(POINT_MASS, float(value))

    def mean(self) -> float:
        return self.param

    def to_dict(self) -> dict:
        key = "mean" if self.kind == BERNOULLI else "value"
        return {"kind": self.kind, key: self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardLaw":
        kind = d.get("kind")
        if kind == BERNOULLI:
            return cls.bernoulli(d["mean"])
        if kind == POINT_MASS:
            return cls.point_mass(d["value"])
        raise ParameterError(f"unknown reward kind {kind!r}")


def _check_rows(table: np.ndarray, what: str) -> None:
    if table.ndim != 2 or 0 in table.shape:
        raise ParameterError(f"{what} must be a non-empty 2-d table")
    if not np.all(np.isfinite(table)) or np.any(table < 0):
        raise ParameterError(f"{what} has negative or non-finite entries")
    bad = np.flatnonzero(np.abs(table.sum(axis=1) - 1.0) > ROW_TOL)
    if bad.size:
        raise ParameterError(f"{what} row {int(bad[0])} does not sum to 1")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class MarginalTable:
    """Per-action distributions over contexts, one row per action."""

    def __init__(self, table):
        table = _frozen(table)
        _check_rows(table, "marginal table")
        self.table = table

    @property
    def shape(self):
        return self.table.shape

    def row(self, a: int) -> np.ndarray:
        return self.table[a]

    def __array__(self, dtype=None, copy=None):
        return self.table if dtype is None else self.table.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, MarginalTable) and np.array_equal(self.table, other.table)

    def __repr__(self):
        return f"MarginalTable({self.table.tolist()!r})"


class Environment:
    """Immutable environment: action/context labels, marginals, reward laws.

    Actions and contexts are addressed by their position in ``actions`` and
    ``contexts``; that order is also the tie-breaking order used by policies.
    """

    def __init__(self, actions: Sequence, contexts: Sequence, marginal, reward):
        self.actions = tuple(actions)
        self.contexts = tuple(contexts)
        if not self.actions or not self.contexts:
            raise ParameterError("action and context sets must be non-empty")
        marginal = _frozen(marginal)
        if marginal.shape != (len(self.actions), len(self.contexts)):
            raise ParameterError(
                f"marginal shape {marginal.shape} does not match "
                f"{len(self.actions)} actions x {len(self.contexts)} contexts")
        _check_rows(marginal, "marginal")
        self.marginal = marginal
        reward = tuple(tuple(row) for row in reward)
        if len(reward) != len(self.actions) or any(len(r) != len(self.contexts) for r in reward):
            raise ParameterError("reward table shape does not match actions x contexts")
        for row in reward:
            for law in row:
                if not isinstance(law, RewardLaw):
                    raise ParameterError(f"reward entries must be RewardLaw, got {law!r}")
        self.reward = reward

        self.reward_means = _frozen([[law.mean() for law in row] for row in reward])
        self._bernoulli = np.array([[law.kind == BERNOULLI for law in row] for row in reward])
        self._bernoulli.flags.writeable = False
        cdf = np.cumsum(self.marginal, axis=1)
        cdf[:, -1] = 1.0
        self._cdf = _frozen(cdf)
        self.arm_means = _frozen((self.reward_means * self.marginal).sum(axis=1))

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_contexts(self) -> int:
        return len(self.contexts)

    def marginal_table(self) -> MarginalTable:
        return MarginalTable(self.marginal)

    def check_action(self, a) -> None:
        arr = np.asarray(a)
        if not np.issubdtype(arr.dtype, np.integer) or np.any(arr < 0) or np.any(arr >= self.n_actions):
            raise DomainError(f"unknown action {a!r} (expected index in [0, {self.n_actions}))")

    def draw(self, a, u_context, u_reward):
        """Map two uniforms to a (context, reward) pair by inverse transform.

        Works elementwise when ``a`` and the uniforms are equal-length arrays.
        A Bernoulli reward is 1 iff ``u_reward < mean``; a point mass ignores
        its uniform but still owns it, so every draw costs exactly two.
        """
        u_context = np.asarray(u_context)
        z = (u_context[..., None] >= self._cdf[a]).sum(axis=-1)
        mean = self.reward_means[a, z]
        y = np.where(self._bernoulli[a, z], (np.asarray(u_reward) < mean).astype(float), mean)
        if z.ndim == 0:
            return int(z), float(y)
        return z, y

    def gaps(self) -> np.ndarray:
        return self.arm_means.max() - self.arm_means

    def __eq__(self, other):
        return (isinstance(other, Environment)
                and self.actions == other.actions
                and self.contexts == other.contexts
                and np.array_equal(self.marginal, other.marginal)
                and self.reward == other.reward)

    def __repr__(self):
        return f"Environment(actions={list(self.actions)}, contexts={list(self.contexts)})"

    def to_dict(self) -> dict:
        return {
            "actions": list(self.actions),
            "contexts": list(self.contexts),
            "marginal": self.marginal.tolist(),
            "reward": [[law.to_dict() for law in row] for row in self.reward],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        try:
            return cls(d["actions"], d["contexts"], d["marginal"],
                       [[RewardLaw.from_dict(x) for x in row] for row in d["reward"]])
        except KeyError as exc:
            raise ParameterError(f"environment document lacks field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        return cls.from_dict(json.loads(text))


def sample(env: Environment, a: int, rng: np.random.Generator):
    """Play action ``a`` once; consumes exactly two uniforms from ``rng``."""
    env.check_action(a)
    u = rng.random(2)
    return env.draw(a, u[0], u[1])


def arm_mean(env: Environment, a: int) -> float:
    env.check_action(a)
    return float(env.arm_means[a])


def optimal_mean(env: Environment):
    """Lowest-ordered best action; means within 1e-12 of the best count as tied."""
    best = env.arm_means.max()
    a = int(np.flatnonzero(env.arm_means >= best - TIE_TOL)[0])
    return a, float(env.arm_means[a])


def benign_gap(num_actions: int, T: int) -> float:
    return math.sqrt(num_actions * math.log(T) / T)


def make_benign_env(num_actions: int, T: int, eps_prime: float = 0.0005) -> Environment:
    """Two-context environment with a shared reward law given the context.

    Context 0 pays ``Bernoulli(1/2 + gap)`` and context 1 pays
    ``Bernoulli(1/2)`` whatever the action, with
    ``gap = sqrt(num_actions * ln T / T)``.  Action 1 lands in context 0
    with probability ``1 - eps_prime``; every other action with
    probability ``eps_prime``.
    """
    if num_actions < 2:
        raise ParameterError("benign environment needs at least two actions")
    if T < 2:
        raise ParameterError("horizon must be at least 2")
    if not 0.0 < eps_prime < 0.5:
        raise ParameterError("eps_prime must lie in (0, 1/2)")
    gap = benign_gap(num_actions, T)
    if gap >= 0.5:
        raise ParameterError(f"gap {gap:.4f} >= 1/2 for {num_actions} actions at T={T}")
    laws = (RewardLaw.bernoulli(0.5 + gap), RewardLaw.bernoulli(0.5))
    marginal = np.empty((num_actions, 2))
    marginal[:, 0] = eps_prime
    marginal[0, 0] = 1.0 - eps_prime
    marginal[:, 1] = 1.0 - marginal[:, 0]
    return Environment(list(range(1, num_actions + 1)), [0, 1], marginal,
                       [laws] * num_actions)


class WorstCaseParams(NamedTuple):
    """Group-level constants; ``mu_ij`` is the mean for action group i, context group j."""

    mu00: float = 1 / 6
    mu10: float = 2 / 6
    mu01: float = 5 / 6
    mu11: float = 4 / 6
    p0: float = 6 / 8
    p1: float = 7 / 8

    def group_mean(self, i: int) -> float:
        if i == 0:
            return self.mu01 * self.p0 + self.mu00 * (1 - self.p0)
        return self.mu11 * self.p1 + self.mu10 * (1 - self.p1)

    def switch_margin(self) -> float:
        """Positive when the hypothesis test must eventually reject on A0 arms."""
        return (self.mu01 - self.mu11) * self.p0 + (self.mu00 - self.mu10) * (1 - self.p0)


def check_worstcase_params(params: WorstCaseParams, require_switch_condition: bool = False) -> None:
    for name, v in params._asdict().items():
        if not 0.0 < v < 1.0:
            raise ParameterError(f"{name}={v} must lie in (0, 1)")
    if not params.group_mean(0) > params.group_mean(1):
        raise ParameterError("condition (1) violated: A0 arms must have strictly larger mean than A1 arms")
    if not params.p0 < params.p1:
        raise ParameterError("condition (2) violated: p0 must be smaller than p1")
    if not min(params.mu01, params.mu11) > max(params.mu00, params.mu10):
        raise ParameterError("condition (3) violated: every Z1 mean must exceed every Z0 mean")
    if require_switch_condition and not params.switch_margin() > 0:
        raise ParameterError("switch condition violated: A0 arms must out-earn A1 conditionals under p0")


def make_worstcase_env(num_actions: int = 2, num_contexts: int = 2, A0=None, Z0=None,
                       params: WorstCaseParams | Sequence[float] | None = None,
                       require_switch_condition: bool = False) -> Environment:
    """Environment on which the causal index locks onto a suboptimal group.

    Actions split into groups A0 (optimal) and A1; contexts into Z0 and Z1.
    Defaults: A0 = {first action}, Z0 = {first context}.
    """
    params = WorstCaseParams(*params) if params is not None else WorstCaseParams()
    check_worstcase_params(params, require_switch_condition)
    A0 = frozenset([0] if A0 is None else A0)
    Z0 = frozenset([0] if Z0 is None else Z0)
    if not A0 or not A0 < frozenset(range(num_actions)):
        raise ParameterError("A0 must be a non-empty strict subset of the actions")
    if not Z0 or not Z0 < frozenset(range(num_contexts)):
        raise ParameterError("Z0 must be a non-empty strict subset of the contexts")
    n_z1 = num_contexts - len(Z0)
    mu = {(0, 0): params.mu00, (1, 0): params.mu10, (0, 1): params.mu01, (1, 1): params.mu11}
    p = (params.p0, params.p1)
    marginal = np.empty((num_actions, num_contexts))
    reward = []
    for a in range(num_actions):
        i = 0 if a in A0 else 1
        row = []
        for z in range(num_contexts):
            j = 0 if z in Z0 else 1
            marginal[a, z] = (1 - p[i]) / len(Z0) if j == 0 else p[i] / n_z1
            row.append(RewardLaw.bernoulli(mu[i, j]))
        reward.append(row)
    return Environment(list(range(1, num_actions + 1)), list(range(num_contexts)), marginal, reward)
