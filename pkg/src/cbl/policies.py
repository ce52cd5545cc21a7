"""Decision rules: UCB, C-UCB, HAC-UCB, Corral and two baselines.

The step functions are pure in the statistics they read and work both on a
single history and on a replicate batch (leading axis).  Ties always go to
the lowest action index.  The policy classes bind a step function to its
parameters so the harness can drive any of them through ``select`` and
``observe``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .errors import ConfigError, DomainError
from .stats import (SufficientStats, default_delta, mle_from_counts, pseudo_ucbs,
                    ucb_actions)

log = logging.getLogger(__name__)

POLICY_NAMES = ("ucb", "cucb", "hacucb", "corral", "uniform")


def _first_argmax(x):
    a = np.argmax(x, axis=-1)
    return int(a) if np.ndim(a) == 0 else a


def ucb_step(s: SufficientStats, delta: float):
    return _first_argmax(ucb_actions(s, delta))


def cucb_step(s: SufficientStats, m, delta: float):
    return _first_argmax(pseudo_ucbs(s, m, delta))


class Phase(enum.Enum):
    EXPLORE1 = "Explore1"
    EXPLORE2 = "Explore2"
    TESTED = "Tested"
    FALLBACK = "Fallback"


def explore_lengths(n_actions: int, T: int) -> tuple[int, int]:
    root = math.sqrt(T)
    return math.ceil(4 * root / n_actions), math.ceil(root / n_actions)


def hac_slack(n_actions: int, n_contexts: int, T: int) -> float:
    return math.sqrt(n_actions * n_contexts * math.log(T)) / T**0.25


@dataclass
class HacState:
    """Per-run HAC-UCB bookkeeping.

    ``flag``, ``replaced`` and ``switch_round`` are scalars for a single run
    and arrays over replicates in batch mode; ``switch_round`` is 0 until the
    test first fails.
    """

    n_actions: int
    n_contexts: int
    T: int
    marginals: np.ndarray
    delta: float
    explore1_len: int
    explore2_len: int
    slack: float
    flag: np.ndarray
    replaced: np.ndarray
    switch_round: np.ndarray
    checked_marginals: bool = False
    stage: Phase = field(default=Phase.EXPLORE1)

    @property
    def phase(self):
        """Current phase; an array of phases in batch mode."""
        if self.stage is not Phase.TESTED:
            return self.stage if self.flag.ndim == 0 else np.full(self.flag.shape, self.stage)
        if self.flag.ndim == 0:
            return Phase.TESTED if self.flag else Phase.FALLBACK
        return np.where(self.flag, Phase.TESTED, Phase.FALLBACK)

    @property
    def forced_rounds(self) -> int:
        return self.n_actions * (self.explore1_len + self.explore2_len)


def make_hac_state(m, T: int, batch: int | None = None, delta: float | None = None) -> HacState:
    m = np.array(m, dtype=float)
    n_actions, n_contexts = m.shape
    if T < 25 * n_actions**2:
        log.warning("T=%d below 25|A|^2=%d; exploration may fill the horizon", T, 25 * n_actions**2)
    e1, e2 = explore_lengths(n_actions, T)
    lead = () if batch is None else (batch,)
    if batch is not None:
        m = np.broadcast_to(m, (batch,) + m.shape).copy()
    return HacState(
        n_actions=n_actions, n_contexts=n_contexts, T=T, marginals=m,
        delta=default_delta(T) if delta is None else delta,
        explore1_len=e1, explore2_len=e2, slack=hac_slack(n_actions, n_contexts, T),
        flag=np.ones(lead, dtype=bool), replaced=np.zeros(lead, dtype=bool),
        switch_round=np.zeros(lead, dtype=np.int64),
    )


def marginal_replacement_threshold(n_actions: int, n_contexts: int, T: int) -> float:
    return 2 * hac_slack(n_actions, n_contexts, T)


def _replace_marginals(state: HacState, s: SufficientStats) -> None:
    mle = mle_from_counts(s.joint_count)
    dist = np.abs(state.marginals - mle).sum(axis=-1).max(axis=-1)
    fire = dist > marginal_replacement_threshold(state.n_actions, state.n_contexts, state.T)
    state.marginals = np.where(fire[..., None, None], mle, state.marginals)
    state.replaced = fire
    state.checked_marginals = True


def hac_test_failures(state: HacState, s: SufficientStats):
    """Boolean (..., A) mask of arms whose hypothesis test fails this round."""
    log_t = math.log(state.T)
    m = state.marginals
    d = ucb_actions(s, state.delta) - pseudo_ucbs(s, m, state.delta) + state.slack
    context_width = (np.sqrt(log_t / s.context_counts())[..., None, :] * m).sum(axis=-1)
    lower = -2 * context_width
    upper = 2 * np.sqrt(log_t / s.action_counts()) + 2 * state.slack
    return ~((lower <= d) & (d <= upper))


def hac_step(state: HacState, s: SufficientStats):
    """Choose the action for round ``s.t + 1``; mutates and returns ``state``."""
    t = s.t + 1
    A = state.n_actions
    n1 = A * state.explore1_len
    n2 = A * state.explore2_len
    if t <= n1:
        state.stage = Phase.EXPLORE1
        return _broadcast_action((t - 1) % A, state), state
    if not state.checked_marginals:
        _replace_marginals(state, s)
    if t <= n1 + n2:
        state.stage = Phase.EXPLORE2
        return _broadcast_action((t - n1 - 1) % A, state), state
    state.stage = Phase.TESTED
    if np.any(state.flag):
        failed = hac_test_failures(state, s).any(axis=-1) & state.flag
        state.switch_round = np.where(failed, t, state.switch_round)
        state.flag = state.flag & ~failed
    a_ucb = ucb_step(s, state.delta)
    if not np.any(state.flag):
        return a_ucb, state
    a_c = cucb_step(s, state.marginals, state.delta)
    a = np.where(state.flag, a_c, a_ucb)
    return (int(a) if a.ndim == 0 else a), state


def _broadcast_action(a: int, state: HacState):
    return a if state.flag.ndim == 0 else np.full(state.flag.shape, a)


# Corral ----------------------------------------------------------------------

def causal_regret_bound(T: int, n_contexts: int) -> float:
    """C-UCB regret bound with exact marginals: 2|Z| + 6 sqrt(|Z| T ln T) + ln T sqrt(2T)."""
    lt = math.log(T)
    return 2 * n_contexts + 6 * math.sqrt(n_contexts * T * lt) + lt * math.sqrt(2 * T)


def corral_learning_rate(T: int, n_contexts: int) -> float:
    return 1.0 / (40 * causal_regret_bound(T, n_contexts) * math.log(T))


def freedman_radius(rho, t: int, count):
    lt = math.log(max(t, 2))
    n = np.maximum(count, 1.0)
    return np.sqrt(4 * rho * lt / n) + 4 * rho * lt / (3 * n)


def log_barrier_omd(p, loss, eta, iters: int = 64):
    """One log-barrier mirror-descent step on the simplex.

    Finds the normaliser ``lam`` in [min loss, max loss] with
    ``sum_i 1 / (1/p_i + eta_i (loss_i - lam)) = 1`` by bisection, rowwise.
    """
    p = np.asarray(p, dtype=float)
    loss = np.asarray(loss, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lo = loss.min(axis=-1, keepdims=True)
    hi = loss.max(axis=-1, keepdims=True)
    inv_p = 1.0 / p
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        total = (1.0 / (inv_p + eta * (loss - mid))).sum(axis=-1, keepdims=True)
        too_big = total > 1.0
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
    q = 1.0 / (inv_p + eta * (loss - 0.5 * (lo + hi)))
    return q / q.sum(axis=-1, keepdims=True)


class _EpochUCB:
    """UCB on importance-weighted rewards with Freedman radii; restarts per epoch."""

    def __init__(self, n_actions, batch):
        self.count = np.zeros((batch, n_actions))
        self.total = np.zeros((batch, n_actions))

    def propose(self, rho, t):
        return np.argmax(self.total / np.maximum(self.count, 1.0)
                         + freedman_radius(rho[:, None], t, self.count), axis=-1)

    def feed(self, rows, a, z, y, chosen, w):
        # every round counts for the proposed arm; only chosen rounds carry reward
        self.count[rows, a] += 1.0
        self.total[rows, a] += np.where(chosen, y * w, 0.0)

    def restart(self, mask):
        self.count[mask] = 0.0
        self.total[mask] = 0.0


class _EpochCUCB:
    """C-UCB on importance-weighted context statistics with Freedman radii."""

    def __init__(self, m, n_contexts, batch):
        self.m = np.asarray(m, dtype=float)
        self.count = np.zeros((batch, n_contexts))
        self.total = np.zeros((batch, n_contexts))

    def propose(self, rho, t):
        u = self.total / np.maximum(self.count, 1.0) + freedman_radius(rho[:, None], t, self.count)
        return np.argmax((self.m * u[:, None, :]).sum(axis=-1), axis=-1)

    def feed(self, rows, a, z, y, chosen, w):
        # contexts are only seen through the chosen base; weight them by 1/pbar
        self.count[rows, z] += np.where(chosen, w, 0.0)
        self.total[rows, z] += np.where(chosen, y * w, 0.0)

    def restart(self, mask):
        self.count[mask] = 0.0
        self.total[mask] = 0.0


@dataclass
class CorralMaster:
    """Master state, one row per replicate: sampling law, learning rates, weight bounds."""

    p: np.ndarray
    pbar: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    gamma: float
    beta: float

    def update(self, chosen, loss_weighted) -> np.ndarray:
        """Mirror-descent step on the sampled base's weighted loss; returns the rho-growth mask."""
        rows = np.arange(self.p.shape[0])
        loss = np.zeros_like(self.p)
        loss[rows, chosen] = loss_weighted
        K = self.p.shape[-1]
        self.p = log_barrier_omd(self.p, loss, self.eta)
        self.pbar = (1.0 - self.gamma) * self.p + self.gamma / K
        grow = 1.0 / self.pbar > self.rho
        self.rho = np.where(grow, 2.0 / self.pbar, self.rho)
        self.eta = np.where(grow, self.beta * self.eta, self.eta)
        return grow


def corral_step(master: CorralMaster, bases, t: int, u):
    """Sample a base per replicate from ``pbar`` using uniforms ``u``.

    Returns (chosen base index, played action, every base's proposal), each
    with a leading replicate axis.
    """
    proposals = np.stack([b.propose(master.rho[:, i], t) for i, b in enumerate(bases)], axis=-1)
    edges = np.cumsum(master.pbar, axis=-1)[:, :-1]
    chosen = (np.asarray(u)[:, None] >= edges).sum(axis=-1)
    return chosen, proposals[np.arange(len(chosen)), chosen], proposals


# Policy objects ----------------------------------------------------------------

class Policy:
    name = "policy"

    def select(self, s: SufficientStats):
        raise NotImplementedError

    def observe(self, a, z, y) -> None:
        pass

    def phase_label(self):
        return None


class UCB(Policy):
    name = "ucb"

    def __init__(self, T, delta=None):
        self.delta = default_delta(T) if delta is None else delta

    def select(self, s):
        return ucb_step(s, self.delta)


class CUCB(Policy):
    name = "cucb"

    def __init__(self, marginals, T, delta=None):
        self.m = np.asarray(marginals, dtype=float)
        self.delta = default_delta(T) if delta is None else delta

    def select(self, s):
        return cucb_step(s, self.m, self.delta)


class HACUCB(Policy):
    name = "hacucb"

    def __init__(self, marginals, T, batch=None, delta=None):
        self.state = make_hac_state(marginals, T, batch=batch, delta=delta)

    def select(self, s):
        a, self.state = hac_step(self.state, s)
        return a

    def phase_label(self):
        ph = self.state.phase
        return ph.value if isinstance(ph, Phase) else [p.value for p in ph]


class Constant(Policy):
    name = "const"

    def __init__(self, a0, n_actions, batch=None):
        if not 0 <= a0 < n_actions:
            raise DomainError(f"constant action {a0} not in the action set")
        self.a0 = a0 if batch is None else np.full(batch, a0)

    def select(self, s):
        return self.a0


class Uniform(Policy):
    """Uniform play; the whole action sequence is drawn up front from its own stream."""

    name = "uniform"

    def __init__(self, n_actions, T, rngs, batch=None):
        if batch is None:
            self.seq = rngs.integers(0, n_actions, size=T)
        else:
            self.seq = np.stack([r.integers(0, n_actions, size=T) for r in rngs])
        self.batch = batch

    def select(self, s):
        return int(self.seq[s.t]) if self.batch is None else self.seq[:, s.t]


class Corral(Policy):
    """Log-barrier Corral master over epoch-based UCB and C-UCB bases.

    Each round one base is sampled from ``pbar`` and its proposal is played.
    Every base records its own proposal, credited with the importance-weighted
    reward ``1{chosen} y / pbar_i``.  When a base's weight bound ``rho``
    doubles, its learning rate grows by ``beta`` and the base restarts.
    Internally always batched; a single run is a batch of one.
    """

    name = "corral"

    def __init__(self, marginals, n_actions, n_contexts, T, rngs, batch=None, eta=None):
        self.single = batch is None
        B = 1 if batch is None else batch
        K = 2
        self.rows = np.arange(B)
        eta = corral_learning_rate(T, n_contexts) if eta is None else eta
        self.master = CorralMaster(
            p=np.full((B, K), 1.0 / K), pbar=np.full((B, K), 1.0 / K),
            eta=np.full((B, K), eta), rho=np.full((B, K), 2.0 * K),
            gamma=1.0 / T, beta=math.exp(1.0 / math.log(T)))
        self.bases = [_EpochUCB(n_actions, B), _EpochCUCB(marginals, n_contexts, B)]
        streams = [rngs] if batch is None else rngs
        self.u = np.stack([r.random(T) for r in streams], axis=1)
        self._last = None

    def select(self, s):
        chosen, a, proposals = corral_step(self.master, self.bases, s.t + 1, self.u[s.t])
        self._last = (chosen, proposals)
        return int(a[0]) if self.single else a

    def observe(self, a, z, y):
        chosen, proposals = self._last
        z = np.atleast_1d(z)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        w = 1.0 / self.master.pbar[self.rows, chosen]
        for i, base in enumerate(self.bases):
            base.feed(self.rows, proposals[:, i], z, y, chosen == i, w)
        grow = self.master.update(chosen, (1.0 - y) * w)
        for i, base in enumerate(self.bases):
            base.restart(grow[:, i])


def parse_policy_name(name: str) -> str:
    if name in POLICY_NAMES or name.startswith("const:"):
        return name
    raise ConfigError(f"unknown policy {name!r}; expected one of "
                      f"{', '.join(POLICY_NAMES)} or const:<action>")


def make_policy(name: str, env: Environment, T: int, *, marginals=None, delta=None,
                batch=None, rngs=None) -> Policy:
    """Instantiate a policy by name for one run (or one replicate batch).

    ``rngs`` is the policy's own random stream (a list of streams in batch
    mode); only ``uniform`` and ``corral`` consume it.
    """
    parse_policy_name(name)
    m = env.marginal if marginals is None else np.asarray(marginals, dtype=float)
    if m.shape != (env.n_actions, env.n_contexts):
        raise ConfigError(f"marginal table shape {m.shape} does not match environment")
    if name == "ucb":
        return UCB(T, delta)
    if name == "cucb":
        return CUCB(m, T, delta)
    if name == "hacucb":
        return HACUCB(m, T, batch=batch, delta=delta)
    if name == "uniform":
        return Uniform(env.n_actions, T, rngs, batch=batch)
    if name == "corral":
        return Corral(m, env.n_actions, env.n_contexts, T, rngs, batch=batch)
    label = name.split(":", 1)[1]
    matches = [i for i, a in enumerate(env.actions) if str(a) == label]
    if not matches:
        raise DomainError(f"constant action {label!r} not in the action set")
    return Constant(matches[0], env.n_actions, batch=batch)
