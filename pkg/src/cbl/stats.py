"""Sufficient statistics and confidence indices shared by the policies.

Counts are stored raw and floored at one only when read, so the raw action
and context counts always sum to the round number.  Every array carries an
optional leading replicate axis: a ``SufficientStats(..., batch=M)`` tracks M
independent histories in lockstep and all index functions broadcast over it.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError


def default_delta(T: int) -> float:
    return 2.0 / T**2


def radius(count, delta: float):
    """Hoeffding radius ``sqrt(log(2/delta) / (2 * max(1, count)))``."""
    return np.sqrt(math.log(2.0 / delta) / (2.0 * np.maximum(count, 1)))


class SufficientStats:
    def __init__(self, n_actions: int, n_contexts: int, batch: int | None = None):
        self.n_actions = n_actions
        self.n_contexts = n_contexts
        self.batch = batch
        lead = () if batch is None else (batch,)
        self._rows = None if batch is None else np.arange(batch)
        self.t = 0
        self.action_count = np.zeros(lead + (n_actions,), dtype=np.int64)
        self.context_count = np.zeros(lead + (n_contexts,), dtype=np.int64)
        self.joint_count = np.zeros(lead + (n_actions, n_contexts), dtype=np.int64)
        self.action_sum = np.zeros(lead + (n_actions,))
        self.context_sum = np.zeros(lead + (n_contexts,))

    def update(self, a, z, y) -> "SufficientStats":
        y_arr = np.asarray(y, dtype=float)
        if np.any(y_arr < 0.0) or np.any(y_arr > 1.0):
            raise DomainError(f"reward {y!r} outside [0, 1]")
        if self.batch is None:
            self.action_count[a] += 1
            self.context_count[z] += 1
            self.joint_count[a, z] += 1
            self.action_sum[a] += y
            self.context_sum[z] += y
        else:
            r = self._rows
            self.action_count[r, a] += 1
            self.context_count[r, z] += 1
            self.joint_count[r, a, z] += 1
            self.action_sum[r, a] += y_arr
            self.context_sum[r, z] += y_arr
        self.t += 1
        return self

    def action_counts(self):
        """Floored counts ``max(1, T_t(a))``."""
        return np.maximum(self.action_count, 1)

    def context_counts(self):
        return np.maximum(self.context_count, 1)

    def action_means(self):
        return self.action_sum / self.action_counts()

    def context_means(self):
        return self.context_sum / self.context_counts()

    def action_mean(self, a: int) -> float:
        return float(self.action_means()[..., a])

    def context_mean(self, z: int) -> float:
        return float(self.context_means()[..., z])


def ucb_actions(s: SufficientStats, delta: float):
    return s.action_means() + radius(s.action_count, delta)


def ucb_contexts(s: SufficientStats, delta: float):
    return s.context_means() + radius(s.context_count, delta)


def ucb_action(s: SufficientStats, a: int, delta: float) -> float:
    """Arm index; not clipped to [0, 1]."""
    return float(ucb_actions(s, delta)[..., a])


def ucb_context(s: SufficientStats, z: int, delta: float) -> float:
    return float(ucb_contexts(s, delta)[..., z])


def _marginal_array(m, n_contexts: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape[-1] != n_contexts:
        raise DomainError(f"marginal rows have {m.shape[-1]} entries, expected {n_contexts}")
    return m


def pseudo_ucbs(s: SufficientStats, m, delta: float):
    """Marginal-weighted context indices for every action.

    ``m`` has shape (A, Z) or, in batch mode, (M, A, Z).
    """
    m = _marginal_array(m, s.n_contexts)
    u = ucb_contexts(s, delta)
    return (m * u[..., None, :]).sum(axis=-1)


def pseudo_ucb(s: SufficientStats, a: int, m, delta: float) -> float:
    m = _marginal_array(m, s.n_contexts)
    row = m[a]
    if abs(row.sum() - 1.0) > 1e-9:
        raise DomainError(f"marginal row for action {a} does not sum to 1")
    return float((row * ucb_contexts(s, delta)).sum())


def tv_unhalved(p, q) -> float:
    """Sum of absolute differences; twice the total-variation distance."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def mle_from_counts(joint_count) -> np.ndarray:
    """Row-normalise an (..., A, Z) table of action/context counts."""
    joint_count = np.asarray(joint_count)
    n = joint_count.sum(axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("every action needs at least one observation")
    return joint_count / n


def mle_marginals(history, actions, contexts):
    """Empirical context frequencies per action from ``(a, z)`` label pairs."""
    from .environment import MarginalTable

    a_idx = {a: i for i, a in enumerate(actions)}
    z_idx = {z: j for j, z in enumerate(contexts)}
    counts = np.zeros((len(a_idx), len(z_idx)), dtype=np.int64)
    for a, z in history:
        try:
            counts[a_idx[a], z_idx[z]] += 1
        except KeyError as exc:
            raise DomainError(f"unknown label {exc}") from None
    empty = np.flatnonzero(counts.sum(axis=1) == 0)
    if empty.size:
        raise DomainError(f"action {actions[int(empty[0])]!r} has no observations")
    return MarginalTable(mle_from_counts(counts))
