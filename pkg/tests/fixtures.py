"""Scripted outcome tables and a driver that feeds them to package policies."""

import numpy as np

from cbl.stats import SufficientStats

# k-th pull of arm a yields TABLE[a][k] = (context, reward); T = 5, two arms, two contexts
UCB_TABLE = [
    [(0, 1.0), (0, 0.0), (0, 0.0), (0, 0.0), (0, 0.0)],
    [(1, 0.0), (1, 1.0), (1, 1.0), (1, 1.0), (1, 1.0)],
]
CUCB_TABLE = [
    [(0, 1.0), (0, 0.0), (0, 0.0), (1, 1.0), (1, 1.0)],
    [(1, 0.0), (1, 0.0), (0, 1.0), (0, 1.0), (0, 1.0)],
]
CUCB_MARGINALS = [[0.9, 0.1], [0.2, 0.8]]

# worked out by hand with delta = 2/25, so the radius is sqrt(ln 25 / (2 n))
UCB_EXPECTED = [0, 0, 0, 1, 1]
CUCB_EXPECTED = [0, 0, 0, 1, 1]
HAC_EXPECTED = [0, 1, 0, 1, 0]


def table_outcome(table):
    return lambda a, k: table[a][k]


def random_outcome(env, seed, T):
    """Pre-drawn outcomes per arm from ``env``: k-th pull of arm a."""
    rng = np.random.default_rng(seed)
    tables = []
    for a in range(env.n_actions):
        u = rng.random((T, 2))
        z, y = env.draw(np.full(T, a), u[:, 0], u[:, 1])
        tables.append(list(zip(z.tolist(), y.tolist())))
    return table_outcome(tables)


def drive(policy, outcome, n_actions, n_contexts, T, phases=False):
    s = SufficientStats(n_actions, n_contexts)
    pulls = [0] * n_actions
    seq, labels = [], []
    for _ in range(T):
        a = int(policy.select(s))
        z, y = outcome(a, pulls[a])
        pulls[a] += 1
        s.update(a, z, y)
        policy.observe(a, z, y)
        seq.append(a)
        labels.append(policy.phase_label())
    return (seq, labels) if phases else seq
