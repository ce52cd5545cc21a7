"""Causal DAGs with action, context, reward and latent roles.

Provides d-separation (reachability over (node, direction) states),
mutilation (removing edges into the action nodes), the front-door criterion,
a parser for a small text format, and the bridge from a DAG with binary
conditional probability tables to a concrete bandit environment.
"""

from __future__ import annotations

import graphlib
import itertools
from collections import deque

import numpy as np

from .environment import Environment, RewardLaw
from .errors import ConfigError, CycleError, DomainError, ParameterError

LAW_TOL = 1e-12


class Dag:
    """Immutable DAG; node order is the order given (or first seen when parsed)."""

    def __init__(self, nodes, edges, actions=(), contexts=(), reward=None, latent=()):
        self.nodes = tuple(dict.fromkeys(nodes))
        known = set(self.nodes)
        self.edges = frozenset((u, v) for u, v in edges)
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ParameterError(f"edge {u} -> {v} mentions an undeclared node")
            if u == v:
                raise CycleError((u, v))
        self.actions = frozenset(actions)
        self.contexts = frozenset(contexts)
        self.latent = frozenset(latent)
        self.reward = reward
        roles = [self.actions, self.contexts, self.latent, {reward} if reward is not None else set()]
        for r in roles:
            if not r <= known:
                raise ParameterError(f"role members {sorted(r - known)} are not nodes")
        for r1, r2 in itertools.combinations(roles, 2):
            if r1 & r2:
                raise ParameterError(f"node(s) {sorted(r1 & r2)} carry two roles")
        self._parents = {n: tuple(u for u in self.nodes if (u, n) in self.edges) for n in self.nodes}
        self._children = {n: tuple(v for v in self.nodes if (n, v) in self.edges) for n in self.nodes}
        self._check_acyclic()
        if reward is not None and self._children[reward]:
            raise ParameterError(f"reward node {reward} must be a leaf")
        bad = {p for a in self.actions for p in self._parents[a]} & self.contexts
        if bad:
            raise ParameterError(f"context node(s) {sorted(bad)} are parents of an action")

    def _check_acyclic(self):
        ts = graphlib.TopologicalSorter({n: self._parents[n] for n in self.nodes})
        try:
            self.order = tuple(ts.static_order())
        except graphlib.CycleError as exc:
            cycle = exc.args[1]
            for x, y in zip(cycle, cycle[1:]):
                if (x, y) in self.edges:
                    raise CycleError((x, y)) from None
                if (y, x) in self.edges:
                    raise CycleError((y, x)) from None
            raise CycleError((cycle[0], cycle[1])) from None

    def parents(self, n):
        return self._parents[n]

    def children(self, n):
        return self._children[n]

    def descendants(self, n) -> set:
        out, stack = {n}, [n]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def ancestors(self, nodes) -> set:
        out, stack = set(nodes), list(nodes)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    def with_edges(self, edges) -> "Dag":
        return Dag(self.nodes, edges, self.actions, self.contexts, self.reward, self.latent)

    def __eq__(self, other):
        return (isinstance(other, Dag) and self.nodes == other.nodes and self.edges == other.edges
                and self.actions == other.actions and self.contexts == other.contexts
                and self.reward == other.reward and self.latent == other.latent)

    def __repr__(self):
        edges = ", ".join(f"{u}->{v}" for u, v in sorted(self.edges, key=str))
        return f"Dag([{edges}])"


def d_separates(g: Dag, sep, src, dst) -> bool:
    """True iff ``sep`` blocks every path between ``src`` and ``dst``.

    Reachability over (node, direction) states: "up" means the walk arrived
    from a child, "down" from a parent.  A collider passes the walk on only
    when it or one of its descendants is in ``sep``.
    """
    sep, src, dst = set(sep), set(src), set(dst)
    if sep & src or sep & dst or src & dst:
        raise DomainError("separating, source and target sets must be pairwise disjoint")
    for n in sep | src | dst:
        if n not in g._parents:
            raise DomainError(f"unknown node {n!r}")
    opens_collider = g.ancestors(sep)
    seen = set()
    queue = deque((s, "up") for s in src)
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in seen:
            continue
        seen.add((node, direction))
        if node in dst:
            return False
        if direction == "up" and node not in sep:
            queue.extend((p, "up") for p in g.parents(node))
            queue.extend((c, "down") for c in g.children(node))
        elif direction == "down":
            if node not in sep:
                queue.extend((c, "down") for c in g.children(node))
            if node in opens_collider:
                queue.extend((p, "up") for p in g.parents(node))
    return True


def mutilate(g: Dag) -> Dag:
    """Copy of ``g`` without the edges pointing into action nodes."""
    return g.with_edges((u, v) for u, v in g.edges if v not in g.actions)


def _simple_paths(g: Dag, start, targets):
    """Yield simple undirected paths from ``start`` to any node of ``targets``."""
    neighbours = {n: set(g.parents(n)) | set(g.children(n)) for n in g.nodes}

    def walk(path, on_path):
        last = path[-1]
        if last in targets and len(path) > 1:
            yield list(path)
            return
        for nb in neighbours[last]:
            if nb not in on_path:
                path.append(nb)
                on_path.add(nb)
                yield from walk(path, on_path)
                on_path.discard(nb)
                path.pop()

    yield from walk([start], {start})


def path_blocked(g: Dag, path, sep) -> bool:
    """Blocking rule for a single path (as a node sequence) given ``sep``."""
    sep = set(sep)
    for prev, node, nxt in zip(path, path[1:], path[2:]):
        collider = (prev, node) in g.edges and (nxt, node) in g.edges
        if collider:
            if not g.descendants(node) & sep:
                return True
        elif node in sep:
            return True
    return False


def _directed_paths(g: Dag, start, target):
    stack = [(start, [start])]
    while stack:
        node, path = stack.pop()
        if node == target:
            yield path
            continue
        for c in g.children(node):
            stack.append((c, path + [c]))


def front_door(g: Dag) -> bool:
    """Whether the context nodes satisfy the front-door criterion for (actions, reward)."""
    A, Z, Y = g.actions, g.contexts, g.reward
    if Y is None or not A or not Z:
        return False
    for a in A:
        for path in _directed_paths(g, a, Y):
            if not Z & set(path[1:-1]):
                return False
    for a in A:
        for path in _simple_paths(g, a, Z):
            if (path[1], a) in g.edges and not path_blocked(g, path, ()):
                return False
    for z in Z:
        for path in _simple_paths(g, z, {Y}):
            if (path[1], z) in g.edges and not path_blocked(g, path, A):
                return False
    return True


def front_door_implies_dsep_check(g: Dag) -> bool:
    """Front door on ``g`` implies the contexts separate actions from reward once mutilated."""
    return (not front_door(g)) or d_separates(mutilate(g), g.contexts, g.actions, {g.reward})


def classify(g: Dag) -> dict:
    """The three verdicts printed by ``graph check``."""
    Z, A, Y = g.contexts, g.actions, {g.reward}
    return {
        "dsep:G": d_separates(g, Z, A, Y),
        "dsep:mutilated": d_separates(mutilate(g), Z, A, Y),
        "frontdoor": front_door(g),
    }


# Environments --------------------------------------------------------------------

def is_conditionally_benign(env: Environment, include_null: bool = True) -> bool:
    """Decide whether all actions share one reward law at every reachable context.

    Only actions that reach context z with positive probability are compared
    at z.  ``include_null`` records whether ``env`` lists the observational
    action; it does not change the decision.
    """
    for z in range(env.n_contexts):
        laws = [env.reward[a][z] for a in range(env.n_actions) if env.marginal[a, z] > 0]
        for law in laws[1:]:
            if law.kind != laws[0].kind or abs(law.param - laws[0].param) > LAW_TOL:
                return False
    return True


def random_cpts(g: Dag, rng: np.random.Generator, low: float = 0.05, high: float = 0.95) -> dict:
    """P(node = 1 | parents) tables for binary nodes, entries drawn from U[low, high]."""
    return {n: rng.uniform(low, high, size=(2,) * len(g.parents(n))) for n in g.nodes}


def interventional_environment(g: Dag, cpts: dict, include_null: bool = True) -> Environment:
    """Bandit environment induced by do-interventions on the action nodes.

    Every node is binary; the reward node's table gives P(Y = 1 | parents) and
    becomes a Bernoulli reward.  Actions are all assignments of the action
    nodes (plus the observational "null" action when ``include_null``),
    contexts all assignments of the context nodes.  Distributions follow the
    truncated factorisation: the action nodes' own factors are dropped and
    their values fixed.
    """
    Y = g.reward
    if Y is None or not g.actions or not g.contexts:
        raise ParameterError("graph needs action, context and reward roles")
    V = [n for n in g.nodes if n != Y]
    A = [n for n in g.nodes if n in g.actions]
    Z = [n for n in g.nodes if n in g.contexts]
    assignments = [dict(zip(V, bits)) for bits in itertools.product((0, 1), repeat=len(V))]

    def factor(n, x):
        p1 = cpts[n][tuple(x[p] for p in g.parents(n))]
        return p1 if x.get(n, 1) == 1 else 1.0 - p1

    interventions = [dict(zip(A, bits)) for bits in itertools.product((0, 1), repeat=len(A))]
    labels = ["do(" + ",".join(f"{k}={v}" for k, v in d.items()) + ")" for d in interventions]
    if include_null:
        interventions.append(None)
        labels.append("null")
    contexts = list(itertools.product((0, 1), repeat=len(Z)))
    mass = np.zeros((len(interventions), len(contexts)))
    reward_mass = np.zeros_like(mass)
    for i, do in enumerate(interventions):
        for x in assignments:
            if do is not None and any(x[a] != v for a, v in do.items()):
                continue
            w = 1.0
            for n in V:
                if do is None or n not in do:
                    w *= factor(n, x)
            j = contexts.index(tuple(x[z] for z in Z))
            mass[i, j] += w
            reward_mass[i, j] += w * factor(Y, {**x, Y: 1})
    means = np.divide(reward_mass, mass, out=np.zeros_like(mass), where=mass > 0)
    marginal = mass / mass.sum(axis=1, keepdims=True)
    laws = [[RewardLaw.bernoulli(float(np.clip(mu, 0.0, 1.0))) for mu in row] for row in means]
    ctx_labels = [",".join(f"{z}={v}" for z, v in zip(Z, c)) for c in contexts]
    return Environment(labels, ctx_labels, marginal, laws)


def random_causal_dag(rng: np.random.Generator, n_nodes: int, edge_prob: float = 0.4,
                      n_actions: int = 1, n_contexts: int = 1) -> Dag:
    """Random role-tagged DAG satisfying the structural assumptions.

    Nodes are shuffled role assignments over a random topological order; the
    reward is the last node (a leaf) and edges from contexts into actions are
    never drawn.
    """
    if n_nodes < n_actions + n_contexts + 1:
        raise ParameterError("not enough nodes for the requested roles")
    names = [f"V{i}" for i in range(n_nodes - 1)] + ["Y"]
    inner = names[:-1]
    roles = rng.permutation(len(inner))
    A = {inner[i] for i in roles[:n_actions]}
    Z = {inner[i] for i in roles[n_actions:n_actions + n_contexts]}
    L = set(inner) - A - Z
    edges = []
    for i, j in itertools.combinations(range(n_nodes), 2):
        u, v = names[i], names[j]
        if u in Z and v in A:
            continue
        if rng.random() < edge_prob:
            edges.append((u, v))
    return Dag(names, edges, A, Z, "Y", L)


# Text format ------------------------------------------------------------------------

_ROLE_KEYS = {"@action": "actions", "@context": "contexts", "@reward": "reward", "@latent": "latent"}


def parse_dag(text: str) -> Dag:
    """Parse ``src -> dst`` edge lines and ``@action/@context/@reward/@latent`` declarations.

    ``#`` starts a comment; an edge line may chain several arrows.
    """
    nodes, edges = [], []
    roles = {"actions": [], "contexts": [], "reward": [], "latent": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@"):
            key, *names = line.split()
            if key not in _ROLE_KEYS or not names:
                raise ConfigError(f"line {lineno}: bad role declaration {line!r}")
            roles[_ROLE_KEYS[key]].extend(names)
            nodes.extend(names)
            continue
        parts = [p.strip() for p in line.split("->")]
        if len(parts) < 2 or not all(parts) or any(len(p.split()) != 1 for p in parts):
            raise ConfigError(f"line {lineno}: expected 'src -> dst', got {line!r}")
        nodes.extend(parts)
        edges.extend(zip(parts, parts[1:]))
    if len(roles["reward"]) > 1:
        raise ConfigError("at most one @reward node")
    reward = roles["reward"][0] if roles["reward"] else None
    for u, v in edges:
        if u == v:
            raise CycleError((u, v))
    return Dag(nodes, edges, roles["actions"], roles["contexts"], reward, roles["latent"])
