"""Causal DAGs with latent nodes, mutilation and d-separation."""

import itertools
from collections import deque
from typing import Dict, FrozenSet, Iterable, Optional, Tuple


class CapacityError(ValueError):
    pass


def _as_set(nodes):
    if nodes is None:
        return frozenset()
    if isinstance(nodes, str):
        return frozenset([nodes])
    return frozenset(nodes)


class ScmGraph:
    """Immutable DAG.  ``nodes`` maps name -> observable flag."""

    def __init__(self, nodes, edges=()):
        if isinstance(nodes, dict):
            self._obs: Dict[str, bool] = {str(k): bool(v) for k, v in nodes.items()}
        else:
            self._obs = {str(n): True for n in nodes}
        if len(self._obs) != len(set(self._obs)):
            raise ValueError("duplicate node names")
        self._edges: FrozenSet[Tuple[str, str]] = frozenset((str(a), str(b)) for a, b in edges)
        self._parents = {n: set() for n in self._obs}
        self._children = {n: set() for n in self._obs}
        for a, b in self._edges:
            if a not in self._obs or b not in self._obs:
                raise KeyError(f"edge {a}->{b} references an unknown node")
            if a == b:
                raise ValueError(f"self-loop on {a}")
            self._parents[b].add(a)
            self._children[a].add(b)
        self._order = self._toposort()

    def _toposort(self):
        indeg = {n: len(p) for n, p in self._parents.items()}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in sorted(self._children[n]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self._obs):
            raise ValueError("graph contains a cycle")
        return tuple(order)

    # -- basic queries -------------------------------------------------
    @property
    def nodes(self):
        return tuple(self._obs)

    @property
    def edges(self):
        return self._edges

    @property
    def order(self):
        """Nodes in a deterministic topological order."""
        return self._order

    def observable(self, n):
        return self._obs[n]

    @property
    def observed(self):
        return frozenset(n for n, o in self._obs.items() if o)

    @property
    def latent(self):
        return frozenset(n for n, o in self._obs.items() if not o)

    def parents(self, n):
        return frozenset(self._parents[n])

    def children(self, n):
        return frozenset(self._children[n])

    def check(self, nodes):
        nodes = _as_set(nodes)
        unknown = nodes - set(self._obs)
        if unknown:
            raise KeyError(f"unknown node(s): {', '.join(sorted(unknown))}")
        return nodes

    def ancestors(self, nodes):
        """Proper ancestors of any node in ``nodes``."""
        out, stack = set(), list(self.check(nodes))
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return frozenset(out)

    def descendants(self, nodes):
        out, stack = set(), list(self.check(nodes))
        while stack:
            for c in self._children[stack.pop()]:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return frozenset(out)

    def with_edges(self, extra):
        return ScmGraph(self._obs, self._edges | frozenset(extra))

    def __eq__(self, other):
        return isinstance(other, ScmGraph) and self._obs == other._obs and self._edges == other._edges

    def __hash__(self):
        return hash((tuple(sorted(self._obs.items())), self._edges))

    def __repr__(self):
        es = ", ".join(f"{a}->{b}" for a, b in sorted(self._edges))
        lat = sorted(self.latent)
        return f"ScmGraph([{es}]" + (f", latent={lat})" if lat else ")")


def mutilate(g, remove_in=(), remove_out=()):
    """Drop edges into ``remove_in`` and out of ``remove_out``."""
    rin = g.check(remove_in)
    rout = g.check(remove_out)
    kept = [(a, b) for a, b in g.edges if b not in rin and a not in rout]
    return ScmGraph({n: g.observable(n) for n in g.nodes}, kept)


def _check_disjoint(**sets):
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            common = sets[a] & sets[b]
            if common:
                raise ValueError(f"sets {a} and {b} overlap on {sorted(common)}")


def d_separated(g, x, y, z=()):
    """True iff every path between ``x`` and ``y`` is blocked by ``z``.

    Reachability over (node, direction) states: a trail may pass a
    non-collider that is not in ``z``, and a collider that is in ``z`` or
    has a descendant in ``z``.
    """
    x, y, z = g.check(x), g.check(y), g.check(z)
    _check_disjoint(x=x, y=y, z=z)
    if not x or not y:
        return True
    anc_z = set(z) | g.ancestors(z)
    # "up": reached from a child, "down": reached from a parent
    queue = deque((n, "up") for n in x)
    seen = set()
    while queue:
        n, d = queue.popleft()
        if (n, d) in seen:
            continue
        seen.add((n, d))
        if n in y:
            return False
        if d == "up" and n not in z:
            queue.extend((p, "up") for p in g.parents(n))
            queue.extend((c, "down") for c in g.children(n))
        elif d == "down":
            if n not in z:
                queue.extend((c, "down") for c in g.children(n))
            if n in anc_z:
                queue.extend((p, "up") for p in g.parents(n))
    return True


MAX_BRUTEFORCE_NODES = 12


def _simple_paths(g, a, b):
    nbrs = {n: g.parents(n) | g.children(n) for n in g.nodes}
    path = [a]
    on = {a}

    def walk(n):
        if n == b:
            yield list(path)
            return
        for m in sorted(nbrs[n]):
            if m not in on:
                path.append(m)
                on.add(m)
                yield from walk(m)
                path.pop()
                on.discard(m)

    yield from walk(a)


def path_blocked(g, path, z):
    """Apply the blocking conditions to each consecutive triple of ``path``."""
    z = set(z)
    edges = g.edges
    for a, b, c in zip(path, path[1:], path[2:]):
        collider = (a, b) in edges and (c, b) in edges
        if collider:
            if b not in z and not (g.descendants(b) & z):
                return True
        elif b in z:
            return True
    return False


def d_sep_bruteforce(g, x, y, z=()):
    """Enumerate every simple path and test it triple by triple."""
    if len(g.nodes) > MAX_BRUTEFORCE_NODES:
        raise CapacityError(f"path enumeration limited to {MAX_BRUTEFORCE_NODES} nodes")
    x, y, z = g.check(x), g.check(y), g.check(z)
    _check_disjoint(x=x, y=y, z=z)
    for a in sorted(x):
        for b in sorted(y):
            for p in _simple_paths(g, a, b):
                if not path_blocked(g, p, z):
                    return False
    return True


def blocking_set(g, x, y, observable_only=False, given=(), candidates=None) -> Optional[FrozenSet[str]]:
    """Smallest set W with (x _||_ y | W u given) in ``g``.

    Ties go to the lexicographically first sorted name tuple.  ``None`` when
    no admissible set exists.
    """
    x, y, given = g.check(x), g.check(y), g.check(given)
    pool = set(g.nodes) if candidates is None else set(g.check(candidates))
    pool -= x | y | given
    if observable_only:
        pool &= g.observed
    pool = sorted(pool)
    for k in range(len(pool) + 1):
        for combo in itertools.combinations(pool, k):
            if d_separated(g, x, y, given | frozenset(combo)):
                return frozenset(combo)
    return None


def random_dag(rng, n_nodes, edge_prob=0.35, latent_prob=0.0, names=None):
    """Random DAG over a random node ordering, for property tests."""
    names = list(names) if names is not None else [f"V{i}" for i in range(n_nodes)]
    perm = list(rng.permutation(len(names)))
    order = [names[i] for i in perm]
    edges = [(order[i], order[j]) for i, j in itertools.combinations(range(len(order)), 2)
             if rng.random() < edge_prob]
    obs = {n: not (rng.random() < latent_prob) for n in names}
    return ScmGraph(obs, edges)


def iter_sets(nodes: Iterable[str], max_size=2):
    nodes = sorted(nodes)
    for k in range(1, max_size + 1):
        yield from (frozenset(c) for c in itertools.combinations(nodes, k))
