"""Finite-domain SCMs: joint by factorisation, truncated factorisation for
interventions, and numeric evaluation of symbolic expressions."""

import itertools
import string
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .expr import Prob, Product, Sum, free_vars, nodes_of
from .graph import ScmGraph

NORM_TOL = 1e-12


class SemanticsError(ValueError):
    """Expression refers to something the observational data cannot see."""


@dataclass
class Table:
    """Array with one named axis per variable."""
    vars: Tuple[str, ...]
    values: np.ndarray

    def aligned(self, order):
        order = tuple(order)
        if sorted(order) != sorted(self.vars):
            raise ValueError(f"cannot align {self.vars} to {order}")
        return self.values.transpose([self.vars.index(v) for v in order])

    def at(self, assign):
        idx = tuple(assign[v] for v in self.vars)
        return float(self.values[idx])


class DiscreteScm:
    """Graph plus per-node value domains and CPTs.

    ``cpts[n]`` has shape ``(|dom p1|, ..., |dom pk|, |dom n|)`` for the
    parents listed in ``parent_order[n]``.
    """

    def __init__(self, graph: ScmGraph, domains, cpts, parent_order=None):
        self.graph = graph
        self.domains: Dict[str, tuple] = {n: tuple(domains[n]) for n in graph.nodes}
        parent_order = parent_order or {}
        self.parent_order = {n: tuple(parent_order.get(n, sorted(graph.parents(n)))) for n in graph.nodes}
        self.cpts = {}
        for n in graph.nodes:
            po = self.parent_order[n]
            if set(po) != graph.parents(n):
                raise ValueError(f"CPT parents of {n} {po} differ from graph parents {sorted(graph.parents(n))}")
            t = np.asarray(cpts[n], dtype=np.float64)
            shape = tuple(len(self.domains[p]) for p in po) + (len(self.domains[n]),)
            if t.shape != shape:
                raise ValueError(f"CPT for {n} has shape {t.shape}, expected {shape}")
            if np.any(t < 0) or np.max(np.abs(t.sum(axis=-1) - 1.0)) > NORM_TOL:
                raise ValueError(f"CPT rows for {n} must be non-negative and sum to 1")
            self.cpts[n] = t
        self.nodes = graph.order
        self._joint = None

    def index(self, node, value):
        dom = self.domains[node]
        if value in dom:
            return dom.index(value)
        sv = str(value)
        for i, d in enumerate(dom):
            if str(d) == sv:
                return i
        raise ValueError(f"value {value!r} not in domain of {node} {dom}")

    def _factorise(self, replace=None):
        replace = replace or {}
        letters = {n: string.ascii_letters[i] for i, n in enumerate(self.nodes)}
        ops, subs = [], []
        for n in self.nodes:
            t = replace.get(n, self.cpts[n])
            ops.append(t)
            subs.append("".join(letters[p] for p in self.parent_order[n]) + letters[n])
        out = "".join(letters[n] for n in self.nodes)
        return np.einsum(",".join(subs) + "->" + out, *ops)

    def joint(self):
        if self._joint is None:
            self._joint = self._factorise()
        return self._joint

    def do_joint(self, do_idx):
        """Joint after replacing the CPT of every node in ``do_idx`` with a
        point mass at the given value index."""
        rep = {}
        for n, i in do_idx.items():
            t = np.zeros_like(self.cpts[n])
            t[..., i] = 1.0
            rep[n] = t
        return self._factorise(rep)

    def marginal(self, joint, keep):
        keep = tuple(keep)
        axes = tuple(i for i, n in enumerate(self.nodes) if n not in keep)
        m = joint.sum(axis=axes)
        kept = [n for n in self.nodes if n in keep]
        return m.transpose([kept.index(n) for n in keep])


def random_scm(graph, rng, card=2, concentration=1.0):
    """Dirichlet CPT rows; ``card`` is an int or a node -> int map."""
    cards = {n: (card[n] if isinstance(card, dict) else card) for n in graph.nodes}
    domains = {n: tuple(range(cards[n])) for n in graph.nodes}
    cpts = {}
    for n in graph.nodes:
        po = sorted(graph.parents(n))
        shape = tuple(cards[p] for p in po)
        cpts[n] = rng.dirichlet(np.full(cards[n], concentration), size=shape) if shape else \
            rng.dirichlet(np.full(cards[n], concentration))
    return DiscreteScm(graph, domains, cpts)


def uniform_scm(graph, card=2):
    domains = {n: tuple(range(card)) for n in graph.nodes}
    cpts = {n: np.full(tuple(card for _ in graph.parents(n)) + (card,), 1.0 / card) for n in graph.nodes}
    return DiscreteScm(graph, domains, cpts)


def _divide(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def interventional(m, do_assign, query):
    """P(query | do(do_assign)) by truncated factorisation."""
    query = tuple(query)
    m.graph.check(query)
    m.graph.check(do_assign.keys())
    if set(query) & set(do_assign):
        raise ValueError("query and intervention sets overlap")
    idx = {n: m.index(n, v) for n, v in do_assign.items()}
    return Table(query, m.marginal(m.do_joint(idx), query))


def conditional(m, target, given=(), do=()):
    """P(target | given, do(do)) for every value combination.

    The result has axes ``target + given + do``; intervened nodes take each
    of their values in turn.
    """
    target, given, do = tuple(target), tuple(given), tuple(do)
    m.graph.check(target + given + do)
    if len(set(target + given + do)) != len(target + given + do):
        raise ValueError("target, given and do sets must be disjoint")
    shape = tuple(len(m.domains[n]) for n in target + given + do)
    out = np.zeros(shape)
    for combo in itertools.product(*(range(len(m.domains[n])) for n in do)):
        j = m.do_joint(dict(zip(do, combo))) if do else m.joint()
        num = m.marginal(j, target + given)
        den = m.marginal(j, given) if given else np.asarray(num.sum())
        val = _divide(num, np.broadcast_to(den.reshape((1,) * len(target) + den.shape), num.shape))
        out[(Ellipsis,) + combo] = val
    return Table(target + given + do, out)


def prob(m, target, given=(), do=()):
    return conditional(m, target, given, do)


def eval_expr(m, e):
    """Evaluate an expression against the observational joint of ``m``.

    Returns a Table over the expression's free labels, in first-appearance
    order.  Any reference to a latent node raises ``SemanticsError``.
    """
    used = nodes_of(e)
    unknown = used - set(m.graph.nodes)
    if unknown:
        raise SemanticsError(f"expression mentions unknown node(s) {sorted(unknown)}")
    hidden = used & m.graph.latent
    if hidden:
        raise SemanticsError(f"expression mentions latent node(s) {sorted(hidden)}")
    obs_joint = m.joint()
    letters = {}

    def letter(label):
        if label not in letters:
            if len(letters) >= len(string.ascii_letters):
                raise SemanticsError("too many distinct labels")
            letters[label] = string.ascii_letters[len(letters)]
        return letters[label]

    def ev(node):
        if isinstance(node, Prob):
            tv = [v.node for v in node.targets]
            gv = [v.node for v in node.given]
            labels = [v.label for v in node.targets + node.given]
            if len(set(labels)) != len(labels):
                raise SemanticsError(f"repeated label in {node.render()}")
            if len(set(tv + gv)) != len(tv + gv):
                # same node under two labels in one term: diagonal only
                raise SemanticsError(f"node repeated within {node.render()}")
            num = m.marginal(obs_joint, tuple(tv + gv))
            if gv:
                den = m.marginal(obs_joint, tuple(gv))
                num = _divide(num, np.broadcast_to(den.reshape((1,) * len(tv) + den.shape), num.shape))
            else:
                num = num / num.sum()
            return labels, num
        if isinstance(node, Product):
            parts = [ev(f) for f in node.factors]
            out_labels = list(dict.fromkeys(l for ls, _ in parts for l in ls))
            subs = ",".join("".join(letter(l) for l in ls) for ls, _ in parts)
            subs += "->" + "".join(letter(l) for l in out_labels)
            return out_labels, np.einsum(subs, *(a for _, a in parts))
        if isinstance(node, Sum):
            labels, arr = ev(node.body)
            drop = {v.label for v in node.over}
            missing = drop - set(labels)
            if missing:
                # summing over a label the body ignores multiplies by |domain|
                for v in node.over:
                    if v.label in missing:
                        arr = arr * len(m.domains[v.node])
            axes = tuple(i for i, l in enumerate(labels) if l in drop)
            return [l for l in labels if l not in drop], arr.sum(axis=axes)
        raise TypeError(f"not an expression: {node!r}")

    labels, arr = ev(e)
    order = [v.label for v in free_vars(e)]
    return Table(tuple(order), arr.transpose([labels.index(l) for l in order]))


def closed_form_error(m, expr, x, y):
    """Worst absolute gap between ``expr`` evaluated on the observational
    joint and P(y|do(x)) by truncated factorisation, over all values."""
    tab = eval_expr(m, expr)
    xl, yl = x.lower(), y.lower()
    worst = 0.0
    for xv in m.domains[x]:
        ref = interventional(m, {x: xv}, [y]).values
        got = tab.aligned((yl, xl))[:, m.index(x, xv)] if xl in tab.vars else tab.aligned((yl,))
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst
