"""Closed-form identification of P(y|do(x)) and the three do-calculus rules.

``closed_form`` walks five steps in order:

1. (X _||_ Y) in G with arrows into X removed  -> P(y)
2. (X _||_ Y) in G with arrows out of X removed -> P(y|x)
3. an observable blocking set B of X and Y with P(b|do(x)) identifiable
   -> sum_b P(y|b,x) P(b|do(x))
4. Z1 = children(X) on the way to Y, Z2 = covariates separating X from Z1
   and Z1 from Y -> sum_{z1,z2,x'} P(y|z1,z2,x') P(x'|z2) P(z1|x,z2) P(z2)
5. FAIL

A branch whose required sets contain a latent node counts as unsatisfied.
"""

from dataclasses import dataclass, field
from typing import List, Optional

from .expr import Prob, Product, Sum, Var, freshen, free_vars, var
from .graph import _as_set, _check_disjoint, blocking_set, d_separated, mutilate

CLOSED_FORM = "CLOSED_FORM"
FAIL = "FAIL"


@dataclass
class TraceEntry:
    step: int
    condition: str
    satisfied: bool
    detail: str = ""


@dataclass
class QueryResult:
    outcome: str
    expr: object = None
    step: int = 5
    trace: List[TraceEntry] = field(default_factory=list)

    def __post_init__(self):
        if (self.outcome == FAIL) != (self.step == 5):
            raise ValueError("FAIL must come from step 5 and only from step 5")

    @property
    def ok(self):
        return self.outcome == CLOSED_FORM

    def render(self):
        return self.expr.render() if self.ok else "FAIL (step 5)"


def _fmt(nodes):
    return "{" + ",".join(sorted(nodes)) + "}"


def _vars(nodes):
    return tuple(var(n) for n in sorted(nodes))


def closed_form(g, x, y, _seen=None) -> QueryResult:
    """Identify P(y|do(x)); ``x`` and ``y`` are node names or sets of them."""
    x, y = g.check(x), g.check(y)
    if not x or not y:
        raise ValueError("x and y must be non-empty")
    _check_disjoint(x=x, y=y)
    hidden = (x | y) & g.latent
    if hidden:
        raise ValueError(f"query mentions latent node(s) {sorted(hidden)}")
    seen = set(_seen or ())
    key = (x, y)
    trace = []
    xv, yv = _vars(x), _vars(y)

    g_bar_x = mutilate(g, remove_in=x)
    g_under_x = mutilate(g, remove_out=x)

    ok = d_separated(g_bar_x, x, y)
    trace.append(TraceEntry(1, f"(X _||_ Y) in G_bar{_fmt(x)}", ok))
    if ok:
        return QueryResult(CLOSED_FORM, Prob(yv), 1, trace)

    ok = d_separated(g_under_x, x, y)
    trace.append(TraceEntry(2, f"(X _||_ Y) in G_under{_fmt(x)}", ok))
    if ok:
        return QueryResult(CLOSED_FORM, Prob(yv, xv), 2, trace)

    res = _step3(g, x, y, seen | {key}, trace)
    if res is not None:
        return res
    res = _step4(g, x, y, trace)
    if res is not None:
        return res
    trace.append(TraceEntry(5, "no branch applies", True))
    return QueryResult(FAIL, None, 5, trace)


def _step3(g, x, y, seen, trace):
    full = blocking_set(g, x, y)
    b = blocking_set(g, x, y, observable_only=True)
    if b is None or not b:
        trace.append(TraceEntry(3, "observable blocking set exists", False,
                                f"unrestricted blocking set {_fmt(full) if full is not None else 'none'}"))
        return None
    if (x, b) in seen:
        trace.append(TraceEntry(3, "P(b|do(x)) identifiable", False, "recursive query repeats"))
        return None
    sub = closed_form(g, x, b, seen)
    if not sub.ok:
        trace.append(TraceEntry(3, "P(b|do(x)) identifiable", False, f"B={_fmt(b)}"))
        return None
    trace.append(TraceEntry(3, "P(b|do(x)) identifiable", True, f"B={_fmt(b)}"))
    xv, yv, bv = _vars(x), _vars(y), _vars(b)
    taken = {v.label for v in xv + yv + bv}
    pb = freshen(sub.expr, taken)
    body = Product((Prob(yv, bv + xv), pb))
    return QueryResult(CLOSED_FORM, Sum(bv, body), 3, trace)


def _step4(g, x, y, trace):
    ch = set().union(*(g.children(n) for n in x))
    z1 = frozenset(ch & (y | g.ancestors(y)))
    detail = f"Z1={_fmt(z1)}"
    if not z1 or (z1 & y):
        trace.append(TraceEntry(4, "Y not in Z1", False, detail))
        return None
    if z1 & g.latent:
        trace.append(TraceEntry(4, "Z1 observable", False, detail))
        return None
    pool = g.observed - x - y - z1 - g.descendants(x)
    g_under_x = mutilate(g, remove_out=x)
    g_under_z1 = mutilate(g, remove_out=z1)
    z3 = blocking_set(g_under_x, x, z1, observable_only=True, candidates=pool)
    z4 = blocking_set(g_under_z1, z1, y, observable_only=True, given=x, candidates=pool)
    if z3 is None or z4 is None:
        trace.append(TraceEntry(4, "Z3 and Z4 exist over observables", False,
                                f"{detail} Z3={z3 and _fmt(z3)} Z4={z4 and _fmt(z4)}"))
        return None
    z2 = z3 | z4
    detail += f" Z2={_fmt(z2)}"
    joint_ok = d_separated(g_under_x, x, z1, z2) and d_separated(g_under_z1, z1, y, z2 | x)
    if (x & z2) or not joint_ok:
        trace.append(TraceEntry(4, "X not in Z2 and Z2 separates jointly", False, detail))
        return None
    trace.append(TraceEntry(4, "Y not in Z1 and X not in Z2", True, detail))
    xv, yv = _vars(x), _vars(y)
    z1v, z2v = _vars(z1), _vars(z2)
    xp = tuple(var(n, 1) for n in sorted(x))
    factors = [Prob(yv, z1v + z2v + xp), Prob(xp, z2v), Prob(z1v, xv + z2v)]
    if z2v:
        factors.append(Prob(z2v))
    return QueryResult(CLOSED_FORM, Sum(z1v + z2v + xp, Product(tuple(factors))), 4, trace)


def rule_applicable(g, rule, x, y, z, w=()):
    """Whether do-calculus rule 1, 2 or 3 licenses the exchange on
    P(y | do(x), z, w)."""
    x, y, z, w = g.check(x), g.check(y), g.check(z), g.check(w)
    _check_disjoint(x=x, y=y, z=z, w=w)
    g_bar_x = mutilate(g, remove_in=x)
    if rule == 1:
        h = g_bar_x
    elif rule == 2:
        h = mutilate(g, remove_in=x, remove_out=z)
    elif rule == 3:
        zw = frozenset(n for n in z if n not in g_bar_x.ancestors(w)) if w else z
        h = mutilate(g, remove_in=x | zw)
    else:
        raise ValueError(f"rule must be 1, 2 or 3, got {rule!r}")
    return d_separated(h, y, z, x | w)


def query_free_vars(result: QueryResult) -> Optional[List[Var]]:
    return free_vars(result.expr) if result.ok else None
