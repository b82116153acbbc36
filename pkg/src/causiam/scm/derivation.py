"""Numeric certification of the step-by-step do-calculus derivation of
P(y|do(x)) on the two-mediator graph with latent knowledge nodes.

Every hatted quantity is computed by truncated factorisation, every plain
one from the observational joint, so each equality is checked
oracle-against-oracle.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .identify import closed_form
from .model import conditional, eval_expr

DERIVATION_NODES = frozenset({"X", "Y", "D", "S", "K_D", "K_S"})
TOL = 1e-10


@dataclass
class Check:
    name: str
    max_err: float
    passed: bool


@dataclass
class DerivationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]


def _t(m, target, given=(), do=()):
    """P(target | given, do(do)) as an array indexed [y, x, s, d] (missing
    axes broadcast)."""
    tab = conditional(m, target, given, do)
    order = ("Y", "X", "S", "D")
    arr = tab.values
    present = [v for v in order if v in tab.vars]
    arr = tab.aligned(present)
    shape = [len(m.domains[v]) if v in tab.vars else 1 for v in order]
    return arr.reshape(shape)


def verify_derivation(m, tol=TOL):
    """Run every equality of the derivation on ``m``; returns a report.

    All arrays below are indexed [y, x, s, d].
    """
    if set(m.graph.nodes) != DERIVATION_NODES:
        raise ValueError(f"derivation needs nodes {sorted(DERIVATION_NODES)}, got {sorted(m.graph.nodes)}")
    P = lambda *a, **k: _t(m, *a, **k)  # noqa: E731

    y_xh_s_d = P("Y", ("S", "D"), ("X",))
    y_xh_sh_d = P("Y", ("D",), ("X", "S"))
    y_xh_sh_dh = P("Y", (), ("X", "S", "D"))
    y_sh_dh = P("Y", (), ("S", "D"))
    y_sh_dh_x = P("Y", ("X",), ("S", "D"))
    x_sh_dh = P("X", (), ("S", "D"))
    y_s_dh_x = P("Y", ("X", "S"), ("D",))
    y_s_d_x = P("Y", ("X", "S", "D"))
    x_dh = P("X", (), ("D",))
    p_x = P("X")
    d_xh_s = P("D", ("S",), ("X",))
    d_x_s = P("D", ("X", "S"))
    d_x = P("D", ("X",))
    s_xh = P("S", (), ("X",))
    s_x = P("S", ("X",))
    y_xh = P("Y", (), ("X",))

    sum_x = lambda a: a.sum(axis=1, keepdims=True)  # noqa: E731
    sum_sd = lambda a: a.sum(axis=(2, 3), keepdims=True)  # noqa: E731
    # x' summed against P(x'), broadcast back over the free x axis
    front = sum_x(y_s_d_x * p_x)

    pairs = [
        ("P(y|do(x),s,d) = P(y|do(x,s),d)  [rule 2]", y_xh_s_d, y_xh_sh_d),
        ("P(y|do(x,s),d) = P(y|do(x,s,d))  [rule 2]", y_xh_sh_d, y_xh_sh_dh),
        ("P(y|do(x,s,d)) = P(y|do(s,d))  [rule 3]", y_xh_sh_dh, y_sh_dh),
        ("P(y|do(s,d)) = sum_x P(y|do(s,d),x) P(x|do(s,d))", y_sh_dh, sum_x(y_sh_dh_x * x_sh_dh)),
        ("P(y|do(s,d),x) = P(y|s,do(d),x)  [rule 2]", y_sh_dh_x, y_s_dh_x),
        ("P(y|s,do(d),x) = P(y|s,d,x)  [rule 2]", y_s_dh_x, y_s_d_x),
        ("P(x|do(s,d)) = P(x|do(d))  [rule 3]", x_sh_dh, x_dh),
        ("P(x|do(d)) = P(x)  [rule 3]", x_dh, p_x),
        ("P(d|do(x),s) = P(d|x,s)  [rule 2]", d_xh_s, d_x_s),
        ("P(d|x,s) = P(d|x)  [independence]", d_x_s, d_x),
        ("P(s|do(x)) = P(s|x)  [rule 2]", s_xh, s_x),
        ("P(y|do(x),s,d) = sum_x' P(y|s,d,x') P(x')", y_xh_s_d, front),
        ("P(y|do(x)) = sum_{s,d} P(y|do(x),s,d) P(d|do(x),s) P(s|do(x))", y_xh, sum_sd(y_xh_s_d * d_xh_s * s_xh)),
        ("P(y|do(x)) = sum_{s,d,x'} P(y|s,d,x') P(x') P(d|x) P(s|x)", y_xh, sum_sd(front * d_x * s_x)),
    ]
    report = DerivationReport()
    for name, lhs, rhs in pairs:
        lhs, rhs = np.broadcast_arrays(lhs, rhs)
        err = float(np.max(np.abs(lhs - rhs)))
        report.checks.append(Check(name, err, err <= tol))

    res = closed_form(m.graph, "X", "Y")
    if res.ok:
        tab = eval_expr(m, res.expr)
        got = tab.aligned(("y", "x"))
        want = y_xh[:, :, 0, 0]
        err = float(np.max(np.abs(got - want)))
    else:
        err = float("inf")
    report.checks.append(Check("identified closed form = P(y|do(x))", err, err <= tol))
    return report
