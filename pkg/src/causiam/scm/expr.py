"""Symbolic probability expressions and their canonical text form.

A variable occurrence is a ``Var(node, label)``: the label is what gets
printed and summed over (``x`` and ``x'`` are two labels of node ``X``).
"""

from dataclasses import dataclass
from typing import Tuple


@dataclass(frozen=True)
class Var:
    node: str
    label: str

    def __str__(self):
        return self.label


def var(node, primes=0):
    return Var(node, node.lower() + "'" * primes)


@dataclass(frozen=True)
class Prob:
    targets: Tuple[Var, ...]
    given: Tuple[Var, ...] = ()

    def render(self):
        t = ",".join(map(str, self.targets))
        if self.given:
            return f"P({t}|{','.join(map(str, self.given))})"
        return f"P({t})"


@dataclass(frozen=True)
class Product:
    factors: tuple

    def render(self):
        return " ".join(f"({f.render()})" if isinstance(f, Sum) else f.render() for f in self.factors)


@dataclass(frozen=True)
class Sum:
    over: Tuple[Var, ...]
    body: object

    def render(self):
        if not self.over:
            return self.body.render()
        return f"sum_{{{','.join(map(str, self.over))}}} {self.body.render()}"


def render(e):
    return e.render()


def variables(e):
    """Every Var occurrence, in rendering order."""
    if isinstance(e, Prob):
        return list(e.targets) + list(e.given)
    if isinstance(e, Product):
        return [v for f in e.factors for v in variables(f)]
    if isinstance(e, Sum):
        return list(e.over) + variables(e.body)
    raise TypeError(f"not an expression: {e!r}")


def bound_labels(e):
    if isinstance(e, Prob):
        return set()
    if isinstance(e, Product):
        return set().union(*(bound_labels(f) for f in e.factors)) if e.factors else set()
    return {v.label for v in e.over} | bound_labels(e.body)


def free_vars(e):
    """Unbound variables in first-appearance order."""
    if isinstance(e, Prob):
        seen = {}
        for v in variables(e):
            seen.setdefault(v.label, v)
        return list(seen.values())
    if isinstance(e, Product):
        seen = {}
        for f in e.factors:
            for v in free_vars(f):
                seen.setdefault(v.label, v)
        return list(seen.values())
    inner = {v.label for v in e.over}
    return [v for v in free_vars(e.body) if v.label not in inner]


def nodes_of(e):
    return {v.node for v in variables(e)}


def relabel(e, mapping):
    """Rename labels according to ``mapping`` (label -> Var)."""
    def r(v):
        return mapping.get(v.label, v)
    if isinstance(e, Prob):
        return Prob(tuple(map(r, e.targets)), tuple(map(r, e.given)))
    if isinstance(e, Product):
        return Product(tuple(relabel(f, mapping) for f in e.factors))
    return Sum(tuple(map(r, e.over)), relabel(e.body, mapping))


def freshen(e, taken):
    """Rename bound labels of ``e`` that clash with ``taken`` by adding primes."""
    clash = bound_labels(e) & set(taken)
    if not clash:
        return e
    used = set(taken) | bound_labels(e) | {v.label for v in free_vars(e)}
    mapping = {}
    for v in variables(e):
        if v.label in clash and v.label not in mapping:
            new = v.label + "'"
            while new in used:
                new += "'"
            used.add(new)
            mapping[v.label] = Var(v.node, new)
    return relabel(e, mapping)
