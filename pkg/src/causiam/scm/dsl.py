"""Line-oriented text format for SCMs.

    # comment
    node X
    node K_D latent
    edge K_D -> X
    domain X = 0,1
    cpt X | K_D : 0.9,0.1; 0.2,0.8

CPT rows run over parent configurations in row-major order of the listed
parents (last parent varies fastest).  ``cpt R : 0.5,0.5`` for a root.
Nodes without a ``domain`` line are binary with values ``0,1``.
"""

import re
from pathlib import Path

import numpy as np

from .graph import ScmGraph
from .model import DiscreteScm

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


class DslError(ValueError):
    def __init__(self, msg, line, col=1):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


def _col(raw, token):
    i = raw.find(token)
    return i + 1 if i >= 0 else 1


def _name(tok, raw, lineno):
    if not _NAME.match(tok):
        raise DslError(f"invalid node name {tok!r}", lineno, _col(raw, tok))
    return tok


def parse_scm(text):
    """Returns ``(graph, model)``; ``model`` is None when no CPTs are given."""
    nodes, edges, domains, cpts = {}, [], {}, {}
    where = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kw, _, rest = line.partition(" ")
        rest = rest.strip()
        if kw == "node":
            parts = rest.split()
            if not parts or len(parts) > 2 or (len(parts) == 2 and parts[1] != "latent"):
                raise DslError("expected 'node <name> [latent]'", lineno, _col(raw, rest) if rest else len(raw) + 1)
            n = _name(parts[0], raw, lineno)
            if n in nodes:
                raise DslError(f"node {n} declared twice", lineno, _col(raw, n))
            nodes[n] = len(parts) == 1
        elif kw == "edge":
            m = re.fullmatch(r"(\S+)\s*->\s*(\S+)", rest)
            if not m:
                raise DslError("expected 'edge <a> -> <b>'", lineno, _col(raw, rest) if rest else len(raw) + 1)
            a, b = m.group(1), m.group(2)
            for t in (a, b):
                if t not in nodes:
                    raise DslError(f"unknown node {t}", lineno, _col(raw, t))
            edges.append((a, b))
        elif kw == "domain":
            name, eq, vals = rest.partition("=")
            name = name.strip()
            if not eq or name not in nodes:
                raise DslError("expected 'domain <declared node> = v1,v2,...'", lineno, _col(raw, name or rest))
            values = tuple(v.strip() for v in vals.split(","))
            if len(values) < 1 or any(not v for v in values) or len(set(values)) != len(values):
                raise DslError("domain values must be non-empty and distinct", lineno, _col(raw, vals.strip()))
            domains[name] = values
        elif kw == "cpt":
            head, colon, body = rest.partition(":")
            if not colon:
                raise DslError("expected 'cpt <name> | <parents> : rows'", lineno, len(raw) + 1)
            name, _, par = head.partition("|")
            name = name.strip()
            if name not in nodes:
                raise DslError(f"unknown node {name}", lineno, _col(raw, name or head))
            parents = tuple(par.split())
            rows = []
            for r in body.split(";"):
                r = r.strip()
                if not r:
                    continue
                try:
                    rows.append([float(v) for v in r.split(",")])
                except ValueError:
                    raise DslError(f"bad probability row {r!r}", lineno, _col(raw, r)) from None
            cpts[name] = (parents, rows, lineno)
        else:
            raise DslError(f"unknown statement {kw!r}", lineno, _col(raw, kw))
        where.setdefault(kw, lineno)

    try:
        graph = ScmGraph(nodes, edges)
    except (ValueError, KeyError) as exc:
        raise DslError(str(exc), where.get("edge", 1)) from None
    if not cpts:
        return graph, None
    dom = {n: domains.get(n, ("0", "1")) for n in nodes}
    tables, order = {}, {}
    for n in nodes:
        if n not in cpts:
            raise DslError(f"node {n} has no cpt", len(text.splitlines()))
        parents, rows, lineno = cpts[n]
        if set(parents) != graph.parents(n) or len(parents) != len(set(parents)):
            raise DslError(f"cpt parents of {n} must be exactly {sorted(graph.parents(n))}", lineno)
        n_rows = int(np.prod([len(dom[p]) for p in parents], dtype=np.int64))
        if len(rows) != n_rows or any(len(r) != len(dom[n]) for r in rows):
            raise DslError(f"cpt for {n} needs {n_rows} rows of {len(dom[n])} values", lineno)
        arr = np.array(rows, dtype=np.float64).reshape(tuple(len(dom[p]) for p in parents) + (len(dom[n]),))
        if np.any(arr < 0) or np.max(np.abs(arr.sum(axis=-1) - 1)) > 1e-12:
            raise DslError(f"cpt rows for {n} must be non-negative and sum to 1", lineno)
        tables[n] = arr
        order[n] = parents
    return graph, DiscreteScm(graph, dom, tables, order)


def load_scm(path):
    return parse_scm(Path(path).read_text())


def format_scm(graph, model=None):
    """Inverse of ``parse_scm`` (up to comments and whitespace)."""
    out = []
    for n in graph.nodes:
        out.append(f"node {n}" + ("" if graph.observable(n) else " latent"))
    for a, b in sorted(graph.edges):
        out.append(f"edge {a} -> {b}")
    if model is not None:
        for n in graph.nodes:
            out.append(f"domain {n} = " + ",".join(map(str, model.domains[n])))
        for n in graph.nodes:
            po = model.parent_order[n]
            t = model.cpts[n].reshape(-1, len(model.domains[n]))
            rows = "; ".join(",".join(repr(float(v)) for v in r) for r in t)
            out.append(f"cpt {n} | {' '.join(po)} : {rows}".replace("|  :", "| :"))
    return "\n".join(out) + "\n"
