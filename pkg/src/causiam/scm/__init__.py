"""Causal graphs, identification and a finite-domain SCM oracle."""

from .derivation import DerivationReport, verify_derivation
from .dsl import DslError, format_scm, load_scm, parse_scm
from .expr import Prob, Product, Sum, Var, render
from .graph import CapacityError, ScmGraph, blocking_set, d_sep_bruteforce, d_separated, mutilate
from .identify import CLOSED_FORM, FAIL, QueryResult, closed_form, rule_applicable
from .model import (DiscreteScm, SemanticsError, Table, closed_form_error, conditional, eval_expr, interventional,
                    prob, random_scm, uniform_scm)
