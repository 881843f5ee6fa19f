"""Precondition/effect formula trees.

Preconditions are arbitrary and/or/not trees over literals; effects are
restricted to conjunctions of (possibly negated) literals. The structured
form used in catalog files maps single-key dicts onto these nodes:

    {"and": [...]}            conjunction
    {"or": [...]}             disjunction (preconditions only)
    {"not": <node>}           negation
    {"lit": {"pred": name, "args": [param, ...]}}

The planner and the PDDL emitter consume formulas in negation normal form;
`to_nnf` pushes negations down to literals and `to_dnf` produces the clause
list used for disjunction lowering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .errors import ChainplannerError


class FormulaError(ChainplannerError):
    pass


@dataclass(frozen=True, order=True)
class Lit:
    pred: str
    args: tuple[str, ...]

    def rename(self, mapping: dict[str, str]) -> "Lit":
        return Lit(self.pred, tuple(mapping.get(a, a) for a in self.args))


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]


Formula = Lit | Not | And | Or

TRUE = And(())


def from_dict(node: object, allow_or: bool = True) -> Formula:
    """Parse the structured single-key-dict form. Effects set allow_or=False."""
    if not isinstance(node, dict) or len(node) != 1:
        raise FormulaError(f"formula node must be a single-key mapping, got {node!r}")
    key, value = next(iter(node.items()))
    if key == "lit":
        if not isinstance(value, dict) or "pred" not in value or "args" not in value:
            raise FormulaError(f"literal node needs pred and args: {node!r}")
        args = value["args"]
        if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
            raise FormulaError(f"literal args must be a list of names: {node!r}")
        return Lit(str(value["pred"]), tuple(args))
    if key == "not":
        return Not(from_dict(value, allow_or=allow_or))
    if key == "and":
        if not isinstance(value, list):
            raise FormulaError(f"and node needs a list: {node!r}")
        return And(tuple(from_dict(v, allow_or=allow_or) for v in value))
    if key == "or":
        if not allow_or:
            raise FormulaError("effects cannot contain disjunction")
        if not isinstance(value, list):
            raise FormulaError(f"or node needs a list: {node!r}")
        return Or(tuple(from_dict(v, allow_or=allow_or) for v in value))
    raise FormulaError(f"unknown formula node kind: {key!r}")


def to_dict(f: Formula) -> dict:
    if isinstance(f, Lit):
        return {"lit": {"pred": f.pred, "args": list(f.args)}}
    if isinstance(f, Not):
        return {"not": to_dict(f.child)}
    if isinstance(f, And):
        return {"and": [to_dict(c) for c in f.children]}
    if isinstance(f, Or):
        return {"or": [to_dict(c) for c in f.children]}
    raise FormulaError(f"not a formula: {f!r}")


def literals(f: Formula) -> Iterator[Lit]:
    """Yield every literal in the tree, ignoring polarity."""
    if isinstance(f, Lit):
        yield f
    elif isinstance(f, Not):
        yield from literals(f.child)
    else:
        for c in f.children:
            yield from literals(c)


def referenced_params(f: Formula) -> set[str]:
    return {a for lit in literals(f) for a in lit.args}


def rename(f: Formula, mapping: dict[str, str]) -> Formula:
    if isinstance(f, Lit):
        return f.rename(mapping)
    if isinstance(f, Not):
        return Not(rename(f.child, mapping))
    if isinstance(f, And):
        return And(tuple(rename(c, mapping) for c in f.children))
    return Or(tuple(rename(c, mapping) for c in f.children))


def to_nnf(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form: not appears only directly above literals."""
    if isinstance(f, Lit):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return to_nnf(f.child, not negate)
    if isinstance(f, And):
        children = tuple(to_nnf(c, negate) for c in f.children)
        return Or(children) if negate else And(children)
    children = tuple(to_nnf(c, negate) for c in f.children)
    return And(children) if negate else Or(children)


# A clause is a conjunction of signed literals: (lit, positive) pairs.
Clause = tuple[tuple[Lit, bool], ...]


def to_dnf(f: Formula) -> list[Clause]:
    """Disjunctive normal form of an NNF formula.

    Returns clauses as ordered, de-duplicated signed-literal tuples.
    Clauses containing a complementary pair are dropped (never satisfiable),
    so an unsatisfiable formula yields an empty clause list.
    """
    nnf = to_nnf(f)

    def clauses_of(g: Formula) -> list[list[tuple[Lit, bool]]]:
        if isinstance(g, Lit):
            return [[(g, True)]]
        if isinstance(g, Not):
            assert isinstance(g.child, Lit)
            return [[(g.child, False)]]
        if isinstance(g, Or):
            out: list[list[tuple[Lit, bool]]] = []
            for c in g.children:
                out.extend(clauses_of(c))
            return out
        # And: cross product of children clause lists
        acc: list[list[tuple[Lit, bool]]] = [[]]
        for c in g.children:
            nxt: list[list[tuple[Lit, bool]]] = []
            for existing in acc:
                for add in clauses_of(c):
                    nxt.append(existing + add)
            acc = nxt
        return acc

    out: list[Clause] = []
    seen: set[frozenset[tuple[Lit, bool]]] = set()
    for raw in clauses_of(nnf):
        # de-duplicate within the clause, preserving first-seen order
        dedup: list[tuple[Lit, bool]] = []
        lits: dict[Lit, bool] = {}
        contradictory = False
        for lit, pos in raw:
            if lit in lits:
                if lits[lit] != pos:
                    contradictory = True
                    break
                continue
            lits[lit] = pos
            dedup.append((lit, pos))
        if contradictory:
            continue
        key = frozenset(dedup)
        if key in seen:
            continue
        seen.add(key)
        out.append(tuple(dedup))
    return out


def evaluate(f: Formula, true_lits: set[Lit]) -> bool:
    """Truth of a ground formula against the set of literals holding."""
    if isinstance(f, Lit):
        return f in true_lits
    if isinstance(f, Not):
        return not evaluate(f.child, true_lits)
    if isinstance(f, And):
        return all(evaluate(c, true_lits) for c in f.children)
    return any(evaluate(c, true_lits) for c in f.children)


def conjuncts(f: Formula) -> list[Formula]:
    """Flatten a conjunction one level; anything else is a single conjunct."""
    if isinstance(f, And):
        out: list[Formula] = []
        for c in f.children:
            out.extend(conjuncts(c))
        return out
    return [f]


def effect_literals(f: Formula) -> list[tuple[Lit, bool]]:
    """Signed literals of an effect formula (and/not/lit only)."""
    out: list[tuple[Lit, bool]] = []
    for c in conjuncts(f):
        if isinstance(c, Lit):
            out.append((c, True))
        elif isinstance(c, Not) and isinstance(c.child, Lit):
            out.append((c.child, False))
        elif isinstance(c, And) and not c.children:
            continue
        else:
            raise FormulaError(f"effects must be conjunctions of literals: {c!r}")
    return out


def conj(items: list[Formula]) -> Formula:
    """Conjunction, collapsing the one-item case."""
    if len(items) == 1:
        return items[0]
    return And(tuple(items))
