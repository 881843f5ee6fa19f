"""PDDL compilation and parsing for the supported subset.

The subset: :strips, :typing, :negative-preconditions (declared only when
used), :numeric-fluents with the single function (total-reward), action
effects that increase it, and a maximize metric. Disjunctive preconditions
are lowered to action variants before emission, so the emitted text never
contains `or`.

Emission is deterministic: actions sorted by catalog uuid, predicates by
(name, arity), types and objects by name. `parse_domain`/`parse_problem`
are structural inverses of the emitters on this subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import formulas as fm
from .aalm import Registry
from .catalog import Catalog
from .errors import (
    ClauseExplosion,
    PddlSyntaxError,
    UnannotatedAction,
    UnknownAction,
    UnknownObject,
    UnregisteredSymbol,
    UnsatisfiableTypeRequest,
    UnsupportedConstruct,
)

DEFAULT_CLAUSE_BOUND = 32
DEFAULT_POOL = 3


@dataclass(frozen=True)
class PddlPredicate:
    """Predicate declaration. Identity is (name, param types); the variable
    names printed in the declaration are generated and carry no meaning."""

    name: str
    params: tuple[str, ...]  # semantic type per position


@dataclass(frozen=True)
class PddlAction:
    name: str
    parameters: tuple[tuple[str, str], ...]  # (variable, type), ordered
    precondition: fm.Formula
    effects: tuple[tuple[fm.Lit, bool], ...]  # (literal, positive)
    reward: float = 0.0


@dataclass(frozen=True)
class PddlDomain:
    name: str
    requirements: tuple[str, ...]
    types: tuple[tuple[str, str], ...]  # (type, parent), sorted by type
    predicates: tuple[PddlPredicate, ...]
    actions: tuple[PddlAction, ...]
    # the single numeric fluent; kept as a field so parse(emit(x)) == x
    functions: tuple[str, ...] = ("total-reward",)


@dataclass(frozen=True)
class PddlProblem:
    name: str
    domain_name: str
    objects: tuple[tuple[str, str], ...]  # (object, type), sorted by name
    init: tuple[fm.Lit, ...]  # ground atoms, sorted
    goal: fm.Formula
    metric_maximize: bool = True


@dataclass
class DomainIndex:
    """Side table produced with a domain: emitted action name -> provenance.

    Lowered variants share their original's uuid. Not part of the PDDL text,
    so not part of round-trip equality.
    """

    origin: dict[str, str] = field(default_factory=dict)  # action name -> uuid
    rewards: dict[str, float] = field(default_factory=dict)


def _formula_uses_negation(f: fm.Formula) -> bool:
    if isinstance(f, fm.Not):
        return True
    if isinstance(f, (fm.And, fm.Or)):
        return any(_formula_uses_negation(c) for c in f.children)
    return False


def lower_disjunctions(a: PddlAction,
                       clause_bound: int = DEFAULT_CLAUSE_BOUND) -> list[PddlAction]:
    """Split an action with disjunctive preconditions into one variant per
    DNF clause, named <name>_v1.._vk. Purely conjunctive actions (no `or`
    anywhere) come back unchanged, without a suffix."""
    if not _contains_or(a.precondition):
        return [a]
    clauses = fm.to_dnf(a.precondition)
    if len(clauses) > clause_bound:
        raise ClauseExplosion(a.name, len(clauses), clause_bound)
    variants = []
    for i, clause in enumerate(clauses, 1):
        pre = fm.And(tuple(
            lit if positive else fm.Not(lit) for lit, positive in clause))
        variants.append(PddlAction(
            name=f"{a.name}_v{i}", parameters=a.parameters, precondition=pre,
            effects=a.effects, reward=a.reward))
    return variants


def _contains_or(f: fm.Formula) -> bool:
    if isinstance(f, fm.Or):
        return True
    if isinstance(f, fm.And):
        return any(_contains_or(c) for c in f.children)
    if isinstance(f, fm.Not):
        return _contains_or(f.child)
    return False


def build_domain(c: Catalog, reg: Registry,
                 rewards: dict[str, float] | None = None,
                 name: str = "chainplanner",
                 clause_bound: int = DEFAULT_CLAUSE_BOUND) -> tuple[PddlDomain, DomainIndex]:
    """Compile a catalog + registry into a domain structure.

    Every registry predicate is declared (problems may name any of them as
    goals); actions are ordered by uuid and disjunctions lowered. The reward
    increment for an action is rewards[uuid] when present, else the record's
    own reward field.
    """
    rewards = rewards or {}
    types = tuple(sorted(
        (t.name, t.parent) for t in reg.types.values() if t.parent is not None))
    predicates = tuple(
        PddlPredicate(s.name, s.params)
        for _, s in sorted(reg.schemas.items()))

    index = DomainIndex()
    actions: list[PddlAction] = []
    declared = {(p.name, len(p.params)) for p in predicates}
    for a in c.sorted_actions():
        eff = fm.effect_literals(a.effects)
        if not eff:
            raise UnannotatedAction(a.uuid)
        for lit in list(fm.literals(a.preconditions)) + [l for l, _ in eff]:
            if (lit.pred, len(lit.args)) not in declared:
                raise UnregisteredSymbol(lit.pred)
        reward = float(rewards.get(a.uuid, a.reward))
        base = PddlAction(
            name=a.pddl_name, parameters=a.parameters,
            precondition=a.preconditions, effects=tuple(eff), reward=reward)
        for variant in lower_disjunctions(base, clause_bound):
            actions.append(variant)
            index.origin[variant.name] = a.uuid
            index.rewards[variant.name] = reward

    requirements = [":strips", ":typing"]
    if any(_formula_uses_negation(x.precondition) for x in actions):
        requirements.append(":negative-preconditions")
    requirements.append(":numeric-fluents")
    domain = PddlDomain(
        name=name, requirements=tuple(requirements), types=types,
        predicates=predicates, actions=tuple(actions))
    return domain, index


def _fmt_num(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def _emit_formula(f: fm.Formula, out: list[str]) -> None:
    if isinstance(f, fm.Lit):
        out.append("(" + " ".join([f.pred] + ["?" + a for a in f.args]) + ")")
    elif isinstance(f, fm.Not):
        out.append("(not ")
        _emit_formula(f.child, out)
        out.append(")")
    elif isinstance(f, fm.And):
        out.append("(and")
        for c in f.children:
            out.append(" ")
            _emit_formula(c, out)
        out.append(")")
    elif isinstance(f, fm.Or):
        raise UnsupportedConstruct("or (lower disjunctions before emission)")
    else:
        raise UnsupportedConstruct(type(f).__name__)


def formula_text(f: fm.Formula) -> str:
    parts: list[str] = []
    _emit_formula(f, parts)
    return "".join(parts)


def emit_domain_text(d: PddlDomain) -> str:
    lines = [f"(define (domain {d.name})"]
    lines.append("  (:requirements " + " ".join(d.requirements) + ")")
    if d.types:
        lines.append("  (:types")
        for t, parent in d.types:
            lines.append(f"    {t} - {parent}")
        lines.append("  )")
    lines.append("  (:predicates")
    for p in d.predicates:
        args = " ".join(f"?a{i} - {t}" for i, t in enumerate(p.params))
        lines.append(f"    ({p.name}{' ' + args if args else ''})")
    lines.append("  )")
    lines.append("  (:functions " + " ".join(f"({f})" for f in d.functions) + ")")
    for a in d.actions:
        lines.append(f"  (:action {a.name}")
        params = " ".join(f"?{v} - {t}" for v, t in a.parameters)
        lines.append(f"    :parameters ({params})")
        lines.append("    :precondition " + formula_text(a.precondition))
        eff_parts = []
        for lit, positive in a.effects:
            text = formula_text(lit)
            eff_parts.append(text if positive else f"(not {text})")
        if a.reward:
            eff_parts.append(f"(increase (total-reward) {_fmt_num(a.reward)})")
        lines.append("    :effect (and " + " ".join(eff_parts) + ")")
        lines.append("  )")
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_domain(c: Catalog, reg: Registry,
                rewards: dict[str, float] | None = None,
                name: str = "chainplanner",
                clause_bound: int = DEFAULT_CLAUSE_BOUND) -> str:
    domain, _ = build_domain(c, reg, rewards, name, clause_bound)
    return emit_domain_text(domain)


def pool_objects(reg: Registry, pools: dict[str, int] | None,
                 default: int = DEFAULT_POOL) -> list[tuple[str, str]]:
    """Deterministic pooled objects for every non-host registry type:
    <type>1..<type>N. Host objects come from the inventory instead."""
    pools = pools or {}
    out = []
    for tname in sorted(reg.types):
        if tname in ("object", "host"):
            continue
        n = pools.get(tname, default)
        for i in range(1, n + 1):
            out.append((f"{tname}{i}", tname))
    return out


def _canon_preds(f: fm.Formula, reg: Registry) -> fm.Formula:
    if isinstance(f, fm.Lit):
        return fm.Lit(reg.canonical_name(f.pred), f.args)
    if isinstance(f, fm.Not):
        return fm.Not(_canon_preds(f.child, reg))
    if isinstance(f, fm.And):
        return fm.And(tuple(_canon_preds(c, reg) for c in f.children))
    if isinstance(f, fm.Or):
        return fm.Or(tuple(_canon_preds(c, reg) for c in f.children))
    raise UnsupportedConstruct(type(f).__name__)


def build_problem(init_atoms: set[fm.Lit], host_objects: list[str],
                  goal: fm.Formula, reg: Registry,
                  pools: dict[str, int] | None = None,
                  name: str = "task",
                  domain_name: str = "chainplanner") -> PddlProblem:
    goal = _canon_preds(goal, reg)
    objects = [(h, "host") for h in host_objects] + pool_objects(reg, pools)
    objects.sort()
    by_name = dict(objects)
    for lit in list(fm.literals(goal)) + sorted(init_atoms):
        for arg in lit.args:
            if arg not in by_name:
                hint = arg.rstrip("0123456789")
                if hint in reg.types and (pools or {}).get(hint, DEFAULT_POOL) == 0:
                    raise UnsatisfiableTypeRequest(
                        f"goal references {arg!r} but the {hint} pool is empty")
                raise UnknownObject(arg)
        reg.validate_literal(lit, by_name)
    return PddlProblem(
        name=name, domain_name=domain_name, objects=tuple(objects),
        init=tuple(sorted(init_atoms)), goal=goal)


def emit_problem_text(p: PddlProblem) -> str:
    lines = [f"(define (problem {p.name})"]
    lines.append(f"  (:domain {p.domain_name})")
    lines.append("  (:objects")
    by_type: dict[str, list[str]] = {}
    for obj, t in p.objects:
        by_type.setdefault(t, []).append(obj)
    for t in sorted(by_type):
        lines.append("    " + " ".join(sorted(by_type[t])) + f" - {t}")
    lines.append("  )")
    lines.append("  (:init")
    for lit in p.init:
        lines.append("    (" + " ".join([lit.pred] + list(lit.args)) + ")")
    lines.append("    (= (total-reward) 0)")
    lines.append("  )")
    lines.append("  (:goal " + ground_formula_text(p.goal) + ")")
    if p.metric_maximize:
        lines.append("  (:metric maximize (total-reward))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def ground_formula_text(f: fm.Formula) -> str:
    if isinstance(f, fm.Lit):
        return "(" + " ".join([f.pred] + list(f.args)) + ")"
    if isinstance(f, fm.Not):
        return "(not " + ground_formula_text(f.child) + ")"
    if isinstance(f, fm.And):
        inner = " ".join(ground_formula_text(c) for c in f.children)
        return "(and" + (" " + inner if inner else "") + ")"
    if isinstance(f, fm.Or):
        inner = " ".join(ground_formula_text(c) for c in f.children)
        return "(or" + (" " + inner if inner else "") + ")"
    raise UnsupportedConstruct(type(f).__name__)


def emit_problem(init_atoms: set[fm.Lit], host_objects: list[str],
                 goal: fm.Formula, reg: Registry,
                 pools: dict[str, int] | None = None,
                 name: str = "task",
                 domain_name: str = "chainplanner") -> str:
    return emit_problem_text(build_problem(
        init_atoms, host_objects, goal, reg, pools, name, domain_name))


# ---------------------------------------------------------------- parsing

Token = tuple[str, int, int]  # text, line, col


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            col += 1
            i += 1
            continue
        if ch in "()":
            tokens.append((ch, line, col))
            col += 1
            i += 1
            continue
        start = i
        start_col = col
        while i < n and not text[i].isspace() and text[i] not in "();":
            i += 1
            col += 1
        tokens.append((text[start:i], line, start_col))
    return tokens


def _read_tree(tokens: list[Token], pos: int):
    """Return (node, next_pos). Nodes are tokens or lists of nodes."""
    if pos >= len(tokens):
        raise PddlSyntaxError(0, 0, "unexpected end of input")
    tok, line, col = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise PddlSyntaxError(line, col, "unbalanced parenthesis")
            if tokens[pos][0] == ")":
                return items, pos + 1
            node, pos = _read_tree(tokens, pos)
            items.append(node)
    if tok == ")":
        raise PddlSyntaxError(line, col, "unexpected ')'")
    return tokens[pos], pos + 1


def _parse_sexpr(text: str) -> list:
    tokens = _tokenize(text)
    if not tokens:
        raise PddlSyntaxError(1, 1, "empty input")
    tree, pos = _read_tree(tokens, 0)
    if pos != len(tokens):
        extra = tokens[pos]
        raise PddlSyntaxError(extra[1], extra[2], "trailing content")
    return tree


def _word(node) -> str:
    if not isinstance(node, tuple):
        raise PddlSyntaxError(0, 0, "expected a symbol, got a list")
    return node[0]


def _parse_typed_list(nodes: list) -> list[tuple[str, str]]:
    """Parse `a b - t c - u ...` into [(a,t),(b,t),(c,u)]."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(nodes):
        w = _word(nodes[i])
        if w == "-":
            if i + 1 >= len(nodes):
                raise PddlSyntaxError(nodes[i][1], nodes[i][2], "dangling '-'")
            t = _word(nodes[i + 1])
            out.extend((p, t) for p in pending)
            pending = []
            i += 2
        else:
            pending.append(w)
            i += 1
    out.extend((p, "object") for p in pending)
    return out


def _parse_formula(node, ground: bool) -> fm.Formula:
    if not isinstance(node, list) or not node:
        raise PddlSyntaxError(0, 0, "expected a formula")
    head = _word(node[0])
    if head == "and":
        return fm.And(tuple(_parse_formula(c, ground) for c in node[1:]))
    if head == "not":
        if len(node) != 2:
            raise PddlSyntaxError(node[0][1], node[0][2], "not takes one child")
        return fm.Not(_parse_formula(node[1], ground))
    if head == "or":
        raise UnsupportedConstruct("or")
    if head in ("forall", "exists", "imply", "when", "="):
        raise UnsupportedConstruct(head)
    args = []
    for c in node[1:]:
        w = _word(c)
        if ground:
            args.append(w)
        else:
            if not w.startswith("?"):
                raise UnsupportedConstruct(f"constant {w!r} in an action body")
            args.append(w[1:])
    return fm.Lit(head, tuple(args))


def parse_domain(text: str) -> PddlDomain:
    tree = _parse_sexpr(text)
    if _word(tree[0]) != "define":
        raise UnsupportedConstruct(_word(tree[0]))
    name = ""
    requirements: tuple[str, ...] = ()
    types: list[tuple[str, str]] = []
    predicates: list[PddlPredicate] = []
    functions: tuple[str, ...] = ()
    actions: list[PddlAction] = []
    for section in tree[1:]:
        head = _word(section[0])
        if head == "domain":
            name = _word(section[1])
        elif head == ":requirements":
            requirements = tuple(_word(w) for w in section[1:])
        elif head == ":types":
            types = sorted(_parse_typed_list(section[1:]))
        elif head == ":predicates":
            for p in section[1:]:
                params = tuple(t for _, t in _parse_typed_list(p[1:]))
                predicates.append(PddlPredicate(_word(p[0]), params))
        elif head == ":functions":
            functions = tuple(_word(f[0]) for f in section[1:])
            for f in functions:
                if f != "total-reward":
                    raise UnsupportedConstruct(f"function {f}")
        elif head == ":action":
            actions.append(_parse_action(section))
        else:
            raise UnsupportedConstruct(head)
    return PddlDomain(name=name, requirements=requirements,
                      types=tuple(types), predicates=tuple(predicates),
                      actions=tuple(actions), functions=functions)


def _parse_action(section) -> PddlAction:
    name = _word(section[1])
    body = section[2:]
    params: tuple[tuple[str, str], ...] = ()
    precondition: fm.Formula = fm.TRUE
    effects: list[tuple[fm.Lit, bool]] = []
    reward = 0.0
    i = 0
    while i < len(body):
        key = _word(body[i])
        val = body[i + 1]
        if key == ":parameters":
            pairs = _parse_typed_list(val)
            cleaned = []
            for v, t in pairs:
                if not v.startswith("?"):
                    raise PddlSyntaxError(0, 0, f"parameter {v!r} lacks '?'")
                cleaned.append((v[1:], t))
            params = tuple(cleaned)
        elif key == ":precondition":
            precondition = _parse_formula(val, ground=False)
        elif key == ":effect":
            effects, reward = _parse_effect(val)
        else:
            raise UnsupportedConstruct(key)
        i += 2
    return PddlAction(name=name, parameters=params,
                      precondition=precondition, effects=tuple(effects),
                      reward=reward)


def _parse_effect(node) -> tuple[list[tuple[fm.Lit, bool]], float]:
    if _word(node[0]) != "and":
        node = [("and", 0, 0), node]
    effects: list[tuple[fm.Lit, bool]] = []
    reward = 0.0
    for item in node[1:]:
        head = _word(item[0])
        if head == "increase":
            if _word(item[1][0]) != "total-reward":
                raise UnsupportedConstruct(_word(item[1][0]))
            reward = float(_word(item[2]))
        elif head == "not":
            lit = _parse_formula(item[1], ground=False)
            if not isinstance(lit, fm.Lit):
                raise UnsupportedConstruct("nested negation in effect")
            effects.append((lit, False))
        elif head == "or":
            raise UnsupportedConstruct("or in effect")
        else:
            lit = _parse_formula(item, ground=False)
            effects.append((lit, True))
    return effects, reward


def parse_problem(text: str, domain: PddlDomain | None = None) -> PddlProblem:
    tree = _parse_sexpr(text)
    if _word(tree[0]) != "define":
        raise UnsupportedConstruct(_word(tree[0]))
    name = ""
    domain_name = ""
    objects: tuple[tuple[str, str], ...] = ()
    init: list[fm.Lit] = []
    goal: fm.Formula = fm.TRUE
    metric = False
    declared = (None if domain is None else
                {(p.name, len(p.params)) for p in domain.predicates})
    for section in tree[1:]:
        head = _word(section[0])
        if head == "problem":
            name = _word(section[1])
        elif head == ":domain":
            domain_name = _word(section[1])
        elif head == ":requirements":
            continue  # problems may restate them; the domain's set governs
        elif head == ":objects":
            objects = tuple(sorted(_parse_typed_list(section[1:])))
        elif head == ":init":
            for item in section[1:]:
                h = _word(item[0])
                if h == "=":
                    if _word(item[1][0]) != "total-reward":
                        raise UnsupportedConstruct(_word(item[1][0]))
                    continue
                if h == "not":
                    raise UnsupportedConstruct("negative init literal")
                lit = fm.Lit(h, tuple(_word(a) for a in item[1:]))
                if declared is not None and (lit.pred, len(lit.args)) not in declared:
                    raise UnsupportedConstruct(
                        f"undeclared predicate {lit.pred}/{len(lit.args)} in :init")
                init.append(lit)
        elif head == ":goal":
            goal = _parse_ground_goal(section[1])
        elif head == ":metric":
            if _word(section[1]) != "maximize":
                raise UnsupportedConstruct(_word(section[1]))
            metric = True
        else:
            raise UnsupportedConstruct(head)
    return PddlProblem(name=name, domain_name=domain_name, objects=objects,
                       init=tuple(sorted(init)), goal=goal,
                       metric_maximize=metric)


def _parse_ground_goal(node) -> fm.Formula:
    head = _word(node[0])
    if head == "and":
        return fm.And(tuple(_parse_ground_goal(c) for c in node[1:]))
    if head == "or":
        return fm.Or(tuple(_parse_ground_goal(c) for c in node[1:]))
    if head == "not":
        return fm.Not(_parse_ground_goal(node[1]))
    return fm.Lit(head, tuple(_word(a) for a in node[1:]))


def parse_plan_file(text: str, task=None) -> list:
    """Parse one `(action-name arg1 ... argk)` per line; `;` comments.

    With `task` (anything exposing resolve(name, args) -> ground action),
    each line resolves to a ground action; resolve raises UnknownAction /
    UnknownObject. Without a task the raw (name, args) tuples come back.
    """
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if not (line.startswith("(") and line.endswith(")")):
            raise PddlSyntaxError(lineno, 1, f"not an action line: {raw!r}")
        parts = line[1:-1].split()
        if not parts:
            raise PddlSyntaxError(lineno, 1, "empty action")
        name, args = parts[0], tuple(parts[1:])
        steps.append((name, args) if task is None else task.resolve(name, args))
    return steps
