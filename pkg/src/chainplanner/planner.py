"""Grounding and plan search.

States are integer bitmasks over the reachable atom universe: an action is
applicable in s iff (s & pre_pos) == pre_pos and (s & pre_neg) == 0, and its
successor is (s & ~delete) | add. Costs follow the reward duality
cost(a) = R_cap - reward(a) with R_cap = 1 + max reward, so every cost is
strictly positive; the diversity loop adds per-action bumps on top.
"""

from __future__ import annotations

import heapq
import itertools
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import formulas as fm
from .errors import (
    BindingTypeError,
    InvalidExternalPlan,
    Oversize,
    ResourceExhausted,
    SolverFailed,
    UnknownAction,
    UnknownObject,
    UnsupportedConstruct,
)
from .pddl import DomainIndex, PddlDomain, PddlProblem, parse_plan_file

DEFAULT_NODE_BUDGET = 5_000_000
DEFAULT_GROUND_BOUND = 2_000_000
INF = float("inf")


@dataclass(frozen=True, eq=False)
class GroundAction:
    """One ground action. Identity is the printable `(name args...)` form
    over the literal-used parameters; execution-only parameters stay unbound
    and surface later as <FILL:...> markers in scripts."""

    name: str
    args: tuple[str, ...]
    ident: str
    idx: int
    pre_pos: int
    pre_neg: int
    add: int
    delete: int
    cost: float
    reward: float
    origin: str  # catalog uuid, "" when unknown
    binding: tuple[tuple[str, str | None], ...]  # full param -> object/None
    # positive preconditions on static predicates, verified against init and
    # dropped from pre_pos; environment matching still needs to see them
    static_pre: tuple[fm.Lit, ...] = ()

    def applicable(self, state: int) -> bool:
        return (state & self.pre_pos) == self.pre_pos and not (state & self.pre_neg)

    def apply(self, state: int) -> int:
        return (state & ~self.delete) | self.add


@dataclass
class GroundedTask:
    atoms: tuple[fm.Lit, ...]
    atom_index: dict[fm.Lit, int]
    actions: tuple[GroundAction, ...]
    init: int
    goal_pos: int
    goal_neg: int
    goal_lits: tuple[tuple[fm.Lit, bool], ...]
    objects: dict[str, str]
    r_cap: float
    solvable_hint: bool
    # schema name -> (full param names, positions of literal-used params)
    schemas: dict[str, tuple[tuple[str, ...], tuple[int, ...]]] = field(
        default_factory=dict)
    _by_key: dict[tuple[str, tuple[str, ...]], GroundAction] = field(
        default_factory=dict, repr=False)

    def goal_satisfied(self, state: int) -> bool:
        # a positive goal atom outside the reachable universe (solvable_hint
        # False) can never hold, whatever the masks say
        return self.solvable_hint \
            and (state & self.goal_pos) == self.goal_pos \
            and not (state & self.goal_neg)

    def resolve(self, name: str, args: tuple[str, ...]) -> GroundAction:
        """Resolve a plan-file step. Accepts the used-parameter arity or the
        full declared arity (projected onto the used positions)."""
        if name not in self.schemas:
            raise UnknownAction(name)
        for a in args:
            if a not in self.objects:
                raise UnknownObject(a)
        hit = self._by_key.get((name, args))
        if hit is not None:
            return hit
        full, used = self.schemas[name]
        if len(args) == len(full) and len(used) != len(full):
            projected = tuple(args[i] for i in used)
            hit = self._by_key.get((name, projected))
            if hit is not None:
                return hit
        raise UnknownAction(f"{name} with arguments {args}")


@dataclass(frozen=True)
class Plan:
    steps: tuple[GroundAction, ...]
    total_reward: float
    total_cost: float
    identity: frozenset[str]


def make_plan(steps: list[GroundAction]) -> Plan:
    return Plan(
        steps=tuple(steps),
        total_reward=sum(a.reward for a in steps),
        total_cost=sum(a.cost for a in steps),
        identity=frozenset(a.ident for a in steps),
    )


def _precondition_literals(f: fm.Formula) -> list[tuple[fm.Lit, bool]]:
    if isinstance(f, fm.Lit):
        return [(f, True)]
    if isinstance(f, fm.Not):
        if not isinstance(f.child, fm.Lit):
            raise UnsupportedConstruct("negation over a non-literal")
        return [(f.child, False)]
    if isinstance(f, fm.And):
        out: list[tuple[fm.Lit, bool]] = []
        for c in f.children:
            out.extend(_precondition_literals(c))
        return out
    raise UnsupportedConstruct("disjunction in a grounding-time precondition")


def ground(domain: PddlDomain, problem: PddlProblem,
           index: DomainIndex | None = None,
           bound: int = DEFAULT_GROUND_BOUND,
           r_cap_floor: float | None = None) -> GroundedTask:
    """Typed instantiation over literal-used parameters with static filtering
    and delete-relaxation reachability pruning."""
    parent = dict(domain.types)

    def is_sub(t: str, u: str) -> bool:
        while t is not None:
            if t == u:
                return True
            t = parent.get(t) if t != "object" else None
        return False

    objects = dict(problem.objects)
    by_type: dict[str, list[str]] = {}
    type_names = {"object"} | set(parent) | set(parent.values())
    for t in sorted(type_names):
        by_type[t] = sorted(o for o, ot in objects.items() if is_sub(ot, t))

    declared = {(p.name, len(p.params)): p.params for p in domain.predicates}

    def check_ground_atom(lit: fm.Lit, where: str) -> None:
        params = declared.get((lit.pred, len(lit.args)))
        if params is None:
            raise BindingTypeError(f"{where}: undeclared atom {lit.pred}/{len(lit.args)}")
        for arg, want in zip(lit.args, params):
            got = objects.get(arg)
            if got is None:
                raise BindingTypeError(f"{where}: unknown object {arg!r}")
            if not is_sub(got, want):
                raise BindingTypeError(
                    f"{where}: {arg} has type {got}, needs {want}")

    for lit in problem.init:
        check_ground_atom(lit, "init")
    for lit in fm.literals(problem.goal):
        check_ground_atom(lit, "goal")

    # predicates no action ever adds or deletes are static: their truth is
    # fixed by init, so bindings violating them are dropped before search
    dynamic: set[str] = set()
    for a in domain.actions:
        for lit, _ in a.effects:
            dynamic.add(lit.pred)
    init_set = set(problem.init)

    # name, args, tracked pre, effects, reward, binding, static pre
    candidates: list[tuple] = []
    schemas: dict[str, tuple[tuple[str, ...], tuple[int, ...]]] = {}
    estimate = 0
    for a in domain.actions:
        pre_literals = _precondition_literals(a.precondition)
        referenced: set[str] = set()
        for lit, _ in pre_literals + list(a.effects):
            referenced.update(lit.args)
        param_names = tuple(v for v, _ in a.parameters)
        used_positions = tuple(
            i for i, v in enumerate(param_names) if v in referenced)
        schemas[a.name] = (param_names, used_positions)
        pools = []
        size = 1
        for i in used_positions:
            pool = by_type.get(a.parameters[i][1], [])
            pools.append(pool)
            size *= len(pool)
        estimate += size
        if estimate > bound:
            raise Oversize(estimate, bound)
        used_names = tuple(param_names[i] for i in used_positions)
        for combo in itertools.product(*pools):
            sub = dict(zip(used_names, combo))
            ok = True
            g_pre: list[tuple[fm.Lit, bool]] = []
            g_static: list[fm.Lit] = []
            for lit, positive in pre_literals:
                g = fm.Lit(lit.pred, tuple(sub[x] for x in lit.args))
                if g.pred not in dynamic:
                    if positive != (g in init_set):
                        ok = False
                        break
                    if positive:
                        g_static.append(g)
                    continue  # statically true: no need to track in search
                g_pre.append((g, positive))
            if not ok:
                continue
            pos = {l for l, p in g_pre if p}
            if pos & {l for l, p in g_pre if not p}:
                continue  # contradictory precondition, never applicable
            g_eff = [(fm.Lit(lit.pred, tuple(sub[x] for x in lit.args)), p)
                     for lit, p in a.effects]
            binding = tuple((v, sub.get(v)) for v in param_names)
            candidates.append((a.name, tuple(combo), g_pre, g_eff,
                               a.reward, binding, tuple(g_static)))

    # delete-relaxation reachability from init
    reached: set[fm.Lit] = set(init_set)
    pending = list(range(len(candidates)))
    fired: list[int] = []
    changed = True
    while changed:
        changed = False
        still = []
        for ci in pending:
            g_pre = candidates[ci][2]
            if all(l in reached for l, p in g_pre if p):
                fired.append(ci)
                for l, p in candidates[ci][3]:
                    if p and l not in reached:
                        reached.add(l)
                        changed = True
                changed = True
            else:
                still.append(ci)
        pending = still

    atoms = tuple(sorted(reached))
    atom_index = {l: i for i, l in enumerate(atoms)}

    def mask(lits) -> int:
        m = 0
        for l in lits:
            i = atom_index.get(l)
            if i is not None:
                m |= 1 << i
        return m

    rewards = [candidates[ci][4] for ci in fired]
    r_cap = 1.0 + (max(rewards) if rewards else 0.0)
    if r_cap_floor is not None and r_cap_floor > r_cap:
        # a configured floor may raise the cap (keeps costs positive); it
        # can never lower it below 1 + max reward
        r_cap = float(r_cap_floor)

    raw = []
    for ci in fired:
        name, args, g_pre, g_eff, reward, binding, g_static = candidates[ci]
        ident = "(" + " ".join((name,) + args) + ")"
        raw.append((ident, name, args, g_pre, g_eff, reward, binding, g_static))
    raw.sort(key=lambda r: r[0])
    actions = []
    by_key = {}
    for idx, (ident, name, args, g_pre, g_eff, reward, binding,
              g_static) in enumerate(raw):
        ga = GroundAction(
            name=name, args=args, ident=ident, idx=idx,
            pre_pos=mask(l for l, p in g_pre if p),
            pre_neg=mask(l for l, p in g_pre if not p),
            add=mask(l for l, p in g_eff if p),
            delete=mask(l for l, p in g_eff if not p),
            cost=r_cap - reward, reward=reward,
            origin=(index.origin.get(name, "") if index else ""),
            binding=binding, static_pre=g_static)
        actions.append(ga)
        by_key[(name, args)] = ga

    goal_lits = []
    solvable = True
    goal_pos = 0
    goal_neg = 0
    for lit in _goal_literals(problem.goal):
        l, p = lit
        goal_lits.append((l, p))
        i = atom_index.get(l)
        if p:
            if i is None:
                solvable = False
            else:
                goal_pos |= 1 << i
        elif i is not None:
            goal_neg |= 1 << i

    return GroundedTask(
        atoms=atoms, atom_index=atom_index, actions=tuple(actions),
        init=mask(init_set), goal_pos=goal_pos, goal_neg=goal_neg,
        goal_lits=tuple(goal_lits), objects=objects, r_cap=r_cap,
        solvable_hint=solvable, schemas=schemas, _by_key=by_key)


def _goal_literals(f: fm.Formula) -> list[tuple[fm.Lit, bool]]:
    if isinstance(f, fm.Or):
        raise UnsupportedConstruct("disjunctive goal")
    return _precondition_literals(f)


class _HmaxEvaluator:
    """Delete-relaxation h_max, recomputed per state by generalized
    Dijkstra over atoms (actions fire when all positive preconditions are
    finalized; firing cost is the max precondition cost plus action cost)."""

    def __init__(self, task: GroundedTask, costs: list[float]):
        self.n = len(task.atoms)
        self.costs = costs
        self.pre_atoms: list[list[int]] = []
        self.add_atoms: list[list[int]] = []
        self.watchers: list[list[int]] = [[] for _ in range(self.n)]
        self.goal_atoms = [i for i in range(self.n)
                           if task.goal_pos >> i & 1]
        self.goal_set = set(self.goal_atoms)
        for a in task.actions:
            pres = [i for i in range(self.n) if a.pre_pos >> i & 1]
            adds = [i for i in range(self.n) if a.add >> i & 1]
            ai = len(self.pre_atoms)
            self.pre_atoms.append(pres)
            self.add_atoms.append(adds)
            for i in pres:
                self.watchers[i].append(ai)

    def value(self, state: int) -> float:
        dist = [INF] * self.n
        remaining = [len(p) for p in self.pre_atoms]
        heap: list[tuple[float, int]] = []
        goal_left = 0
        for i in self.goal_atoms:
            if not (state >> i & 1):
                goal_left += 1
        if goal_left == 0:
            return 0.0
        for i in range(self.n):
            if state >> i & 1:
                dist[i] = 0.0
                heapq.heappush(heap, (0.0, i))

        def fire(ai: int, base: float):
            total = base + self.costs[ai]
            for j in self.add_atoms[ai]:
                if total < dist[j]:
                    dist[j] = total
                    heapq.heappush(heap, (total, j))

        for ai, r in enumerate(remaining):
            if r == 0:
                fire(ai, 0.0)
        done = [False] * self.n
        while heap and goal_left:
            d, i = heapq.heappop(heap)
            if done[i] or d > dist[i]:
                continue
            done[i] = True
            if i in self.goal_set and not (state >> i & 1):
                goal_left -= 1
            for ai in self.watchers[i]:
                remaining[ai] -= 1
                if remaining[ai] == 0:
                    fire(ai, d)
        h = 0.0
        for i in self.goal_atoms:
            if dist[i] == INF:
                return INF
            if dist[i] > h:
                h = dist[i]
        return h


def search(task: GroundedTask, mode: str = "optimal",
           node_budget: int = DEFAULT_NODE_BUDGET,
           bumps: dict[str, float] | None = None) -> Plan | None:
    """Best-first search. optimal: A* with admissible h_max, returns a
    cost-minimal plan; greedy: best-first on h alone. Ties break toward the
    earliest-generated node; actions are pre-sorted by identity, so equal-f
    successors enter in lexicographic ground-action order. Returns None when
    unsolvable."""
    if mode not in ("optimal", "greedy"):
        raise ValueError(f"unknown search mode {mode!r}")
    if not task.solvable_hint:
        return None
    if task.goal_satisfied(task.init):
        return make_plan([])
    costs = [a.cost + (bumps.get(a.ident, 0.0) if bumps else 0.0)
             for a in task.actions]
    hmax = _HmaxEvaluator(task, costs)
    h0 = hmax.value(task.init)
    if h0 == INF:
        return None

    counter = itertools.count()
    g_best: dict[int, float] = {task.init: 0.0}
    parent: dict[int, tuple[int, GroundAction] | None] = {task.init: None}
    heap: list[tuple[float, int, float, int]] = [
        (h0, next(counter), 0.0, task.init)]
    expansions = 0
    while heap:
        f, _, g, s = heapq.heappop(heap)
        if g > g_best.get(s, INF):
            continue
        if task.goal_satisfied(s):
            steps: list[GroundAction] = []
            cur = s
            while parent[cur] is not None:
                prev, act = parent[cur]
                steps.append(act)
                cur = prev
            steps.reverse()
            return make_plan(steps)
        expansions += 1
        if expansions > node_budget:
            raise ResourceExhausted(expansions, f"best f {f}")
        for ai, a in enumerate(task.actions):
            if not a.applicable(s):
                continue
            ns = a.apply(s)
            ng = g + costs[ai]
            if ng >= g_best.get(ns, INF):
                continue
            h = hmax.value(ns)
            if h == INF:
                continue
            g_best[ns] = ng
            parent[ns] = (s, a)
            nf = h if mode == "greedy" else ng + h
            heapq.heappush(heap, (nf, next(counter), ng, ns))
    return None


def enumerate_diverse(task: GroundedTask, delta: float = 1.0,
                      stall_rounds: int = 3, target: int = 10,
                      mode: str = "optimal",
                      node_budget: int = DEFAULT_NODE_BUDGET) -> list[Plan]:
    """Appendix-style diversity loop: solve, record plans with new action-set
    identities, bump the cost of every action in the found plan by delta,
    repeat until `stall_rounds` consecutive rounds add nothing new or
    `target` plans are collected."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if target < 1:
        raise ValueError("target must be at least 1")
    bumps: dict[str, float] = {}
    plans: list[Plan] = []
    seen: set[frozenset[str]] = set()
    stall = 0
    while len(plans) < target and stall < stall_rounds:
        plan = search(task, mode=mode, node_budget=node_budget, bumps=bumps)
        if plan is None:
            break
        if plan.identity in seen:
            stall += 1
        else:
            seen.add(plan.identity)
            plans.append(plan)
            stall = 0
        for a in plan.steps:
            bumps[a.ident] = bumps.get(a.ident, 0.0) + delta
        if not plan.steps:
            # an empty plan can never change under bumping
            break
    return plans


def solve_external(domain_text: str, problem_text: str, solver_command: str,
                   task: GroundedTask, workdir: str | None = None) -> Plan:
    """Write the task to disk, run the configured solver command (template
    placeholders {domain}, {problem}, {plan_out}), parse and validate the
    plan it writes."""
    from . import validator

    def run(dirpath: Path) -> Plan:
        domain_path = dirpath / "domain.pddl"
        problem_path = dirpath / "problem.pddl"
        plan_path = dirpath / "plan.txt"
        domain_path.write_text(domain_text)
        problem_path.write_text(problem_text)
        cmd = solver_command.format(domain=str(domain_path),
                                    problem=str(problem_path),
                                    plan_out=str(plan_path))
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        if proc.returncode != 0:
            raise SolverFailed(
                f"exit {proc.returncode}: {proc.stderr.strip()[:500]}")
        if not plan_path.exists():
            raise SolverFailed("solver wrote no plan file")
        try:
            steps = parse_plan_file(plan_path.read_text(), task)
        except (UnknownAction, UnknownObject) as exc:
            raise InvalidExternalPlan(str(exc)) from exc
        plan = make_plan(steps)
        trace = validator.simulate(plan, task)
        if trace.verdict != "valid":
            raise InvalidExternalPlan(
                f"step {trace.failed_index}: {trace.failure_reason}")
        return plan

    if workdir is not None:
        return run(Path(workdir))
    with tempfile.TemporaryDirectory() as tmp:
        return run(Path(tmp))
