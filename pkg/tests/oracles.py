"""Independent reference implementations used as test oracles.

Everything in this module is written against the abstract problem, not
against the package internals: ground actions are plain tuples, states are
frozensets of atom indices, and the algorithms are the textbook ones
(Dijkstra over the explicit state graph, DFS path enumeration, a naive
forward interpreter). The production planner must agree with these on
small instances; the oracles are deliberately too slow for real use.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass(frozen=True)
class OracleAction:
    """A ground action in oracle form.

    pre_pos/pre_neg: atom index sets that must be present/absent.
    add/delete: atom index sets applied on execution (delete then add).
    """

    name: str
    pre_pos: frozenset[int]
    pre_neg: frozenset[int]
    add: frozenset[int]
    delete: frozenset[int]
    cost: Fraction = Fraction(1)

    def applicable(self, state: frozenset[int]) -> bool:
        return self.pre_pos <= state and not (self.pre_neg & state)

    def apply(self, state: frozenset[int]) -> frozenset[int]:
        return (state - self.delete) | self.add


@dataclass
class OracleTask:
    actions: list[OracleAction]
    init: frozenset[int]
    goal_pos: frozenset[int]
    goal_neg: frozenset[int] = field(default_factory=frozenset)

    def goal_satisfied(self, state: frozenset[int]) -> bool:
        return self.goal_pos <= state and not (self.goal_neg & state)


def dijkstra_optimal_cost(task: OracleTask) -> Fraction | None:
    """Exact optimal plan cost by uniform-cost search over explicit states.

    Returns None when the goal is unreachable. Exponential in atoms, fine
    for micro-tasks.
    """
    dist: dict[frozenset[int], Fraction] = {task.init: Fraction(0)}
    counter = itertools.count()
    heap: list[tuple[Fraction, int, frozenset[int]]] = [
        (Fraction(0), next(counter), task.init)]
    while heap:
        d, _, state = heapq.heappop(heap)
        if dist.get(state, d) < d:
            continue
        if task.goal_satisfied(state):
            return d
        for a in task.actions:
            if not a.applicable(state):
                continue
            nxt = a.apply(state)
            nd = d + a.cost
            if nxt not in dist or nd < dist[nxt]:
                dist[nxt] = nd
                heapq.heappush(heap, (nd, next(counter), nxt))
    return None


def dijkstra_optimal_plan(task: OracleTask) -> list[str] | None:
    """One optimal plan (action name sequence), or None when unsolvable."""
    dist: dict[frozenset[int], Fraction] = {task.init: Fraction(0)}
    back: dict[frozenset[int], tuple[frozenset[int], str] | None] = {task.init: None}
    counter = itertools.count()
    heap: list[tuple[Fraction, int, frozenset[int]]] = [
        (Fraction(0), next(counter), task.init)]
    while heap:
        d, _, state = heapq.heappop(heap)
        if dist.get(state, d) < d:
            continue
        if task.goal_satisfied(state):
            steps: list[str] = []
            cur = state
            while back[cur] is not None:
                prev, name = back[cur]
                steps.append(name)
                cur = prev
            return list(reversed(steps))
        for a in task.actions:
            if not a.applicable(state):
                continue
            nxt = a.apply(state)
            nd = d + a.cost
            if nxt not in dist or nd < dist[nxt]:
                dist[nxt] = nd
                back[nxt] = (state, a.name)
                heapq.heappush(heap, (nd, next(counter), nxt))
    return None


def enumerate_goal_paths(task: OracleTask, max_len: int) -> set[frozenset[str]]:
    """All distinct action-identity sets of acyclic goal-reaching plans.

    DFS over the state graph, never revisiting a state on the current path,
    bounded by max_len steps. Returns each plan as its set of action names,
    matching the planner's diversity identity.
    """
    found: set[frozenset[str]] = set()

    def dfs(state: frozenset[int], visited: frozenset[frozenset[int]],
            steps: tuple[str, ...]):
        if task.goal_satisfied(state):
            found.add(frozenset(steps))
            # keep exploring: longer plans may use different action sets
        if len(steps) >= max_len:
            return
        for a in task.actions:
            if not a.applicable(state):
                continue
            nxt = a.apply(state)
            if nxt in visited:
                continue
            dfs(nxt, visited | {nxt}, steps + (a.name,))

    dfs(task.init, frozenset({task.init}), ())
    return found


def naive_simulate(actions_by_name: dict[str, OracleAction],
                   plan: list[str],
                   init: frozenset[int],
                   goal_pos: frozenset[int] = frozenset(),
                   goal_neg: frozenset[int] = frozenset()) -> bool:
    """Second-implementation forward interpreter: True iff the plan runs
    to completion and ends in a goal state."""
    state = init
    for name in plan:
        a = actions_by_name[name]
        if not a.applicable(state):
            return False
        state = a.apply(state)
    return goal_pos <= state and not (goal_neg & state)


def naive_ground_count(param_types: list[str],
                       objects_by_type: dict[str, list[str]],
                       static_ok) -> int:
    """Unpruned cross-product grounder: count bindings that pass static_ok.

    static_ok receives one binding tuple and may reject bindings whose
    static preconditions (atoms no action produces) cannot hold.
    """
    pools = [objects_by_type.get(t, []) for t in param_types]
    return sum(1 for binding in itertools.product(*pools) if static_ok(binding))


def random_micro_task(rng, n_atoms: int, n_actions: int,
                      costs: list[Fraction] | None = None) -> OracleTask:
    """Generate a small random task with dyadic costs.

    Preconditions and effects are random small atom sets; the goal is a
    random 1-2 atom positive set. Some tasks are unsolvable by design.
    """
    atoms = list(range(n_atoms))
    actions = []
    for i in range(n_actions):
        pre_pos = frozenset(rng.sample(atoms, rng.randint(0, 2)))
        pre_neg = frozenset(rng.sample(atoms, rng.randint(0, 1))) - pre_pos
        add = frozenset(rng.sample(atoms, rng.randint(1, 2)))
        delete = frozenset(rng.sample(atoms, rng.randint(0, 1))) - add
        cost = (costs[i % len(costs)] if costs
                else Fraction(rng.randint(1, 64), 64))
        actions.append(OracleAction(f"a{i}", pre_pos, pre_neg, add, delete, cost))
    init = frozenset(rng.sample(atoms, rng.randint(0, max(1, n_atoms // 3))))
    goal = frozenset(rng.sample(atoms, rng.randint(1, 2)))
    return OracleTask(actions, init, goal)
