"""Plan validation by simulated execution, chain classification, exports.

Simulation replays a plan's ground actions over bitmask states exactly as
the planner's transition function defines them, recording a per-step trace.
Classification layers the connectivity criterion on top: every step after
the first must consume at least one atom some earlier step produced.
Execution against a live environment is out of scope and always reported
as "not evaluated".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .catalog import PLACEHOLDER_RE, Catalog
from .errors import UnknownUuid
from .planner import GroundedTask, Plan


@dataclass(frozen=True)
class TraceStep:
    ident: str
    state_before: str  # content digest of the atom set
    applied: bool
    failure: str | None  # "missing_precondition: ..." | "unbound_argument: ..."


@dataclass(frozen=True)
class SimulationTrace:
    steps: tuple[TraceStep, ...]
    final_state: tuple[str, ...]  # sorted atom strings
    verdict: str  # "valid" | "invalid"
    failed_index: int | None
    failure_reason: str | None
    goal_checked: bool
    goal_satisfied: bool | None


def atom_str(lit) -> str:
    return f"{lit.pred}({', '.join(lit.args)})" if lit.args else f"{lit.pred}()"


def _digest(task: GroundedTask, state: int) -> str:
    names = [atom_str(task.atoms[i]) for i in range(len(task.atoms))
             if state >> i & 1]
    return hashlib.sha256("|".join(sorted(names)).encode()).hexdigest()[:12]


def _state_atoms(task: GroundedTask, state: int) -> tuple[str, ...]:
    return tuple(sorted(atom_str(task.atoms[i]) for i in range(len(task.atoms))
                        if state >> i & 1))


def simulate(plan: Plan, task: GroundedTask, init: int | None = None,
             check_goal: bool = True) -> SimulationTrace:
    """Apply the plan's steps in order from init (default: the task's init).

    The first failed step terminates the trace; when check_goal is set the
    verdict also requires the task goal in the final state.
    """
    state = task.init if init is None else init
    steps: list[TraceStep] = []
    failed_index: int | None = None
    failure_reason: str | None = None
    for i, ga in enumerate(plan.steps):
        digest = _digest(task, state)
        used = {task.schemas[ga.name][0][p]
                for p in task.schemas[ga.name][1]} if ga.name in task.schemas else set()
        unbound = [p for p, v in ga.binding if v is None and p in used]
        if unbound:
            failure = f"unbound_argument: {unbound[0]}"
        elif not ga.applicable(state):
            missing = ga.pre_pos & ~state
            if missing:
                atom = task.atoms[(missing & -missing).bit_length() - 1]
                failure = f"missing_precondition: {atom_str(atom)}"
            else:
                present = ga.pre_neg & state
                atom = task.atoms[(present & -present).bit_length() - 1]
                failure = f"missing_precondition: not {atom_str(atom)}"
        else:
            failure = None
        if failure is not None:
            steps.append(TraceStep(ga.ident, digest, False, failure))
            failed_index = i
            failure_reason = failure
            break
        steps.append(TraceStep(ga.ident, digest, True, None))
        state = ga.apply(state)

    goal_ok: bool | None = None
    if failed_index is None and check_goal:
        goal_ok = task.goal_satisfied(state)
        if not goal_ok:
            failure_reason = "goal not satisfied in final state"
    verdict = ("valid" if failed_index is None and (goal_ok is not False)
               else "invalid")
    return SimulationTrace(
        steps=tuple(steps), final_state=_state_atoms(task, state),
        verdict=verdict, failed_index=failed_index,
        failure_reason=failure_reason, goal_checked=check_goal,
        goal_satisfied=goal_ok)


def trace_to_dict(trace: SimulationTrace) -> dict:
    return {
        "verdict": trace.verdict,
        "failed_index": trace.failed_index,
        "failure_reason": trace.failure_reason,
        "goal_checked": trace.goal_checked,
        "goal_satisfied": trace.goal_satisfied,
        "steps": [
            {"action": s.ident, "state_before": s.state_before,
             "applied": s.applied, "failure": s.failure}
            for s in trace.steps
        ],
        "final_state": list(trace.final_state),
    }


def classify_chain(plan: Plan, trace: SimulationTrace,
                   connectivity_check: bool = True) -> dict:
    """Chain-correctness verdict over a simulated plan.

    normally_functioning iff the trace is valid and every step after the
    first consumes at least one atom produced by an earlier step. The
    real-environment execution criterion is never evaluated here.
    """
    result = {"execution_criterion": "not evaluated"}
    if trace.verdict != "valid":
        result.update(classification="failed",
                      reason=f"invalid trace: {trace.failure_reason}")
        return result
    if not plan.steps:
        result.update(classification="failed", reason="empty plan, not a chain")
        return result
    if connectivity_check:
        produced = 0
        for i, ga in enumerate(plan.steps):
            if i > 0 and not (ga.pre_pos & produced):
                result.update(
                    classification="failed",
                    reason=f"disconnected: step {i} ({ga.ident}) consumes "
                           f"nothing produced by earlier steps")
                return result
            produced |= ga.add
    result.update(classification="normally_functioning",
                  reason="valid trace, every step consumes an earlier "
                         "step's product")
    return result


def render_execution(execution: str, binding: dict[str, str | None]) -> str:
    """Substitute bound objects into an execution template; parameters with
    no binding become explicit <FILL:name> markers."""
    def sub(match):
        name = match.group(1)
        value = binding.get(name)
        return value if value is not None else f"<FILL:{name}>"

    return PLACEHOLDER_RE.sub(sub, execution)


def emit_script(plan: Plan, catalog: Catalog) -> str:
    """Execution-skeleton text: per step a comment block and the rendered
    command template. Unresolved parameters stay as <FILL:name> markers for
    the operator; the script carries no content beyond the catalog's own
    execution text."""
    lines = [
        "# execution skeleton, generated from a validated plan",
        f"# steps: {len(plan.steps)}",
        f"# total reward: {plan.total_reward!r}",
    ]
    for i, ga in enumerate(plan.steps, 1):
        action = catalog.actions.get(ga.origin)
        if action is None:
            raise UnknownUuid(ga.origin or ga.name)
        lines.append("")
        lines.append(f"# step {i}: {action.name}")
        lines.append(f"# uuid: {action.uuid}")
        lines.append(f"# executor: {action.executor}")
        if action.tactic:
            lines.append(f"# tactic: {action.tactic.id} {action.tactic.name}")
        if action.technique:
            lines.append(
                f"# technique: {action.technique.id} {action.technique.name}")
        binding = dict(ga.binding)
        for line in render_execution(action.execution, binding).splitlines():
            lines.append(line)
    return "\n".join(lines) + "\n"


def export_dot(plan: Plan, task: GroundedTask) -> str:
    """Digraph of the chain: one node per step, one edge per (consumer,
    atom) pair attributed to the atom's first producer among earlier steps."""
    lines = ["digraph chain {"]
    for i, ga in enumerate(plan.steps):
        lines.append(f'  n{i} [label="{ga.ident}"];')
    edges = []
    for j, ga in enumerate(plan.steps):
        for bit in range(len(task.atoms)):
            if not (ga.pre_pos >> bit & 1):
                continue
            for i in range(j):
                if plan.steps[i].add >> bit & 1:
                    edges.append((i, j, atom_str(task.atoms[bit])))
                    break
    for i, j, label in sorted(edges):
        lines.append(f'  n{i} -> n{j} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
