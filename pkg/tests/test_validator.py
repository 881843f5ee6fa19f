"""Simulation, chain classification, and export tests."""

import dataclasses
import random

import pytest

from chainplanner import formulas as fm
from chainplanner.catalog import AttackAction, Catalog, MitreLabel
from chainplanner.errors import UnknownUuid
from chainplanner.pddl import (
    DomainIndex,
    PddlAction,
    PddlDomain,
    PddlPredicate,
    PddlProblem,
)
from chainplanner.planner import ground, make_plan, search
from chainplanner.validator import (
    atom_str,
    classify_chain,
    emit_script,
    export_dot,
    render_execution,
    simulate,
    trace_to_dict,
)
from generators import micro_pddl, oracle_from_micro
from oracles import naive_simulate

REQS = (":strips", ":typing", ":negative-preconditions", ":numeric-fluents")


def lit(pred, *args):
    return fm.Lit(pred, tuple(args))


def chain_task():
    """recon -> foothold -> loot, one object, strictly sequential."""
    acts = [
        PddlAction(name="recon", parameters=(("t", "host"),),
                   precondition=fm.TRUE,
                   effects=((lit("scanned", "t"), True),)),
        PddlAction(name="foothold", parameters=(("t", "host"),),
                   precondition=lit("scanned", "t"),
                   effects=((lit("session", "t"), True),)),
        PddlAction(name="loot", parameters=(("t", "host"),),
                   precondition=lit("session", "t"),
                   effects=((lit("data", "t"), True),)),
    ]
    domain = PddlDomain(
        name="chain", requirements=REQS, types=(("host", "object"),),
        predicates=(PddlPredicate("scanned", ("host",)),
                    PddlPredicate("session", ("host",)),
                    PddlPredicate("data", ("host",))),
        actions=tuple(acts))
    problem = PddlProblem(name="p", domain_name="chain",
                          objects=(("h1", "host"),), init=(),
                          goal=lit("data", "h1"))
    return ground(domain, problem)


class TestSimulate:
    def test_valid_chain(self):
        task = chain_task()
        plan = search(task)
        trace = simulate(plan, task)
        assert trace.verdict == "valid"
        assert trace.failed_index is None
        assert trace.goal_checked and trace.goal_satisfied
        assert [s.applied for s in trace.steps] == [True, True, True]
        assert "data(h1)" in trace.final_state

    def test_missing_precondition_stops_trace(self):
        task = chain_task()
        plan = make_plan([task.resolve("loot", ("h1",))])
        trace = simulate(plan, task)
        assert trace.verdict == "invalid"
        assert trace.failed_index == 0
        assert trace.failure_reason == "missing_precondition: session(h1)"
        assert trace.steps[0].applied is False

    def test_negative_precondition_failure_message(self):
        act = PddlAction(name="clean", parameters=(("t", "host"),),
                         precondition=fm.Not(lit("dirty", "t")),
                         effects=((lit("done", "t"), True),))
        domain = PddlDomain(
            name="d", requirements=REQS, types=(("host", "object"),),
            predicates=(PddlPredicate("dirty", ("host",)),
                        PddlPredicate("done", ("host",))),
            actions=(act, PddlAction(
                name="smudge", parameters=(("t", "host"),),
                precondition=fm.TRUE,
                effects=((lit("dirty", "t"), True),))))
        problem = PddlProblem(name="p", domain_name="d",
                              objects=(("h1", "host"),),
                              init=(lit("dirty", "h1"),),
                              goal=lit("done", "h1"))
        task = ground(domain, problem)
        plan = make_plan([task.resolve("clean", ("h1",))])
        trace = simulate(plan, task)
        assert trace.verdict == "invalid"
        assert trace.failure_reason == "missing_precondition: not dirty(h1)"

    def test_goal_miss_without_step_failure(self):
        task = chain_task()
        plan = make_plan([task.resolve("recon", ("h1",))])
        trace = simulate(plan, task)
        assert trace.verdict == "invalid"
        assert trace.failed_index is None
        assert trace.failure_reason == "goal not satisfied in final state"
        assert trace.goal_satisfied is False

    def test_check_goal_off(self):
        task = chain_task()
        plan = make_plan([task.resolve("recon", ("h1",))])
        trace = simulate(plan, task, check_goal=False)
        assert trace.verdict == "valid"
        assert trace.goal_checked is False
        assert trace.goal_satisfied is None

    def test_custom_init(self):
        task = chain_task()
        mid = task.resolve("recon", ("h1",)).apply(task.init)
        plan = make_plan([task.resolve("foothold", ("h1",)),
                          task.resolve("loot", ("h1",))])
        trace = simulate(plan, task, init=mid)
        assert trace.verdict == "valid"

    def test_unbound_used_argument(self):
        task = chain_task()
        a = task.resolve("loot", ("h1",))
        broken = dataclasses.replace(a, binding=(("t", None),))
        trace = simulate(make_plan([broken]), task)
        assert trace.verdict == "invalid"
        assert trace.failure_reason == "unbound_argument: t"

    def test_empty_plan(self):
        task = chain_task()
        trace = simulate(make_plan([]), task)
        assert trace.verdict == "invalid"  # goal not yet satisfied
        trace2 = simulate(make_plan([]), task, check_goal=False)
        assert trace2.verdict == "valid"
        assert trace2.steps == ()

    def test_state_digest_changes_with_state(self):
        task = chain_task()
        plan = search(task)
        trace = simulate(plan, task)
        digests = [s.state_before for s in trace.steps]
        assert len(set(digests)) == len(digests)

    def test_agrees_with_naive_interpreter(self):
        rng = random.Random(911)
        checked = 0
        for _ in range(80):
            domain, problem = micro_pddl(rng)
            task = ground(domain, problem)
            if not task.actions:
                continue
            oracle = oracle_from_micro(domain, problem)
            by_name = {a.name: a for a in oracle.actions}
            for _ in range(6):
                steps = [task.actions[rng.randrange(len(task.actions))]
                         for _ in range(rng.randint(0, 5))]
                plan = make_plan(steps)
                trace = simulate(plan, task)
                expected = naive_simulate(
                    by_name, [a.ident for a in steps],
                    oracle.init, oracle.goal_pos, oracle.goal_neg)
                assert (trace.verdict == "valid") == expected
                checked += 1
        assert checked > 300

    def test_trace_to_dict_shape(self):
        task = chain_task()
        trace = simulate(search(task), task)
        doc = trace_to_dict(trace)
        assert doc["verdict"] == "valid"
        assert doc["failed_index"] is None
        assert doc["goal_checked"] is True
        assert len(doc["steps"]) == 3
        assert set(doc["steps"][0]) == \
            {"action", "state_before", "applied", "failure"}
        assert doc["final_state"] == sorted(doc["final_state"])


class TestClassifyChain:
    def test_connected_chain(self):
        task = chain_task()
        plan = search(task)
        result = classify_chain(plan, simulate(plan, task))
        assert result["classification"] == "normally_functioning"
        assert result["execution_criterion"] == "not evaluated"

    def test_invalid_trace(self):
        task = chain_task()
        plan = make_plan([task.resolve("loot", ("h1",))])
        result = classify_chain(plan, simulate(plan, task))
        assert result["classification"] == "failed"
        assert result["reason"].startswith("invalid trace:")

    def test_empty_plan_is_not_a_chain(self):
        task = chain_task()
        plan = make_plan([])
        result = classify_chain(plan, simulate(plan, task, check_goal=False))
        assert result["classification"] == "failed"
        assert result["reason"] == "empty plan, not a chain"

    def disconnected_fixture(self):
        acts = [
            PddlAction(name="left", parameters=(), precondition=fm.TRUE,
                       effects=((lit("a"), True),)),
            PddlAction(name="right", parameters=(), precondition=fm.TRUE,
                       effects=((lit("b"), True),)),
        ]
        domain = PddlDomain(
            name="d", requirements=REQS, types=(),
            predicates=(PddlPredicate("a", ()), PddlPredicate("b", ())),
            actions=tuple(acts))
        problem = PddlProblem(name="p", domain_name="d", objects=(),
                              init=(),
                              goal=fm.And((lit("a"), lit("b"))))
        return ground(domain, problem)

    def test_disconnected_step(self):
        task = self.disconnected_fixture()
        plan = make_plan([task.resolve("left", ()),
                          task.resolve("right", ())])
        result = classify_chain(plan, simulate(plan, task))
        assert result["classification"] == "failed"
        assert "disconnected: step 1" in result["reason"]

    def test_connectivity_check_off(self):
        task = self.disconnected_fixture()
        plan = make_plan([task.resolve("left", ()),
                          task.resolve("right", ())])
        result = classify_chain(plan, simulate(plan, task),
                                connectivity_check=False)
        assert result["classification"] == "normally_functioning"

    def test_single_step_chain_is_connected(self):
        task = chain_task()
        plan = make_plan([task.resolve("recon", ("h1",))])
        result = classify_chain(plan, simulate(plan, task, check_goal=False))
        assert result["classification"] == "normally_functioning"


class TestRenderExecution:
    def test_substitution(self):
        out = render_execution("nmap -p- {target}", {"target": "h1"})
        assert out == "nmap -p- h1"

    def test_missing_binding_becomes_fill_marker(self):
        out = render_execution("run {sess} on {target}",
                               {"target": "h1", "sess": None})
        assert out == "run <FILL:sess> on h1"

    def test_repeated_placeholder(self):
        out = render_execution("{x} {x}", {"x": "v"})
        assert out == "v v"

    def test_unknown_placeholder(self):
        assert render_execution("{ghost}", {}) == "<FILL:ghost>"


def script_fixture():
    catalog = Catalog()
    catalog.add(AttackAction(
        uuid="u-scan", name="Port Scan", description="scan the target",
        source="unit", platforms=frozenset({"linux"}), executor="bash",
        execution="nmap -p- {target}\nsleep {delay}",
        parameters=(("target", "host"), ("delay", "string")),
        preconditions=fm.TRUE, effects=lit("scanned", "target"),
        tactic=MitreLabel("TA0007", "Discovery"),
        technique=MitreLabel("T1046", "Network Service Discovery")))
    catalog.add(AttackAction(
        uuid="u-grab", name="Grab Data", description="read the loot",
        source="unit", platforms=frozenset({"linux"}), executor="bash",
        execution="cat /srv/{target}.txt",
        parameters=(("target", "host"),),
        preconditions=lit("scanned", "target"),
        effects=lit("data", "target")))
    acts = [
        PddlAction(name="port_scan",
                   parameters=(("target", "host"), ("delay", "string")),
                   precondition=fm.TRUE,
                   effects=((lit("scanned", "target"), True),)),
        PddlAction(name="grab_data", parameters=(("target", "host"),),
                   precondition=lit("scanned", "target"),
                   effects=((lit("data", "target"), True),)),
    ]
    domain = PddlDomain(
        name="d", requirements=REQS,
        types=(("host", "object"), ("string", "object")),
        predicates=(PddlPredicate("scanned", ("host",)),
                    PddlPredicate("data", ("host",))),
        actions=tuple(acts))
    problem = PddlProblem(name="p", domain_name="d",
                          objects=(("h1", "host"),), init=(),
                          goal=lit("data", "h1"))
    index = DomainIndex(origin={"port_scan": "u-scan",
                                "grab_data": "u-grab"})
    task = ground(domain, problem, index=index)
    return catalog, task


class TestEmitScript:
    def test_script_structure(self):
        catalog, task = script_fixture()
        plan = search(task)
        script = emit_script(plan, catalog)
        lines = script.splitlines()
        assert lines[0].startswith("# execution skeleton")
        assert "# steps: 2" in lines
        assert "# step 1: Port Scan" in lines
        assert "# uuid: u-scan" in lines
        assert "# executor: bash" in lines
        assert "# tactic: TA0007 Discovery" in lines
        assert "# technique: T1046 Network Service Discovery" in lines
        assert "nmap -p- h1" in lines
        # the execution-only parameter surfaces as an operator fill-in
        assert "sleep <FILL:delay>" in lines
        assert "# step 2: Grab Data" in lines
        assert "cat /srv/h1.txt" in lines
        assert script.endswith("\n")

    def test_unlabeled_action_omits_mitre_lines(self):
        catalog, task = script_fixture()
        plan = search(task)
        script = emit_script(plan, catalog)
        step2 = script.split("# step 2")[1]
        assert "tactic" not in step2
        assert "technique" not in step2

    def test_unknown_origin_raises(self):
        catalog, task = script_fixture()
        plan = search(task)
        stripped = dataclasses.replace(plan.steps[0], origin="")
        with pytest.raises(UnknownUuid):
            emit_script(make_plan([stripped, plan.steps[1]]), catalog)


class TestExportDot:
    def test_chain_edges(self):
        task = chain_task()
        plan = search(task)
        dot = export_dot(plan, task)
        assert 'n0 [label="(recon h1)"];' in dot
        assert 'n0 -> n1 [label="scanned(h1)"];' in dot
        assert 'n1 -> n2 [label="session(h1)"];' in dot
        assert dot.startswith("digraph chain {")
        assert dot.endswith("}\n")

    def test_edges_attribute_first_producer(self):
        # two producers of the same atom: the edge must point at the earlier
        acts = [
            PddlAction(name="mk1", parameters=(), precondition=fm.TRUE,
                       effects=((lit("thing"), True),)),
            PddlAction(name="mk2", parameters=(), precondition=fm.TRUE,
                       effects=((lit("thing"), True), (lit("extra"), True))),
            PddlAction(name="use", parameters=(), precondition=lit("thing"),
                       effects=((lit("made"), True),)),
        ]
        domain = PddlDomain(
            name="d", requirements=REQS, types=(),
            predicates=(PddlPredicate("thing", ()), PddlPredicate("extra", ()),
                        PddlPredicate("made", ())),
            actions=tuple(acts))
        problem = PddlProblem(name="p", domain_name="d", objects=(),
                              init=(), goal=lit("made"))
        task = ground(domain, problem)
        plan = make_plan([task.resolve("mk1", ()), task.resolve("mk2", ()),
                          task.resolve("use", ())])
        dot = export_dot(plan, task)
        assert 'n0 -> n2 [label="thing()"];' in dot
        assert "n1 -> n2" not in dot

    def test_edge_properties_on_random_plans(self):
        rng = random.Random(912)
        import re
        edge_re = re.compile(r"n(\d+) -> n(\d+) \[label=\"(.+)\"\];")
        checked = 0
        for _ in range(40):
            domain, problem = micro_pddl(rng)
            task = ground(domain, problem)
            plan = search(task)
            if plan is None or not plan.steps:
                continue
            dot = export_dot(plan, task)
            atoms = {atom_str(a): i for i, a in enumerate(task.atoms)}
            for src, dst, label in edge_re.findall(dot):
                i, j = int(src), int(dst)
                bit = atoms[label]
                assert i < j
                assert plan.steps[j].pre_pos >> bit & 1
                assert plan.steps[i].add >> bit & 1
                # first producer: nobody earlier adds the same atom
                for k in range(i):
                    assert not (plan.steps[k].add >> bit & 1)
                checked += 1
        assert checked > 10
