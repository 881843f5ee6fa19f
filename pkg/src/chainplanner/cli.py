"""Command-line pipeline: ingest -> annotate -> profile -> compile -> plan
-> validate/classify -> env match -> export, all file-based over one
workspace directory.

Exit codes: 0 success, 1 validation/input failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import annotator, envmatch, pddl, planner, profile as profile_mod, validator
from . import formulas as fm
from .aalm import growth_report, save_registry, seed_registry
from .catalog import parse_catalog, serialize_catalog
from .errors import ChainplannerError
from .workspace import (
    Workspace,
    expand_pools,
    parse_pools_flag,
    resolve_root,
    write_json,
    write_text,
)

GOAL_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_-]*)\s*\(([^()]*)\)\s*$")


def _parse_goal_atom(text: str) -> fm.Lit:
    m = GOAL_RE.match(text)
    if m is None:
        raise UsageError(f"--goal: expected pred(obj, ...), got {text!r}")
    args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
    return fm.Lit(m.group(1), args)


class UsageError(Exception):
    pass


def _print_warnings(warnings: list[str]) -> None:
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)


# ------------------------------------------------------------- subcommands


def cmd_ingest(ws: Workspace, args) -> int:
    from .workspace import ingest_into
    paths = [Path(p) for p in args.files] or ws.default_catalog_files()
    if not paths:
        raise UsageError("ingest: no catalog files given and none under "
                         f"{ws.catalog_dir}")
    warnings: list[str] = []
    catalog, _reg, report = ingest_into(ws, paths, warnings)
    _print_warnings(warnings)
    print(f"ingested {len(catalog.actions)} actions from "
          f"{len(paths)} file(s)")
    print(f"registry growth: {len(report['new_predicates'])} new "
          f"predicate(s), {len(report['new_types'])} new type(s)")
    return 0


def cmd_annotate(ws: Workspace, args) -> int:
    reg = ws.load_registry()
    catalog = ws.load_working_catalog(reg, annotated_ok=False)

    rules = None
    rules_path = Path(args.rules) if args.rules else ws.rules_file
    if args.rules or rules_path.is_file():
        rules = annotator.load_rules(rules_path)

    client = None
    if args.mock:
        client = annotator.MockTranscriptClient.from_file(args.mock)
    elif args.client:
        client = annotator.HttpAnnotatorClient(args.client)

    taxonomy = None
    if ws.taxonomy_file.is_file():
        taxonomy = annotator.load_taxonomy(ws.taxonomy_file)

    strategy = annotator.Strategy(guidance_in_prompt=args.gp,
                                  examples_in_prompt=args.ep)
    warnings: list[str] = []
    annotated = annotator.annotate_catalog(
        catalog, reg, rules=rules, client=client, taxonomy=taxonomy,
        strategy=strategy, warnings=warnings)
    write_text(ws.annotated_file, serialize_catalog(annotated))
    save_registry(reg, ws.registry_file)
    write_json(ws.growth_file, growth_report(seed_registry(), reg))
    _print_warnings(warnings)
    labeled = sum(1 for a in annotated.sorted_actions()
                  if a.tactic and a.technique)
    print(f"annotated {len(annotated.actions)} actions "
          f"({labeled} fully labeled)")
    return 0


def cmd_profile_ingest(ws: Workspace, args) -> int:
    prof = profile_mod.load_profile(args.doc)
    write_json(ws.profile_file, profile_mod.profile_to_dict(prof))
    print(f"profile: {len(prof.entries)} entries, "
          f"{len({e.technique_id for e in prof.entries})} distinct techniques")
    return 0


def cmd_profile_reward(ws: Workspace, args) -> int:
    reg = ws.load_registry()
    catalog = ws.load_working_catalog(reg)
    if args.random:
        seed, epsilon = int(args.random[0]), float(args.random[1])
        rewards = profile_mod.random_rewards(catalog, seed, epsilon)
        method = f"random(seed={seed}, epsilon={repr(epsilon)})"
    else:
        if not ws.profile_file.is_file():
            raise UsageError("profile reward: no ingested profile; run "
                             "`profile ingest` first or use --random")
        prof = profile_mod.profile_from_dict(
            json.loads(ws.profile_file.read_text()))
        endpoint = args.embedder or (None if args.tf else ws.config.embedder_url)
        warnings: list[str] = []
        cache = profile_mod.EmbeddingCache(ws.build / "embed_cache.json") \
            if endpoint else None
        sim = profile_mod.make_similarity(endpoint, cache=cache,
                                          warn=warnings.append)
        rewards = profile_mod.compute_rewards(catalog, prof, sim)
        _print_warnings(warnings)
        method = "embedder" if endpoint else "tf_cosine"
    write_json(ws.rewards_file, {"method": method, "rewards": rewards})
    nonzero = sum(1 for v in rewards.values() if v > 0)
    print(f"rewards: {nonzero}/{len(rewards)} actions rewarded ({method})")
    return 0


def _load_compile_inputs(ws: Workspace):
    reg = ws.load_registry()
    catalog = ws.load_working_catalog(reg)
    rewards = ws.load_rewards()
    return reg, catalog, rewards


def _load_inventory(ws: Workspace):
    if not ws.inventory_file.is_file():
        raise ChainplannerError(
            f"inventory file not found: {ws.inventory_file}")
    return envmatch.load_inventory(ws.inventory_file)


def cmd_compile(ws: Workspace, args) -> int:
    reg, catalog, rewards = _load_compile_inputs(ws)

    # image-derived predicates must exist before the domain declares its
    # predicate list, so inventory atoms come first
    init_atoms: set[fm.Lit] = set()
    hosts: list[str] = []
    if ws.inventory_file.is_file():
        images = envmatch.load_inventory(ws.inventory_file)
        init_atoms = envmatch.derive_init_atoms(images, reg)
        hosts = [h for h, _ in envmatch.host_map(images)]
        save_registry(reg, ws.registry_file)

    domain, index = pddl.build_domain(
        catalog, reg, rewards=rewards,
        clause_bound=ws.config.clause_bound)
    write_text(ws.domain_file, pddl.emit_domain_text(domain))
    write_json(ws.index_file,
               {"origin": index.origin, "rewards": index.rewards})

    if not args.goal and not args.sweep:
        print(f"compiled domain: {len(domain.actions)} actions, "
              f"{len(domain.predicates)} predicates")
        return 0

    if not ws.inventory_file.is_file():
        _load_inventory(ws)  # raises with the standard diagnostic
    pools_spec = parse_pools_flag(args.pools) if args.pools else ws.config.pools
    pools = expand_pools(pools_spec, reg)

    if args.goal:
        lits = [_parse_goal_atom(g) for g in args.goal]
        goal: fm.Formula = lits[0] if len(lits) == 1 else fm.And(tuple(lits))
        problem = pddl.build_problem(init_atoms, hosts, goal, reg,
                                     pools=pools)
        _clear_glob(ws.problems_dir, "*.pddl")  # goal and sweep are exclusive
        write_text(ws.problem_file, pddl.emit_problem_text(problem))
        print(f"compiled domain + problem ({len(domain.actions)} actions, "
              f"goal {args.goal[0] if len(args.goal) == 1 else 'conjunction'})")
        return 0

    # sweep: one problem per registry predicate, goal args drawn from the
    # first object of each parameter type
    if ws.problem_file.is_file():
        ws.problem_file.unlink()  # goal and sweep are exclusive
    _clear_glob(ws.problems_dir, "*.pddl")
    skipped: list[str] = []
    count = 0
    for (pname, _arity), schema in sorted(reg.schemas.items()):
        goal_args = []
        for t in schema.params:
            if reg.is_subtype("host", t):
                if not hosts:
                    goal_args = None
                    break
                goal_args.append(hosts[0])
            elif pools.get(t, 0) >= 1:
                goal_args.append(f"{t}1")
            else:
                goal_args = None
                break
        if goal_args is None:
            skipped.append(pname)
            continue
        problem = pddl.build_problem(
            init_atoms, hosts, fm.Lit(pname, tuple(goal_args)), reg,
            pools=pools, name=f"goal_{pname}")
        write_text(ws.problems_dir / f"goal_{pname}.pddl",
                   pddl.emit_problem_text(problem))
        count += 1
    print(f"sweep: {count} problem file(s) under {ws.problems_dir}")
    if skipped:
        print(f"skipped {len(skipped)} predicate(s) with no objects for "
              f"their parameter types: {', '.join(sorted(skipped))}")
    return 0


def _load_task(ws: Workspace, problem_path: Path):
    domain = pddl.parse_domain(ws.domain_file.read_text())
    index = None
    if ws.index_file.is_file():
        doc = json.loads(ws.index_file.read_text())
        index = pddl.DomainIndex(
            origin={str(k): str(v) for k, v in doc.get("origin", {}).items()},
            rewards={str(k): float(v)
                     for k, v in doc.get("rewards", {}).items()})
    problem = pddl.parse_problem(problem_path.read_text(), domain)
    task = planner.ground(domain, problem, index,
                          bound=planner.DEFAULT_GROUND_BOUND,
                          r_cap_floor=ws.config.r_cap)
    return domain, problem, task


def _resolve_problem(ws: Workspace, args) -> Path:
    if getattr(args, "problem", None):
        p = Path(args.problem)
        if not p.is_file():
            p = ws.problems_dir / args.problem
        if not p.is_file():
            raise ChainplannerError(f"problem file not found: {args.problem}")
        return p
    if ws.problem_file.is_file():
        return ws.problem_file
    raise ChainplannerError(
        f"no problem file; run `compile --goal` first or pass --problem")


def _plan_text(plan: planner.Plan, mode: str) -> str:
    lines = [f"; mode: {mode}",
             f"; steps: {len(plan.steps)}",
             f"; total-cost: {repr(plan.total_cost)}",
             f"; total-reward: {repr(plan.total_reward)}"]
    lines += [ga.ident for ga in plan.steps]
    return "\n".join(lines) + "\n"


def _clear_glob(directory: Path, pattern: str) -> None:
    if directory.is_dir():
        for p in sorted(directory.glob(pattern)):
            p.unlink()


def cmd_plan(ws: Workspace, args) -> int:
    cfg = ws.config
    mode = "greedy" if args.greedy else "optimal"
    delta = args.delta if args.delta is not None else cfg.delta
    stall = args.stall if args.stall is not None else cfg.stall_rounds
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    budget = cfg.node_budget

    if not ws.domain_file.is_file():
        raise ChainplannerError("no compiled domain; run `compile` first")

    sweep_problems = sorted(ws.problems_dir.glob("*.pddl")) \
        if ws.problems_dir.is_dir() else []
    single = getattr(args, "problem", None) or ws.problem_file.is_file() \
        or not sweep_problems

    if single:
        problem_path = _resolve_problem(ws, args)
        _domain, _problem, task = _load_task(ws, problem_path)
        external_cmd = args.external or cfg.solver_cmd
        if external_cmd and args.diverse:
            raise UsageError("--external cannot combine with --diverse "
                             "(cost bumps do not pass through)")
        _clear_glob(ws.plans_dir, "plan_*.txt")
        if external_cmd:
            plan = planner.solve_external(
                ws.domain_file.read_text(), problem_path.read_text(),
                external_cmd, task)
            plans = [plan]
            mode = "external"
        elif args.diverse:
            plans = planner.enumerate_diverse(
                task, delta=delta, stall_rounds=stall, target=args.diverse,
                mode=mode, node_budget=budget)
            if not plans:
                print("no plan found", file=sys.stderr)
                return 1
            if len(plans) < args.diverse:
                print(f"stalled after {len(plans)} distinct plan(s) "
                      f"(target {args.diverse})")
        else:
            plan = planner.search(task, mode=mode, node_budget=budget)
            if plan is None:
                print("no plan found", file=sys.stderr)
                return 1
            plans = [plan]
        summary = []
        for i, plan in enumerate(plans, start=1):
            fname = f"plan_{i:03d}.txt"
            write_text(ws.plans_dir / fname, _plan_text(plan, mode))
            summary.append({
                "file": fname, "steps": len(plan.steps),
                "total_cost": plan.total_cost,
                "total_reward": plan.total_reward,
                "actions": sorted(plan.identity),
            })
        write_json(ws.plans_dir / "plans.json",
                   {"mode": mode, "count": len(plans), "plans": summary})
        print(f"wrote {len(plans)} plan file(s) to {ws.plans_dir}")
        return 0

    # sweep planning: one search per compiled problem, fanned out on threads
    domain = pddl.parse_domain(ws.domain_file.read_text())
    index = None
    if ws.index_file.is_file():
        doc = json.loads(ws.index_file.read_text())
        index = pddl.DomainIndex(
            origin={str(k): str(v) for k, v in doc.get("origin", {}).items()},
            rewards={str(k): float(v)
                     for k, v in doc.get("rewards", {}).items()})

    def solve_one(path: Path) -> dict:
        problem = pddl.parse_problem(path.read_text(), domain)
        goal_str = pddl.ground_formula_text(problem.goal)
        entry: dict = {"problem": path.name, "goal": goal_str}
        try:
            task = planner.ground(domain, problem, index,
                                  r_cap_floor=cfg.r_cap)
            plan = planner.search(task, mode=mode, node_budget=budget)
        except ChainplannerError as exc:
            entry.update(status="error", detail=str(exc))
            return entry
        if plan is None:
            entry.update(status="no plan")
            return entry
        if not plan.steps:
            # goal already holds in the initial state: nothing to execute,
            # so no plan file and no chain
            entry.update(status="trivial goal")
            return entry
        trace = validator.simulate(plan, task)
        verdictdoc = validator.classify_chain(plan, trace)
        entry.update(
            status="ok", steps=len(plan.steps),
            total_reward=plan.total_reward,
            classification=verdictdoc["classification"],
            reason=verdictdoc["reason"],
            plan_file=f"{path.stem}.txt")
        entry["plan_text"] = _plan_text(plan, mode)
        return entry

    _clear_glob(ws.plans_dir, "goal_*.txt")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(solve_one, sweep_problems))
    else:
        entries = [solve_one(p) for p in sweep_problems]

    chains = 0
    lengths = []
    for entry in entries:
        text = entry.pop("plan_text", None)
        if text is not None:
            write_text(ws.plans_dir / entry["plan_file"], text)
        if entry.get("classification") == "normally_functioning":
            chains += 1
            lengths.append(entry["steps"])
    avg = (sum(lengths) / len(lengths)) if lengths else 0.0
    report = {
        "problems": len(entries),
        "planned": sum(1 for e in entries if e["status"] == "ok"),
        "normally_functioning": chains,
        "average_length": avg,
        "entries": entries,
    }
    write_json(ws.sweep_file, report)
    print(f"sweep: {report['planned']}/{report['problems']} goals planned, "
          f"{chains} normally functioning chain(s), "
          f"average length {avg:.2f}")
    return 0


def _load_plan(ws: Workspace, args) -> tuple:
    problem_path = _resolve_problem(ws, args)
    _domain, _problem, task = _load_task(ws, problem_path)
    plan_path = ws.find_plan_file(args.plan)
    plan = pddl.parse_plan_file(plan_path.read_text(), task)
    return task, planner.make_plan(list(plan)), plan_path


def cmd_validate(ws: Workspace, args) -> int:
    task, plan, plan_path = _load_plan(ws, args)
    trace = validator.simulate(plan, task)
    write_json(ws.traces_dir / f"{plan_path.stem}.trace.json",
               validator.trace_to_dict(trace))
    if trace.verdict == "valid":
        print(f"{plan_path.name}: valid ({len(plan.steps)} steps, "
              f"goal satisfied)")
        return 0
    print(f"{plan_path.name}: invalid at step "
          f"{trace.failed_index}: {trace.failure_reason}")
    return 1


def cmd_classify(ws: Workspace, args) -> int:
    task, plan, plan_path = _load_plan(ws, args)
    trace = validator.simulate(plan, task)
    doc = validator.classify_chain(plan, trace)
    write_json(ws.traces_dir / f"{plan_path.stem}.classification.json", doc)
    print(f"{plan_path.name}: {doc['classification']} ({doc['reason']}); "
          f"execution criterion {doc['execution_criterion']}")
    return 0 if doc["classification"] == "normally_functioning" else 1


def cmd_env_match(ws: Workspace, args) -> int:
    reg = ws.load_registry()
    task, plan, plan_path = _load_plan(ws, args)
    images = _load_inventory(ws)
    req = envmatch.required_env_atoms(plan, task, reg)
    manifest = envmatch.match_images(req, images, reg)
    write_json(ws.manifest_file, manifest.to_dict())
    if manifest.valid:
        print(f"{plan_path.name}: matched "
              f"{len(manifest.assignments)} host(s) "
              f"({', '.join(f'{h}={i}' for h, i in sorted(manifest.assignments.items()))})")
        return 0
    print(f"{plan_path.name}: {len(manifest.unmet)} unmet environment "
          f"atom(s): {', '.join(manifest.unmet)}")
    return 1


def cmd_export(ws: Workspace, args) -> int:
    task, plan, plan_path = _load_plan(ws, args)
    if args.kind == "script":
        reg = ws.load_registry()
        catalog = ws.load_working_catalog(reg)
        text = validator.emit_script(plan, catalog)
        out = ws.export_dir / f"{plan_path.stem}.sh"
    else:
        text = validator.export_dot(plan, task)
        out = ws.export_dir / f"{plan_path.stem}.dot"
    write_text(out, text)
    print(f"wrote {out}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainplanner",
        description="attack-chain planning toolchain")
    parser.add_argument("--workspace", help="project directory (default: "
                        "$CHAINPLANNER_WORKSPACE or cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize catalogs")
    p.add_argument("files", nargs="*", help="catalog files "
                   "(default: <workspace>/catalog/*)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("annotate", help="apply rules and external annotator")
    p.add_argument("--rules", help="rules file (default: "
                   "<workspace>/rules.yaml when present)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--client", help="annotator endpoint URL")
    g.add_argument("--mock", help="canned transcript file (no network)")
    p.add_argument("--gp", action="store_true",
                   help="include guidance in prompts")
    p.add_argument("--ep", action="store_true",
                   help="include examples in prompts")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("profile", help="threat-intel profile operations")
    psub = p.add_subparsers(dest="profile_command", required=True)
    pi = psub.add_parser("ingest", help="validate and store a TTP profile")
    pi.add_argument("doc", help="profile document (JSON)")
    pi.set_defaults(func=cmd_profile_ingest)
    pr = psub.add_parser("reward", help="compute per-action rewards")
    g = pr.add_mutually_exclusive_group()
    g.add_argument("--embedder", help="embedding endpoint URL")
    g.add_argument("--tf", action="store_true",
                   help="force the term-frequency similarity backend")
    g.add_argument("--random", nargs=2, metavar=("SEED", "EPS"),
                   help="uniform random rewards in [0, EPS)")
    pr.set_defaults(func=cmd_profile_reward)

    p = sub.add_parser("compile", help="emit PDDL domain/problem files")
    p.add_argument("--goal", action="append",
                   help="ground goal atom pred(obj, ...); repeatable")
    p.add_argument("--sweep", action="store_true",
                   help="one problem file per registry predicate")
    p.add_argument("--pools", help="pool spec: count or type=count[,type=count]")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("plan", help="search for plans")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--optimal", action="store_true",
                   help="cost-optimal search (default)")
    g.add_argument("--greedy", action="store_true",
                   help="greedy best-first search")
    p.add_argument("--diverse", type=int, metavar="N",
                   help="enumerate up to N diverse plans")
    p.add_argument("--delta", type=float, help="cost bump per found plan")
    p.add_argument("--stall", type=int,
                   help="stop after this many rounds with no new plan")
    p.add_argument("--external", metavar="CMD",
                   help="external solver command with {domain} {problem} "
                        "{plan_out} placeholders")
    p.add_argument("--problem", help="specific problem file")
    p.add_argument("--jobs", type=int, help="worker threads for sweeps")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="simulate a plan and record a trace")
    p.add_argument("plan", help="plan file (name under build/plans works)")
    p.add_argument("--problem", help="problem the plan was made for")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("classify", help="label a plan as a working chain")
    p.add_argument("plan")
    p.add_argument("--problem")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("env", help="environment inventory operations")
    esub = p.add_subparsers(dest="env_command", required=True)
    em = esub.add_parser("match", help="match a plan to environment images")
    em.add_argument("plan")
    em.add_argument("--problem")
    em.set_defaults(func=cmd_env_match)

    p = sub.add_parser("export", help="emit execution script or dot graph")
    p.add_argument("kind", choices=("script", "dot"))
    p.add_argument("plan")
    p.add_argument("--problem")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    ws = Workspace(resolve_root(args.workspace))
    _print_warnings(ws.config.warnings)
    try:
        return args.func(ws, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ChainplannerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
