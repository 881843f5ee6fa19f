"""Precondition/effect/label assignment: rules first, then a pluggable
external annotator, then two-stage MITRE labeling over a closed taxonomy.

The external client must pick registered predicates when they fit; a new
predicate is only accepted alongside a conforming schema proposal (or a
registry template match). Rule-derived literals beat external ones on
conflicts; record-provided literals beat both, and a rule contradicting the
record is an error rather than a silent override.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from . import formulas as fm
from .aalm import DIMENSIONS, PredicateSchema, Registry
from .catalog import AttackAction, Catalog, MitreLabel
from .errors import (
    ArityConflict,
    ChainplannerError,
    ClientUnavailable,
    ContractViolation,
    MalformedResponse,
    OutOfVocabulary,
    RuleLiteralInvalid,
    UnknownPredicate,
    UnresolvableConflict,
)

MATCHER_KEYS = ("executor_is", "source_is", "name_contains",
                "description_contains", "platform_includes")
MITRE_RETRIES = 2  # extra attempts after the first out-of-vocabulary answer


@dataclass(frozen=True)
class Rule:
    name: str
    priority: int
    match: tuple[tuple[str, str], ...]
    preconditions: tuple[tuple[str, tuple[str, ...], bool], ...]  # pred, arg types, positive
    effects: tuple[tuple[str, tuple[str, ...], bool], ...]


@dataclass
class PartialAnnotation:
    preconditions: list[tuple[fm.Lit, bool]] = field(default_factory=list)
    effects: list[tuple[fm.Lit, bool]] = field(default_factory=list)
    tactic: MitreLabel | None = None
    technique: MitreLabel | None = None


def _parse_rule_literals(nodes, rule_name: str):
    out = []
    for node in nodes or []:
        if not isinstance(node, dict) or "pred" not in node:
            raise RuleLiteralInvalid(rule_name, repr(node),
                                     "literal nodes need a pred key")
        out.append((str(node["pred"]),
                    tuple(str(a) for a in node.get("args", [])),
                    not node.get("negated", False)))
    return tuple(out)


def load_rules(path: str | Path) -> list[Rule]:
    doc = yaml.safe_load(Path(path).read_text()) or {}
    rules = []
    for entry in doc.get("rules", []):
        name = str(entry.get("name", f"rule{len(rules)}"))
        match = entry.get("match") or {}
        for key in match:
            if key not in MATCHER_KEYS:
                raise RuleLiteralInvalid(name, repr(key), "unknown matcher")
        rules.append(Rule(
            name=name,
            priority=int(entry.get("priority", 0)),
            match=tuple(sorted((k, str(v)) for k, v in match.items())),
            preconditions=_parse_rule_literals(entry.get("preconditions"), name),
            effects=_parse_rule_literals(entry.get("effects"), name)))
    return rules


def rule_matches(rule: Rule, a: AttackAction) -> bool:
    for key, value in rule.match:
        if key == "executor_is" and a.executor != value:
            return False
        if key == "source_is" and a.source != value:
            return False
        if key == "name_contains" and value.lower() not in a.name.lower():
            return False
        if key == "description_contains" \
                and value.lower() not in a.description.lower():
            return False
        if key == "platform_includes" and value not in a.platforms:
            return False
    return True


def _bind_rule_literal(pred: str, arg_types: tuple[str, ...], positive: bool,
                       a: AttackAction, reg: Registry,
                       rule_name: str) -> tuple[fm.Lit, bool]:
    """Bind a rule literal's type slots to the action's first parameter of
    each requested type (subtypes qualify)."""
    args = []
    for want in arg_types:
        hit = next((p for p, t in a.parameters if reg.is_subtype(t, want)), None)
        if hit is None:
            raise RuleLiteralInvalid(
                rule_name, pred,
                f"{a.name} has no parameter of type {want!r}")
        args.append(hit)
    lit = fm.Lit(reg.canonical_name(pred), tuple(args))
    env = a.param_env
    try:
        reg.validate_literal(lit, env)
    except UnknownPredicate:
        arg_env_types = tuple(env[x] for x in lit.args)
        tpl = reg.match_template(lit.pred, arg_env_types)
        if tpl is None:
            raise RuleLiteralInvalid(rule_name, pred, "unknown predicate")
        reg.register(PredicateSchema(lit.pred, tpl.dimension, tpl.params,
                                     template_of=tpl.id, doc=tpl.doc))
        reg.validate_literal(lit, env)
    except ChainplannerError as exc:
        raise RuleLiteralInvalid(rule_name, pred, str(exc)) from exc
    return lit, positive


def apply_rules(a: AttackAction, rules: list[Rule],
                reg: Registry) -> PartialAnnotation:
    """Fire every matching rule, highest priority first (name breaks ties);
    literal sets merge with duplicates dropped."""
    out = PartialAnnotation()
    seen_pre: set = set()
    seen_eff: set = set()
    for rule in sorted(rules, key=lambda r: (-r.priority, r.name)):
        if not rule_matches(rule, a):
            continue
        for pred, types, positive in rule.preconditions:
            bound = _bind_rule_literal(pred, types, positive, a, reg, rule.name)
            if bound not in seen_pre:
                seen_pre.add(bound)
                out.preconditions.append(bound)
        for pred, types, positive in rule.effects:
            bound = _bind_rule_literal(pred, types, positive, a, reg, rule.name)
            if bound not in seen_eff:
                seen_eff.add(bound)
                out.effects.append(bound)
    return out


# ---------------------------------------------------------- external client


class MockTranscriptClient:
    """Replays canned responses from a transcript file; no network.

    Transcript shape:
      {"annotations": {uuid: {preconditions, effects, new_schemas, ...}},
       "mitre": {uuid: {"tactic_answers": [...], "technique_answers": [...]}}}
    Answer lists are consumed one per attempt; the last answer repeats when
    the list runs out.
    """

    def __init__(self, transcript: dict):
        self.annotations = transcript.get("annotations", {})
        self.mitre = transcript.get("mitre", {})
        self._cursor: dict[tuple[str, str], int] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "MockTranscriptClient":
        return cls(json.loads(Path(path).read_text()))

    def annotate(self, request: dict) -> dict:
        uuid = request["action"]["uuid"]
        return self.annotations.get(
            uuid, {"preconditions": [], "effects": [], "new_schemas": []})

    def choose(self, request: dict) -> str:
        uuid = request["action"]["uuid"]
        stage = request["stage"]
        answers = self.mitre.get(uuid, {}).get(f"{stage}_answers", [])
        if not answers:
            return ""
        key = (uuid, stage)
        i = self._cursor.get(key, 0)
        self._cursor[key] = i + 1
        return str(answers[min(i, len(answers) - 1)])


class HttpAnnotatorClient:
    """Minimal HTTP client for a live annotator endpoint."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def _post(self, payload: dict) -> dict:
        import urllib.error
        import urllib.request
        req = urllib.request.Request(
            self.url, data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise ClientUnavailable(str(exc)) from exc
        try:
            out = json.loads(data)
        except ValueError as exc:
            raise MalformedResponse(str(exc)) from exc
        if not isinstance(out, dict):
            raise MalformedResponse("response is not an object")
        return out

    def annotate(self, request: dict) -> dict:
        return self._post({"kind": "annotate", **request})

    def choose(self, request: dict) -> str:
        out = self._post({"kind": "choose", **request})
        answer = out.get("answer")
        if not isinstance(answer, str):
            raise MalformedResponse("choose response lacks an answer string")
        return answer


@dataclass(frozen=True)
class Strategy:
    guidance_in_prompt: bool = False
    examples_in_prompt: bool = False


@dataclass
class AnnotationResponse:
    preconditions: list[tuple[fm.Lit, bool]] = field(default_factory=list)
    effects: list[tuple[fm.Lit, bool]] = field(default_factory=list)
    new_schemas: list[PredicateSchema] = field(default_factory=list)
    tactic: MitreLabel | None = None
    technique: MitreLabel | None = None


def registry_listing(reg: Registry) -> list[dict]:
    return [
        {"name": s.name, "params": list(s.params), "dimension": s.dimension}
        for _, s in sorted(reg.schemas.items())
    ]


def build_request(a: AttackAction, reg: Registry, strategy: Strategy) -> dict:
    return {
        "action": {
            "uuid": a.uuid, "name": a.name, "description": a.description,
            "source": a.source, "executor": a.executor,
            "execution": a.execution,
            "platforms": sorted(a.platforms),
            "parameters": [{"name": n, "type": t} for n, t in a.parameters],
        },
        "registry": registry_listing(reg),
        "strategy": {
            "guidance_in_prompt": strategy.guidance_in_prompt,
            "examples_in_prompt": strategy.examples_in_prompt,
        },
    }


def _response_literal(node, a: AttackAction, reg: Registry) -> tuple[fm.Lit, bool]:
    if not isinstance(node, dict) or "pred" not in node:
        raise MalformedResponse(f"bad literal node: {node!r}")
    pred = reg.canonical_name(str(node["pred"]))
    args = tuple(str(x) for x in node.get("args", []))
    positive = not node.get("negated", False)
    env = a.param_env
    for arg in args:
        if arg not in env:
            raise ContractViolation(
                f"literal {pred} argument {arg!r} is not a parameter of {a.name}")
    lit = fm.Lit(pred, args)
    try:
        reg.validate_literal(lit, env)
    except UnknownPredicate:
        arg_types = tuple(env[x] for x in args)
        tpl = reg.match_template(pred, arg_types)
        if tpl is None:
            raise ContractViolation(
                f"literal {pred!r} matches no registered predicate, no "
                f"template, and no schema proposal")
        reg.register(PredicateSchema(pred, tpl.dimension, tpl.params,
                                     template_of=tpl.id, doc=tpl.doc))
        reg.validate_literal(lit, env)
    return lit, positive


def annotate_external(a: AttackAction, reg: Registry, client,
                      strategy: Strategy = Strategy()) -> AnnotationResponse:
    """Ask the external annotator for literals; enforce the
    select-existing-predicates-first contract on the response."""
    raw = client.annotate(build_request(a, reg, strategy))
    if not isinstance(raw, dict):
        raise MalformedResponse("annotator response is not an object")
    for key in ("preconditions", "effects", "new_schemas"):
        if key in raw and not isinstance(raw[key], list):
            raise MalformedResponse(f"{key} is not a list")

    out = AnnotationResponse()
    for node in raw.get("new_schemas", []):
        if not isinstance(node, dict):
            raise MalformedResponse(f"bad schema proposal: {node!r}")
        dimension = str(node.get("dimension", ""))
        if dimension not in DIMENSIONS:
            raise ContractViolation(
                f"schema proposal dimension {dimension!r} is not a linking "
                f"dimension")
        params = tuple(str(t) for t in node.get("params", []))
        for t in params:
            if t not in reg.types:
                raise ContractViolation(
                    f"schema proposal parameter type {t!r} is unregistered")
        try:
            schema = PredicateSchema(
                reg.canonical_name(str(node.get("name", ""))), dimension,
                params, doc=str(node.get("doc", "")))
            reg.register(schema)
        except ArityConflict:
            raise
        except ChainplannerError as exc:
            raise ContractViolation(f"schema proposal rejected: {exc}") from exc
        out.new_schemas.append(schema)

    seen: set = set()
    for node in raw.get("preconditions", []):
        lit, positive = _response_literal(node, a, reg)
        if (lit, not positive) in seen:
            raise ContractViolation(
                f"response asserts both polarities of {lit.pred}{lit.args}")
        if (lit, positive) not in seen:
            seen.add((lit, positive))
            out.preconditions.append((lit, positive))
    seen = set()
    for node in raw.get("effects", []):
        lit, positive = _response_literal(node, a, reg)
        if (lit, not positive) in seen:
            raise ContractViolation(
                f"response asserts both polarities of {lit.pred}{lit.args}")
        if (lit, positive) not in seen:
            seen.add((lit, positive))
            out.effects.append((lit, positive))

    for key in ("tactic", "technique"):
        node = raw.get(key)
        if node is not None:
            if not isinstance(node, dict) or "id" not in node or "name" not in node:
                raise MalformedResponse(f"bad {key} label: {node!r}")
            setattr(out, key, MitreLabel(str(node["id"]), str(node["name"])))
    return out


# ----------------------------------------------------------- MITRE labeling


@dataclass(frozen=True)
class TaxTechnique:
    id: str
    name: str
    description: str


@dataclass(frozen=True)
class TaxTactic:
    id: str
    name: str
    techniques: tuple[TaxTechnique, ...]


def load_taxonomy(path: str | Path) -> tuple[TaxTactic, ...]:
    doc = json.loads(Path(path).read_text())
    tactics = []
    for t in doc:
        tactics.append(TaxTactic(
            id=str(t["tactic_id"]), name=str(t["tactic_name"]),
            techniques=tuple(
                TaxTechnique(str(x["id"]), str(x["name"]),
                             str(x.get("description", "")))
                for x in t.get("techniques", []))))
    return tuple(tactics)


def _stage(client, a: AttackAction, stage: str, options: list[str]) -> str:
    """One closed-list selection stage with bounded retries; answers are
    matched case-insensitively after stripping."""
    canon = {o.strip().lower(): o for o in options}
    answer = ""
    for attempt in range(MITRE_RETRIES + 1):
        answer = client.choose({
            "action": {"uuid": a.uuid, "name": a.name,
                       "description": a.description},
            "stage": stage, "options": options, "attempt": attempt,
        })
        hit = canon.get(answer.strip().lower())
        if hit is not None:
            return hit
    raise OutOfVocabulary(stage, answer)


def map_mitre(a: AttackAction, taxonomy: tuple[TaxTactic, ...],
              client) -> tuple[MitreLabel, MitreLabel]:
    """Two-stage closed-list labeling: pick a tactic from the full tactic
    list, then a technique from that tactic's own technique list."""
    tactic_name = _stage(client, a, "tactic", [t.name for t in taxonomy])
    tactic = next(t for t in taxonomy if t.name == tactic_name)
    tech_name = _stage(client, a, "technique",
                       [x.name for x in tactic.techniques])
    tech = next(x for x in tactic.techniques if x.name == tech_name)
    return (MitreLabel(tactic.id, tactic.name), MitreLabel(tech.id, tech.name))


# ----------------------------------------------------------------- merging


def _nnf_literal_set(f: fm.Formula) -> set[tuple[fm.Lit, bool]]:
    pairs: set[tuple[fm.Lit, bool]] = set()

    def walk(node: fm.Formula, positive: bool):
        if isinstance(node, fm.Lit):
            pairs.add((node, positive))
        elif isinstance(node, fm.Not):
            walk(node.child, not positive)
        else:
            for c in node.children:
                walk(c, positive)

    walk(f, True)
    return pairs


def _lit_node(lit: fm.Lit, positive: bool) -> fm.Formula:
    return lit if positive else fm.Not(lit)


def merge_annotations(a: AttackAction, rule_part: PartialAnnotation,
                      external_part: AnnotationResponse,
                      warnings: list[str] | None = None) -> AttackAction:
    """Combine record, rule, and external literals into one annotation.

    Precedence on polarity conflicts: record beats external (warned), rules
    beat external (warned); a rule conflicting with the record raises
    UnresolvableConflict. Labels keep the record's values when present,
    else the external proposal's.
    """
    def warn(msg: str):
        if warnings is not None:
            warnings.append(msg)

    record_pre = _nnf_literal_set(a.preconditions)
    record_eff = {(l, p) for l, p in fm.effect_literals(a.effects)}

    def merge(record_set, record_formula, rule_lits, ext_lits, as_effects):
        for lit, positive in rule_lits:
            if (lit, not positive) in record_set:
                raise UnresolvableConflict(
                    f"{a.name}: rule asserts {'' if positive else 'not '}"
                    f"{lit.pred}{lit.args}, record asserts the opposite")
        extras: list[tuple[fm.Lit, bool]] = []
        have = set(record_set)
        for lit, positive in rule_lits:
            if (lit, positive) not in have:
                have.add((lit, positive))
                extras.append((lit, positive))
        for lit, positive in ext_lits:
            if (lit, not positive) in record_set:
                warn(f"{a.name}: dropping external "
                     f"{'' if positive else 'not '}{lit.pred}{lit.args}; "
                     f"record asserts the opposite")
                continue
            if any((lit, not positive) == (rl, rp) for rl, rp in rule_lits):
                warn(f"{a.name}: dropping external "
                     f"{'' if positive else 'not '}{lit.pred}{lit.args}; "
                     f"a rule asserts the opposite")
                continue
            if (lit, positive) not in have:
                have.add((lit, positive))
                extras.append((lit, positive))
        if not extras:
            return record_formula
        extra_nodes = tuple(_lit_node(l, p) for l, p in extras)
        if isinstance(record_formula, fm.And):
            return fm.And(record_formula.children + extra_nodes)
        if record_formula == fm.TRUE:
            return fm.And(extra_nodes)
        return fm.And((record_formula,) + extra_nodes)

    new_pre = merge(record_pre, a.preconditions,
                    rule_part.preconditions, external_part.preconditions, False)
    new_eff = merge(record_eff, a.effects,
                    rule_part.effects, external_part.effects, True)
    return replace(
        a, preconditions=new_pre, effects=new_eff,
        tactic=a.tactic or external_part.tactic,
        technique=a.technique or external_part.technique)


def annotate_catalog(catalog: Catalog, reg: Registry,
                     rules: list[Rule] | None = None,
                     client=None,
                     taxonomy: tuple[TaxTactic, ...] | None = None,
                     strategy: Strategy = Strategy(),
                     warnings: list[str] | None = None) -> Catalog:
    """Run the full annotation pipeline over every action, in uuid order."""
    out = Catalog(source_manifest=list(catalog.source_manifest))
    for a in catalog.sorted_actions():
        rule_part = (apply_rules(a, rules, reg) if rules
                     else PartialAnnotation())
        ext = (annotate_external(a, reg, client, strategy) if client
               else AnnotationResponse())
        merged = merge_annotations(a, rule_part, ext, warnings)
        if client is not None and taxonomy is not None \
                and (merged.tactic is None or merged.technique is None):
            tactic, technique = map_mitre(merged, taxonomy, client)
            merged = replace(merged, tactic=merged.tactic or tactic,
                             technique=merged.technique or technique)
        out.add(merged)
    return out
