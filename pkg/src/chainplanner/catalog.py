"""Attack-action records: parsing, validation, composition, serialization.

One catalog file holds a list of action entries. Field names and the formula
tree encoding are documented in `parse_action_record`. Records are immutable
after construction; annotation produces new records via `dataclasses.replace`.
"""

from __future__ import annotations

import hashlib
import re
import uuid as uuidlib
from dataclasses import dataclass, field, replace

import yaml

from . import formulas as fm
from .aalm import Registry, normalize_name
from .errors import (
    DuplicateParameter,
    EmptyComposite,
    MissingField,
    UnboundPlaceholder,
    UnchainableParts,
    UnknownSemanticType,
)

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
PLATFORMS = ("windows", "linux", "macos")

# Open vocabulary: anything else is accepted with a warning.
KNOWN_EXECUTORS = frozenset({
    "bash", "sh", "cmd", "command_prompt", "powershell", "sliver",
    "meterpreter", "msfconsole", "user", "manual", "ssh",
})

COMPOSITE_NAMESPACE = uuidlib.UUID("6c3e77c5-8c2b-4e7a-9a93-1fb0e34cbd5a")


@dataclass(frozen=True)
class MitreLabel:
    id: str
    name: str


@dataclass(frozen=True)
class AttackAction:
    uuid: str
    name: str
    description: str
    source: str
    platforms: frozenset[str]
    executor: str
    execution: str
    parameters: tuple[tuple[str, str], ...]  # (name, semantic type), ordered
    preconditions: fm.Formula
    effects: fm.Formula
    tactic: MitreLabel | None = None
    technique: MitreLabel | None = None
    reward: float = 0.0
    extras: tuple[tuple[str, object], ...] = ()

    @property
    def param_env(self) -> dict[str, str]:
        return dict(self.parameters)

    @property
    def pddl_name(self) -> str:
        return normalize_name(self.name)


@dataclass
class Catalog:
    actions: dict[str, AttackAction] = field(default_factory=dict)
    source_manifest: list[dict] = field(default_factory=list)

    def add(self, a: AttackAction) -> None:
        if a.uuid in self.actions:
            raise MissingField(f"uuid (duplicate: {a.uuid})")
        self.actions[a.uuid] = a

    def sorted_actions(self) -> list[AttackAction]:
        return [self.actions[k] for k in sorted(self.actions)]


KNOWN_FIELDS = {
    "uuid", "name", "description", "source", "platforms", "tactic", "technique",
    "executor", "execution", "parameters", "preconditions", "effects", "reward",
}


def parse_action_record(record: dict, reg: Registry,
                        warnings: list[str] | None = None) -> AttackAction:
    """Build a validated AttackAction from one catalog entry.

    Required keys: uuid, name, description, source, platforms, executor,
    execution, parameters. preconditions/effects default to empty
    conjunctions; tactic/technique/reward are optional. Unknown keys are
    preserved in `extras` and reported through `warnings`.

    Predicate names are canonicalized (alias spellings resolved); literals
    naming predicates absent from the registry are auto-registered so the
    ingest step can report registry growth.
    """
    for key in ("uuid", "name", "description", "source", "platforms",
                "executor", "execution", "parameters"):
        if key not in record or record[key] in (None, "", []):
            # description may legitimately be empty text; everything else not
            if key == "description" and record.get(key) == "":
                continue
            raise MissingField(key)

    params: list[tuple[str, str]] = []
    seen: set[str] = set()
    for p in record["parameters"]:
        pname, ptype = p["name"], p["type"]
        if pname in seen:
            raise DuplicateParameter(pname)
        seen.add(pname)
        if ptype not in reg.types:
            raise UnknownSemanticType(ptype)
        params.append((pname, ptype))
    env = dict(params)

    execution = record["execution"]
    for ph in PLACEHOLDER_RE.findall(execution):
        if ph not in env:
            raise UnboundPlaceholder(ph)

    platforms = frozenset(str(p).lower() for p in record["platforms"])
    unknown_platforms = platforms - set(PLATFORMS)
    if unknown_platforms:
        raise MissingField(f"platforms (unknown: {sorted(unknown_platforms)})")

    def load_formula(key: str, allow_or: bool) -> fm.Formula:
        node = record.get(key)
        if node is None:
            return fm.TRUE
        f = fm.from_dict(node, allow_or=allow_or)
        return canonicalize_formula(f, reg, env)

    pre = load_formula("preconditions", allow_or=True)
    eff = load_formula("effects", allow_or=False)
    fm.effect_literals(eff)  # raises if the shape is wrong

    for lit in set(fm.literals(pre)) | set(fm.literals(eff)):
        for arg in lit.args:
            if arg not in env:
                raise MissingField(
                    f"parameters (literal {lit.pred} references undeclared {arg!r})")
        if reg.lookup(lit.pred, len(lit.args)) is None:
            reg.auto_register(lit, env)
        reg.validate_literal(lit, env)

    def label(key: str) -> MitreLabel | None:
        node = record.get(key)
        if node is None:
            return None
        return MitreLabel(str(node["id"]), str(node["name"]))

    extras = tuple(sorted((k, record[k]) for k in record if k not in KNOWN_FIELDS))
    if extras and warnings is not None:
        warnings.append(
            f"action {record['uuid']}: unknown fields preserved: "
            f"{', '.join(k for k, _ in extras)}")

    executor = str(record["executor"]).lower()
    if executor not in KNOWN_EXECUTORS and warnings is not None:
        warnings.append(f"action {record['uuid']}: unknown executor {executor!r} accepted")

    return AttackAction(
        uuid=str(record["uuid"]),
        name=str(record["name"]),
        description=str(record.get("description", "")),
        source=str(record["source"]),
        platforms=platforms,
        executor=str(record["executor"]),
        execution=str(execution),
        parameters=tuple(params),
        preconditions=pre,
        effects=eff,
        tactic=label("tactic"),
        technique=label("technique"),
        reward=float(record.get("reward", 0.0)),
        extras=extras,
    )


def canonicalize_formula(f: fm.Formula, reg: Registry, env: dict[str, str]) -> fm.Formula:
    """Resolve alias predicate spellings throughout a formula."""
    if isinstance(f, fm.Lit):
        return fm.Lit(reg.canonical_name(f.pred), f.args)
    if isinstance(f, fm.Not):
        return fm.Not(canonicalize_formula(f.child, reg, env))
    if isinstance(f, fm.And):
        return fm.And(tuple(canonicalize_formula(c, reg, env) for c in f.children))
    return fm.Or(tuple(canonicalize_formula(c, reg, env) for c in f.children))


def action_to_dict(a: AttackAction) -> dict:
    d: dict = {
        "uuid": a.uuid,
        "name": a.name,
        "description": a.description,
        "source": a.source,
        "platforms": sorted(a.platforms),
        "executor": a.executor,
        "execution": a.execution,
        "parameters": [{"name": n, "type": t} for n, t in a.parameters],
    }
    if a.tactic:
        d["tactic"] = {"id": a.tactic.id, "name": a.tactic.name}
    if a.technique:
        d["technique"] = {"id": a.technique.id, "name": a.technique.name}
    d["preconditions"] = fm.to_dict(a.preconditions)
    d["effects"] = fm.to_dict(a.effects)
    if a.reward:
        d["reward"] = a.reward
    for k, v in a.extras:
        d[k] = v
    return d


def serialize_catalog(c: Catalog) -> str:
    doc = {
        "actions": [action_to_dict(a) for a in c.sorted_actions()],
    }
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, width=100)


def parse_catalog(text: str, reg: Registry, source_name: str = "<memory>",
                  warnings: list[str] | None = None) -> Catalog:
    doc = yaml.safe_load(text) or {}
    cat = Catalog()
    for record in doc.get("actions", []):
        cat.add(parse_action_record(record, reg, warnings=warnings))
    cat.source_manifest.append({
        "file": source_name,
        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "actions": len(doc.get("actions", [])),
    })
    return cat


def load_catalog(paths, reg: Registry, warnings: list[str] | None = None) -> Catalog:
    """Ingest one or more catalog files. Order-independent by construction:
    entries merge into a uuid-keyed map and serialization sorts by uuid."""
    merged = Catalog()
    for path in sorted(str(p) for p in paths):
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        part = parse_catalog(text, reg, source_name=path, warnings=warnings)
        for a in part.sorted_actions():
            merged.add(a)
        merged.source_manifest.extend(part.source_manifest)
    return merged


# --- composite binding -------------------------------------------------------

def bind_composite(parts: list[AttackAction], name: str) -> AttackAction:
    """Bind an ordered action sequence into one larger action.

    Three-valued simulation over the parts' literals: same-named parameters
    unify across parts. A precondition literal is external (kept on the
    composite) unless an earlier part's effects established it; a literal
    contradicted by an earlier delete effect that no later effect re-adds
    fails the binding. Platforms intersect; executions concatenate.
    """
    if not parts:
        raise EmptyComposite()
    if len(parts) == 1:
        return replace(parts[0], name=name)

    # unified parameter environment; same name must mean same type
    env: dict[str, str] = {}
    order: list[tuple[str, str]] = []
    for idx, part in enumerate(parts):
        for pname, ptype in part.parameters:
            if pname in env:
                if env[pname] != ptype:
                    raise UnchainableParts(
                        idx, f"parameter {pname} is {env[pname]} earlier but {ptype} here")
            else:
                env[pname] = ptype
                order.append((pname, ptype))

    produced: set[fm.Lit] = set()
    deleted: set[fm.Lit] = set()
    external: list[fm.Formula] = []

    def keep_external(f: fm.Formula) -> None:
        if f not in external:
            external.append(f)

    for idx, part in enumerate(parts):
        for c in fm.conjuncts(fm.to_nnf(part.preconditions)):
            if isinstance(c, fm.Lit):
                if c in produced:
                    continue
                if c in deleted:
                    raise UnchainableParts(
                        idx, f"{c.pred}({', '.join(c.args)}) was deleted earlier")
                keep_external(c)
            elif isinstance(c, fm.Not) and isinstance(c.child, fm.Lit):
                if c.child in produced:
                    raise UnchainableParts(
                        idx, f"needs not {c.child.pred} but an earlier part added it")
                if c.child in deleted:
                    continue
                keep_external(c)
            elif isinstance(c, fm.Or):
                if any(isinstance(d, fm.Lit) and d in produced for d in c.children):
                    continue
                keep_external(c)
            else:
                keep_external(c)
        for lit, positive in fm.effect_literals(part.effects):
            if positive:
                produced.add(lit)
                deleted.discard(lit)
            else:
                deleted.add(lit)
                produced.discard(lit)

    platforms = frozenset.intersection(*(p.platforms for p in parts))
    if not platforms:
        raise UnchainableParts(len(parts) - 1, "platform intersection is empty")

    net_effects: list[fm.Formula] = [fm.Lit(l.pred, l.args) for l in sorted(
        produced, key=lambda l: (l.pred, l.args))]
    net_effects += [fm.Not(fm.Lit(l.pred, l.args)) for l in sorted(
        deleted, key=lambda l: (l.pred, l.args))]

    return AttackAction(
        uuid=_composite_uuid([p.uuid for p in parts]),
        name=name,
        description=" then ".join(p.name for p in parts),
        source=parts[0].source,
        platforms=platforms,
        executor=parts[0].executor,
        execution="\n".join(p.execution for p in parts),
        parameters=tuple(order),
        preconditions=fm.conj(external) if external else fm.TRUE,
        effects=fm.And(tuple(net_effects)),
        tactic=parts[-1].tactic,
        technique=parts[-1].technique,
        reward=sum(p.reward for p in parts),
    )


def _composite_uuid(part_uuids: list[str]) -> str:
    return str(uuidlib.uuid5(COMPOSITE_NAMESPACE, "|".join(part_uuids)))
