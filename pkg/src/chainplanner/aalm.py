"""Attack action linking model: typed predicate schemas and templates.

The registry holds semantic types (a single-inheritance hierarchy rooted at
"object"), predicate schemas keyed by (name, arity), and one-hole templates
that mint families of schemas (CVE existence, software presence, credential
knowledge, ...). The seed registry shipped as package data covers nine
dimensions plus "other"; a handful of historically misspelled names are kept
verbatim there, with corrected spellings accepted as aliases.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .errors import (
    ArityConflict,
    ChainplannerError,
    ArityMismatch,
    EmptyFiller,
    EmptyName,
    TypeMismatch,
    UnknownPredicate,
    UnknownSemanticType,
    UnknownTemplate,
)
from .formulas import Lit

NAME_RE = re.compile(r"^[a-z0-9_.-]+$")

DIMENSIONS = (
    "environment",
    "executor",
    "payload",
    "file",
    "process",
    "user",
    "credential",
    "information",
    "data",
    "other",
)

# Corrected spellings tolerated on input; values are the canonical names.
ALIASES = {
    "powershell_executor": "powershell_exectuor",
    "command_prompt_executor": "command_prompt_exectuor",
    "bash_executor": "bash_exectuor",
}


def normalize_name(raw: str) -> str:
    """Lowercase; whitespace and slashes become underscores; runs collapse.

    Idempotent. Raises EmptyName when nothing survives. Validity against
    NAME_RE is the schema constructor's job, not this function's.
    """
    s = re.sub(r"[\s/\\]+", "_", raw.strip().lower())
    s = re.sub(r"_+", "_", s).strip("_")
    if not s:
        raise EmptyName()
    return s


@dataclass(frozen=True)
class SemanticType:
    name: str
    parent: str | None = "object"


@dataclass(frozen=True)
class PredicateSchema:
    name: str
    dimension: str
    params: tuple[str, ...]
    template_of: str | None = None
    doc: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise EmptyName()
        if not NAME_RE.match(self.name):
            raise ChainplannerError(f"invalid predicate name: {self.name!r}")
        if self.dimension not in DIMENSIONS:
            raise ChainplannerError(
                f"unknown dimension {self.dimension!r} for predicate {self.name}"
            )

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class PredicateTemplate:
    id: str
    pattern: str  # exactly one {hole}
    params: tuple[str, ...]
    dimension: str
    doc: str = ""

    def __post_init__(self) -> None:
        if len(re.findall(r"\{[a-z_]+\}", self.pattern)) != 1:
            raise UnknownTemplate(f"{self.id}: pattern must have exactly one hole")

    def fill(self, filler: str) -> str:
        hole = re.search(r"\{[a-z_]+\}", self.pattern).group(0)
        return normalize_name(self.pattern.replace(hole, normalize_name(filler)))

    def matches(self, name: str) -> str | None:
        """Return the hole filler when `name` fits the pattern, else None."""
        hole = re.search(r"\{[a-z_]+\}", self.pattern).group(0)
        prefix, suffix = self.pattern.split(hole)
        if len(name) <= len(prefix) + len(suffix):
            return None
        if name.startswith(prefix) and name.endswith(suffix):
            return name[len(prefix):len(name) - len(suffix)] if suffix else name[len(prefix):]
        return None


CVE_FILLER_RE = re.compile(r"^cve-\d{4}-\d+$")


@dataclass
class Registry:
    types: dict[str, SemanticType] = field(default_factory=dict)
    schemas: dict[tuple[str, int], PredicateSchema] = field(default_factory=dict)
    templates: dict[str, PredicateTemplate] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.types.setdefault("object", SemanticType("object", None))

    # --- types ---------------------------------------------------------

    def add_type(self, t: SemanticType) -> None:
        if t.parent is not None and t.parent not in self.types:
            raise UnknownSemanticType(t.parent)
        existing = self.types.get(t.name)
        if existing is not None and existing != t:
            raise UnknownSemanticType(f"{t.name} redefined with a different parent")
        self.types[t.name] = t

    def is_subtype(self, sub: str, sup: str) -> bool:
        cur: str | None = sub
        while cur is not None:
            if cur == sup:
                return True
            t = self.types.get(cur)
            cur = t.parent if t else None
        return False

    # --- schemas -------------------------------------------------------

    def register(self, schema: PredicateSchema) -> PredicateSchema:
        """Add a schema; identical re-registration is a no-op.

        Same name with a different arity is fine (distinct key); same
        (name, arity) with different params or dimension is an ArityConflict.
        """
        for p in schema.params:
            if p not in self.types:
                raise UnknownSemanticType(p)
        key = (schema.name, schema.arity)
        existing = self.schemas.get(key)
        if existing is not None:
            if existing.params != schema.params or existing.dimension != schema.dimension:
                raise ArityConflict(
                    schema.name,
                    f"registered as {existing.params}/{existing.dimension}, "
                    f"got {schema.params}/{schema.dimension}",
                )
            return existing
        self.schemas[key] = schema
        return schema

    def instantiate_template(self, template_id: str, filler: str) -> PredicateSchema:
        tpl = self.templates.get(template_id)
        if tpl is None:
            raise UnknownTemplate(template_id)
        try:
            name = tpl.fill(filler)
        except EmptyName:
            raise EmptyFiller() from None
        schema = PredicateSchema(
            name=name,
            dimension=tpl.dimension,
            params=tpl.params,
            template_of=template_id,
            doc=tpl.doc,
        )
        return self.register(schema)

    def canonical_name(self, raw: str) -> str:
        name = normalize_name(raw)
        return ALIASES.get(name, name)

    def lookup(self, name: str, arity: int) -> PredicateSchema | None:
        return self.schemas.get((self.canonical_name(name), arity))

    def lookup_any_arity(self, name: str) -> list[PredicateSchema]:
        canon = self.canonical_name(name)
        return [s for (n, _), s in sorted(self.schemas.items()) if n == canon]

    def validate_literal(self, lit: Lit, param_env: dict[str, str]) -> PredicateSchema:
        """Check a literal against the registry in a parameter environment.

        param_env maps parameter names to semantic type names. Arguments may
        also be names in param_env's absence when they are object constants;
        the caller passes an env covering whatever the literal can mention.
        """
        canon = self.canonical_name(lit.pred)
        candidates = self.lookup_any_arity(canon)
        if not candidates:
            raise UnknownPredicate(lit.pred)
        schema = self.schemas.get((canon, len(lit.args)))
        if schema is None:
            raise ArityMismatch(canon, candidates[0].arity, len(lit.args))
        for i, (arg, want) in enumerate(zip(lit.args, schema.params)):
            got = param_env.get(arg)
            if got is None:
                raise TypeMismatch(i, f"argument {arg!r} is not a declared parameter")
            if not self.is_subtype(got, want):
                raise TypeMismatch(i, f"{arg}: {got} is not a subtype of {want}")
        return schema

    def match_template(self, name: str,
                       arg_types: tuple[str, ...]) -> "PredicateTemplate | None":
        """The template whose pattern and param types claim this name, if any.
        cve_exists only claims CVE-shaped fillers, so it never shadows the
        software template (and vice versa)."""
        name = self.canonical_name(name)
        for tpl in self.templates.values():
            filler = tpl.matches(name)
            if filler is None:
                continue
            if tpl.id == "cve_exists" and not CVE_FILLER_RE.match(filler):
                continue
            if tpl.id == "software_running" and CVE_FILLER_RE.match(filler):
                continue
            if tpl.params != arg_types:
                continue
            return tpl
        return None

    def auto_register(self, lit: Lit, param_env: dict[str, str]) -> PredicateSchema:
        """Register an unknown predicate inferred from a catalog literal.

        A template whose pattern matches the name (and whose params fit the
        literal's argument types) supplies the dimension; otherwise the schema
        lands in "other" with params taken from the argument environment.
        """
        name = self.canonical_name(lit.pred)
        arg_types = tuple(param_env[a] for a in lit.args)
        tpl = self.match_template(name, arg_types)
        if tpl is not None:
            return self.register(
                PredicateSchema(name, tpl.dimension, tpl.params, template_of=tpl.id, doc=tpl.doc)
            )
        return self.register(PredicateSchema(name, "other", arg_types))

    def snapshot(self) -> "Registry":
        return Registry(dict(self.types), dict(self.schemas), dict(self.templates))


# --- registry file handling --------------------------------------------------


def registry_to_dict(reg: Registry) -> dict:
    return {
        "types": [
            {"name": t.name, "parent": t.parent}
            for t in sorted(reg.types.values(), key=lambda t: t.name)
            if t.name != "object"
        ],
        "predicates": [
            {
                "name": s.name,
                "dimension": s.dimension,
                "params": list(s.params),
                **({"template_of": s.template_of} if s.template_of else {}),
                "doc": s.doc,
            }
            for _, s in sorted(reg.schemas.items())
        ],
        "templates": [
            {
                "id": t.id,
                "pattern": t.pattern,
                "params": list(t.params),
                "dimension": t.dimension,
                "doc": t.doc,
            }
            for t in sorted(reg.templates.values(), key=lambda t: t.id)
        ],
    }


def registry_from_dict(doc: dict) -> Registry:
    reg = Registry()
    pending = [
        SemanticType(d["name"], d.get("parent", "object")) for d in doc.get("types", [])
    ]
    # parents may be declared after children in the file
    while pending:
        progressed = False
        rest = []
        for t in pending:
            if t.parent is None or t.parent in reg.types:
                reg.add_type(t)
                progressed = True
            else:
                rest.append(t)
        if not progressed:
            raise UnknownSemanticType(rest[0].parent or "")
        pending = rest
    for d in doc.get("templates", []):
        tpl = PredicateTemplate(
            id=d["id"],
            pattern=d["pattern"],
            params=tuple(d["params"]),
            dimension=d["dimension"],
            doc=d.get("doc", ""),
        )
        reg.templates[tpl.id] = tpl
    for d in doc.get("predicates", []):
        reg.register(
            PredicateSchema(
                name=d["name"],
                dimension=d["dimension"],
                params=tuple(d["params"]),
                template_of=d.get("template_of"),
                doc=d.get("doc", ""),
            )
        )
    return reg


def save_registry(reg: Registry, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(registry_to_dict(reg), fh, sort_keys=False, allow_unicode=True)


def load_registry(path) -> Registry:
    with open(path, encoding="utf-8") as fh:
        return registry_from_dict(yaml.safe_load(fh))


def seed_registry() -> Registry:
    """The shipped linking-model seed (nine dimensions plus other)."""
    text = resources.files("chainplanner.data").joinpath("registry_seed.yaml").read_text()
    return registry_from_dict(yaml.safe_load(text))


def growth_report(before: Registry, after: Registry) -> dict:
    """What a pipeline step added to the registry."""
    new_schemas = [
        {"name": s.name, "arity": s.arity, "dimension": s.dimension,
         **({"template_of": s.template_of} if s.template_of else {})}
        for key, s in sorted(after.schemas.items())
        if key not in before.schemas
    ]
    new_types = sorted(set(after.types) - set(before.types))
    return {"new_predicates": new_schemas, "new_types": new_types}


def describe_schema(s: PredicateSchema) -> str:
    return f"({s.name} {' '.join('?' + p for p in s.params)})" if s.params else f"({s.name})"


__all__ = [
    "ALIASES",
    "DIMENSIONS",
    "PredicateSchema",
    "PredicateTemplate",
    "Registry",
    "SemanticType",
    "describe_schema",
    "growth_report",
    "load_registry",
    "normalize_name",
    "registry_from_dict",
    "registry_to_dict",
    "save_registry",
    "seed_registry",
]
