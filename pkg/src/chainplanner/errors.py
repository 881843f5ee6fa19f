"""Error types raised across the toolchain.

Every failure that callers are expected to handle is a subclass of
ChainplannerError, so the CLI can map any of them to exit code 1 with a
one-line diagnostic.
"""

from __future__ import annotations


class ChainplannerError(Exception):
    """Base class for all toolchain errors."""


# --- catalog ---------------------------------------------------------------

class MissingField(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing required field: {name}")


class DuplicateParameter(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate parameter: {name}")


class UnboundPlaceholder(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"execution placeholder names no declared parameter: {name}")


class UnknownSemanticType(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown semantic type: {name}")


class EmptyComposite(ChainplannerError):
    def __init__(self) -> None:
        super().__init__("composite binding needs at least one part")


class UnchainableParts(ChainplannerError):
    def __init__(self, index: int, detail: str = ""):
        self.index = index
        msg = f"part {index} cannot chain onto the preceding parts"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# --- aalm ------------------------------------------------------------------

class EmptyName(ChainplannerError):
    def __init__(self) -> None:
        super().__init__("name is empty after normalization")


class ArityConflict(ChainplannerError):
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"schema conflict for predicate {name}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnknownTemplate(ChainplannerError):
    def __init__(self, template_id: str):
        self.template_id = template_id
        super().__init__(f"unknown predicate template: {template_id}")


class EmptyFiller(ChainplannerError):
    def __init__(self) -> None:
        super().__init__("template filler is empty after normalization")


class UnknownPredicate(ChainplannerError):
    def __init__(self, name: str, arity: int | None = None):
        self.name = name
        self.arity = arity
        msg = f"unknown predicate: {name}"
        if arity is not None:
            msg += f"/{arity}"
        super().__init__(msg)


class ArityMismatch(ChainplannerError):
    def __init__(self, name: str, expected: int, got: int):
        self.name = name
        self.expected = expected
        self.got = got
        super().__init__(f"predicate {name} expects {expected} arguments, got {got}")


class TypeMismatch(ChainplannerError):
    def __init__(self, position: int, detail: str = ""):
        self.position = position
        msg = f"argument type mismatch at position {position}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# --- annotator -------------------------------------------------------------

class RuleLiteralInvalid(ChainplannerError):
    def __init__(self, rule: str, literal: str, detail: str = ""):
        self.rule = rule
        self.literal = literal
        msg = f"rule {rule} emits invalid literal {literal}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ClientUnavailable(ChainplannerError):
    def __init__(self, detail: str = ""):
        super().__init__(f"annotator client unavailable{': ' + detail if detail else ''}")


class MalformedResponse(ChainplannerError):
    def __init__(self, detail: str = ""):
        super().__init__(f"malformed annotator response{': ' + detail if detail else ''}")


class ContractViolation(ChainplannerError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"annotator contract violation: {detail}")


class OutOfVocabulary(ChainplannerError):
    def __init__(self, stage: str, answer: str):
        self.stage = stage
        self.answer = answer
        super().__init__(f"{stage} answer not in the offered options: {answer!r}")


class UnresolvableConflict(ChainplannerError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"unresolvable annotation conflict: {detail}")


# --- pddl ------------------------------------------------------------------

class UnannotatedAction(ChainplannerError):
    def __init__(self, uuid: str):
        self.uuid = uuid
        super().__init__(f"action {uuid} has no preconditions/effects to compile")


class UnregisteredSymbol(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"symbol not registered: {name}")


class UnsatisfiableTypeRequest(ChainplannerError):
    def __init__(self, type_name: str):
        self.type_name = type_name
        super().__init__(f"goal needs an object of type {type_name} but its pool is empty")


class ClauseExplosion(ChainplannerError):
    def __init__(self, action: str, clauses: int, bound: int):
        self.action = action
        self.clauses = clauses
        self.bound = bound
        super().__init__(
            f"precondition of {action} expands to {clauses} clauses (bound {bound})"
        )


class PddlSyntaxError(ChainplannerError):
    def __init__(self, line: int, col: int, detail: str):
        self.line = line
        self.col = col
        super().__init__(f"syntax error at {line}:{col}: {detail}")


class UnsupportedConstruct(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unsupported construct: {name}")


class UnknownAction(ChainplannerError):
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"unknown action in plan: {name}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnknownObject(ChainplannerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown object in plan: {name}")


# --- planner ---------------------------------------------------------------

class BindingTypeError(ChainplannerError):
    def __init__(self, detail: str):
        super().__init__(f"binding type error: {detail}")


class Oversize(ChainplannerError):
    def __init__(self, count: int, bound: int):
        self.count = count
        self.bound = bound
        super().__init__(f"grounding produced {count} actions (bound {bound})")


class ResourceExhausted(ChainplannerError):
    def __init__(self, expansions: int, detail: str = ""):
        self.expansions = expansions
        msg = f"search node budget exhausted after {expansions} expansions"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SolverFailed(ChainplannerError):
    def __init__(self, detail: str):
        super().__init__(f"external solver failed: {detail}")


class InvalidExternalPlan(ChainplannerError):
    def __init__(self, detail: str):
        super().__init__(f"external plan rejected: {detail}")


# --- profile ---------------------------------------------------------------

class BadTechniqueId(ChainplannerError):
    def __init__(self, technique_id: str):
        self.technique_id = technique_id
        super().__init__(f"technique id does not match T#### or T####.###: {technique_id!r}")


class EmptyProfile(ChainplannerError):
    def __init__(self) -> None:
        super().__init__("profile has no entries")


class UnlabeledAction(ChainplannerError):
    def __init__(self, uuid: str):
        self.uuid = uuid
        super().__init__(f"action {uuid} has no technique label; annotate it first")


class EndpointUnavailable(ChainplannerError):
    def __init__(self, detail: str = ""):
        super().__init__(f"embedding endpoint unavailable{': ' + detail if detail else ''}")


# --- envmatch --------------------------------------------------------------

class InvalidImage(ChainplannerError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"invalid environment image: {detail}")


class UnregistrableSoftwareName(ChainplannerError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"software name cannot be normalized into a predicate: {raw!r}")


# --- validator -------------------------------------------------------------

class UnknownUuid(ChainplannerError):
    def __init__(self, uuid: str):
        self.uuid = uuid
        super().__init__(f"plan step references a uuid absent from the catalog: {uuid}")
