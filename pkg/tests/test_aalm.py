"""Linking-model registry: normalization, registration, templates, typing.

The seed-count constants below were fixed by hand-enumerating the shipped
seed data: 38 concrete predicate schemas across the nine dimensions plus
"other", and 9 one-hole templates.
"""

import pytest
from hypothesis import given, settings, strategies as st

from chainplanner import aalm
from chainplanner.errors import (
    ArityConflict,
    ArityMismatch,
    EmptyFiller,
    EmptyName,
    TypeMismatch,
    UnknownPredicate,
    UnknownTemplate,
)
from chainplanner.formulas import Lit

SEED_SCHEMA_COUNT = 38
SEED_TEMPLATE_COUNT = 9

SEED_DIMENSION_COUNTS = {
    "environment": 5,
    "executor": 6,
    "payload": 8,
    "process": 2,
    "file": 9,
    "user": 2,
    "credential": 2,
    "information": 2,
    "data": 1,
    "other": 1,
}


class TestNormalizeName:
    def test_lowercases(self):
        assert aalm.normalize_name("OS_windows") == "os_windows"

    def test_whitespace_to_underscores(self):
        assert aalm.normalize_name("command prompt exectuor") == "command_prompt_exectuor"

    def test_slashes_and_collapse(self):
        assert aalm.normalize_name("a  b//c") == "a_b_c"

    def test_empty(self):
        with pytest.raises(EmptyName):
            aalm.normalize_name("   ")

    @settings(max_examples=300, deadline=None)
    @given(st.text(min_size=1).filter(lambda s: s.strip().strip("_/\\ \t\n")))
    def test_idempotent(self, raw):
        once = aalm.normalize_name(raw)
        assert aalm.normalize_name(once) == once


@pytest.fixture()
def seed():
    return aalm.seed_registry()


class TestSeed:
    def test_counts(self, seed):
        assert len(seed.schemas) == SEED_SCHEMA_COUNT
        assert len(seed.templates) == SEED_TEMPLATE_COUNT

    def test_dimension_counts(self, seed):
        got: dict[str, int] = {}
        for s in seed.schemas.values():
            got[s.dimension] = got.get(s.dimension, 0) + 1
        assert got == SEED_DIMENSION_COUNTS

    def test_verbatim_spellings_present(self, seed):
        assert seed.lookup("powershell_exectuor", 2) is not None
        assert seed.lookup("command_prompt_exectuor", 2) is not None
        assert seed.lookup("bash_exectuor", 2) is not None

    def test_alias_resolution(self, seed):
        assert seed.lookup("powershell_executor", 2).name == "powershell_exectuor"

    def test_all_nine_dimensions_plus_other(self, seed):
        assert {s.dimension for s in seed.schemas.values()} == set(SEED_DIMENSION_COUNTS)

    def test_type_hierarchy_rooted(self, seed):
        for t in seed.types.values():
            assert seed.is_subtype(t.name, "object")

    def test_session_specializes_executor(self, seed):
        assert seed.is_subtype("session", "executor")
        assert not seed.is_subtype("executor", "session")


class TestRegister:
    def test_idempotent(self, seed):
        schema = aalm.PredicateSchema("os_windows", "environment", ("host",))
        before = dict(seed.schemas)
        seed.register(schema)
        seed.register(schema)
        assert seed.schemas.keys() == before.keys()

    def test_arity_conflict_same_key(self, seed):
        seed.register(aalm.PredicateSchema("payload_executed_twice", "payload",
                                           ("payload", "host")))
        with pytest.raises(ArityConflict):
            seed.register(aalm.PredicateSchema("payload_executed_twice", "payload",
                                               ("payload", "payload")))

    def test_distinct_arities_coexist(self, seed):
        # same concept at two arities is two schemas, not a conflict
        seed.register(aalm.PredicateSchema("payload_staged", "payload", ("payload",)))
        seed.register(aalm.PredicateSchema("payload_staged", "payload", ("payload", "host")))
        assert seed.lookup("payload_staged", 1) is not None
        assert seed.lookup("payload_staged", 2) is not None


class TestTemplates:
    def test_cve_example(self, seed):
        s = seed.instantiate_template("cve_exists", "CVE-2004-2687")
        assert s.name == "cve-2004-2687_exists"
        assert s.params == ("host",)
        assert s.dimension == "environment"

    def test_software_example(self, seed):
        s = seed.instantiate_template("software_running", "MS word")
        assert s.name == "ms_word_exists"
        assert s.params == ("host",)

    def test_deterministic(self, seed):
        a = seed.instantiate_template("password_known", "vnc")
        b = seed.instantiate_template("password_known", "vnc")
        assert a == b and a.name == "vnc_password_known"

    def test_unknown_template(self, seed):
        with pytest.raises(UnknownTemplate):
            seed.instantiate_template("nope", "x")

    def test_empty_filler(self, seed):
        with pytest.raises(EmptyFiller):
            seed.instantiate_template("cve_exists", "  /")


class TestValidateLiteral:
    ENV = {"psh": "executor", "t": "host", "u": "user", "s": "session"}

    def test_ok(self, seed):
        lit = Lit("powershell_executor", ("psh", "t"))
        schema = seed.validate_literal(lit, self.ENV)
        assert schema.name == "powershell_exectuor"

    def test_type_mismatch_position(self, seed):
        with pytest.raises(TypeMismatch) as exc:
            seed.validate_literal(Lit("os_windows", ("u",)), self.ENV)
        assert exc.value.position == 0

    def test_subtype_accepted(self, seed):
        # session is a subtype of executor, so it fits executor slots
        seed.validate_literal(Lit("sliver_session", ("s", "t")), self.ENV)

    def test_arity_mismatch(self, seed):
        with pytest.raises(ArityMismatch):
            seed.validate_literal(Lit("os_windows", ("t", "t")), self.ENV)

    def test_unknown_predicate(self, seed):
        with pytest.raises(UnknownPredicate):
            seed.validate_literal(Lit("quantum_flux", ("t",)), self.ENV)


class TestAutoRegister:
    def test_template_match_cve(self, seed):
        s = seed.auto_register(Lit("cve-2017-0144_exists", ("t",)), {"t": "host"})
        assert s.dimension == "environment" and s.template_of == "cve_exists"

    def test_template_match_software_not_cve(self, seed):
        s = seed.auto_register(Lit("nginx_exists", ("t",)), {"t": "host"})
        assert s.template_of == "software_running"

    def test_no_template_goes_to_other(self, seed):
        s = seed.auto_register(Lit("email_address_known", ("a", "t")),
                               {"a": "account", "t": "host"})
        assert s.dimension == "other" and s.params == ("account", "host")

    def test_growth_report(self, seed):
        before = seed.snapshot()
        seed.auto_register(Lit("screenshot_data_deleted", ("t",)), {"t": "host"})
        report = aalm.growth_report(before, seed)
        assert report["new_predicates"] == [{
            "name": "screenshot_data_deleted", "arity": 1, "dimension": "data",
            "template_of": "data_deleted",
        }]


def test_registry_file_round_trip(tmp_path, seed):
    seed.instantiate_template("cve_exists", "CVE-2017-0144")
    path = tmp_path / "registry.yaml"
    aalm.save_registry(seed, path)
    again = aalm.load_registry(path)
    assert again.schemas == seed.schemas
    assert again.templates == seed.templates
    assert again.types == seed.types
