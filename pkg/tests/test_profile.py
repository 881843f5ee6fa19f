"""TTP profile ingestion, similarity, and reward assignment tests."""

import json
import random
import string

import pytest

from chainplanner import formulas as fm
from chainplanner.catalog import AttackAction, Catalog, MitreLabel
from chainplanner.errors import (
    BadTechniqueId,
    EmptyProfile,
    EndpointUnavailable,
    UnlabeledAction,
)
from chainplanner.profile import (
    EmbeddingCache,
    ProfileEntry,
    TtpProfile,
    compute_reward,
    compute_rewards,
    cosine,
    embed_external,
    ingest_profile,
    load_profile,
    make_similarity,
    profile_from_dict,
    profile_to_dict,
    random_rewards,
    tf_cosine,
    tokenize,
)

# hand brute-force: vectors {bypass,user,account,control} (norm 2) and
# {bypass,uac,user,account,control} (norm sqrt 5) share 4 unit terms, so
# the cosine is 4 / (2 * sqrt 5) = 2 / sqrt 5
GOLDEN_A = "bypass user account control"
GOLDEN_B = "bypass UAC user account control"
GOLDEN_VALUE = 0.8944271909999159


def action(uuid="u-1", description="run a scan", technique=("T1046", "scan")):
    return AttackAction(
        uuid=uuid, name="act", description=description, source="unit",
        platforms=frozenset({"linux"}), executor="bash", execution="true",
        parameters=(("t", "host"),), preconditions=fm.TRUE, effects=fm.TRUE,
        technique=MitreLabel(*technique) if technique else None)


def profile(*entries):
    return TtpProfile(group_name="g", source="unit",
                      entries=tuple(ProfileEntry(*e) for e in entries))


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("Bypass UAC, now!") == ["bypass", "uac", "now"]

    def test_alnum_runs_only(self):
        assert tokenize("T1548.002_x") == ["t1548", "002", "x"]

    def test_empty(self):
        assert tokenize("...") == []


class TestTfCosine:
    def test_identity(self):
        for text in ("scan", "Bypass User Account Control",
                     "run; the -- same! text"):
            assert tf_cosine(text, text) == 1.0

    def test_disjoint_tokens(self):
        assert tf_cosine("alpha beta", "gamma delta") == 0.0

    def test_empty_is_zero(self):
        assert tf_cosine("", "anything") == 0.0
        assert tf_cosine("anything", "") == 0.0
        assert tf_cosine("", "") == 0.0
        assert tf_cosine("!!!", "anything") == 0.0

    def test_golden_pair(self):
        assert abs(tf_cosine(GOLDEN_A, GOLDEN_B) - GOLDEN_VALUE) < 1e-9
        assert abs(tf_cosine(GOLDEN_B, GOLDEN_A) - GOLDEN_VALUE) < 1e-9

    def test_case_insensitive(self):
        assert tf_cosine("SCAN THE HOST", "scan the host") == 1.0

    def test_term_frequency_matters(self):
        # {a:2, b:1} vs {a:1, b:1}: 3 / (sqrt 5 * sqrt 2)
        expected = 3 / (5 ** 0.5 * 2 ** 0.5)
        assert abs(tf_cosine("a a b", "a b") - expected) < 1e-12

    def test_symmetry_and_range_random_pairs(self):
        rng = random.Random(920)
        vocab = ["scan", "host", "bypass", "uac", "dump", "creds", "x1"]
        for _ in range(2000):
            a = " ".join(rng.choices(vocab, k=rng.randint(0, 6)))
            b = " ".join(rng.choices(vocab, k=rng.randint(0, 6)))
            s = tf_cosine(a, b)
            assert s == tf_cosine(b, a)
            assert 0.0 <= s <= 1.0 + 1e-12


class TestIngestProfile:
    def doc(self):
        return {
            "group_name": "FIN0", "source": "report.pdf",
            "entries": [
                {"technique_id": "T1059", "tactic_id": "TA0002",
                 "description": "command and scripting interpreter"},
                {"technique_id": "T1548.002", "tactic_id": "TA0004",
                 "description": "bypass user account control"},
            ],
        }

    def test_valid(self):
        p = ingest_profile(self.doc())
        assert p.group_name == "FIN0"
        assert len(p.entries) == 2
        assert p.entries[1].technique_id == "T1548.002"

    def test_bad_ids_rejected(self):
        for bad in ("T105", "T12345", "t1059", "1059", "T1059.1",
                    "T1059.0021", ""):
            doc = self.doc()
            doc["entries"][0]["technique_id"] = bad
            with pytest.raises(BadTechniqueId):
                ingest_profile(doc)

    def test_empty_profile_rejected(self):
        with pytest.raises(EmptyProfile):
            ingest_profile({"group_name": "g", "entries": []})
        with pytest.raises(EmptyProfile):
            ingest_profile({"group_name": "g"})

    def test_duplicate_technique_ids_kept(self):
        doc = self.doc()
        doc["entries"].append(dict(doc["entries"][0], description="other"))
        p = ingest_profile(doc)
        assert len(p.entries) == 3

    def test_round_trip(self):
        p = ingest_profile(self.doc())
        assert profile_from_dict(profile_to_dict(p)) == p

    def test_load_profile(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(self.doc()))
        assert load_profile(path) == ingest_profile(self.doc())


class TestComputeReward:
    def test_exact_id_gating(self):
        p = profile(("T1548", "TA0004", "bypass user account control"))
        a = action(description="bypass user account control",
                   technique=("T1046", "scan"))
        assert compute_reward(a, p) == 0.0

    def test_no_subtechnique_widening(self):
        p = profile(("T1548.002", "TA0004", "bypass user account control"))
        a = action(description="bypass user account control",
                   technique=("T1548", "abuse"))
        assert compute_reward(a, p) == 0.0

    def test_matching_id_uses_similarity(self):
        p = profile(("T1046", "TA0007", GOLDEN_B))
        a = action(description=GOLDEN_A)
        assert abs(compute_reward(a, p) - GOLDEN_VALUE) < 1e-9

    def test_max_over_matching_entries(self):
        p = profile(
            ("T1046", "TA0007", "totally unrelated words"),
            ("T1046", "TA0007", GOLDEN_B),
            ("T1046", "TA0007", GOLDEN_A),
        )
        a = action(description=GOLDEN_A)
        assert compute_reward(a, p) == 1.0

    def test_match_with_disjoint_description(self):
        p = profile(("T1046", "TA0007", "zzz yyy"))
        a = action(description="scan the host")
        assert compute_reward(a, p) == 0.0

    def test_unlabeled_action(self):
        p = profile(("T1046", "TA0007", "x"))
        with pytest.raises(UnlabeledAction):
            compute_reward(action(technique=None), p)

    def test_compute_rewards_keys(self):
        c = Catalog()
        c.add(action(uuid="u-b", description=GOLDEN_A))
        c.add(action(uuid="u-a", description="unrelated"))
        p = profile(("T1046", "TA0007", GOLDEN_A))
        rewards = compute_rewards(c, p)
        assert set(rewards) == {"u-a", "u-b"}
        assert rewards["u-b"] == 1.0
        assert rewards["u-a"] == 0.0


class TestRandomRewards:
    def catalog(self):
        c = Catalog()
        for i in range(5):
            c.add(action(uuid=f"u-{i}"))
        return c

    def test_deterministic(self):
        c = self.catalog()
        assert random_rewards(c, 7, 0.05) == random_rewards(c, 7, 0.05)

    def test_seed_changes_values(self):
        c = self.catalog()
        assert random_rewards(c, 7, 0.05) != random_rewards(c, 8, 0.05)

    def test_range_and_keys(self):
        c = self.catalog()
        rewards = random_rewards(c, 3, 0.25)
        assert sorted(rewards) == sorted(c.actions)
        assert all(0.0 <= v <= 0.25 for v in rewards.values())

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            random_rewards(self.catalog(), 1, 0.0)
        with pytest.raises(ValueError):
            random_rewards(self.catalog(), 1, -1.0)


class TestVectorCosine:
    def test_identity(self):
        assert cosine([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_zero_vector(self):
        assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0

    def test_negative_clamped(self):
        assert cosine([1.0, 0.0], [-1.0, 0.0]) == 0.0

    def test_orthogonal(self):
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0


class TestEmbeddingCache:
    def test_put_get(self):
        cache = EmbeddingCache()
        assert cache.get("x") is None
        cache.put("x", [1.0, 2.0])
        assert cache.get("x") == [1.0, 2.0]

    def test_persistence(self, tmp_path):
        path = tmp_path / "cache.json"
        cache = EmbeddingCache(path)
        cache.put("x", [0.5])
        reloaded = EmbeddingCache(path)
        assert reloaded.get("x") == [0.5]

    def test_key_is_content_hash(self):
        assert EmbeddingCache.key("x") == EmbeddingCache.key("x")
        assert EmbeddingCache.key("x") != EmbeddingCache.key("y")
        assert len(EmbeddingCache.key("x")) == 64


def fake_embedder(calls=None):
    """Deterministic toy embedder: token counts over a fixed vocabulary."""
    vocab = ["scan", "host", "bypass", "uac", "dump"]

    def embed(text):
        if calls is not None:
            calls.append(text)
        toks = tokenize(text)
        return [float(toks.count(w)) for w in vocab]

    return embed


class TestEmbedExternal:
    def test_callable_endpoint(self):
        assert embed_external("scan scan host", fake_embedder()) == \
            [2.0, 1.0, 0.0, 0.0, 0.0]

    def test_cache_skips_endpoint(self):
        calls = []
        cache = EmbeddingCache()
        embed_external("scan", fake_embedder(calls), cache)
        embed_external("scan", fake_embedder(calls), cache)
        assert calls == ["scan"]

    def test_failing_callable(self):
        def broken(text):
            raise RuntimeError("down")

        with pytest.raises(EndpointUnavailable):
            embed_external("x", broken)

    def test_unreachable_http_endpoint(self):
        with pytest.raises(EndpointUnavailable):
            embed_external("x", "http://127.0.0.1:9/none")


class TestMakeSimilarity:
    def test_no_endpoint_is_tf_cosine(self):
        assert make_similarity() is tf_cosine

    def test_embedding_path(self):
        sim = make_similarity(fake_embedder())
        assert sim("scan host", "scan host") == 1.0
        assert sim("scan", "bypass") == 0.0

    def test_fallback_warns_once_and_matches_tf(self):
        warnings = []

        def broken(text):
            raise RuntimeError("down")

        sim = make_similarity(broken, warn=warnings.append)
        pairs = [(GOLDEN_A, GOLDEN_B), ("scan", "scan"), ("a", "b")]
        for a, b in pairs:
            assert sim(a, b) == tf_cosine(a, b)
        assert len(warnings) == 1
        assert "falling back" in warnings[0]

    def test_fallback_preserves_reward_ordering(self):
        c = Catalog()
        c.add(action(uuid="u-close", description=GOLDEN_A))
        c.add(action(uuid="u-far", description="nothing shared at all"))
        c.add(action(uuid="u-exact", description=GOLDEN_B))
        p = profile(("T1046", "TA0007", GOLDEN_B))

        def broken(text):
            raise RuntimeError("down")

        direct = compute_rewards(c, p, tf_cosine)
        fallback = compute_rewards(c, p, make_similarity(broken))
        assert fallback == direct
        assert fallback["u-exact"] > fallback["u-close"] > fallback["u-far"]

    def test_cache_round_trip_through_make_similarity(self, tmp_path):
        calls = []
        cache = EmbeddingCache(tmp_path / "cache.json")
        sim = make_similarity(fake_embedder(calls), cache=cache)
        first = sim("scan host", "scan")
        again = sim("scan host", "scan")
        assert first == again
        assert calls == ["scan host", "scan"]
