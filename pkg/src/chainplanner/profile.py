"""Threat-group TTP profiles and per-action reward assignment.

An action's reward is 0 when its technique id appears nowhere in the
profile; otherwise it is the maximum description similarity over the
matching entries. Technique ids match exactly (no parent/sub-technique
widening). The default similarity is a deterministic term-frequency cosine;
an external embedding endpoint is the opt-in alternative, with a cached
vector store and a tf fallback when the endpoint is unreachable.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .catalog import AttackAction, Catalog
from .errors import (
    BadTechniqueId,
    EmptyProfile,
    EndpointUnavailable,
    UnlabeledAction,
)

TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class ProfileEntry:
    technique_id: str
    tactic_id: str
    description: str


@dataclass(frozen=True)
class TtpProfile:
    group_name: str
    source: str
    entries: tuple[ProfileEntry, ...]


def ingest_profile(doc: dict) -> TtpProfile:
    """Validate `{group_name, source, entries: [{technique_id, tactic_id,
    description}]}`. Duplicate technique ids are kept: one group may use a
    technique more than one way."""
    entries = []
    for e in doc.get("entries", []):
        tid = str(e.get("technique_id", ""))
        if not TECHNIQUE_ID_RE.match(tid):
            raise BadTechniqueId(tid)
        entries.append(ProfileEntry(
            technique_id=tid,
            tactic_id=str(e.get("tactic_id", "")),
            description=str(e.get("description", ""))))
    if not entries:
        raise EmptyProfile()
    return TtpProfile(
        group_name=str(doc.get("group_name", "")),
        source=str(doc.get("source", "")),
        entries=tuple(entries))


def load_profile(path: str | Path) -> TtpProfile:
    return ingest_profile(json.loads(Path(path).read_text()))


def profile_to_dict(p: TtpProfile) -> dict:
    return {
        "group_name": p.group_name,
        "source": p.source,
        "entries": [
            {"technique_id": e.technique_id, "tactic_id": e.tactic_id,
             "description": e.description}
            for e in p.entries
        ],
    }


def profile_from_dict(doc: dict) -> TtpProfile:
    return ingest_profile(doc)


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def tf_cosine(a: str, b: str) -> float:
    """Cosine of lowercase word-token term-frequency vectors; anything
    against an empty token set is 0."""
    va = Counter(tokenize(a))
    vb = Counter(tokenize(b))
    if not va or not vb:
        return 0.0
    if va == vb:
        return 1.0  # self-similarity is exact; float norms can round it off
    dot = sum(va[t] * vb[t] for t in va if t in vb)
    na = math.sqrt(sum(c * c for c in va.values()))
    nb = math.sqrt(sum(c * c for c in vb.values()))
    return min(1.0, dot / (na * nb))


def compute_reward(a: AttackAction, p: TtpProfile, sim=tf_cosine) -> float:
    """0 when the technique id is absent from the profile, else the best
    description similarity over entries with that exact id."""
    if a.technique is None:
        raise UnlabeledAction(a.uuid)
    matching = [e for e in p.entries if e.technique_id == a.technique.id]
    if not matching:
        return 0.0
    return max(sim(a.description, e.description) for e in matching)


def compute_rewards(c: Catalog, p: TtpProfile, sim=tf_cosine) -> dict[str, float]:
    return {a.uuid: compute_reward(a, p, sim) for a in c.sorted_actions()}


def random_rewards(c: Catalog, seed: int, epsilon: float) -> dict[str, float]:
    """Deterministic uniform draws in [0, epsilon], keyed by sorted uuid."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = random.Random(seed)
    return {u: rng.uniform(0.0, epsilon) for u in sorted(c.actions)}


def cosine(u: list[float], v: list[float]) -> float:
    """Vector cosine clamped into [0, 1]."""
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    if list(u) == list(v):
        return 1.0  # self-similarity is exact; float norms can round it off
    dot = sum(x * y for x, y in zip(u, v))
    return min(1.0, max(0.0, dot / (nu * nv)))


class EmbeddingCache:
    """Content-hash-keyed vector cache persisted as one JSON file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._store: dict[str, list[float]] = {}
        if self.path and self.path.exists():
            self._store = json.loads(self.path.read_text())

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode()).hexdigest()

    def get(self, text: str) -> list[float] | None:
        return self._store.get(self.key(text))

    def put(self, text: str, vector: list[float]) -> None:
        self._store[self.key(text)] = vector
        if self.path:
            self.path.write_text(json.dumps(self._store, sort_keys=True))


def embed_external(text: str, endpoint, cache: EmbeddingCache | None = None) -> list[float]:
    """Fetch an embedding for the text. `endpoint` is a callable
    text -> vector, or an HTTP URL POSTed `{"text": ...}` returning
    `{"embedding": [...]}`. Cached vectors skip the endpoint entirely."""
    if cache is not None:
        hit = cache.get(text)
        if hit is not None:
            return hit
    if callable(endpoint):
        try:
            vector = list(endpoint(text))
        except Exception as exc:
            raise EndpointUnavailable(str(exc)) from exc
    else:
        import urllib.error
        import urllib.request
        req = urllib.request.Request(
            str(endpoint), data=json.dumps({"text": text}).encode(),
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=30) as resp:
                vector = json.loads(resp.read())["embedding"]
        except (urllib.error.URLError, OSError, KeyError, ValueError) as exc:
            raise EndpointUnavailable(str(exc)) from exc
    if cache is not None:
        cache.put(text, vector)
    return vector


def make_similarity(endpoint=None, cache: EmbeddingCache | None = None,
                    warn=None):
    """Similarity function for compute_reward: embedding cosine when an
    endpoint is configured, falling back to tf_cosine (with one warning)
    the first time the endpoint fails."""
    if endpoint is None:
        return tf_cosine
    state = {"fallback": False}

    def sim(a: str, b: str) -> float:
        if state["fallback"]:
            return tf_cosine(a, b)
        try:
            return cosine(embed_external(a, endpoint, cache),
                          embed_external(b, endpoint, cache))
        except EndpointUnavailable as exc:
            state["fallback"] = True
            if warn is not None:
                warn(f"embedding endpoint unavailable ({exc}); "
                     f"falling back to tf_cosine")
            return tf_cosine(a, b)

    return sim
