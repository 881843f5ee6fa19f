"""Project workspace: a directory of input files plus a build/ tree of
derived artifacts, with defaults in an optional chainplanner.json.

Every artifact is a file and every writer is deterministic (sorted keys,
stable float repr), so two runs over the same inputs are byte-identical
and the whole build tree can be golden-tested.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .aalm import Registry, load_registry, seed_registry
from .catalog import Catalog, load_catalog, parse_catalog

CONFIG_NAME = "chainplanner.json"
ENV_VAR = "CHAINPLANNER_WORKSPACE"

CONFIG_KEYS = ("pools", "delta", "stall_rounds", "node_budget",
               "clause_bound", "jobs", "embedder_url", "solver_cmd", "r_cap")


@dataclass
class Config:
    pools: int | dict = 3
    delta: float = 1.0
    stall_rounds: int = 3
    node_budget: int = 5_000_000
    clause_bound: int = 32
    jobs: int = 1
    embedder_url: str | None = None
    solver_cmd: str | None = None
    r_cap: float | None = None  # floor override; the computed cap still applies
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        cfg = cls()
        for key, value in doc.items():
            if key not in CONFIG_KEYS:
                cfg.warnings.append(f"ignoring unknown config key {key!r}")
                continue
            setattr(cfg, key, value)
        cfg.delta = float(cfg.delta)
        cfg.stall_rounds = int(cfg.stall_rounds)
        cfg.node_budget = int(cfg.node_budget)
        cfg.clause_bound = int(cfg.clause_bound)
        cfg.jobs = int(cfg.jobs)
        if cfg.r_cap is not None:
            cfg.r_cap = float(cfg.r_cap)
        return cfg


def expand_pools(spec: int | dict, reg: Registry) -> dict[str, int]:
    """Normalize a pools config (global count or per-type mapping) to a
    per-type mapping over the registry's non-host types."""
    if isinstance(spec, dict):
        return {str(k): int(v) for k, v in spec.items()}
    return {t: int(spec) for t in reg.types if t not in ("object", "host")}


def parse_pools_flag(text: str) -> int | dict:
    """--pools accepts a bare count or comma-separated type=count pairs."""
    text = text.strip()
    if text.isdigit():
        return int(text)
    out: dict[str, int] = {}
    for part in text.split(","):
        name, _, count = part.partition("=")
        if not name or not count.strip().isdigit():
            raise ValueError(f"--pools: bad entry {part!r}")
        out[name.strip()] = int(count)
    return out


def resolve_root(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else Path.cwd()


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


class Workspace:
    """Path conventions for one project directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        cfg_path = self.root / CONFIG_NAME
        if cfg_path.is_file():
            self.config = Config.from_dict(json.loads(cfg_path.read_text()))
        else:
            self.config = Config()

    # inputs
    @property
    def catalog_dir(self) -> Path:
        return self.root / "catalog"

    def default_catalog_files(self) -> list[Path]:
        if not self.catalog_dir.is_dir():
            return []
        return sorted(p for p in self.catalog_dir.iterdir()
                      if p.suffix in (".yaml", ".yml", ".json"))

    @property
    def rules_file(self) -> Path:
        return self.root / "rules.yaml"

    @property
    def taxonomy_file(self) -> Path:
        return self.root / "taxonomy.json"

    @property
    def inventory_file(self) -> Path:
        return self.root / "inventory.json"

    # build artifacts
    @property
    def build(self) -> Path:
        return self.root / "build"

    @property
    def catalog_file(self) -> Path:
        return self.build / "catalog.yaml"

    @property
    def annotated_file(self) -> Path:
        return self.build / "catalog.annotated.yaml"

    @property
    def registry_file(self) -> Path:
        return self.build / "registry.yaml"

    @property
    def growth_file(self) -> Path:
        return self.build / "growth.json"

    @property
    def profile_file(self) -> Path:
        return self.build / "profile.json"

    @property
    def rewards_file(self) -> Path:
        return self.build / "rewards.json"

    @property
    def domain_file(self) -> Path:
        return self.build / "domain.pddl"

    @property
    def index_file(self) -> Path:
        return self.build / "domain.index.json"

    @property
    def problem_file(self) -> Path:
        return self.build / "problem.pddl"

    @property
    def problems_dir(self) -> Path:
        return self.build / "problems"

    @property
    def plans_dir(self) -> Path:
        return self.build / "plans"

    @property
    def sweep_file(self) -> Path:
        return self.build / "sweep.json"

    @property
    def traces_dir(self) -> Path:
        return self.build / "traces"

    @property
    def manifest_file(self) -> Path:
        return self.build / "manifest.json"

    @property
    def export_dir(self) -> Path:
        return self.build / "export"

    # loading helpers
    def load_registry(self) -> Registry:
        if self.registry_file.is_file():
            return load_registry(self.registry_file)
        return seed_registry()

    def load_working_catalog(self, reg: Registry,
                             annotated_ok: bool = True) -> Catalog:
        path = self.annotated_file
        if not (annotated_ok and path.is_file()):
            path = self.catalog_file
        if not path.is_file():
            raise FileNotFoundError(
                f"no ingested catalog under {self.build}; run ingest first")
        return parse_catalog(path.read_text(), reg, source_name=path.name)

    def load_rewards(self) -> dict[str, float]:
        if not self.rewards_file.is_file():
            return {}
        doc = json.loads(self.rewards_file.read_text())
        return {str(k): float(v) for k, v in doc.get("rewards", {}).items()}

    def find_plan_file(self, arg: str) -> Path:
        p = Path(arg)
        if p.is_file():
            return p
        candidate = self.plans_dir / arg
        if candidate.is_file():
            return candidate
        raise FileNotFoundError(f"plan file not found: {arg}")


def ingest_into(ws: Workspace, paths: list[Path],
                warnings: list[str] | None = None) -> tuple[Catalog, Registry, dict]:
    """Load + validate catalogs against a fresh seed registry and persist
    the normalized catalog, grown registry, and growth report."""
    from .aalm import growth_report, save_registry
    from .catalog import serialize_catalog
    reg = seed_registry()
    before = reg.snapshot()
    catalog = load_catalog([str(p) for p in paths], reg, warnings=warnings)
    report = growth_report(before, reg)
    ws.build.mkdir(parents=True, exist_ok=True)
    write_text(ws.catalog_file, serialize_catalog(catalog))
    save_registry(reg, ws.registry_file)
    write_json(ws.growth_file, report)
    return catalog, reg, report
