"""Environment-image inventory: derive initial-state atoms from images and
match a plan's per-host environment needs to deployable images.

Matching is greedy most-coverage per host with image_id tie-breaking, one
image instance per host object. A host whose best candidate misses atoms is
left unassigned and the gap is reported as data, not an error; manifest
validity is simply "unmet is empty".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .aalm import Registry, normalize_name
from .errors import (
    ChainplannerError,
    InvalidImage,
    UnregistrableSoftwareName,
)
from .formulas import Lit
from .planner import GroundedTask, Plan
from .validator import atom_str

OS_FAMILIES = ("linux", "macos", "windows")
CVE_RE = re.compile(r"^CVE-\d{4}-\d+$", re.IGNORECASE)


@dataclass(frozen=True)
class EnvironmentImage:
    image_id: str
    os_family: str
    os_version: str
    cves: frozenset[str]
    software: frozenset[str]
    download_ref: str

    def __post_init__(self):
        if self.os_family not in OS_FAMILIES:
            raise InvalidImage(
                f"{self.image_id}: os family {self.os_family!r} not one of "
                f"{OS_FAMILIES}")
        for cve in self.cves:
            if not CVE_RE.match(cve):
                raise InvalidImage(f"{self.image_id}: bad CVE id {cve!r}")


@dataclass
class DeploymentManifest:
    assignments: dict[str, str] = field(default_factory=dict)
    unmet: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.unmet

    def to_dict(self) -> dict:
        return {"assignments": dict(sorted(self.assignments.items())),
                "unmet": sorted(self.unmet)}


def parse_image(node: dict) -> EnvironmentImage:
    if not isinstance(node, dict):
        raise InvalidImage(f"image entry is not an object: {node!r}")
    for key in ("image_id", "os"):
        if key not in node:
            raise InvalidImage(f"image entry missing {key!r}")
    os_node = node["os"]
    if not isinstance(os_node, dict) or "family" not in os_node:
        raise InvalidImage(f"{node['image_id']}: os must be an object with "
                           f"a family")
    return EnvironmentImage(
        image_id=str(node["image_id"]),
        os_family=str(os_node["family"]).lower(),
        os_version=str(os_node.get("version", "")),
        cves=frozenset(str(c) for c in node.get("cves", [])),
        software=frozenset(str(s) for s in node.get("software", [])),
        download_ref=str(node.get("download_ref", "")))


def load_inventory(path: str | Path) -> list[EnvironmentImage]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise InvalidImage("inventory file must be a JSON array")
    images = [parse_image(n) for n in doc]
    seen: set[str] = set()
    for img in images:
        if img.image_id in seen:
            raise InvalidImage(f"duplicate image_id {img.image_id!r}")
        seen.add(img.image_id)
    return images


def image_atoms(img: EnvironmentImage, host: str, reg: Registry) -> set[Lit]:
    """Environment atoms this image would satisfy for the given host object.

    Registers any template-derived predicates as a side effect so the atoms
    validate against the registry afterwards.
    """
    atoms = {Lit(f"os_{img.os_family}", (host,))}
    for cve in sorted(img.cves):
        schema = reg.instantiate_template("cve_exists", cve)
        atoms.add(Lit(schema.name, (host,)))
    for name in sorted(img.software):
        try:
            schema = reg.instantiate_template("software_running", name)
        except ChainplannerError as exc:
            raise UnregistrableSoftwareName(name) from exc
        atoms.add(Lit(schema.name, (host,)))
    return atoms


def host_map(images: list[EnvironmentImage]) -> list[tuple[str, EnvironmentImage]]:
    """One host object per image: h1..hn over images sorted by image_id, so
    the result does not depend on inventory file order."""
    ordered = sorted(images, key=lambda i: i.image_id)
    return [(f"h{i}", img) for i, img in enumerate(ordered, start=1)]


def derive_init_atoms(images: list[EnvironmentImage],
                      reg: Registry) -> set[Lit]:
    atoms: set[Lit] = set()
    for host, img in host_map(images):
        atoms |= image_atoms(img, host, reg)
    return atoms


def _host_of(atom: Lit, task: GroundedTask, reg: Registry) -> str:
    for arg in atom.args:
        if reg.is_subtype(task.objects.get(arg, "object"), "host"):
            return arg
    return atom.args[0] if atom.args else ""


def required_env_atoms(plan: Plan, task: GroundedTask,
                       reg: Registry) -> dict[str, set[Lit]]:
    """Environment-dimension atoms each plan step consumes, replayed in
    order and attributed at first use, keyed by the host they describe.

    Environment predicates are almost always static (no action produces
    them), so the grounder drops them from the search masks; they survive
    on each ground action's static_pre and are collected from there too.
    """
    out: dict[str, set[Lit]] = {}
    seen: set[Lit] = set()

    def consider(atom: Lit) -> None:
        if atom in seen:
            return
        seen.add(atom)
        schema = reg.lookup(atom.pred, len(atom.args))
        if schema is not None and schema.dimension == "environment":
            out.setdefault(_host_of(atom, task, reg), set()).add(atom)

    for ga in plan.steps:
        bits = ga.pre_pos
        while bits:
            low = bits & -bits
            bits ^= low
            consider(task.atoms[low.bit_length() - 1])
        for atom in ga.static_pre:
            consider(atom)
    return out


def match_images(req: dict[str, set[Lit]],
                 images: list[EnvironmentImage],
                 reg: Registry) -> DeploymentManifest:
    """Greedy per-host assignment: the unused image covering the most of the
    host's atoms wins (image_id breaks ties) and is assigned only on full
    coverage; otherwise its missing atoms land in unmet."""
    manifest = DeploymentManifest()
    used: set[str] = set()
    for host in sorted(req):
        needed = req[host]
        if not needed:
            continue
        best = None
        best_key = None
        for img in sorted(images, key=lambda i: i.image_id):
            if img.image_id in used:
                continue
            covered = len(needed & image_atoms(img, host, reg))
            key = (-covered, img.image_id)
            if best_key is None or key < best_key:
                best, best_key = img, key
        if best is None:
            manifest.unmet.extend(atom_str(a) for a in sorted(needed))
            continue
        missing = needed - image_atoms(best, host, reg)
        if missing:
            manifest.unmet.extend(atom_str(a) for a in sorted(missing))
        else:
            manifest.assignments[host] = best.image_id
            used.add(best.image_id)
    manifest.unmet.sort()
    return manifest
