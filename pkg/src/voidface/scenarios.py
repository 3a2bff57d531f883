"""Prefabricated simulation scenarios and synthetic fixtures.

Builds the standard topology (one vault, one orchestrator, N storage
institutions, M workstations, optional client), prepares synthetic
subjects end to end (textured patches, shares, placement, vault
registration, institution preload), and provides the global scan used
to prove revocation left no share bytes behind anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distribution import PlacementPlan, institution_dirname, plan_distribution
from .errors import ConfigError
from .patches import PatchBundle, share_bundle
from .shares import PATCH_KINDS, PatchImage, ShareGrid
from .simnet import (
    ClientBehavior,
    Fault,
    FaultKind,
    InstitutionBehavior,
    NodeBehavior,
    OrchestratorBehavior,
    SimMessage,
    SimNode,
    Simulator,
    VaultBehavior,
    WorkstationBehavior,
    grid_to_wire,
    plan_wire_meta,
    _grid_key,
)
from .vault import Vault

VAULT_NODE = "vault"
ORCHESTRATOR_NODE = "orchestrator"
CLIENT_NODE = "client"


def inst_node(i: int) -> str:
    return institution_dirname(i)


def ws_node(i: int) -> str:
    return f"ws-{i:02d}"


# -- synthetic fixtures -----------------------------------------------------


def synthetic_patch(kind_index: int, size: int = 96, channels: int = 3, seed: int = 7) -> PatchImage:
    """Deterministic textured patch: sinusoid gratings whose frequency
    depends on the patch kind, plus seeded noise. Looks image-like
    enough to have structure (nonzero adjacent correlation) without any
    real face data."""
    g = np.random.default_rng(seed * 101 + kind_index)
    y, x = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size, channels))
    for c in range(channels):
        f = 0.03 + 0.02 * kind_index + 0.01 * c
        base = 127.5 + 80.0 * np.sin(2 * np.pi * f * x + c) * np.cos(2 * np.pi * f * y)
        img[:, :, c] = base + g.normal(0, 12, size=(size, size))
    arr = np.clip(img, 0, 255).astype(np.uint8)
    return PatchImage.from_array(PATCH_KINDS[kind_index], arr)


def synthetic_bundle(subject_id: bytes, size: int = 96, seed: int = 7) -> PatchBundle:
    patches = tuple(synthetic_patch(i, size=size, seed=seed) for i in range(len(PATCH_KINDS)))
    return PatchBundle(subject_id=subject_id, patches=patches)


@dataclass
class PreparedSubject:
    subject_id: bytes
    bundle: PatchBundle
    as_grid: ShareGrid
    privates: list[ShareGrid]
    plan: PlacementPlan

    @property
    def subject_hex(self) -> str:
        return self.subject_id.hex()

    def original_patches(self) -> dict[tuple[str, int], bytes]:
        return {
            (self.subject_hex, i): p.pixels for i, p in enumerate(self.bundle.patches)
        }


def prepare_subject(
    subject_id: bytes,
    n_institutions: int,
    rng: np.random.Generator,
    *,
    size: int = 96,
    seed: int = 7,
) -> PreparedSubject:
    bundle = synthetic_bundle(subject_id, size=size, seed=seed)
    as_grid, privates = share_bundle(bundle, rng)
    plan = plan_distribution(privates, n_institutions, rng)
    return PreparedSubject(subject_id, bundle, as_grid, privates, plan)


# -- topology ---------------------------------------------------------------


def default_workstation_profiles(n: int) -> list[dict]:
    return [
        {
            "node_id": ws_node(i),
            "compute_rate": 10.0,
            "bandwidth": 1e6,
            "role": "workstation",
        }
        for i in range(n)
    ]


def build_training_simulator(
    vault_dir: str | Path,
    subjects: list[PreparedSubject],
    n_institutions: int,
    n_workstations: int,
    *,
    allow: dict[str, list[str]] | None = None,
    seed: int = 0,
    heartbeat_s: float = 5.0,
    lam: float = 1.0,
    theta: float = 0.5,
    latency_ms: float = 5.0,
    institution_service_s: float = 0.05,
    workstation_profiles: list[dict] | None = None,
    gc_period_s: float | None = None,
) -> tuple[Simulator, Vault]:
    """Assemble a ready-to-run simulator over freshly prepared subjects.

    ``allow`` maps requester ids to the subject hexes they may train on.
    The vault's clock follows the simulation clock, so its log carries
    simulated timestamps. Enabling the periodic GC timer keeps the event
    queue alive forever; bound such runs with ``run_scenario(until=...)``.
    """
    profiles = workstation_profiles or default_workstation_profiles(n_workstations)
    if len(profiles) < n_workstations:
        raise ConfigError("fewer profiles than workstations")
    allow = allow or {}
    subject_allow: dict[str, set[str]] = {}
    for requester, subject_hexes in allow.items():
        for s in subject_hexes:
            subject_allow.setdefault(s, set()).add(requester)

    nodes = [
        SimNode(VAULT_NODE, "vault", {}, latency_ms=latency_ms, service_s=0.01),
        SimNode(ORCHESTRATOR_NODE, "orchestrator", {}, latency_ms=latency_ms, service_s=0.0),
        SimNode(CLIENT_NODE, "client", {}, latency_ms=latency_ms, service_s=0.0),
    ]
    for i in range(n_institutions):
        nodes.append(
            SimNode(
                inst_node(i), "institution", {"grids": {}},
                latency_ms=latency_ms, service_s=institution_service_s,
            )
        )
    for i in range(n_workstations):
        nodes.append(
            SimNode(ws_node(i), "workstation", {}, latency_ms=latency_ms, service_s=0.02)
        )

    sim = Simulator(nodes, seed=seed, default_latency_ms=latency_ms)
    vault = Vault(vault_dir, clock=lambda: sim.now)

    plans_meta: dict[str, dict] = {}
    for subject in subjects:
        plans_meta[subject.subject_hex] = plan_wire_meta(subject.plan, inst_node)
        institutions = tuple(
            sorted({a.institution_id for a in subject.plan.assignments})
        )
        vault.register_subject(
            subject.subject_id,
            subject.as_grid,
            placement_institutions=institutions,
            allow_list=sorted(subject_allow.get(subject.subject_hex, set())),
        )
        for a in subject.plan.assignments:
            node = sim.nodes[inst_node(a.institution_id)]
            key = _grid_key(subject.subject_hex, a.grid.patch_index, a.grid.subgrid_index)
            node.state["grids"][key] = grid_to_wire(a.grid)

    sim.nodes[VAULT_NODE].state = {
        "vault": vault, "plans": plans_meta, "rounds": {}, "gc": {},
        "gc_period_s": gc_period_s,
    }
    if gc_period_s is not None:
        sim.schedule_timer(gc_period_s, VAULT_NODE, {"kind": "gc_periodic"})
    sim.nodes[ORCHESTRATOR_NODE].state = {
        "vault": VAULT_NODE,
        "candidates": profiles,
        "skip_counts": {},
        "rounds": {},
        "heartbeat_s": heartbeat_s,
        "lambda": lam,
        "theta": theta,
        "share_bytes": subjects[0].as_grid.size if subjects else 96 * 96 * 3,
        "gc_reports": [],
        "rtbf_acks": [],
    }
    sim.nodes[CLIENT_NODE].state = {"vault": VAULT_NODE, "replies": []}
    for i in range(n_workstations):
        sim.nodes[ws_node(i)].state = {
            "tasks": {},
            "heartbeat_s": heartbeat_s,
            "orchestrator": ORCHESTRATOR_NODE,
        }

    behaviors: dict[str, NodeBehavior] = {
        VAULT_NODE: VaultBehavior(),
        ORCHESTRATOR_NODE: OrchestratorBehavior(),
        CLIENT_NODE: ClientBehavior(),
    }
    for i in range(n_institutions):
        behaviors[inst_node(i)] = InstitutionBehavior()
    for i in range(n_workstations):
        behaviors[ws_node(i)] = WorkstationBehavior()
    sim.behaviors = behaviors
    return sim, vault


@dataclass
class SimResult:
    trace: list[SimMessage]
    node_states: dict
    trace_jsonl: str
    trace_hash: str
    end_time: float


def run_scenario(sim: Simulator, script: list[dict], until: float = float("inf")) -> SimResult:
    """Schedule the script's timed events and run to quiescence."""
    for entry in script:
        sim.schedule_script(entry["t"], entry["node"], entry["event"])
    sim.run(until=until)
    return SimResult(
        trace=sim.trace,
        node_states=sim.node_states(),
        trace_jsonl=sim.trace_jsonl(),
        trace_hash=sim.trace_hash(),
        end_time=sim.now,
    )


def train_event(round_id: str, requester: str, subjects: list[str], **kw) -> dict:
    return {"kind": "train_request", "round_id": round_id, "requester": requester,
            "subjects": subjects, **kw}


# -- global share scan ------------------------------------------------------


def global_share_scan(
    vault: Vault, sim: Simulator, subject: PreparedSubject
) -> list[str]:
    """Hunt for any surviving byte of the subject's shares across the
    vault directory, institution stores, and workstation task state.
    Returns human-readable findings; an empty list means the revocation
    plus garbage collection actually removed everything."""
    findings: list[str] = []
    subject_hex = subject.subject_hex

    as_path = vault.as_dir / f"{subject_hex}.share"
    if as_path.exists():
        findings.append(f"vault still holds AS file {as_path.name}")

    needles = {bytes(subject.as_grid.payload)} | {bytes(ps.payload) for ps in subject.privates}
    needles |= {a.grid.payload for a in subject.plan.assignments}
    for f in vault.directory.rglob("*"):
        if not f.is_file():
            continue
        blob = f.read_bytes()
        for needle in needles:
            # Check raw and hex encodings; payloads never appear base64 in the vault.
            if needle in blob or needle.hex().encode() in blob:
                findings.append(f"vault file {f.name} contains share bytes")
                break

    for node_id, node in sim.nodes.items():
        if node.role == "institution":
            held = [k for k in node.state.get("grids", {}) if k.startswith(subject_hex + ":")]
            if held:
                findings.append(f"{node_id} still holds grids {held}")
        if node.role == "workstation":
            for key, task in node.state.get("tasks", {}).items():
                if not key.endswith(subject_hex):
                    continue
                if task.get("as_grid") or task.get("received"):
                    findings.append(f"{node_id} task {key} retains share material")
    return findings


# -- scenario files (CLI) ----------------------------------------------------


def load_scenario_file(path: str | Path) -> tuple[Simulator, Vault | None, list[dict]]:
    """Build a simulator from a JSON scenario description.

    Schema: {"seed": int, "default_latency_ms": float, "vault_dir": str,
    "store_dir": str, "plans": {subject_hex: plan_json_path},
    "nodes": [{"id", "role", "profile"?, "latency_ms"?, "service_s"?}],
    "links": [{"a", "b", "latency_ms"}], "script": [{"t", "node", "event"}],
    "faults": [{"node", "kind", "factor"?, "start", "end"}]}
    """
    doc = json.loads(Path(path).read_text())
    base = Path(path).parent
    default_latency = doc.get("default_latency_ms", 5.0)

    nodes = []
    for entry in doc["nodes"]:
        nodes.append(
            SimNode(
                entry["id"],
                entry["role"],
                {},
                latency_ms=entry.get("latency_ms", default_latency),
                service_s=entry.get("service_s", 0.0),
            )
        )
    links = {
        frozenset((l["a"], l["b"])): l["latency_ms"] for l in doc.get("links", [])
    }
    sim = Simulator(nodes, links=links, seed=doc.get("seed", 0), default_latency_ms=default_latency)

    vault = None
    orchestrator_id = next((n.node_id for n in nodes if n.role == "orchestrator"), None)
    vault_id = next((n.node_id for n in nodes if n.role == "vault"), None)
    ws_ids = [n.node_id for n in nodes if n.role == "workstation"]
    heartbeat_s = doc.get("heartbeat_s", 5.0)

    plans_meta: dict[str, dict] = {}
    if doc.get("plans"):
        from .distribution import load_plan

        store_dir = base / doc["store_dir"] if not Path(doc["store_dir"]).is_absolute() else Path(doc["store_dir"])
        inst_by_index = {}
        inst_nodes = [n for n in nodes if n.role == "institution"]
        for i, n in enumerate(sorted(inst_nodes, key=lambda x: x.node_id)):
            inst_by_index[i] = n.node_id
        for subject_hex, plan_path in doc["plans"].items():
            plan = load_plan(base / plan_path if not Path(plan_path).is_absolute() else plan_path, store_dir)
            plans_meta[subject_hex] = plan_wire_meta(plan, lambda i: inst_by_index[i])
            for a in plan.assignments:
                node = sim.nodes[inst_by_index[a.institution_id]]
                node.state.setdefault("grids", {})[
                    _grid_key(subject_hex, a.grid.patch_index, a.grid.subgrid_index)
                ] = grid_to_wire(a.grid)

    behaviors: dict[str, NodeBehavior] = {}
    candidates = []
    share_bytes = doc.get("share_bytes", 96 * 96 * 3)
    for entry in doc["nodes"]:
        role = entry["role"]
        node = sim.nodes[entry["id"]]
        if role == "vault":
            vault_dir = base / doc["vault_dir"] if not Path(doc["vault_dir"]).is_absolute() else Path(doc["vault_dir"])
            vault = Vault(vault_dir, clock=lambda: sim.now)
            node.state = {"vault": vault, "plans": plans_meta, "rounds": {}, "gc": {}}
            behaviors[entry["id"]] = VaultBehavior()
        elif role == "institution":
            node.state.setdefault("grids", {})
            behaviors[entry["id"]] = InstitutionBehavior()
        elif role == "workstation":
            node.state = {"tasks": {}, "heartbeat_s": heartbeat_s, "orchestrator": orchestrator_id}
            behaviors[entry["id"]] = WorkstationBehavior()
            candidates.append(
                entry.get(
                    "profile",
                    {"node_id": entry["id"], "compute_rate": 10.0, "bandwidth": 1e6,
                     "role": "workstation"},
                )
            )
        elif role == "orchestrator":
            behaviors[entry["id"]] = OrchestratorBehavior()
        elif role == "client":
            node.state = {"vault": vault_id, "replies": []}
            behaviors[entry["id"]] = ClientBehavior()
        else:
            raise ConfigError(f"unknown role {role!r}")
    if orchestrator_id is not None:
        sim.nodes[orchestrator_id].state = {
            "vault": vault_id,
            "candidates": candidates,
            "skip_counts": {},
            "rounds": {},
            "heartbeat_s": heartbeat_s,
            "lambda": doc.get("lambda", 1.0),
            "theta": doc.get("theta", 0.5),
            "share_bytes": share_bytes,
            "gc_reports": [],
            "rtbf_acks": [],
        }
    sim.behaviors = behaviors

    for f in doc.get("faults", []):
        sim.inject_fault(
            f["node"],
            Fault(
                kind=FaultKind(f["kind"]),
                start=f["start"],
                end=f["end"],
                factor=f.get("factor", 1.0),
            ),
        )
    return sim, vault, doc.get("script", [])
