"""Deterministic message-passing simulation of the full pipeline.

A single virtual clock drives a discrete-event queue; node behaviors
are functions of (state, event) that return a new state plus outbound
sends and timers, so identical (topology, script, seed) always produce
byte-identical traces. The trace records every delivered message with
its delivery time; messages eaten by a fault never appear.

Protocol shape: the orchestrator asks the vault to validate a round
(TRAIN_REQUEST / AS_VALIDATE), the vault pushes the authentication
share to each chosen workstation (AS_DISPATCH), workstations pull their
private share grids from institutions (PS_FETCH / PS_RESPONSE),
reconstruct, train, and report (TRAIN_RESULT). The two legs of every
qualified set therefore traverse different links, which is what the
wiretap audit checks. Revocation (RTBF_REQUEST) and garbage collection
(GC_SCAN / GC_DELETE) flow through the same fabric.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .access import AccessStructure, AS_LABEL, is_qualified, ps_label
from .distribution import PlacementPlan
from .errors import AuthorizationError, ConfigError, NoDataError
from .framing import b64, unb64
from .orchestrator import (
    EMBEDDING_DIM,
    MISSED_HEARTBEAT_LIMIT,
    NodeProfile,
    NodeRole,
    RoundWorkload,
    StubTrainer,
    select_nodes,
    straggler_score,
)
from .shares import PATCH_KINDS, PatchImage, ShareGrid, ShareRole
from .vault import Vault


def profile_from_dict(doc: dict | NodeProfile) -> NodeProfile:
    if isinstance(doc, NodeProfile):
        return doc
    doc = dict(doc)
    doc["role"] = NodeRole(doc.get("role", "workstation"))
    return NodeProfile(**doc)


class MsgType(Enum):
    TRAIN_REQUEST = "TRAIN_REQUEST"
    AS_VALIDATE = "AS_VALIDATE"
    AS_DISPATCH = "AS_DISPATCH"
    PS_FETCH = "PS_FETCH"
    PS_RESPONSE = "PS_RESPONSE"
    RTBF_REQUEST = "RTBF_REQUEST"
    GC_SCAN = "GC_SCAN"
    GC_DELETE = "GC_DELETE"
    TRAIN_PATCH = "TRAIN_PATCH"
    TRAIN_RESULT = "TRAIN_RESULT"
    ACK = "ACK"
    ERROR = "ERROR"


@dataclass(frozen=True)
class SimMessage:
    msg_id: int
    src: str
    dst: str
    type: MsgType
    payload: dict
    sim_time: float

    def __post_init__(self):
        if self.src == self.dst:
            raise ConfigError("messages cannot be self-addressed")

    def to_json(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "src": self.src,
            "dst": self.dst,
            "type": self.type.value,
            "payload": self.payload,
            "sim_time": round(self.sim_time, 9),
        }


@dataclass(frozen=True)
class Send:
    dst: str
    type: MsgType
    payload: dict


@dataclass(frozen=True)
class Timer:
    delay: float
    payload: dict


class FaultKind(Enum):
    OFFLINE = "offline"
    SLOW = "slow"
    DROP_MESSAGES = "drop_messages"


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    start: float
    end: float
    factor: float = 1.0  # slow multiplier or drop probability


@dataclass
class SimNode:
    node_id: str
    role: str
    state: dict
    latency_ms: float = 5.0
    service_s: float = 0.0


# -- grid wire helpers ------------------------------------------------------


def grid_to_wire(grid: ShareGrid) -> dict:
    return {
        "role": grid.role.name.lower(),
        "subject": grid.subject_id.hex(),
        "patch_index": grid.patch_index,
        "subgrid_index": grid.subgrid_index,
        "subgrid_total": grid.subgrid_total,
        "width": grid.width,
        "height": grid.height,
        "channels": grid.channels,
        "payload_b64": b64(grid.payload),
    }


def wire_to_grid(doc: dict) -> ShareGrid:
    return ShareGrid(
        role=ShareRole[doc["role"].upper()],
        subject_id=bytes.fromhex(doc["subject"]),
        patch_index=doc["patch_index"],
        subgrid_index=doc["subgrid_index"],
        subgrid_total=doc["subgrid_total"],
        width=doc["width"],
        height=doc["height"],
        channels=doc["channels"],
        payload=unb64(doc["payload_b64"]),
    )


def plan_wire_meta(plan: PlacementPlan, inst_node: Callable[[int], str]) -> dict:
    """Per-patch fetch map the vault hands to workstations."""
    patches: dict[str, list[dict]] = {}
    for a in plan.assignments:
        patches.setdefault(str(a.grid.patch_index), []).append(
            {
                "institution": inst_node(a.institution_id),
                "subgrid_index": a.grid.subgrid_index,
                "subgrid_total": a.grid.subgrid_total,
            }
        )
    return {
        "patches": patches,
        "dropped": list(plan.dropped_patches),
        "source_patches": list(plan.source_patches),
    }


# -- simulator core ---------------------------------------------------------


class Simulator:
    """Single-threaded discrete-event loop over a fixed topology."""

    def __init__(
        self,
        nodes: list[SimNode],
        links: dict[frozenset, float] | None = None,
        seed: int = 0,
        default_latency_ms: float = 5.0,
    ):
        self.nodes = {n.node_id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ConfigError("duplicate node ids")
        self.links = links or {}
        self.seed = seed
        self.default_latency_ms = default_latency_ms
        self.faults: dict[str, list[Fault]] = {}
        self.trace: list[SimMessage] = []
        self._queue: list = []
        self._seq = 0
        self._msg_seq = 0
        self.now = 0.0
        self._rngs: dict[str, np.random.Generator] = {}
        self.behaviors: dict[str, "NodeBehavior"] = {}

    def rng_for(self, node_id: str) -> np.random.Generator:
        if node_id not in self._rngs:
            digest = hashlib.sha256(f"{self.seed}:{node_id}".encode()).digest()
            self._rngs[node_id] = np.random.default_rng(
                int.from_bytes(digest[:8], "little")
            )
        return self._rngs[node_id]

    def latency_s(self, src: str, dst: str) -> float:
        key = frozenset((src, dst))
        if key in self.links:
            return self.links[key] / 1000.0
        a = self.nodes[src].latency_ms
        b = self.nodes[dst].latency_ms
        return (a + b) / 2.0 / 1000.0

    def inject_fault(self, node_id: str, fault: Fault) -> None:
        if node_id not in self.nodes:
            raise ConfigError(f"unknown node {node_id}")
        for existing in self.faults.get(node_id, []):
            if fault.start < existing.end and existing.start < fault.end:
                raise ConfigError(
                    f"{node_id}: fault window [{fault.start}, {fault.end}) overlaps "
                    f"existing [{existing.start}, {existing.end})"
                )
        self.faults.setdefault(node_id, []).append(fault)

    def _active_fault(self, node_id: str, t: float, kind: FaultKind) -> Fault | None:
        for f in self.faults.get(node_id, []):
            if f.kind == kind and f.start <= t < f.end:
                return f
        return None

    def _push(self, t: float, kind: str, data) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, data))

    def schedule_script(self, t: float, node_id: str, event: dict) -> None:
        if node_id not in self.nodes:
            raise ConfigError(f"script references unknown node {node_id}")
        self._push(t, "script", (node_id, event))

    def schedule_timer(self, t: float, node_id: str, payload: dict) -> None:
        if node_id not in self.nodes:
            raise ConfigError(f"timer references unknown node {node_id}")
        self._push(t, "timer", (node_id, payload))

    def send(self, t_sent: float, src: str, send: Send) -> None:
        if send.dst not in self.nodes:
            raise ConfigError(f"send to unknown node {send.dst}")
        self._msg_seq += 1
        arrival = t_sent + self.latency_s(src, send.dst)
        msg = SimMessage(
            msg_id=self._msg_seq,
            src=src,
            dst=send.dst,
            type=send.type,
            payload=send.payload,
            sim_time=arrival,
        )
        self._push(arrival, "deliver", msg)

    def run(self, until: float = float("inf")) -> None:
        while self._queue:
            t, _, kind, data = heapq.heappop(self._queue)
            if t > until:
                # Leave the event for a later run() call.
                self._push(t, kind, data)
                break
            self.now = t
            if kind == "deliver":
                self._deliver(data)
            elif kind == "timer":
                node_id, payload = data
                self._invoke(node_id, "on_timer", payload, service_applies=False)
            elif kind == "script":
                node_id, event = data
                self._invoke(node_id, "on_script", event, service_applies=False)

    def _deliver(self, msg: SimMessage) -> None:
        if self._active_fault(msg.dst, self.now, FaultKind.OFFLINE):
            return
        drop = self._active_fault(msg.dst, self.now, FaultKind.DROP_MESSAGES)
        if drop is not None and self.rng_for(msg.dst).random() < drop.factor:
            return
        self.trace.append(msg)
        self._invoke(msg.dst, "on_message", msg, service_applies=True)

    def _invoke(self, node_id: str, hook: str, event, service_applies: bool) -> None:
        node = self.nodes[node_id]
        if self._active_fault(node_id, self.now, FaultKind.OFFLINE):
            return
        behavior = self.behaviors[node_id]
        ctx = SimContext(node_id=node_id, now=self.now, rng=self.rng_for(node_id))
        state, sends, timers = getattr(behavior, hook)(node.state, event, ctx)
        node.state = state
        delay = 0.0
        if service_applies:
            delay = node.service_s
            slow = self._active_fault(node_id, self.now, FaultKind.SLOW)
            if slow is not None:
                delay *= slow.factor
        for send in sends:
            self.send(self.now + delay, node_id, send)
        for timer in timers:
            self._push(self.now + timer.delay, "timer", (node_id, timer.payload))

    def trace_jsonl(self) -> str:
        return "\n".join(json.dumps(m.to_json(), sort_keys=True) for m in self.trace)

    def trace_hash(self) -> str:
        return hashlib.sha256(self.trace_jsonl().encode()).hexdigest()

    def node_states(self) -> dict[str, dict]:
        return {nid: n.state for nid, n in self.nodes.items()}


@dataclass(frozen=True)
class SimContext:
    node_id: str
    now: float
    rng: np.random.Generator


class NodeBehavior:
    """Handlers are pure in the (state, event) -> (state, sends, timers)
    sense; node objects hold no round state of their own."""

    def on_message(self, state, msg: SimMessage, ctx: SimContext):
        return state, [], []

    def on_timer(self, state, payload: dict, ctx: SimContext):
        return state, [], []

    def on_script(self, state, event: dict, ctx: SimContext):
        return state, [], []


# -- vault node -------------------------------------------------------------


class VaultBehavior(NodeBehavior):
    """Wraps the durable vault store. State carries the handle plus the
    per-round dispatch bookkeeping and the GC retry queues; the store
    itself lives on disk and is shared with the out-of-sim tooling."""

    GC_TIMEOUT_S = 2.0

    def on_message(self, state, msg, ctx):
        handlers = {
            MsgType.TRAIN_REQUEST: self._train_request,
            MsgType.RTBF_REQUEST: self._rtbf,
            MsgType.GC_SCAN: self._gc_scan,
            MsgType.ACK: self._ack,
        }
        fn = handlers.get(msg.type)
        if fn is None:
            return state, [], []
        return fn(state, msg, ctx)

    def _train_request(self, state, msg, ctx):
        vault: Vault = state["vault"]
        p = msg.payload
        if p.get("redispatch"):
            round_info = state["rounds"].get(p["round_id"])
            if round_info is None:
                return state, [Send(msg.src, MsgType.ERROR, {"error": "unknown round"})], []
            sends = []
            for subject_hex in round_info["authorized"]:
                sends.append(
                    self._dispatch_for(
                        state, p["round_id"], subject_hex, p["patch_index"], p["workstation"]
                    )
                )
            return state, sends, []
        subjects = [bytes.fromhex(s) for s in p["subjects"]]
        try:
            authorized, handles, excluded = vault.validate_training_request(
                p["requester"], subjects
            )
        except (NoDataError, AuthorizationError) as e:
            reply = Send(
                msg.src,
                MsgType.AS_VALIDATE,
                {
                    "round_id": p["round_id"],
                    "authorized": [],
                    "excluded": self._all_excluded(vault, subjects),
                    "error": type(e).__name__,
                },
            )
            return state, [reply], []
        authorized_hex = [s.hex() for s in authorized]
        state["rounds"][p["round_id"]] = {
            "authorized": authorized_hex,
            "assignment": {int(k): v for k, v in p["assignment"].items()},
        }
        sends = [
            Send(
                msg.src,
                MsgType.AS_VALIDATE,
                {
                    "round_id": p["round_id"],
                    "authorized": authorized_hex,
                    "excluded": excluded,
                },
            )
        ]
        for subject_hex in authorized_hex:
            for patch_index, ws in state["rounds"][p["round_id"]]["assignment"].items():
                sends.append(
                    self._dispatch_for(state, p["round_id"], subject_hex, patch_index, ws)
                )
        return state, sends, []

    def _all_excluded(self, vault: Vault, subjects) -> dict:
        out = {}
        for sid in subjects:
            rec = vault.get_record(sid)
            if rec is None:
                out[sid.hex()] = "UNKNOWN_SUBJECT"
            elif not rec.active:
                out[sid.hex()] = "RTBF"
            else:
                out[sid.hex()] = "NOT_ALLOWED"
        return out

    def _dispatch_for(self, state, round_id, subject_hex, patch_index, workstation) -> Send:
        vault: Vault = state["vault"]
        plan_meta = state["plans"][subject_hex]
        as_grid = vault.load_as(bytes.fromhex(subject_hex))
        fetch_list = plan_meta["patches"].get(str(patch_index), [])
        return Send(
            workstation,
            MsgType.AS_DISPATCH,
            {
                "round_id": round_id,
                "subject": subject_hex,
                "patch_index": patch_index,
                "as_grid": grid_to_wire(as_grid),
                "fetch": fetch_list,
            },
        )

    def _rtbf(self, state, msg, ctx):
        vault: Vault = state["vault"]
        try:
            result = vault.rtbf_revoke(bytes.fromhex(msg.payload["subject"]))
        except Exception as e:
            return state, [Send(msg.src, MsgType.ERROR, {"error": str(e)})], []
        return state, [Send(msg.src, MsgType.ACK, {"rtbf": result})], []

    def _gc_scan(self, state, msg, ctx):
        return self._start_gc_pass(state, msg.src, ctx)

    def _start_gc_pass(self, state, requester, ctx, extra_timers=()):
        vault: Vault = state["vault"]
        pass_id = f"gc-{ctx.now:.3f}"
        pending = {}
        sends = []
        for rec in vault.revoked_subjects():
            plan_meta = state["plans"].get(rec.subject_hex)
            institutions = (
                sorted(
                    {
                        entry["institution"]
                        for fetches in plan_meta["patches"].values()
                        for entry in fetches
                    }
                )
                if plan_meta
                else []
            )
            for inst in institutions:
                pending[(inst, rec.subject_hex)] = True
                sends.append(
                    Send(
                        inst,
                        MsgType.GC_DELETE,
                        {"pass_id": pass_id, "subject": rec.subject_hex},
                    )
                )
        state["gc"][pass_id] = {
            "requester": requester,
            "pending": [list(k) for k in pending],
            "acknowledged": [],
            "queued": [],
        }
        timers = list(extra_timers)
        if not pending:
            st, out, _ = self._finish_gc(state, pass_id, ctx)
            return st, out, timers
        timers.append(Timer(self.GC_TIMEOUT_S, {"kind": "gc_timeout", "pass_id": pass_id}))
        return state, sends, timers

    def _ack(self, state, msg, ctx):
        p = msg.payload
        if "gc" not in p:
            return state, [], []
        pass_state = state["gc"].get(p["gc"]["pass_id"])
        if pass_state is None:
            return state, [], []
        key = [msg.src, p["gc"]["subject"]]
        if key in pass_state["pending"]:
            pass_state["pending"].remove(key)
            pass_state["acknowledged"].append(
                {
                    "institution": msg.src,
                    "subject": p["gc"]["subject"],
                    "deleted": p["gc"]["deleted"],
                }
            )
        if not pass_state["pending"]:
            return self._finish_gc(state, p["gc"]["pass_id"], ctx)
        return state, [], []

    def on_timer(self, state, payload, ctx):
        if payload.get("kind") == "gc_periodic":
            period = state.get("gc_period_s") or 3600.0
            return self._start_gc_pass(
                state, None, ctx,
                extra_timers=[Timer(period, {"kind": "gc_periodic"})],
            )
        if payload.get("kind") != "gc_timeout":
            return state, [], []
        pass_id = payload["pass_id"]
        pass_state = state["gc"].get(pass_id)
        if pass_state is None or pass_state.get("done"):
            return state, [], []
        for inst, subject in pass_state["pending"]:
            pass_state["queued"].append(
                {"institution": inst, "subject": subject, "why": "unreachable"}
            )
        pass_state["pending"] = []
        return self._finish_gc(state, pass_id, ctx)

    def _finish_gc(self, state, pass_id, ctx):
        vault: Vault = state["vault"]
        pass_state = state["gc"][pass_id]
        pass_state["done"] = True
        report = {
            "pass_id": pass_id,
            "acknowledged": pass_state["acknowledged"],
            "queued": pass_state["queued"],
        }
        vault.log_gc_pass(report)
        sends = []
        if pass_state["requester"] is not None:
            sends.append(Send(pass_state["requester"], MsgType.ACK, {"gc_report": report}))
        return state, sends, []


# -- institution node -------------------------------------------------------


def _grid_key(subject_hex: str, patch_index: int, subgrid_index: int) -> str:
    return f"{subject_hex}:{patch_index}:{subgrid_index}"


class InstitutionBehavior(NodeBehavior):
    def on_message(self, state, msg, ctx):
        if msg.type == MsgType.PS_FETCH:
            p = msg.payload
            key = _grid_key(p["subject"], p["patch_index"], p["subgrid_index"])
            doc = state["grids"].get(key)
            if doc is None:
                return (
                    state,
                    [
                        Send(
                            msg.src,
                            MsgType.ERROR,
                            {
                                "round_id": p.get("round_id"),
                                "error": "not-found",
                                "subject": p["subject"],
                                "patch_index": p["patch_index"],
                                "subgrid_index": p["subgrid_index"],
                            },
                        )
                    ],
                    [],
                )
            return (
                state,
                [
                    Send(
                        msg.src,
                        MsgType.PS_RESPONSE,
                        {"round_id": p.get("round_id"), "grid": doc},
                    )
                ],
                [],
            )
        if msg.type == MsgType.GC_DELETE:
            subject = msg.payload["subject"]
            deleted = [k for k in state["grids"] if k.startswith(subject + ":")]
            for k in deleted:
                del state["grids"][k]
            return (
                state,
                [
                    Send(
                        msg.src,
                        MsgType.ACK,
                        {
                            "gc": {
                                "pass_id": msg.payload["pass_id"],
                                "subject": subject,
                                "deleted": deleted,
                            }
                        },
                    )
                ],
                [],
            )
        return state, [], []


# -- workstation node -------------------------------------------------------


class WorkstationBehavior(NodeBehavior):
    """Fetches one patch's grids, reconstructs by XOR, extracts the stub
    feature, reports, and forgets the plaintext."""

    def on_script(self, state, event, ctx):
        if event.get("kind") == "fetch":
            # Bare fetch, used to probe link timing.
            return (
                state,
                [
                    Send(
                        event["institution"],
                        MsgType.PS_FETCH,
                        {
                            "round_id": event.get("round_id", "probe"),
                            "subject": event["subject"],
                            "patch_index": event["patch_index"],
                            "subgrid_index": event.get("subgrid_index", 0),
                        },
                    )
                ],
                [],
            )
        return state, [], []

    def on_message(self, state, msg, ctx):
        if msg.type == MsgType.AS_DISPATCH:
            return self._dispatch(state, msg, ctx)
        if msg.type == MsgType.PS_RESPONSE:
            return self._response(state, msg, ctx)
        if msg.type == MsgType.ERROR:
            return self._fetch_error(state, msg, ctx)
        return state, [], []

    def _task_key(self, payload) -> str:
        return f"{payload['round_id']}:{payload['subject']}"

    def _dispatch(self, state, msg, ctx):
        p = msg.payload
        task = {
            "round_id": p["round_id"],
            "subject": p["subject"],
            "patch_index": p["patch_index"],
            "as_grid": p["as_grid"],
            "expected": {e["subgrid_index"]: e for e in p["fetch"]},
            "received": {},
            "orchestrator": state["orchestrator"],
            "done": False,
        }
        state["tasks"][self._task_key(p)] = task
        sends = []
        if not p["fetch"]:
            # Patch was dropped at distribution time; report and finish.
            sends.append(
                Send(
                    task["orchestrator"],
                    MsgType.TRAIN_RESULT,
                    {
                        "round_id": p["round_id"],
                        "subject": p["subject"],
                        "patch_index": p["patch_index"],
                        "error": "unavailable-patch",
                    },
                )
            )
            task["done"] = True
            return state, sends, []
        for entry in p["fetch"]:
            sends.append(
                Send(
                    entry["institution"],
                    MsgType.PS_FETCH,
                    {
                        "round_id": p["round_id"],
                        "subject": p["subject"],
                        "patch_index": p["patch_index"],
                        "subgrid_index": entry["subgrid_index"],
                    },
                )
            )
        timers = []
        if not state.get("heartbeat_started"):
            state["heartbeat_started"] = True
            timers.append(Timer(state["heartbeat_s"], {"kind": "heartbeat"}))
        return state, sends, timers

    def _response(self, state, msg, ctx):
        p = msg.payload
        doc = p["grid"]
        key = f"{p['round_id']}:{doc['subject']}"
        task = state["tasks"].get(key)
        if task is None or task["done"]:
            return state, [], []
        task["received"][doc["subgrid_index"]] = doc
        if set(task["received"]) != set(task["expected"]):
            return state, [], []
        # All grids in hand: XOR everything together with the pad.
        as_grid = wire_to_grid(task["as_grid"])
        acc = np.frombuffer(as_grid.payload, dtype=np.uint8).copy()
        for doc_i in task["received"].values():
            acc ^= np.frombuffer(unb64(doc_i["payload_b64"]), dtype=np.uint8)
        patch_bytes = acc.tobytes()
        trainer = StubTrainer(len(patch_bytes))
        patch = PatchImage(
            patch_kind=PATCH_KINDS[task["patch_index"] % len(PATCH_KINDS)],
            width=as_grid.width,
            height=as_grid.height,
            channels=as_grid.channels,
            pixels=patch_bytes,
        )
        feature = trainer.extract(task["patch_index"], patch)
        task["done"] = True
        # Plaintext leaves the node state the moment the feature exists.
        task["received"] = {}
        task["as_grid"] = None
        acc.fill(0)
        digest = hashlib.sha256(patch_bytes).hexdigest()
        return (
            state,
            [
                Send(
                    task["orchestrator"],
                    MsgType.TRAIN_RESULT,
                    {
                        "round_id": task["round_id"],
                        "subject": task["subject"],
                        "patch_index": task["patch_index"],
                        "feature": [round(float(v), 12) for v in feature],
                        "patch_digest": digest,
                    },
                )
            ],
            [],
        )

    def _fetch_error(self, state, msg, ctx):
        p = msg.payload
        key = f"{p.get('round_id')}:{p.get('subject')}"
        task = state["tasks"].get(key)
        if task is None or task["done"]:
            return state, [], []
        task["done"] = True
        return (
            state,
            [
                Send(
                    task["orchestrator"],
                    MsgType.TRAIN_RESULT,
                    {
                        "round_id": task["round_id"],
                        "subject": task["subject"],
                        "patch_index": task["patch_index"],
                        "error": f"fetch-failed: {p.get('error')}",
                    },
                )
            ],
            [],
        )

    def on_timer(self, state, payload, ctx):
        if payload.get("kind") != "heartbeat":
            return state, [], []
        open_tasks = [t for t in state["tasks"].values() if not t["done"]]
        sends = []
        if open_tasks:
            sends.append(
                Send(
                    open_tasks[0]["orchestrator"],
                    MsgType.ACK,
                    {
                        "heartbeat": True,
                        "node": ctx.node_id,
                        "open_tasks": len(open_tasks),
                        "t": round(ctx.now, 9),
                    },
                )
            )
            return state, sends, [Timer(state["heartbeat_s"], {"kind": "heartbeat"})]
        state["heartbeat_started"] = False
        return state, [], []


# -- orchestrator node ------------------------------------------------------


class OrchestratorBehavior(NodeBehavior):
    """Runs rounds against the vault and workstations; evaluates
    straggler scores on a heartbeat cadence and aborts at the deadline."""

    def on_script(self, state, event, ctx):
        if event.get("kind") == "train_request":
            return self._start_round(state, event, ctx)
        if event.get("kind") == "rtbf":
            return (
                state,
                [Send(state["vault"], MsgType.RTBF_REQUEST, {"subject": event["subject"]})],
                [],
            )
        if event.get("kind") == "gc":
            return state, [Send(state["vault"], MsgType.GC_SCAN, {})], []
        return state, [], []

    def _start_round(self, state, event, ctx):
        round_id = event["round_id"]
        n_p = event.get("n_p", 6)
        deadline_s = event.get("deadline_s", state.get("deadline_s", 60.0))
        profiles = [profile_from_dict(p) for p in state["candidates"]]
        workload = RoundWorkload(
            work_units=float(len(event["subjects"])),
            transfer_bytes=float(len(event["subjects"]) * state.get("share_bytes", 96 * 96 * 3)),
        )
        try:
            assignment, estimates = select_nodes(
                profiles, n_p, workload, deadline_s, state["skip_counts"]
            )
        except Exception as e:
            state["rounds"][round_id] = {"status": "aborted", "reason": str(e)}
            return state, [], []
        state["rounds"][round_id] = {
            "status": "running",
            "requester": event["requester"],
            "subjects": event["subjects"],
            "assignment": {str(k): v for k, v in assignment.items()},
            "estimates": {k: estimates[k] for k in assignment.values()},
            "started_at": ctx.now,
            "deadline_s": deadline_s,
            "excluded": {},
            "results": {},
            "dropped": [],
            "last_heartbeat": {ws: ctx.now for ws in assignment.values()},
            "authorized": [],
        }
        sends = [
            Send(
                state["vault"],
                MsgType.TRAIN_REQUEST,
                {
                    "round_id": round_id,
                    "requester": event["requester"],
                    "subjects": event["subjects"],
                    "assignment": {str(k): v for k, v in assignment.items()},
                },
            )
        ]
        timers = [
            Timer(state["heartbeat_s"], {"kind": "straggler_check", "round_id": round_id}),
            Timer(deadline_s, {"kind": "deadline", "round_id": round_id}),
        ]
        return state, sends, timers

    def on_message(self, state, msg, ctx):
        if msg.type == MsgType.AS_VALIDATE:
            return self._validated(state, msg, ctx)
        if msg.type == MsgType.TRAIN_RESULT:
            return self._result(state, msg, ctx)
        if msg.type == MsgType.ACK:
            return self._ack(state, msg, ctx)
        return state, [], []

    def _validated(self, state, msg, ctx):
        p = msg.payload
        rnd = state["rounds"].get(p["round_id"])
        if rnd is None:
            return state, [], []
        rnd["excluded"] = p["excluded"]
        rnd["authorized"] = p["authorized"]
        if not p["authorized"]:
            rnd["status"] = "no-data"
            rnd["reason"] = p.get("error", "no authorized subjects")
        return state, [], []

    def _result(self, state, msg, ctx):
        p = msg.payload
        rnd = state["rounds"].get(p["round_id"])
        if rnd is None or rnd["status"] not in ("running",):
            return state, [], []
        key = f"{p['subject']}:{p['patch_index']}"
        rnd["results"][key] = {
            "workstation": msg.src,
            "feature": p.get("feature"),
            "error": p.get("error"),
            "patch_digest": p.get("patch_digest"),
        }
        rnd.setdefault("progress", {})[msg.src] = ctx.now
        expected = len(rnd["authorized"]) * len(rnd["assignment"])
        if len(rnd["results"]) >= expected and expected > 0:
            self._aggregate(state, rnd)
        return state, [], []

    def _aggregate(self, state, rnd):
        n_p = len(rnd["assignment"])
        trainer = StubTrainer(state.get("share_bytes", 96 * 96 * 3), n_p=n_p)
        embeddings = {}
        for subject in rnd["authorized"]:
            feats = []
            for patch_index in sorted(int(k) for k in rnd["assignment"]):
                entry = rnd["results"].get(f"{subject}:{patch_index}")
                if entry is None or entry.get("feature") is None:
                    feats.append(np.zeros(EMBEDDING_DIM))
                else:
                    feats.append(np.asarray(entry["feature"]))
            embeddings[subject] = trainer.aggregate(feats)
        rnd["embedding_digests"] = {
            s: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest()
            for s, v in embeddings.items()
        }
        rnd["status"] = "complete"

    def _ack(self, state, msg, ctx):
        p = msg.payload
        if p.get("heartbeat"):
            for rnd in state["rounds"].values():
                if isinstance(rnd, dict) and msg.src in rnd.get("last_heartbeat", {}):
                    rnd["last_heartbeat"][msg.src] = ctx.now
        if "gc_report" in p:
            state["gc_reports"].append(p["gc_report"])
        if "rtbf" in p:
            state["rtbf_acks"].append(p["rtbf"])
        return state, [], []

    def on_timer(self, state, payload, ctx):
        rnd = state["rounds"].get(payload.get("round_id"))
        if rnd is None or rnd["status"] != "running":
            return state, [], []
        if payload["kind"] == "deadline":
            rnd["status"] = "aborted"
            rnd["reason"] = "dispatch-timeout"
            missing = []
            for subject in rnd["authorized"]:
                for patch_index in sorted(int(k) for k in rnd["assignment"]):
                    if f"{subject}:{patch_index}" not in rnd["results"]:
                        missing.append([subject, patch_index])
            rnd["missing"] = missing
            return state, [], []
        if payload["kind"] != "straggler_check":
            return state, [], []
        sends = []
        hb = state["heartbeat_s"]
        for patch_key, ws in list(rnd["assignment"].items()):
            patch_index = int(patch_key)
            done = all(
                f"{subject}:{patch_index}" in rnd["results"]
                for subject in rnd["authorized"]
            )
            if done or not rnd["authorized"]:
                continue
            elapsed = ctx.now - rnd["started_at"]
            expected = max(rnd["estimates"].get(ws, hb), 1e-9)
            missed = int((ctx.now - rnd["last_heartbeat"].get(ws, rnd["started_at"])) // hb)
            score = straggler_score(elapsed, expected, state["lambda"])
            if missed >= MISSED_HEARTBEAT_LIMIT or score < state["theta"]:
                reason = (
                    "heartbeat"
                    if missed >= MISSED_HEARTBEAT_LIMIT
                    else f"score {score:.3f} < theta {state['theta']}"
                )
                state["skip_counts"][ws] = state["skip_counts"].get(ws, 0) + 1
                rnd["dropped"].append(
                    {"node_id": ws, "patch_index": patch_index, "reason": reason}
                )
                replacement = self._find_replacement(state, rnd)
                if replacement is None:
                    # A node that never answered at all means the dispatch
                    # itself is timing out; anything else is a capacity gap.
                    never_heard = rnd["last_heartbeat"].get(ws) == rnd["started_at"]
                    rnd["status"] = "aborted"
                    rnd["reason"] = (
                        "dispatch-timeout" if never_heard else "no replacement workstation"
                    )
                    return state, [], []
                rnd["assignment"][patch_key] = replacement
                rnd["estimates"][replacement] = rnd["estimates"].get(ws, hb)
                rnd["last_heartbeat"][replacement] = ctx.now
                sends.append(
                    Send(
                        state["vault"],
                        MsgType.TRAIN_REQUEST,
                        {
                            "round_id": payload["round_id"],
                            "redispatch": True,
                            "patch_index": patch_index,
                            "workstation": replacement,
                        },
                    )
                )
        timers = [Timer(hb, {"kind": "straggler_check", "round_id": payload["round_id"]})]
        return state, sends, timers

    def _find_replacement(self, state, rnd) -> str | None:
        used = set(rnd["assignment"].values())
        used.update(d["node_id"] for d in rnd["dropped"])
        for p in state["candidates"]:
            profile = profile_from_dict(p)
            if profile.role == NodeRole.WORKSTATION and profile.node_id not in used:
                return profile.node_id
        return None


class ClientBehavior(NodeBehavior):
    """Thin initiator for revocation and GC requests."""

    def on_script(self, state, event, ctx):
        if event.get("kind") == "rtbf":
            return (
                state,
                [Send(state["vault"], MsgType.RTBF_REQUEST, {"subject": event["subject"]})],
                [],
            )
        if event.get("kind") == "gc":
            return state, [Send(state["vault"], MsgType.GC_SCAN, {})], []
        return state, [], []

    def on_message(self, state, msg, ctx):
        state.setdefault("replies", []).append(
            {"type": msg.type.value, "payload": msg.payload}
        )
        return state, [], []


# -- wiretap audit ----------------------------------------------------------


@dataclass
class WiretapObservation:
    tapped_links: list[frozenset]
    captured_by_link: dict[str, list[dict]]
    verdicts: dict[tuple[str, int], dict] = field(default_factory=dict)


def wiretap_audit(
    trace: list[SimMessage],
    tapped_links: list[tuple[str, str]],
    structure: AccessStructure,
    originals: dict[tuple[str, int], bytes] | None = None,
) -> WiretapObservation:
    """Replay a trace from the adversary's viewpoint.

    Collects every share payload crossing a tapped (undirected) link,
    maps captured grids to share labels (a private share label only
    counts once all of its sub-grids are captured), and classifies each
    (subject, patch) against the access structure. Whenever a pair comes
    out qualified the XOR reconstruction actually runs, and if the true
    patch bytes are provided the result is verified bit-exact.
    """
    taps = [frozenset(link) for link in tapped_links]
    captured_by_link: dict[str, list[dict]] = {
        "|".join(sorted(t)): [] for t in taps
    }
    as_by_subject: dict[str, bytes] = {}
    parts: dict[tuple[str, int], dict[int, tuple[int, bytes]]] = {}

    for msg in trace:
        link = frozenset((msg.src, msg.dst))
        if link not in taps:
            continue
        link_key = "|".join(sorted(link))
        if msg.type == MsgType.AS_DISPATCH:
            doc = msg.payload["as_grid"]
            captured_by_link[link_key].append(
                {"kind": "authentication", "subject": doc["subject"], "bytes": len(doc["payload_b64"])}
            )
            as_by_subject[doc["subject"]] = unb64(doc["payload_b64"])
        elif msg.type == MsgType.PS_RESPONSE:
            doc = msg.payload["grid"]
            captured_by_link[link_key].append(
                {
                    "kind": "private",
                    "subject": doc["subject"],
                    "patch_index": doc["patch_index"],
                    "subgrid_index": doc["subgrid_index"],
                    "bytes": len(doc["payload_b64"]),
                }
            )
            parts.setdefault((doc["subject"], doc["patch_index"]), {})[
                doc["subgrid_index"]
            ] = (doc["subgrid_total"], unb64(doc["payload_b64"]))

    # Label sets per subject: AS plus every fully captured private share.
    subjects = set(as_by_subject) | {s for s, _ in parts}
    obs = WiretapObservation(tapped_links=taps, captured_by_link=captured_by_link)
    for subject in sorted(subjects):
        labels = set()
        if subject in as_by_subject:
            labels.add(AS_LABEL)
        merged: dict[int, bytes] = {}
        for (s, patch_index), pieces in parts.items():
            if s != subject:
                continue
            total = next(iter(pieces.values()))[0]
            if len(pieces) == total:
                acc = np.zeros(len(next(iter(pieces.values()))[1]), dtype=np.uint8)
                for _, payload in pieces.values():
                    acc ^= np.frombuffer(payload, dtype=np.uint8)
                merged[patch_index] = acc.tobytes()
                labels.add(ps_label(patch_index))
        for secret in range(structure.secret_count):
            qualified = is_qualified(structure, secret, labels & set(structure.labels))
            verdict = {"reconstructable": qualified, "verified": None}
            if qualified and secret in merged and subject in as_by_subject:
                recovered = (
                    np.frombuffer(as_by_subject[subject], dtype=np.uint8)
                    ^ np.frombuffer(merged[secret], dtype=np.uint8)
                ).tobytes()
                verdict["recovered_digest"] = hashlib.sha256(recovered).hexdigest()
                if originals is not None and (subject, secret) in originals:
                    verdict["verified"] = recovered == originals[(subject, secret)]
            obs.verdicts[(subject, secret)] = verdict
    return obs


def workstation_link_pairs(trace: list[SimMessage], workstation_ids: set[str]) -> set:
    """(src, dst) pairs between two workstations, for the
    non-communication audit; empty in a healthy round."""
    return {
        (m.src, m.dst)
        for m in trace
        if m.src in workstation_ids and m.dst in workstation_ids
    }
