"""Round orchestration: pick workstations, dispatch shares, reconstruct
patches, and run the pluggable embedding trainer.

Selection is deadline-greedy: each candidate's completion estimate is
workload / compute_rate + bytes / bandwidth, candidates are sorted by
(times previously dropped, estimate, id), and the first n_p compliant
ones take the patch slots. Straggler removal is score-based: a node's
survival score exp(-lambda * lateness) dropping below theta, or two
missed heartbeats, evicts it and promotes the next compliant candidate.
Repeatedly dropped nodes sink in future selections via their skip count.

Workstations are independent and never talk to each other; each one
holds exactly one patch index, fetches that share, reconstructs, trains,
and discards. The trainer is a contract (per-patch feature extraction
plus aggregation); the built-in stub is a deterministic linear map so
rounds are reproducible with no ML stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .buffers import BufferRegistry
from .distribution import PlacementPlan, grids_for_patch, locate_shares
from .errors import (
    IncompleteShareError,
    InsufficientCapacityError,
    NoDataError,
)
from .framing import b64
from .shares import PATCH_COUNT, PatchImage, ShareGrid, reconstruct_patch

EMBEDDING_DIM = 512

DEFAULT_LAMBDA = 1.0
DEFAULT_THETA = 0.5
DEFAULT_HEARTBEAT_S = 5.0
MISSED_HEARTBEAT_LIMIT = 2


class NodeRole(Enum):
    INSTITUTION = "institution"
    WORKSTATION = "workstation"


@dataclass(frozen=True)
class NodeProfile:
    node_id: str
    compute_rate: float  # work-units per second
    bandwidth: float  # bytes per second
    energy_budget: float = math.inf
    availability_p: float = 1.0
    role: NodeRole = NodeRole.WORKSTATION

    def __post_init__(self):
        if self.compute_rate <= 0 or self.bandwidth <= 0:
            raise ValueError(f"{self.node_id}: rates must be positive")
        if not 0.0 <= self.availability_p <= 1.0:
            raise ValueError(f"{self.node_id}: availability must be a probability")


@dataclass(frozen=True)
class RoundWorkload:
    work_units: float
    transfer_bytes: float

    @classmethod
    def for_subjects(cls, n_subjects: int, share_bytes: int) -> "RoundWorkload":
        # One work-unit per subject; transfer is the share payloads.
        return cls(work_units=float(n_subjects), transfer_bytes=float(n_subjects * share_bytes))


def completion_estimate(node: NodeProfile, workload: RoundWorkload) -> float:
    return workload.work_units / node.compute_rate + workload.transfer_bytes / node.bandwidth


class RoundStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETE = "complete"
    ABORTED = "aborted"


@dataclass
class TrainingRound:
    round_id: str
    subjects: list[bytes]
    assignment: dict[int, str]  # patch index -> workstation id
    deadline_s: float
    estimates: dict[str, float] = field(default_factory=dict)
    dropped_nodes: list[dict] = field(default_factory=list)
    status: RoundStatus = RoundStatus.PENDING

    def __post_init__(self):
        ids = list(self.assignment.values())
        if len(set(ids)) != len(ids):
            raise ValueError("workstations must be distinct")


@dataclass(frozen=True)
class NodeObservation:
    """What the orchestrator has seen from one workstation mid-round."""

    node_id: str
    elapsed_s: float
    expected_s: float
    heartbeats_missed: int = 0


def select_nodes(
    candidates: list[NodeProfile],
    n_p: int,
    workload: RoundWorkload,
    deadline_s: float,
    skip_counts: dict[str, int] | None = None,
) -> tuple[dict[int, str], dict[str, float]]:
    """Greedy deadline-feasible selection.

    Returns (patch index -> node id, estimates for every candidate).
    Raises with the near-misses when fewer than n_p candidates fit the
    deadline.
    """
    skip_counts = skip_counts or {}
    workstations = [c for c in candidates if c.role == NodeRole.WORKSTATION]
    if len(workstations) < n_p:
        raise InsufficientCapacityError(
            f"need {n_p} workstations, only {len(workstations)} candidates"
        )
    estimates = {c.node_id: completion_estimate(c, workload) for c in workstations}
    ranked = sorted(
        workstations,
        key=lambda c: (skip_counts.get(c.node_id, 0), estimates[c.node_id], c.node_id),
    )
    compliant = [c for c in ranked if estimates[c.node_id] <= deadline_s]
    if len(compliant) < n_p:
        near = sorted(
            ((c.node_id, estimates[c.node_id]) for c in ranked if estimates[c.node_id] > deadline_s),
            key=lambda t: t[1],
        )
        raise InsufficientCapacityError(
            f"only {len(compliant)} of {len(workstations)} workstations meet the "
            f"{deadline_s}s deadline, need {n_p}",
            near_misses=near[: n_p],
        )
    chosen = compliant[:n_p]
    return {i: c.node_id for i, c in enumerate(chosen)}, estimates


def straggler_score(elapsed_s: float, expected_s: float, lam: float = DEFAULT_LAMBDA) -> float:
    """exp(-lambda * lateness), lateness = max(0, elapsed/expected - 1)."""
    lateness = max(0.0, elapsed_s / expected_s - 1.0)
    return math.exp(-lam * lateness)


def drop_stragglers(
    rnd: TrainingRound,
    observations: list[NodeObservation],
    candidates: list[NodeProfile],
    workload: RoundWorkload,
    rng: np.random.Generator,
    *,
    lam: float = DEFAULT_LAMBDA,
    theta: float = DEFAULT_THETA,
    skip_counts: dict[str, int] | None = None,
) -> TrainingRound:
    """Remove silent or slow workstations and promote replacements.

    A node goes when it misses two heartbeats or its survival score
    falls below theta. Each removal bumps the node's skip count, which
    demotes it in later selections. With no replacement available the
    round aborts with a partial report.
    """
    skip_counts = skip_counts if skip_counts is not None else {}
    obs_by_id = {o.node_id: o for o in observations}
    assigned = dict(rnd.assignment)
    dropped = list(rnd.dropped_nodes)

    in_use = set(assigned.values())
    estimates = {
        c.node_id: completion_estimate(c, workload)
        for c in candidates
        if c.role == NodeRole.WORKSTATION
    }
    spare = sorted(
        (
            c
            for c in candidates
            if c.role == NodeRole.WORKSTATION
            and c.node_id not in in_use
            and estimates[c.node_id] <= rnd.deadline_s
        ),
        key=lambda c: (skip_counts.get(c.node_id, 0), estimates[c.node_id], c.node_id),
    )

    for patch_index, node_id in list(assigned.items()):
        obs = obs_by_id.get(node_id)
        if obs is None:
            continue
        reason = None
        if obs.heartbeats_missed >= MISSED_HEARTBEAT_LIMIT:
            reason = "heartbeat"
        else:
            score = straggler_score(obs.elapsed_s, obs.expected_s, lam)
            if score < theta:
                reason = f"score {score:.3f} < theta {theta}"
        if reason is None:
            continue
        skip_counts[node_id] = skip_counts.get(node_id, 0) + 1
        dropped.append({"node_id": node_id, "patch_index": patch_index, "reason": reason})
        if not spare:
            return replace_round(
                rnd, assignment=assigned, dropped=dropped, status=RoundStatus.ABORTED
            )
        replacement = spare.pop(0)
        assigned[patch_index] = replacement.node_id

    return replace_round(rnd, assignment=assigned, dropped=dropped, status=rnd.status)


def replace_round(
    rnd: TrainingRound, assignment: dict[int, str], dropped: list[dict], status: RoundStatus
) -> TrainingRound:
    return TrainingRound(
        round_id=rnd.round_id,
        subjects=rnd.subjects,
        assignment=assignment,
        deadline_s=rnd.deadline_s,
        estimates=rnd.estimates,
        dropped_nodes=dropped,
        status=status,
    )


# -- reconstruction --------------------------------------------------------


@dataclass
class WorkstationResult:
    node_id: str
    patch_index: int
    patch: PatchImage | None
    error: str | None = None


def dispatch_and_reconstruct(
    rnd: TrainingRound,
    as_handles: dict[str, ShareGrid],
    plans: dict[str, PlacementPlan],
    registry: BufferRegistry | None = None,
) -> dict[str, list[WorkstationResult]]:
    """Reassemble every authorized subject's patches on their assigned
    workstations (direct in-process mode; the simulated network drives
    the same reconstruction through messages).

    Returns per-subject results; a patch dropped at distribution time or
    missing sub-grids yield an unavailable-patch entry rather than
    failing the round.
    """
    results: dict[str, list[WorkstationResult]] = {}
    for subject_hex, as_grid in as_handles.items():
        plan = plans[subject_hex]
        per_subject = []
        for patch_index, node_id in sorted(rnd.assignment.items()):
            if patch_index not in plan.source_patches or not locate_shares(plan, patch_index):
                per_subject.append(
                    WorkstationResult(node_id, patch_index, None, error="unavailable-patch")
                )
                continue
            grids = grids_for_patch(plan, patch_index)
            try:
                patch = reconstruct_patch(as_grid, grids if len(grids) > 1 else grids[0])
            except IncompleteShareError as e:
                per_subject.append(
                    WorkstationResult(node_id, patch_index, None, error=str(e))
                )
                continue
            if registry is not None:
                registry.register(
                    f"{subject_hex}:{patch_index}",
                    np.frombuffer(patch.pixels, dtype=np.uint8).copy(),
                )
            per_subject.append(WorkstationResult(node_id, patch_index, patch))
        results[subject_hex] = per_subject
    return results


# -- trainer contract ------------------------------------------------------


class PatchFeatureTrainer:
    """Contract every trainer fulfils: one feature vector per patch, one
    aggregation over the bundle's features."""

    def extract(self, patch_index: int, patch: PatchImage) -> np.ndarray:
        raise NotImplementedError

    def aggregate(self, features: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


class StubTrainer(PatchFeatureTrainer):
    """Deterministic linear stand-in for the real patch networks.

    A patch's feature is the sliding-window correlation of its bytes
    with a fixed seeded weight vector (a linear map, so blanking part of
    a patch provably moves the output); aggregation concatenates the
    per-patch features and applies a second fixed linear map.
    """

    def __init__(self, patch_bytes: int, n_p: int = PATCH_COUNT, seed: int = 0x501D):
        g = np.random.default_rng(seed)
        self._w_patch = g.standard_normal(patch_bytes + EMBEDDING_DIM - 1)
        self._w_agg = g.standard_normal(n_p * EMBEDDING_DIM + EMBEDDING_DIM - 1)
        self.n_p = n_p
        self.patch_bytes = patch_bytes

    def extract(self, patch_index: int, patch: PatchImage) -> np.ndarray:
        x = np.frombuffer(patch.pixels, dtype=np.uint8).astype(np.float64)
        if x.size != self.patch_bytes:
            raise IncompleteShareError(
                f"stub trainer configured for {self.patch_bytes} bytes, got {x.size}"
            )
        return np.correlate(self._w_patch, x / 255.0, mode="valid")

    def aggregate(self, features: list[np.ndarray]) -> np.ndarray:
        flat = np.concatenate(features)
        if flat.size != self.n_p * EMBEDDING_DIM:
            raise IncompleteShareError(
                f"aggregation expects {self.n_p} features of {EMBEDDING_DIM}"
            )
        return np.correlate(self._w_agg, flat, mode="valid")


@dataclass
class RoundMetrics:
    round_id: str
    subjects_trained: int
    failed_patches: list[dict]
    trainer: str
    embedding_by_subject: dict[str, np.ndarray]


def train_round(
    rnd: TrainingRound,
    reconstructed: dict[str, list[WorkstationResult]],
    trainer: PatchFeatureTrainer,
    registry: BufferRegistry | None = None,
) -> RoundMetrics:
    """Run the trainer over every reconstructed bundle and aggregate.

    A failed or unavailable patch contributes a zero feature vector and
    is flagged in the metrics. Reconstructed patch buffers are zeroized
    once their features are out.
    """
    if not reconstructed:
        raise NoDataError("no subjects to train on")
    failed: list[dict] = []
    embeddings: dict[str, np.ndarray] = {}
    for subject_hex, results in reconstructed.items():
        features = []
        for res in sorted(results, key=lambda r: r.patch_index):
            if res.patch is None:
                failed.append(
                    {
                        "subject": subject_hex,
                        "patch_index": res.patch_index,
                        "error": res.error,
                    }
                )
                features.append(np.zeros(EMBEDDING_DIM))
                continue
            try:
                features.append(trainer.extract(res.patch_index, res.patch))
            except Exception as e:  # trainer failure flags the patch, round continues
                failed.append(
                    {"subject": subject_hex, "patch_index": res.patch_index, "error": str(e)}
                )
                features.append(np.zeros(EMBEDDING_DIM))
        try:
            embeddings[subject_hex] = trainer.aggregate(features)
        except Exception as e:  # no embedding for this subject, round continues
            failed.append(
                {"subject": subject_hex, "patch_index": None, "error": f"aggregate: {e}"}
            )
    if registry is not None:
        registry.zeroize_all()
    if rnd.status != RoundStatus.ABORTED:
        rnd.status = RoundStatus.COMPLETE
    return RoundMetrics(
        round_id=rnd.round_id,
        subjects_trained=len(embeddings),
        failed_patches=failed,
        trainer=trainer.describe(),
        embedding_by_subject=embeddings,
    )


class ExternalTrainerClient(PatchFeatureTrainer):
    """Trainer contract over the framed bridge protocol.

    Sends TRAIN_PATCH frames (base64 patch bytes, or the stacked
    per-patch features for aggregation) and expects TRAIN_RESULT frames
    carrying 512-float vectors. Retries a dropped connection once per
    call; a patch that still fails is reported upward as a trainer
    failure, which the round flags and survives.
    """

    def __init__(self, host: str, port: int, retries: int = 1, timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.retries = retries
        self.timeout_s = timeout_s
        self._next_id = 0

    def _roundtrip(self, message: dict) -> dict:
        import socket as socketlib

        from .framing import read_frame, write_frame

        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                with socketlib.create_connection(
                    (self.host, self.port), timeout=self.timeout_s
                ) as sock:
                    write_frame(sock, message)
                    reply = read_frame(sock)
                if reply is None:
                    raise ConnectionError("bridge closed the connection")
                if reply.get("type") == "ERROR":
                    raise RuntimeError(f"bridge error: {reply.get('error')}")
                return reply
            except (OSError, ConnectionError) as e:
                last_error = e
        raise ConnectionError(f"bridge unreachable after retries: {last_error}")

    def _msg_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def extract(self, patch_index: int, patch: PatchImage) -> np.ndarray:
        reply = self._roundtrip(
            {
                "type": "TRAIN_PATCH",
                "msg_id": self._msg_id(),
                "patch_index": patch_index,
                "width": patch.width,
                "height": patch.height,
                "channels": patch.channels,
                "patch_b64": b64(patch.pixels),
            }
        )
        vec = np.asarray(reply["vector"], dtype=np.float64)
        if vec.shape != (EMBEDDING_DIM,):
            raise RuntimeError(f"bridge returned vector of shape {vec.shape}")
        return vec

    def aggregate(self, features: list[np.ndarray]) -> np.ndarray:
        reply = self._roundtrip(
            {
                "type": "TRAIN_PATCH",
                "msg_id": self._msg_id(),
                "features": [f.tolist() for f in features],
            }
        )
        vec = np.asarray(reply["vector"], dtype=np.float64)
        if vec.shape != (EMBEDDING_DIM,):
            raise RuntimeError(f"bridge returned vector of shape {vec.shape}")
        return vec

    def describe(self) -> str:
        return f"external@{self.host}:{self.port}"
