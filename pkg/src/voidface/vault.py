"""Trusted-party custody of authentication shares.

The vault is the single authority that can turn private shares back
into patches: every qualified set needs the authentication share it
holds. Deleting that one grid is therefore a complete, immediate
revocation of a subject's participation in any future training, and the
private shares left behind at institutions become abandoned noise that
a periodic garbage-collection pass discards.

Persistence is an append-only JSON-lines log plus one share file per
active subject and a convenience snapshot:

    <dir>/log.jsonl        REGISTER / REVOKE / GC_PASS events
    <dir>/as/<subject>.share
    <dir>/snapshot.json

Write order on registration is AS bytes first, log event second, so a
crash can never leave a record that validates without stored AS bytes.
State is rebuilt from the log on open. Mutations are serialized through
one lock; validations read the in-memory state.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AuthorizationError,
    NoDataError,
    SubjectNotFoundError,
    VaultConflictError,
)
from .shares import ShareGrid
from . import shareio


class ExclusionReason:
    RTBF = "RTBF"
    NOT_ALLOWED = "NOT_ALLOWED"
    UNKNOWN_SUBJECT = "UNKNOWN_SUBJECT"


class InstitutionUnreachable(Exception):
    """An institution endpoint did not answer a deletion order."""


@dataclass
class SubjectRecord:
    subject_id: bytes
    active: bool
    created_at: float
    revoked_at: float | None = None
    allow_list: frozenset[str] = frozenset()
    placement_institutions: tuple[int, ...] = ()
    revocation_history: list[float] = field(default_factory=list)

    @property
    def subject_hex(self) -> str:
        return self.subject_id.hex()


@dataclass
class GCReport:
    """Outcome of one garbage-collection pass over revoked subjects."""

    revoked_subjects: list[str]
    acknowledged: list[dict]
    queued: list[dict]

    def to_json(self) -> dict:
        return {
            "revoked_subjects": self.revoked_subjects,
            "acknowledged": self.acknowledged,
            "queued": self.queued,
        }


class DirectoryInstitution:
    """Institution endpoint backed by a directory of share files.

    A ``.offline`` marker file simulates an unreachable institution.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def is_reachable(self) -> bool:
        return self.path.is_dir() and not (self.path / ".offline").exists()

    def delete_subject(self, subject_id: bytes) -> list[str]:
        if not self.is_reachable():
            raise InstitutionUnreachable(str(self.path))
        deleted = []
        prefix = subject_id.hex()
        for f in sorted(self.path.glob(f"{prefix}*.share")):
            # Overwrite before unlink so stale bytes do not linger.
            size = f.stat().st_size
            f.write_bytes(bytes(size))
            f.unlink()
            deleted.append(f.name)
        return deleted


class Vault:
    """Durable registry of subjects and their authentication shares."""

    def __init__(self, directory: str | Path, clock=time.time):
        self.directory = Path(directory)
        self.as_dir = self.directory / "as"
        self.log_path = self.directory / "log.jsonl"
        self.snapshot_path = self.directory / "snapshot.json"
        self.clock = clock
        self._lock = threading.Lock()
        self._records: dict[str, SubjectRecord] = {}
        self.integrity_issues: list[str] = []
        self.as_dir.mkdir(parents=True, exist_ok=True)
        self._replay_log()

    # -- persistence ------------------------------------------------------

    def _append_event(self, event: dict) -> None:
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def _write_snapshot(self) -> None:
        doc = {
            hex_id: {
                "active": r.active,
                "created_at": r.created_at,
                "revoked_at": r.revoked_at,
                "allow_list": sorted(r.allow_list),
                "placement_institutions": list(r.placement_institutions),
                "revocation_history": r.revocation_history,
            }
            for hex_id, r in self._records.items()
        }
        self.snapshot_path.write_text(json.dumps(doc, indent=2, sort_keys=True))

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        for line in self.log_path.read_text().splitlines():
            if not line.strip():
                continue
            ev = json.loads(line)
            kind = ev["event"]
            if kind == "REGISTER":
                self._records[ev["subject"]] = SubjectRecord(
                    subject_id=bytes.fromhex(ev["subject"]),
                    active=True,
                    created_at=ev["t"],
                    allow_list=frozenset(ev.get("allow_list", [])),
                    placement_institutions=tuple(ev.get("placement_institutions", [])),
                    revocation_history=self._records[ev["subject"]].revocation_history
                    if ev["subject"] in self._records
                    else [],
                )
            elif kind == "REVOKE":
                rec = self._records.get(ev["subject"])
                if rec is not None:
                    rec.active = False
                    rec.revoked_at = ev["t"]
                    rec.revocation_history.append(ev["t"])
            elif kind == "PLACEMENT":
                rec = self._records.get(ev["subject"])
                if rec is not None:
                    rec.placement_institutions = tuple(ev["institutions"])
        # A record only validates if its AS bytes actually survived.
        for hex_id, rec in self._records.items():
            if rec.active and not self._as_path(hex_id).exists():
                rec.active = False
                self.integrity_issues.append(
                    f"subject {hex_id} logged active but AS bytes missing; deactivated"
                )

    def _as_path(self, subject_hex: str) -> Path:
        return self.as_dir / f"{subject_hex}.share"

    # -- operations -------------------------------------------------------

    def register_subject(
        self,
        subject_id: bytes,
        as_grid: ShareGrid,
        placement_institutions: tuple[int, ...] = (),
        allow_list=(),
    ) -> SubjectRecord:
        """Persist a subject's authentication share and activate it.

        Registering an id that is already active is a conflict;
        re-registering after revocation starts a fresh record and keeps
        the old revocation history.
        """
        hex_id = subject_id.hex()
        with self._lock:
            existing = self._records.get(hex_id)
            if existing is not None and existing.active:
                raise VaultConflictError(f"subject {hex_id} already active")
            # AS bytes hit disk before the activating log event.
            shareio.write_share(as_grid, self._as_path(hex_id))
            now = self.clock()
            self._append_event(
                {
                    "event": "REGISTER",
                    "subject": hex_id,
                    "t": now,
                    "allow_list": sorted(allow_list),
                    "placement_institutions": list(placement_institutions),
                }
            )
            record = SubjectRecord(
                subject_id=subject_id,
                active=True,
                created_at=now,
                allow_list=frozenset(allow_list),
                placement_institutions=tuple(placement_institutions),
                revocation_history=existing.revocation_history if existing else [],
            )
            self._records[hex_id] = record
            self._write_snapshot()
            return record

    def get_record(self, subject_id: bytes) -> SubjectRecord | None:
        return self._records.get(subject_id.hex())

    def record_placement(self, subject_id: bytes, institutions: tuple[int, ...]) -> None:
        """Attach (or replace) the subject's placement after distribution."""
        hex_id = subject_id.hex()
        with self._lock:
            rec = self._records.get(hex_id)
            if rec is None:
                raise SubjectNotFoundError(f"unknown subject {hex_id}")
            self._append_event(
                {"event": "PLACEMENT", "subject": hex_id, "t": self.clock(),
                 "institutions": list(institutions)}
            )
            rec.placement_institutions = tuple(institutions)
            self._write_snapshot()

    def load_as(self, subject_id: bytes) -> ShareGrid:
        rec = self.get_record(subject_id)
        if rec is None or not rec.active:
            raise SubjectNotFoundError(f"no active record for {subject_id.hex()}")
        return shareio.read_share(self._as_path(subject_id.hex()))

    def validate_training_request(
        self, requester_id: str, subject_ids: list[bytes]
    ) -> tuple[list[bytes], dict[str, ShareGrid], dict[str, str]]:
        """Check a requester against each subject's allow-list.

        Returns (authorized subjects, AS handles by subject hex,
        exclusions by subject hex with reason codes). A requester on no
        relevant allow-list at all is an authorization error; a valid
        requester with zero authorized subjects is a no-data error.
        """
        known_anywhere = any(
            requester_id in rec.allow_list
            for sid in subject_ids
            if (rec := self._records.get(sid.hex())) is not None
        )
        if not known_anywhere:
            raise AuthorizationError(
                f"requester {requester_id!r} is not authorized for any requested subject"
            )
        authorized: list[bytes] = []
        handles: dict[str, ShareGrid] = {}
        excluded: dict[str, str] = {}
        for sid in subject_ids:
            hex_id = sid.hex()
            rec = self._records.get(hex_id)
            if rec is None:
                excluded[hex_id] = ExclusionReason.UNKNOWN_SUBJECT
            elif not rec.active:
                excluded[hex_id] = ExclusionReason.RTBF
            elif requester_id not in rec.allow_list:
                excluded[hex_id] = ExclusionReason.NOT_ALLOWED
            else:
                authorized.append(sid)
                handles[hex_id] = shareio.read_share(self._as_path(hex_id))
        if not authorized:
            raise NoDataError("no authorized subjects")
        return authorized, handles, excluded

    def rtbf_revoke(self, subject_id: bytes) -> dict:
        """Erase the subject's authentication share and deactivate it.

        The share file is overwritten with zeros and unlinked, then the
        revocation is logged: a constant number of store operations, so
        revocation takes effect immediately. Idempotent on repeat calls.
        """
        hex_id = subject_id.hex()
        with self._lock:
            rec = self._records.get(hex_id)
            if rec is None:
                raise SubjectNotFoundError(f"unknown subject {hex_id}")
            if not rec.active:
                return {"subject_id": hex_id, "revoked": True, "already_revoked": True}
            as_path = self._as_path(hex_id)
            if as_path.exists():
                size = as_path.stat().st_size
                as_path.write_bytes(bytes(size))
                as_path.unlink()
            now = self.clock()
            self._append_event({"event": "REVOKE", "subject": hex_id, "t": now})
            rec.active = False
            rec.revoked_at = now
            rec.revocation_history.append(now)
            self._write_snapshot()
            return {
                "subject_id": hex_id,
                "revoked": True,
                "already_revoked": False,
                "revoked_at": now,
            }

    def revoked_subjects(self) -> list[SubjectRecord]:
        return [r for r in self._records.values() if not r.active]

    def log_gc_pass(self, report: dict) -> None:
        """Record a GC pass that was carried out by an external driver
        (the simulated network delivers the deletion orders itself)."""
        with self._lock:
            self._append_event({"event": "GC_PASS", "t": self.clock(), "report": report})

    def gc_abandoned_shares(self, institution_directory) -> GCReport:
        """Order every institution in each revoked subject's placement to
        delete that subject's grids.

        ``institution_directory`` maps institution id to an endpoint with
        ``delete_subject(subject_id) -> list``, raising
        InstitutionUnreachable on failure. Unreachable institutions land
        in the retry queue instead of failing the pass; a later pass
        retries them because revoked subjects are rescanned every time.
        """
        revoked = self.revoked_subjects()
        acknowledged: list[dict] = []
        queued: list[dict] = []
        for rec in revoked:
            targets = rec.placement_institutions or tuple(institution_directory)
            for inst_id in targets:
                endpoint = institution_directory.get(inst_id)
                if endpoint is None:
                    queued.append(
                        {"institution": inst_id, "subject": rec.subject_hex, "why": "no endpoint"}
                    )
                    continue
                try:
                    deleted = endpoint.delete_subject(rec.subject_id)
                except InstitutionUnreachable:
                    queued.append(
                        {"institution": inst_id, "subject": rec.subject_hex, "why": "unreachable"}
                    )
                    continue
                acknowledged.append(
                    {
                        "institution": inst_id,
                        "subject": rec.subject_hex,
                        "deleted": deleted,
                    }
                )
        report = GCReport(
            revoked_subjects=[r.subject_hex for r in revoked],
            acknowledged=acknowledged,
            queued=queued,
        )
        with self._lock:
            self._append_event(
                {"event": "GC_PASS", "t": self.clock(), "report": report.to_json()}
            )
        return report
