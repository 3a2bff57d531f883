"""Operator command line.

One binary, seven subcommands: prepare, distribute, train, rtbf, gc,
metrics, simulate. Flags beat environment variables (VOIDFACE_ prefix)
which beat the optional JSON config file. Exit codes are stable:

    0  success
    2  usage / bad input
    3  landmark error (missing or out-of-bounds box)
    4  subject conflict (already registered)
    5  subject or file not found
    6  requester not authorized
    7  no authorized subjects (e.g. all revoked)
    8  capacity exceeded (selection or structure limits)
    9  share format error (magic/version/CRC)
    10 incomplete share set
"""

from __future__ import annotations

import hashlib
import json
import sys
import uuid
from pathlib import Path

import click
import numpy as np

from . import distribution, metrics, shareio
from .buffers import BufferRegistry
from .errors import (
    AuthorizationError,
    CapacityError,
    IncompleteShareError,
    InsufficientCapacityError,
    LandmarkError,
    NoDataError,
    ShareFormatError,
    SubjectNotFoundError,
    VaultConflictError,
    VoidfaceError,
)
from .orchestrator import (
    ExternalTrainerClient,
    NodeProfile,
    NodeRole,
    RoundWorkload,
    StubTrainer,
    TrainingRound,
    dispatch_and_reconstruct,
    select_nodes,
    train_round,
)
from .patches import DEFAULT_PATCH_SIZE, IngestionSession, LandmarkSet, share_bundle
from .rng import SystemEntropy, deterministic_rng
from .shares import PATCH_KINDS
from .vault import DirectoryInstitution, Vault

EXIT_CODES = {
    LandmarkError: 3,
    VaultConflictError: 4,
    SubjectNotFoundError: 5,
    FileNotFoundError: 5,
    AuthorizationError: 6,
    NoDataError: 7,
    CapacityError: 8,
    InsufficientCapacityError: 8,
    ShareFormatError: 9,
    IncompleteShareError: 10,
}


def _exit_for(exc: Exception) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 2


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_for(exc))


def _subject_bytes(subject: str) -> bytes:
    try:
        return uuid.UUID(subject).bytes
    except ValueError:
        raw = bytes.fromhex(subject)
        if len(raw) != 16:
            raise click.BadParameter("subject must be a UUID or 32 hex chars")
        return raw


def _pick_rng(seed: int | None):
    return deterministic_rng(seed) if seed is not None else SystemEntropy()


def _emit(doc: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for key, value in doc.items():
            click.echo(f"{key}: {value}")


def _load_config(ctx, param, value):
    if value is None:
        return None
    defaults = json.loads(Path(value).read_text())
    ctx.default_map = {**defaults, **(ctx.default_map or {})}
    return value


@click.group(context_settings={"auto_envvar_prefix": "VOIDFACE"})
@click.option(
    "--config", type=click.Path(exists=True), callback=_load_config,
    expose_value=False, is_eager=True,
    help="JSON file with default option values, keyed by subcommand.",
)
def main():
    """Privacy-preserving face training data pipeline.

    Option precedence: flags, then VOIDFACE_<COMMAND>_<OPTION> environment
    variables, then the --config file.
    """


@main.command()
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--landmarks", required=True, type=click.Path(exists=True))
@click.option("--subject", required=True, help="subject UUID or 32 hex chars")
@click.option("--size", default=DEFAULT_PATCH_SIZE, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--vault", "vault_dir", required=True, type=click.Path())
@click.option("--allow", multiple=True, help="requester id allowed to train on this subject")
@click.option("--seed", type=int, default=None, help="deterministic RNG seed (tests only)")
@click.option("--json", "as_json", is_flag=True)
def prepare(image, landmarks, subject, size, out, vault_dir, allow, seed, as_json):
    """Extract patches, generate shares, destroy the original, register."""
    try:
        subject_id = _subject_bytes(subject)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        session = IngestionSession.from_file(subject_id, image)
        bundle = session.extract(LandmarkSet.load(landmarks), target_size=size)
        as_grid, privates = share_bundle(bundle, _pick_rng(seed))
        confirmation = session.destroy_original()
        vault = Vault(vault_dir)
        vault.register_subject(subject_id, as_grid, allow_list=allow)
        written = [shareio.write_share(as_grid, out_dir / shareio.share_filename(as_grid))]
        for ps in privates:
            written.append(shareio.write_share(ps, out_dir / shareio.share_filename(ps)))
        audit_path = out_dir / f"{subject_id.hex()}_audit.json"
        audit_path.write_text(json.dumps(session.audit, indent=2))
        _emit(
            {
                "subject": subject_id.hex(),
                "seed": seed,
                "share_files": [str(p) for p in written],
                "audit": str(audit_path),
                "destroyed_at": confirmation["destroyed_at"],
                "vault": str(vault_dir),
            },
            as_json,
        )
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command()
@click.option("--shares", "share_dir", required=True, type=click.Path(exists=True))
@click.option("--subject", required=True)
@click.option("--institutions", "n_institutions", required=True, type=int)
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path())
@click.option("--vault", "vault_dir", default=None, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
def distribute(share_dir, subject, n_institutions, store_dir, plan_path, vault_dir, seed, as_json):
    """Place a subject's private shares across institution stores."""
    try:
        subject_id = _subject_bytes(subject)
        privates = []
        for f in sorted(Path(share_dir).glob(f"{subject_id.hex()}_ps*.share")):
            grid = shareio.read_share(f)
            if grid.subgrid_total == 1:
                privates.append(grid)
        if not privates:
            raise FileNotFoundError(f"no private shares for {subject_id.hex()} in {share_dir}")
        rng = deterministic_rng(seed) if seed is not None else np.random.default_rng()
        plan = distribution.plan_distribution(privates, n_institutions, rng)
        distribution.materialize_plan(plan, store_dir)
        distribution.save_plan(plan, plan_path)
        if vault_dir:
            vault = Vault(vault_dir)
            if vault.get_record(subject_id) is not None:
                vault.record_placement(
                    subject_id,
                    tuple(sorted({a.institution_id for a in plan.assignments})),
                )
        doc = plan.to_json()
        if plan.dropped_patches:
            click.echo(
                f"warning: case 1 dropped patches {list(plan.dropped_patches)}; "
                "those patches cannot be trained",
                err=True,
            )
        _emit({**doc, "seed": seed, "store": str(store_dir), "plan_file": str(plan_path)}, as_json)
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command()
@click.option("--vault", "vault_dir", required=True, type=click.Path(exists=True))
@click.option("--plan", "plan_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--subjects", required=True, help="comma-separated subject ids")
@click.option("--requester", required=True)
@click.option("--deadline", "deadline_s", default=60.0, show_default=True)
@click.option("--trainer", type=click.Choice(["stub", "external"]), default="stub")
@click.option("--trainer-endpoint", default="127.0.0.1:8571", show_default=True)
@click.option(
    "--round-config", "round_config_path", type=click.Path(exists=True), default=None,
    help="JSON with n_p, deadline_s, lambda, theta, heartbeat_s, trainer",
)
@click.option("--json", "as_json", is_flag=True)
def train(vault_dir, plan_paths, store_dir, subjects, requester, deadline_s, trainer,
          trainer_endpoint, round_config_path, as_json):
    """Run one training round directly (no simulation)."""
    try:
        n_p = len(PATCH_KINDS)
        if round_config_path:
            round_config = json.loads(Path(round_config_path).read_text())
            n_p = int(round_config.get("n_p", n_p))
            deadline_s = float(round_config.get("deadline_s", deadline_s))
            trainer = round_config.get("trainer", trainer)
            trainer_endpoint = round_config.get("trainer_endpoint", trainer_endpoint)
        vault = Vault(vault_dir)
        subject_ids = [_subject_bytes(s.strip()) for s in subjects.split(",")]
        authorized, handles, excluded = vault.validate_training_request(requester, subject_ids)
        plans = {}
        for path in plan_paths:
            plan = distribution.load_plan(path, store_dir)
            plans[plan.subject_id.hex()] = plan
        profiles = [
            NodeProfile(f"ws-{i:02d}", compute_rate=10.0, bandwidth=1e6,
                        role=NodeRole.WORKSTATION)
            for i in range(n_p)
        ]
        first_plan = next(iter(plans.values()))
        share_bytes = first_plan.assignments[0].grid.size
        workload = RoundWorkload.for_subjects(len(authorized), share_bytes)
        assignment, _ = select_nodes(profiles, n_p, workload, deadline_s)
        rnd = TrainingRound(
            round_id="cli-round",
            subjects=authorized,
            assignment=assignment,
            deadline_s=deadline_s,
        )
        registry = BufferRegistry()
        reconstructed = dispatch_and_reconstruct(
            rnd, {s.hex(): handles[s.hex()] for s in authorized},
            plans, registry=registry,
        )
        if trainer == "external":
            host, port = trainer_endpoint.rsplit(":", 1)
            trainer_impl = ExternalTrainerClient(host, int(port))
        else:
            trainer_impl = StubTrainer(share_bytes)
        result = train_round(rnd, reconstructed, trainer_impl, registry=registry)
        _emit(
            {
                "round": rnd.round_id,
                "status": rnd.status.value,
                "trainer": result.trainer,
                "authorized": [s.hex() for s in authorized],
                "excluded": excluded,
                "subjects_trained": result.subjects_trained,
                "failed_patches": result.failed_patches,
                "embedding_digest": {
                    s: hashlib.sha256(v.tobytes()).hexdigest()[:16]
                    for s, v in result.embedding_by_subject.items()
                },
            },
            as_json,
        )
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command()
@click.option("--vault", "vault_dir", required=True, type=click.Path(exists=True))
@click.option("--subject", required=True)
@click.option("--json", "as_json", is_flag=True)
def rtbf(vault_dir, subject, as_json):
    """Revoke a subject: erase its authentication share immediately."""
    try:
        vault = Vault(vault_dir)
        result = vault.rtbf_revoke(_subject_bytes(subject))
        _emit(result, as_json)
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command()
@click.option("--vault", "vault_dir", required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def gc(vault_dir, store_dir, as_json):
    """Delete abandoned private shares of revoked subjects."""
    try:
        vault = Vault(vault_dir)
        directory = {}
        for inst_dir in sorted(Path(store_dir).glob("inst-*")):
            directory[int(inst_dir.name.split("-")[1])] = DirectoryInstitution(inst_dir)
        report = vault.gc_abandoned_shares(directory)
        _emit(report.to_json(), as_json)
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command("metrics")
@click.argument("which", type=click.Choice(["npcr", "entropy", "corr", "bruteforce"]))
@click.option("--shares", "share_dir", type=click.Path(exists=True), default=None)
@click.option("--trials", default=100, show_default=True)
@click.option("--width", default=96, show_default=True)
@click.option("--height", default=96, show_default=True)
@click.option("--channels", default=3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
def metrics_cmd(which, share_dir, trials, width, height, channels, seed, as_json):
    """Security metrics over share files (or synthetic shares)."""
    try:
        if which == "bruteforce":
            log10p, mantissa, exponent, rendering = metrics.brute_force_log_probability(
                width, height, channels
            )
            _emit(
                {"log10_probability": log10p, "mantissa": mantissa,
                 "exponent": exponent, "rendering": rendering, "seed": seed},
                as_json,
            )
            return
        if share_dir is None:
            raise click.BadParameter("--shares required for this metric")
        grids = [shareio.read_share(f) for f in sorted(Path(share_dir).glob("*.share"))]
        if not grids:
            raise FileNotFoundError(f"no .share files under {share_dir}")
        doc: dict = {"seed": seed, "files": len(grids)}
        if which == "npcr":
            rates = [
                metrics.npcr(grids[i], grids[j])
                for i in range(len(grids))
                for j in range(i + 1, len(grids))
                if grids[i].size == grids[j].size
            ][: trials]
            doc["pairwise_mean_percent"] = float(np.mean(rates)) if rates else None
            doc["uniform_expectation_percent"] = metrics.UNIFORM_NPCR_PERCENT
        elif which == "entropy":
            per_channel = {
                c: float(np.mean([metrics.shannon_entropy(g, c) for g in grids
                                  if c < g.channels]))
                for c in range(max(g.channels for g in grids))
            }
            doc["mean_entropy_per_channel"] = per_channel
        else:
            values = {}
            for direction in metrics.Direction:
                rs = [
                    abs(metrics.adjacent_correlation(g, direction, c))
                    for g in grids
                    for c in range(g.channels)
                ]
                finite = [r for r in rs if not np.isnan(r)]
                values[direction.value] = float(np.mean(finite)) if finite else None
            doc["mean_abs_adjacent_correlation"] = values
        _emit(doc, as_json)
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override the scenario's seed")
@click.option("--trace", "trace_path", type=click.Path(), default=None)
@click.option("--until", type=float, default=None, help="stop the clock at this sim time")
@click.option("--json", "as_json", is_flag=True)
def simulate(scenario_path, seed, trace_path, until, as_json):
    """Run a scenario file and report the trace hash."""
    try:
        from .scenarios import load_scenario_file, run_scenario

        sim, vault, script = load_scenario_file(scenario_path)
        if seed is not None:
            sim.seed = seed
        result = run_scenario(sim, script, until=until if until is not None else float("inf"))
        if trace_path:
            Path(trace_path).write_text(result.trace_jsonl + "\n")
        _emit(
            {
                "seed": sim.seed,
                "messages": len(result.trace),
                "end_time": result.end_time,
                "trace_hash": result.trace_hash,
                "trace_file": trace_path,
            },
            as_json,
        )
    except (VoidfaceError, FileNotFoundError) as e:
        _fail(e)


if __name__ == "__main__":
    main()
