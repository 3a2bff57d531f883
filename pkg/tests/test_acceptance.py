"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion alongside the measured values.
"""

import math
import time

import numpy as np
import pytest

from voidface.access import build_pair_structure, check_monotonicity, check_uniqueness, ps_label
from voidface.distribution import PlacementCase, plan_distribution
from voidface.errors import InsufficientCapacityError
from voidface.metrics import (
    Direction,
    UNIFORM_NPCR_PERCENT,
    adjacent_correlation,
    brute_force_log_probability,
    npcr_campaign,
    patch_share_correlation,
    shannon_entropy,
    uniform_npcr_stderr,
)
from voidface.orchestrator import (
    NodeProfile,
    NodeRole,
    RoundWorkload,
    select_nodes,
    straggler_score,
)
from voidface.scenarios import (
    CLIENT_NODE,
    ORCHESTRATOR_NODE,
    VAULT_NODE,
    build_training_simulator,
    global_share_scan,
    inst_node,
    prepare_subject,
    run_scenario,
    synthetic_patch,
    train_event,
    ws_node,
)
from voidface.shares import (
    PATCH_KINDS,
    PatchImage,
    PatchKind,
    generate_private_share,
    generate_random_grid,
    reconstruct_patch,
)
from voidface.simnet import Fault, FaultKind, wiretap_audit, workstation_link_pairs
from tests.test_distribution import make_private_shares, xor_of


def report(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return ok


def test_round_trip_exactness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    exact = 0
    for _ in range(1000):
        patch = PatchImage(PatchKind.NOSE, 96, 96, 3, rng.bytes(96 * 96 * 3))
        pad = generate_random_grid(96, 96, 3, rng)
        share = generate_private_share(patch, pad)
        if reconstruct_patch(pad, share).pixels == patch.pixels:
            exact += 1
    elapsed = time.perf_counter() - start
    ok = exact == 1000 and elapsed < 5.0
    assert report(
        "round-trip exactness",
        ok,
        f"{exact}/1000 bit-exact in {elapsed:.2f}s (budget 5s)",
    )


def test_npcr_campaign_all_patch_kinds():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    means = {}
    for i, kind in enumerate(PATCH_KINDS):
        rep = npcr_campaign(synthetic_patch(i), trials=100, rng=rng)
        means[kind.value] = rep.values["mean_percent"]
    elapsed = time.perf_counter() - start
    band = 3 * uniform_npcr_stderr(96 * 96 * 3)
    all_above = all(v >= 98.0 for v in means.values())
    all_in_band = all(abs(v - UNIFORM_NPCR_PERCENT) <= band for v in means.values())
    ok = all_above and elapsed < 30.0
    assert report(
        "npcr campaign",
        ok,
        f"means {min(means.values()):.3f}..{max(means.values()):.3f}% "
        f"(>=98 required; uniform model {UNIFORM_NPCR_PERCENT:.2f}+-{band:.2f}, "
        f"in-band={all_in_band}) in {elapsed:.1f}s (budget 30s)",
    )


def test_entropy_battery():
    rng = np.random.default_rng(12)
    start = time.perf_counter()
    worst_low, worst_high = 8.0, 0.0
    for i in range(len(PATCH_KINDS)):
        patch = synthetic_patch(i)
        per_channel = np.zeros(3)
        for _ in range(100):
            share = generate_private_share(patch, generate_random_grid(96, 96, 3, rng))
            for c in range(3):
                per_channel[c] += shannon_entropy(share, c)
        per_channel /= 100
        worst_low = min(worst_low, per_channel.min())
        worst_high = max(worst_high, per_channel.max())
    elapsed = time.perf_counter() - start
    ok = 7.95 <= worst_low and worst_high <= 8.0 and elapsed < 10.0
    assert report(
        "entropy battery",
        ok,
        f"per-channel means in [{worst_low:.4f}, {worst_high:.4f}] "
        f"(required [7.95, 8.0]) in {elapsed:.1f}s (budget 10s)",
    )


def test_correlation_battery():
    rng = np.random.default_rng(13)
    start = time.perf_counter()
    worst_adjacent = 0.0
    worst_cross = 0.0
    for i in range(len(PATCH_KINDS)):
        patch = synthetic_patch(i)
        adjacent = {d: [] for d in Direction}
        cross = []
        for _ in range(100):
            share = generate_private_share(patch, generate_random_grid(96, 96, 3, rng))
            for d in Direction:
                for c in range(3):
                    adjacent[d].append(abs(adjacent_correlation(share, d, c)))
            cross.append(abs(patch_share_correlation(patch, share)))
        for d in Direction:
            worst_adjacent = max(worst_adjacent, float(np.mean(adjacent[d])))
        worst_cross = max(worst_cross, float(np.mean(cross)))
    elapsed = time.perf_counter() - start
    ok = worst_adjacent < 0.05 and worst_cross < 0.05 and elapsed < 10.0
    assert report(
        "correlation battery",
        ok,
        f"max mean |adjacent|={worst_adjacent:.4f}, max mean |patch-share|="
        f"{worst_cross:.4f} (<0.05 required) in {elapsed:.1f}s (budget 10s)",
    )


def test_brute_force_figure():
    _, mantissa, exponent, rendering = brute_force_log_probability(96, 96, 3)
    ok = exponent == -66584 and abs(mantissa - 9.581622535) < 1e-6
    assert report(
        "brute-force figure",
        ok,
        f"{rendering} (expected 9.581622535 x 10^-66584, mantissa tol 1e-6)",
    )


def test_access_structure_validity():
    rng = np.random.default_rng(14)
    sizes_ok = True
    for n in range(1, 13):
        s = build_pair_structure(n)
        if not (check_monotonicity(s) and check_uniqueness(s)):
            sizes_ok = False
    # Forbidden-set reconstruction attempts stay uncorrelated with patches.
    n_p = 6
    s = build_pair_structure(n_p)
    patches = [
        PatchImage(PATCH_KINDS[i], 96, 96, 3, rng.bytes(96 * 96 * 3)) for i in range(n_p)
    ]
    pad = generate_random_grid(96, 96, 3, rng)
    concrete = {"AS": np.frombuffer(pad.payload, dtype=np.uint8)}
    for i, p in enumerate(patches):
        concrete[ps_label(i)] = np.frombuffer(
            generate_private_share(p, pad, patch_index=i).payload, dtype=np.uint8
        )
    worst = 0.0
    forbidden_sets = [
        [ps_label(i) for i in range(n_p)],  # all privates, no pad
        ["AS"],
        [ps_label(0)],
        ["AS", ps_label(1)],  # qualified for secret 1, forbidden for others
        [ps_label(0), ps_label(1), ps_label(2)],
    ]
    for labels in forbidden_sets:
        acc = np.zeros(96 * 96 * 3, dtype=np.uint8)
        for label in labels:
            acc = acc ^ concrete[label]
        for i, p in enumerate(patches):
            if set(labels) >= {"AS", ps_label(i)}:
                continue  # that pair is qualified for secret i, not forbidden
            r = np.corrcoef(
                acc.astype(float), np.frombuffer(p.pixels, dtype=np.uint8).astype(float)
            )[0, 1]
            worst = max(worst, abs(float(r)))
    ok = sizes_ok and worst < 0.05
    assert report(
        "access-structure validity",
        ok,
        f"monotonicity+uniqueness exhaustive for n=1..12: {sizes_ok}; "
        f"max |forbidden-set correlation|={worst:.4f} (<0.05)",
    )


def test_distribution_case_grid():
    rng = np.random.default_rng(15)
    failures = []
    for n_ps in range(1, 13):
        for n in range(1, 13):
            shares = make_private_shares(n_ps, rng, size=4)
            plan = plan_distribution(shares, n, rng)
            if len(plan.assignments) != n:
                failures.append((n_ps, n, "assignment count"))
            if n_ps > n and len(plan.dropped_patches) != n_ps - n:
                failures.append((n_ps, n, "dropped count"))
            if n_ps < n:
                if plan.case_taken != PlacementCase.CASE2_EXPANDED:
                    failures.append((n_ps, n, "case"))
                by_patch = {}
                for a in plan.assignments:
                    by_patch.setdefault(a.grid.patch_index, []).append(a.grid)
                for share in shares:
                    if xor_of(by_patch[share.patch_index]) != share.payload:
                        failures.append((n_ps, n, f"patch {share.patch_index} xor"))
    ok = failures == []
    assert report(
        "distribution case grid",
        ok,
        f"(N_ps, N) in [1..12]^2, 144 plans checked"
        + (f"; failures: {failures[:3]}" if failures else ""),
    )


def _rtbf_scenario(tmp_path, offline_variant: bool):
    rng = np.random.default_rng(16 if offline_variant else 17)
    subject = bytes(range(16))
    prepared = prepare_subject(subject, 6, rng, size=32)
    sim, vault = build_training_simulator(
        tmp_path / ("vault_off" if offline_variant else "vault"),
        [prepared],
        n_institutions=6,
        n_workstations=6,
        allow={"lab": [prepared.subject_hex]},
        seed=5,
    )
    script = [
        {"t": 0.0, "node": ORCHESTRATOR_NODE,
         "event": train_event("r1", "lab", [prepared.subject_hex], deadline_s=5.0)},
        {"t": 1.0, "node": CLIENT_NODE,
         "event": {"kind": "rtbf", "subject": prepared.subject_hex}},
        {"t": 2.0, "node": ORCHESTRATOR_NODE,
         "event": train_event("r2", "lab", [prepared.subject_hex], deadline_s=5.0)},
        {"t": 3.0, "node": CLIENT_NODE, "event": {"kind": "gc"}},
    ]
    if offline_variant:
        sim.inject_fault(inst_node(4), Fault(FaultKind.OFFLINE, start=2.5, end=6.0))
        script.append({"t": 7.0, "node": CLIENT_NODE, "event": {"kind": "gc"}})
    result = run_scenario(sim, script)
    return prepared, sim, vault, result


@pytest.mark.parametrize("offline_variant", [False, True], ids=["direct", "offline-retry"])
def test_rtbf_scenario(tmp_path, offline_variant):
    prepared, sim, vault, result = _rtbf_scenario(tmp_path, offline_variant)
    rounds = result.node_states[ORCHESTRATOR_NODE]["rounds"]
    first_ok = rounds["r1"]["status"] == "complete" and all(
        e["error"] is None for e in rounds["r1"]["results"].values()
    )
    excluded_ok = (
        rounds["r2"]["status"] == "no-data"
        and rounds["r2"]["excluded"][prepared.subject_hex] == "RTBF"
    )
    replies = result.node_states[CLIENT_NODE]["replies"]
    reports = [r["payload"]["gc_report"] for r in replies if "gc_report" in r["payload"]]
    if offline_variant:
        gc_ok = (
            len(reports) == 2
            and len(reports[0]["queued"]) == 1
            and reports[1]["queued"] == []
        )
    else:
        gc_ok = len(reports) == 1 and reports[0]["queued"] == []
    findings = global_share_scan(vault, sim, prepared)
    sim_time_ok = max(m.sim_time for m in result.trace) < 10.0
    ok = first_ok and excluded_ok and gc_ok and findings == [] and sim_time_ok
    assert report(
        f"rtbf scenario ({'offline retry' if offline_variant else 'direct'})",
        ok,
        f"train-before={first_ok}, excluded-after={excluded_ok}, gc={gc_ok}, "
        f"global scan findings={findings}, last event at "
        f"{max(m.sim_time for m in result.trace):.2f}s sim (<10s)",
    )


def test_wiretap_audit(tmp_path):
    structure = build_pair_structure(6)
    single_link_safe = True
    both_legs_ok = True
    checked_links = 0
    for n_inst, tag in ((6, "exact"), (9, "expanded")):
        rng = np.random.default_rng(18 + n_inst)
        prepared = prepare_subject(bytes(range(16)), n_inst, rng, size=32)
        sim, _ = build_training_simulator(
            tmp_path / f"vault_{tag}", [prepared], n_inst, 6,
            allow={"lab": [prepared.subject_hex]}, seed=9,
        )
        result = run_scenario(
            sim,
            [{"t": 0.0, "node": ORCHESTRATOR_NODE,
              "event": train_event("r1", "lab", [prepared.subject_hex], deadline_s=5.0)}],
        )
        for link in sorted({(m.src, m.dst) for m in result.trace}):
            checked_links += 1
            obs = wiretap_audit(result.trace, [link], structure)
            if any(v["reconstructable"] for v in obs.verdicts.values()):
                single_link_safe = False
        originals = prepared.original_patches()
        for i in range(6):
            taps = [(VAULT_NODE, ws_node(i))] + [
                (inst_node(a.institution_id), ws_node(i))
                for a in prepared.plan.assignments
                if a.grid.patch_index == i
            ]
            obs = wiretap_audit(result.trace, taps, structure, originals=originals)
            revealed = {s for (_, s), v in obs.verdicts.items() if v["reconstructable"]}
            if revealed != {i} or obs.verdicts[(prepared.subject_hex, i)]["verified"] is not True:
                both_legs_ok = False
    ok = single_link_safe and both_legs_ok
    assert report(
        "wiretap audit",
        ok,
        f"{checked_links} single links never qualified={single_link_safe}; "
        f"AS+PS legs reveal exactly patch i bit-exact={both_legs_ok}",
    )


def test_orchestration_batteries(tmp_path):
    # Feasibility property over 1,000 random populations.
    rng = np.random.default_rng(19)
    workload = RoundWorkload(work_units=10.0, transfer_bytes=1e6)
    feasible_ok = True
    exercised = 0
    for _ in range(1000):
        nodes = [
            NodeProfile(
                f"n{i}",
                compute_rate=float(rng.uniform(0.1, 50)),
                bandwidth=float(rng.uniform(1e3, 1e7)),
                role=NodeRole.WORKSTATION,
            )
            for i in range(int(rng.integers(6, 16)))
        ]
        deadline = float(rng.uniform(0.5, 120))
        try:
            assignment, estimates = select_nodes(nodes, 6, workload, deadline)
        except InsufficientCapacityError:
            continue
        exercised += 1
        if any(estimates[n] > deadline for n in assignment.values()):
            feasible_ok = False
    score = straggler_score(2.0, 1.0, lam=1.0)
    score_ok = score == pytest.approx(math.exp(-1.0)) and score < 0.5

    # Non-communication audit and determinism over the standard round.
    hashes = []
    for run in range(2):
        run_rng = np.random.default_rng(77)
        prepared = prepare_subject(bytes(range(16)), 6, run_rng, size=32)
        sim, _ = build_training_simulator(
            tmp_path / f"vault_run{run}", [prepared], 6, 6,
            allow={"lab": [prepared.subject_hex]}, seed=55,
        )
        result = run_scenario(
            sim,
            [{"t": 0.0, "node": ORCHESTRATOR_NODE,
              "event": train_event("r1", "lab", [prepared.subject_hex], deadline_s=5.0)}],
        )
        hashes.append(result.trace_hash)
        lateral = workstation_link_pairs(result.trace, {ws_node(i) for i in range(6)})
    non_comm_ok = lateral == set()
    determinism_ok = hashes[0] == hashes[1]
    ok = feasible_ok and exercised > 100 and score_ok and non_comm_ok and determinism_ok
    assert report(
        "orchestration batteries",
        ok,
        f"feasibility over {exercised} selected populations={feasible_ok}; "
        f"straggler e^-1={score:.3f}<0.5 removal={score_ok}; "
        f"workstation lateral messages={sorted(lateral)}; "
        f"trace hashes equal={determinism_ok}",
    )
