"""Node selection, straggler handling, reconstruction, stub training."""

import itertools
import math

import numpy as np
import pytest

from voidface.buffers import BufferRegistry
from voidface.distribution import plan_distribution
from voidface.errors import InsufficientCapacityError, NoDataError
from voidface.orchestrator import (
    EMBEDDING_DIM,
    NodeObservation,
    NodeProfile,
    NodeRole,
    RoundStatus,
    RoundWorkload,
    StubTrainer,
    TrainingRound,
    completion_estimate,
    dispatch_and_reconstruct,
    drop_stragglers,
    select_nodes,
    straggler_score,
    train_round,
)
from voidface.patches import share_bundle
from voidface.scenarios import synthetic_bundle


def ws(node_id, rate=10.0, bw=1e6):
    return NodeProfile(node_id, compute_rate=rate, bandwidth=bw, role=NodeRole.WORKSTATION)


WORKLOAD = RoundWorkload(work_units=10.0, transfer_bytes=1e6)


class TestSelectNodes:
    def test_identical_nodes_closed_form_estimate(self):
        nodes = [ws(f"n{i}") for i in range(6)]
        assignment, estimates = select_nodes(nodes, 6, WORKLOAD, deadline_s=10.0)
        assert len(assignment) == 6
        expected = 10.0 / 10.0 + 1e6 / 1e6
        for node in nodes:
            assert estimates[node.node_id] == pytest.approx(expected)

    def test_greedy_matches_min_max_oracle(self, rng):
        # Brute force over all 6-subsets: the greedy prefix of the sorted
        # order minimizes the max estimate among feasible subsets.
        for trial in range(20):
            nodes = [
                ws(f"n{i}", rate=float(rng.uniform(0.5, 20)), bw=float(rng.uniform(1e4, 1e7)))
                for i in range(10)
            ]
            estimates = {n.node_id: completion_estimate(n, WORKLOAD) for n in nodes}
            deadline = float(np.median(list(estimates.values())))
            feasible = [n for n in nodes if estimates[n.node_id] <= deadline]
            if len(feasible) < 6:
                with pytest.raises(InsufficientCapacityError):
                    select_nodes(nodes, 6, WORKLOAD, deadline)
                continue
            assignment, _ = select_nodes(nodes, 6, WORKLOAD, deadline)
            greedy_max = max(estimates[n] for n in assignment.values())
            oracle = min(
                max(estimates[n.node_id] for n in subset)
                for subset in itertools.combinations(feasible, 6)
            )
            assert greedy_max == pytest.approx(oracle)

    def test_slow_nodes_filtered(self):
        fast = [ws(f"fast{i}", rate=100.0) for i in range(6)]
        slow = [ws(f"slow{i}", rate=0.01) for i in range(4)]
        assignment, _ = select_nodes(fast + slow, 6, WORKLOAD, deadline_s=5.0)
        assert set(assignment.values()) == {f"fast{i}" for i in range(6)}

    def test_deadline_below_every_estimate(self):
        nodes = [ws(f"n{i}") for i in range(6)]
        with pytest.raises(InsufficientCapacityError) as err:
            select_nodes(nodes, 6, WORKLOAD, deadline_s=0.001)
        assert len(err.value.near_misses) == 6

    def test_too_few_workstations(self):
        nodes = [ws("a"), NodeProfile("inst", 1.0, 1.0, role=NodeRole.INSTITUTION)]
        with pytest.raises(InsufficientCapacityError):
            select_nodes(nodes, 2, WORKLOAD, deadline_s=100.0)

    def test_skip_counts_demote(self):
        nodes = [ws(f"n{i}") for i in range(8)]
        assignment, _ = select_nodes(
            nodes, 6, WORKLOAD, deadline_s=10.0, skip_counts={"n0": 3, "n1": 1}
        )
        assert "n0" not in assignment.values()
        assert "n1" not in assignment.values()

    def test_feasibility_property_1000_populations(self):
        rng = np.random.default_rng(31)
        selected_rounds = 0
        for _ in range(1000):
            n_nodes = int(rng.integers(6, 15))
            nodes = [
                ws(f"n{i}", rate=float(rng.uniform(0.1, 50)), bw=float(rng.uniform(1e3, 1e7)))
                for i in range(n_nodes)
            ]
            deadline = float(rng.uniform(0.5, 120))
            try:
                assignment, estimates = select_nodes(nodes, 6, WORKLOAD, deadline)
            except InsufficientCapacityError:
                continue
            selected_rounds += 1
            assert len(set(assignment.values())) == 6
            for node_id in assignment.values():
                assert estimates[node_id] <= deadline
        assert selected_rounds > 100  # the property actually got exercised


class TestStragglers:
    def make_round(self):
        nodes = [ws(f"n{i}") for i in range(8)]
        assignment, estimates = select_nodes(nodes, 6, WORKLOAD, deadline_s=10.0)
        rnd = TrainingRound(
            round_id="r1",
            subjects=[bytes(16)],
            assignment=assignment,
            deadline_s=10.0,
            estimates=estimates,
            status=RoundStatus.RUNNING,
        )
        return rnd, nodes

    def test_score_formula(self):
        assert straggler_score(2.0, 1.0, lam=1.0) == pytest.approx(math.exp(-1.0))
        assert straggler_score(0.5, 1.0) == 1.0  # early is never late

    def test_healthy_round_unchanged(self, rng):
        rnd, nodes = self.make_round()
        obs = [NodeObservation(n, elapsed_s=1.0, expected_s=2.0) for n in rnd.assignment.values()]
        updated = drop_stragglers(rnd, obs, nodes, WORKLOAD, rng)
        assert updated.assignment == rnd.assignment
        assert updated.dropped_nodes == []

    def test_silent_node_removed_for_heartbeat(self, rng):
        rnd, nodes = self.make_round()
        victim = rnd.assignment[0]
        obs = [NodeObservation(victim, elapsed_s=1.0, expected_s=2.0, heartbeats_missed=2)]
        updated = drop_stragglers(rnd, obs, nodes, WORKLOAD, rng)
        assert updated.dropped_nodes[0]["node_id"] == victim
        assert updated.dropped_nodes[0]["reason"] == "heartbeat"
        assert victim not in updated.assignment.values()
        assert len(set(updated.assignment.values())) == 6

    def test_lateness_one_with_unit_lambda_removed(self, rng):
        # Score e^-1 = 0.368 under theta 0.5.
        rnd, nodes = self.make_round()
        victim = rnd.assignment[3]
        obs = [NodeObservation(victim, elapsed_s=4.0, expected_s=2.0)]
        updated = drop_stragglers(rnd, obs, nodes, WORKLOAD, rng, lam=1.0, theta=0.5)
        assert any(d["node_id"] == victim for d in updated.dropped_nodes)

    def test_mild_lateness_survives(self, rng):
        rnd, nodes = self.make_round()
        node = rnd.assignment[0]
        obs = [NodeObservation(node, elapsed_s=2.2, expected_s=2.0)]  # score ~0.905
        updated = drop_stragglers(rnd, obs, nodes, WORKLOAD, rng)
        assert updated.dropped_nodes == []

    def test_no_replacement_aborts(self, rng):
        nodes = [ws(f"n{i}") for i in range(6)]  # zero spares
        assignment, estimates = select_nodes(nodes, 6, WORKLOAD, deadline_s=10.0)
        rnd = TrainingRound("r2", [bytes(16)], assignment, 10.0, estimates,
                            status=RoundStatus.RUNNING)
        obs = [NodeObservation("n0", elapsed_s=9.0, expected_s=1.0)]
        updated = drop_stragglers(rnd, obs, nodes, WORKLOAD, rng)
        assert updated.status == RoundStatus.ABORTED

    def test_skip_count_incremented(self, rng):
        rnd, nodes = self.make_round()
        victim = rnd.assignment[0]
        skip_counts = {}
        drop_stragglers(
            rnd,
            [NodeObservation(victim, 9.0, 1.0)],
            nodes,
            WORKLOAD,
            rng,
            skip_counts=skip_counts,
        )
        assert skip_counts[victim] == 1


class TestReconstructionFlow:
    def build_world(self, rng, n_institutions=6):
        bundle = synthetic_bundle(bytes(range(16)), size=16)
        as_grid, privates = share_bundle(bundle, rng)
        plan = plan_distribution(privates, n_institutions, rng)
        nodes = [ws(f"n{i}") for i in range(6)]
        assignment, estimates = select_nodes(
            nodes, 6, RoundWorkload.for_subjects(1, as_grid.size), 60.0
        )
        rnd = TrainingRound("r", [bundle.subject_id], assignment, 60.0, estimates)
        return bundle, as_grid, plan, rnd

    def test_full_round_bit_exact(self, rng):
        bundle, as_grid, plan, rnd = self.build_world(rng)
        results = dispatch_and_reconstruct(
            rnd, {bundle.subject_id.hex(): as_grid}, {bundle.subject_id.hex(): plan}
        )
        per_subject = results[bundle.subject_id.hex()]
        assert len(per_subject) == 6
        for res in per_subject:
            assert res.error is None
            assert res.patch.pixels == bundle.patches[res.patch_index].pixels

    def test_expanded_plan_still_bit_exact(self, rng):
        bundle, as_grid, plan, rnd = self.build_world(rng, n_institutions=10)
        results = dispatch_and_reconstruct(
            rnd, {bundle.subject_id.hex(): as_grid}, {bundle.subject_id.hex(): plan}
        )
        for res in results[bundle.subject_id.hex()]:
            assert res.patch.pixels == bundle.patches[res.patch_index].pixels

    def test_case1_dropped_patch_reported_not_fatal(self, rng):
        bundle, as_grid, plan, rnd = self.build_world(rng, n_institutions=4)
        results = dispatch_and_reconstruct(
            rnd, {bundle.subject_id.hex(): as_grid}, {bundle.subject_id.hex(): plan}
        )
        per_subject = results[bundle.subject_id.hex()]
        missing = [r for r in per_subject if r.error == "unavailable-patch"]
        healthy = [r for r in per_subject if r.error is None]
        assert len(missing) == 2
        assert len(healthy) == 4


class TestStubTrainer:
    def test_deterministic_across_runs(self, rng):
        bundle = synthetic_bundle(bytes(16), size=16)
        trainer_a = StubTrainer(bundle.patches[0].size)
        trainer_b = StubTrainer(bundle.patches[0].size)
        fa = trainer_a.extract(0, bundle.patches[0])
        fb = trainer_b.extract(0, bundle.patches[0])
        assert fa.shape == (EMBEDDING_DIM,)
        np.testing.assert_array_equal(fa, fb)

    def test_blanked_patch_changes_embedding(self, rng):
        from voidface.shares import PatchImage

        bundle = synthetic_bundle(bytes(16), size=16)
        trainer = StubTrainer(bundle.patches[0].size)
        full = [trainer.extract(i, p) for i, p in enumerate(bundle.patches)]
        blanked = list(full)
        blank_patch = PatchImage(
            bundle.patches[2].patch_kind, 16, 16, 3, bytes(16 * 16 * 3)
        )
        blanked[2] = trainer.extract(2, blank_patch)
        delta = np.linalg.norm(trainer.aggregate(full) - trainer.aggregate(blanked))
        assert delta > 0.0

    def test_linearity(self, rng):
        # The feature map is linear in the pixels: f(a xor-combined...) is
        # not linear, but f over byte vectors is, so scaling pixel values
        # scales features.
        from voidface.shares import PatchImage, PatchKind

        trainer = StubTrainer(48)
        a = PatchImage(PatchKind.NOSE, 4, 4, 3, bytes([10] * 48))
        b = PatchImage(PatchKind.NOSE, 4, 4, 3, bytes([30] * 48))
        fa = trainer.extract(0, a)
        fb = trainer.extract(0, b)
        np.testing.assert_allclose(fb, 3 * fa, rtol=1e-9)


class TestTrainRound:
    def test_round_trip_deterministic(self, rng):
        bundle = synthetic_bundle(bytes(range(16)), size=16)
        as_grid, privates = share_bundle(bundle, rng)
        plan = plan_distribution(privates, 6, np.random.default_rng(5))
        nodes = [ws(f"n{i}") for i in range(6)]
        assignment, estimates = select_nodes(
            nodes, 6, RoundWorkload.for_subjects(1, as_grid.size), 60.0
        )

        outputs = []
        for _ in range(2):
            rnd = TrainingRound("r", [bundle.subject_id], dict(assignment), 60.0, estimates)
            results = dispatch_and_reconstruct(
                rnd, {bundle.subject_id.hex(): as_grid}, {bundle.subject_id.hex(): plan}
            )
            metrics = train_round(rnd, results, StubTrainer(as_grid.size))
            outputs.append(metrics.embedding_by_subject[bundle.subject_id.hex()])
            assert rnd.status == RoundStatus.COMPLETE
        np.testing.assert_array_equal(outputs[0], outputs[1])
        assert outputs[0].shape == (EMBEDDING_DIM,)

    def test_zero_subjects_no_data(self, rng):
        rnd = TrainingRound("r", [], {}, 60.0)
        with pytest.raises(NoDataError):
            train_round(rnd, {}, StubTrainer(16))

    def test_post_round_hygiene(self, rng):
        bundle = synthetic_bundle(bytes(range(16)), size=16)
        as_grid, privates = share_bundle(bundle, rng)
        plan = plan_distribution(privates, 6, rng)
        nodes = [ws(f"n{i}") for i in range(6)]
        assignment, estimates = select_nodes(
            nodes, 6, RoundWorkload.for_subjects(1, as_grid.size), 60.0
        )
        rnd = TrainingRound("r", [bundle.subject_id], assignment, 60.0, estimates)
        registry = BufferRegistry()
        results = dispatch_and_reconstruct(
            rnd,
            {bundle.subject_id.hex(): as_grid},
            {bundle.subject_id.hex(): plan},
            registry=registry,
        )
        assert len(registry) == 6
        train_round(rnd, results, StubTrainer(as_grid.size), registry=registry)
        assert len(registry) == 0

    def test_failed_patch_flagged_and_substituted(self, rng):
        bundle = synthetic_bundle(bytes(range(16)), size=16)
        as_grid, privates = share_bundle(bundle, rng)
        plan = plan_distribution(privates, 4, rng)  # case 1 drops two
        nodes = [ws(f"n{i}") for i in range(6)]
        assignment, estimates = select_nodes(
            nodes, 6, RoundWorkload.for_subjects(1, as_grid.size), 60.0
        )
        rnd = TrainingRound("r", [bundle.subject_id], assignment, 60.0, estimates)
        results = dispatch_and_reconstruct(
            rnd, {bundle.subject_id.hex(): as_grid}, {bundle.subject_id.hex(): plan}
        )
        metrics = train_round(rnd, results, StubTrainer(as_grid.size))
        assert len(metrics.failed_patches) == 2
        assert metrics.subjects_trained == 1
