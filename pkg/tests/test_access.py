"""Access structure validity and the bridge to concrete shares."""

import itertools

import numpy as np
import pytest

from voidface.access import (
    AS_LABEL,
    AccessStructure,
    build_pair_structure,
    check_monotonicity,
    check_uniqueness,
    describe,
    is_perfect,
    is_qualified,
    ps_label,
)
from voidface.errors import CapacityError, UnknownSecretError
from voidface.shares import (
    PatchImage,
    PatchKind,
    generate_private_share,
    generate_random_grid,
)


def brute_force_monotone(structure: AccessStructure) -> bool:
    """Exhaustive oracle straight from the definitions: check every
    (A, B) pair of subsets for both closure directions."""
    n = structure.universe_size
    all_masks = range(1 << n)
    for i in range(structure.secret_count):
        q = structure.qualified_family(i)
        f = structure.forbidden_family(i)
        for a, b in itertools.product(all_masks, repeat=2):
            if a & b == a:  # a subseteq b
                if a in q and b not in q:
                    return False
                if b in f and a not in f:
                    return False
    return True


class TestPairStructure:
    def test_six_patches_shape(self):
        s = build_pair_structure(6)
        assert s.labels == ("AS", "PS1", "PS2", "PS3", "PS4", "PS5", "PS6")
        for i in range(6):
            assert s.qualified_minimal[i] == frozenset({s.mask_of([AS_LABEL, ps_label(i)])})

    def test_single_patch(self):
        s = build_pair_structure(1)
        assert s.qualified_minimal[0] == frozenset({s.mask_of(["AS", "PS1"])})

    def test_all_private_shares_without_pad_forbidden(self):
        s = build_pair_structure(6)
        everything_but_pad = s.mask_of([ps_label(i) for i in range(6)])
        for i in range(6):
            assert everything_but_pad in s.forbidden_family(i)
            assert not is_qualified(s, i, everything_but_pad)

    def test_zero_patches_rejected(self):
        with pytest.raises(ValueError):
            build_pair_structure(0)

    @pytest.mark.parametrize("n", range(1, 13))
    def test_validity_for_all_sizes(self, n):
        s = build_pair_structure(n)
        assert check_monotonicity(s)
        assert check_uniqueness(s)
        assert is_perfect(s)

    def test_monotonicity_matches_brute_force_oracle(self):
        # The pairwise-definition oracle is O(4^|S|); keep it small.
        for n in (1, 2, 3):
            s = build_pair_structure(n)
            assert check_monotonicity(s) == brute_force_monotone(s) == True  # noqa: E712


class TestMonotonicity:
    def test_explicit_violation_detected(self):
        # {AS} is minimally qualified for the only secret, yet {AS, PS1}
        # is claimed forbidden: the forbidden family is not down-closed
        # (and overlaps the qualified one).
        labels = ("AS", "PS1")
        as_mask, both = 0b01, 0b11
        qualified_minimal = (frozenset({as_mask}),)
        forbidden = (frozenset({0b00, 0b10, both}),)
        s = AccessStructure(labels, qualified_minimal, forbidden_explicit=forbidden)
        assert not check_monotonicity(s)
        assert brute_force_monotone(s) is False

    def test_empty_qualified_family_vacuously_valid(self):
        labels = ("AS", "PS1", "PS2")
        s = AccessStructure(labels, (frozenset(), frozenset()))
        assert check_monotonicity(s)
        assert check_uniqueness(s)

    def test_capacity_limit(self):
        labels = tuple(f"S{i}" for i in range(17))
        s = AccessStructure(labels, (frozenset({1}),))
        with pytest.raises(CapacityError):
            check_monotonicity(s)


class TestUniqueness:
    def test_shared_minimal_set_violation(self):
        # Two secrets; {AS, PS1} is the minimal qualified set of secret 1
        # and explicitly the minimal forbidden set of secret 2.
        labels = ("AS", "PS1")
        both = 0b11
        qualified_minimal = (frozenset({both}), frozenset({both}))
        forbidden = (
            frozenset({0b00, 0b01, 0b10}),  # perfect complement for secret 1
            frozenset({both}),  # secret 2 forbids exactly the shared pair
        )
        s = AccessStructure(labels, qualified_minimal, forbidden_explicit=forbidden)
        assert not check_uniqueness(s)

    def test_single_secret_vacuously_unique(self):
        s = build_pair_structure(1)
        assert check_uniqueness(s)


class TestQualified:
    def test_pair_is_qualified(self):
        s = build_pair_structure(6)
        assert is_qualified(s, 2, ["AS", "PS3"])

    def test_private_share_alone_is_not(self):
        s = build_pair_structure(6)
        assert not is_qualified(s, 2, ["PS3"])

    def test_full_universe_qualifies_every_secret(self):
        s = build_pair_structure(6)
        everything = list(s.labels)
        for i in range(6):
            assert is_qualified(s, i, everything)

    def test_unknown_secret_rejected(self):
        s = build_pair_structure(3)
        with pytest.raises(UnknownSecretError):
            is_qualified(s, 3, ["AS"])


class TestSemanticBridge:
    """Classification matches what XOR actually reveals."""

    def test_reconstruction_iff_qualified(self, rng):
        n_p = 3
        s = build_pair_structure(n_p)
        size = 96
        patches = [
            PatchImage(PatchKind.NOSE, size, size, 3, rng.bytes(size * size * 3))
            for _ in range(n_p)
        ]
        as_grid = generate_random_grid(size, size, 3, rng)
        privates = [
            generate_private_share(p, as_grid, patch_index=i)
            for i, p in enumerate(patches)
        ]
        concrete = {AS_LABEL: np.frombuffer(as_grid.payload, dtype=np.uint8)}
        for i, ps in enumerate(privates):
            concrete[ps_label(i)] = np.frombuffer(ps.payload, dtype=np.uint8)

        labels = list(s.labels)
        for r in range(len(labels) + 1):
            for subset in itertools.combinations(labels, r):
                mask = s.mask_of(subset)
                for i, patch in enumerate(patches):
                    target = np.frombuffer(patch.pixels, dtype=np.uint8)
                    if is_qualified(s, i, mask):
                        revealed = concrete[AS_LABEL] ^ concrete[ps_label(i)]
                        assert revealed.tobytes() == patch.pixels
                    elif subset:
                        # Any XOR combination of a forbidden set stays
                        # uncorrelated with the patch.
                        for k in range(1, len(subset) + 1):
                            for combo in itertools.combinations(subset, k):
                                acc = np.zeros(size * size * 3, dtype=np.uint8)
                                for label in combo:
                                    acc = acc ^ concrete[label]
                                r_val = np.corrcoef(
                                    acc.astype(float), target.astype(float)
                                )[0, 1]
                                assert abs(r_val) < 0.05


def test_describe_lists_universe_and_minimal_sets():
    text = describe(build_pair_structure(2))
    assert "universe: {AS, PS1, PS2}" in text
    assert "secret 1: minimal qualified {AS, PS1}" in text
