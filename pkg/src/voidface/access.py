"""Multi-secret access structures over a small share universe.

Subsets of the share universe are bitmasks over an explicit label table.
A structure assigns each secret a qualified family (given by its minimal
elements, implicitly up-closed) and a forbidden family, which for a
perfect structure is simply the complement and is never materialized.
Validation is exhaustive enumeration, which is the most trustworthy
check at this scale; the universe is capped at 16 labels.

``build_pair_structure`` constructs the scheme actually used for patch
sharing: one common authentication label plus one private label per
patch, where the only minimal qualified set of secret i is
{AS, PS_i}. Deleting the authentication share therefore makes every
secret unreachable, which is what makes revocation a single deletion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CapacityError, UnknownSecretError

MAX_UNIVERSE = 16

AS_LABEL = "AS"


def ps_label(patch_index: int) -> str:
    return f"PS{patch_index + 1}"


@dataclass(frozen=True)
class AccessStructure:
    """Qualified/forbidden set families for ``secret_count`` secrets.

    ``qualified_minimal[i]`` holds the minimal qualified subsets of
    secret i as bitmasks over ``labels``. When ``forbidden_explicit`` is
    None the structure is perfect: the forbidden family of each secret
    is the complement of the up-closure of its minimal qualified sets.
    An explicit forbidden family (full enumeration, also bitmasks) is
    only used to represent deliberately broken structures in tests.
    """

    labels: tuple[str, ...]
    qualified_minimal: tuple[frozenset[int], ...]
    forbidden_explicit: tuple[frozenset[int], ...] | None = None
    _index: dict[str, int] = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate share labels")
        object.__setattr__(
            self, "_index", {label: i for i, label in enumerate(self.labels)}
        )

    @property
    def secret_count(self) -> int:
        return len(self.qualified_minimal)

    @property
    def universe_size(self) -> int:
        return len(self.labels)

    def mask_of(self, labels) -> int:
        mask = 0
        for label in labels:
            mask |= 1 << self._index[label]
        return mask

    def labels_of(self, mask: int) -> frozenset[str]:
        return frozenset(
            label for i, label in enumerate(self.labels) if mask >> i & 1
        )

    def _check_capacity(self):
        if self.universe_size > MAX_UNIVERSE:
            raise CapacityError(
                f"universe of {self.universe_size} labels exceeds the "
                f"enumeration limit of {MAX_UNIVERSE}"
            )

    def qualified_family(self, secret: int) -> frozenset[int]:
        """Full qualified family: every superset of a minimal element."""
        self._check_capacity()
        minimal = self.qualified_minimal[secret]
        return frozenset(
            m
            for m in range(1 << self.universe_size)
            if any(m & q == q for q in minimal)
        )

    def forbidden_family(self, secret: int) -> frozenset[int]:
        self._check_capacity()
        if self.forbidden_explicit is not None:
            return self.forbidden_explicit[secret]
        every = frozenset(range(1 << self.universe_size))
        return every - self.qualified_family(secret)


def _is_up_closed(family: frozenset[int], universe_size: int) -> bool:
    # Single-bit extensions generate all supersets, so checking them suffices.
    for m in family:
        for b in range(universe_size):
            if not m >> b & 1 and (m | 1 << b) not in family:
                return False
    return True


def _is_down_closed(family: frozenset[int], universe_size: int) -> bool:
    for m in family:
        for b in range(universe_size):
            if m >> b & 1 and (m & ~(1 << b)) not in family:
                return False
    return True


def _minimal_elements(family: frozenset[int]) -> frozenset[int]:
    """Members with no proper subset in the family.

    For a down-closed family containing the empty set this is {empty set};
    the empty set counts as a minimal element when present.
    """
    if not family:
        return frozenset()
    if 0 in family:
        return frozenset({0})
    minimal = []
    for m in sorted(family, key=lambda x: bin(x).count("1")):
        if not any(m & q == q and m != q for q in minimal):
            minimal.append(m)
    return frozenset(minimal)


def check_monotonicity(structure: AccessStructure) -> bool:
    """Every superset of a qualified set is qualified and every subset of
    a forbidden set is forbidden, for every secret."""
    structure._check_capacity()
    n = structure.universe_size
    for i in range(structure.secret_count):
        if not _is_up_closed(structure.qualified_family(i), n):
            return False
        if not _is_down_closed(structure.forbidden_family(i), n):
            return False
    return True


def check_uniqueness(structure: AccessStructure) -> bool:
    """No minimal qualified set of one secret is a minimal forbidden set
    of another."""
    structure._check_capacity()
    m = structure.secret_count
    q_min = [_minimal_elements(structure.qualified_family(i)) for i in range(m)]
    f_min = [_minimal_elements(structure.forbidden_family(j)) for j in range(m)]
    for i in range(m):
        for j in range(m):
            if i != j and q_min[i] & f_min[j]:
                return False
    return True


def build_pair_structure(n_p: int) -> AccessStructure:
    """Perfect structure over {AS, PS_1..PS_n}: the sole minimal qualified
    set of secret i is {AS, PS_i}; everything else is forbidden."""
    if n_p < 1:
        raise ValueError(f"need at least one patch, got {n_p}")
    if n_p + 1 > MAX_UNIVERSE:
        raise CapacityError(f"{n_p} patches exceed the enumeration limit")
    labels = (AS_LABEL,) + tuple(ps_label(i) for i in range(n_p))
    as_bit = 1
    minimal = tuple(
        frozenset({as_bit | 1 << (i + 1)}) for i in range(n_p)
    )
    return AccessStructure(labels=labels, qualified_minimal=minimal)


def is_qualified(structure: AccessStructure, secret: int, shares) -> bool:
    """True when the share subset covers some minimal qualified set.

    ``shares`` is an iterable of labels or a bitmask.
    """
    if not 0 <= secret < structure.secret_count:
        raise UnknownSecretError(f"secret {secret} outside 0..{structure.secret_count - 1}")
    mask = shares if isinstance(shares, int) else structure.mask_of(shares)
    return any(mask & q == q for q in structure.qualified_minimal[secret])


def is_perfect(structure: AccessStructure) -> bool:
    """Every subset is classified as exactly one of qualified or forbidden."""
    structure._check_capacity()
    every = frozenset(range(1 << structure.universe_size))
    for i in range(structure.secret_count):
        q = structure.qualified_family(i)
        f = structure.forbidden_family(i)
        if q & f or q | f != every:
            return False
    return True


def describe(structure: AccessStructure) -> str:
    """Human-readable dump: universe plus each secret's minimal qualified
    sets, for docs and test output."""
    lines = [f"universe: {{{', '.join(structure.labels)}}}"]
    for i, minimal in enumerate(structure.qualified_minimal):
        sets = sorted(
            "{" + ", ".join(sorted(structure.labels_of(m))) + "}" for m in minimal
        )
        lines.append(f"secret {i + 1}: minimal qualified {', '.join(sets) or '(none)'}")
    return "\n".join(lines)
