"""XOR visual secret sharing over 8-bit image patches.

Each subject's face is reduced to six fixed facial patches. A single
uniform random grid, the authentication share, acts as a common one-time
pad: every patch's private share is the bytewise XOR of the patch with
that pad. Holding the authentication share together with private share i
reconstructs patch i exactly; any other combination is statistically
independent of the patch.

A private share can additionally be expanded into k sub-grids (k-1 fresh
random grids plus one XOR residual) so that the XOR of all k sub-grids
yields the original share. All operations here are pure functions over
immutable inputs; randomness always enters through an explicit source
with a ``bytes(n)`` method (see :mod:`voidface.rng`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DimensionError, IncompleteShareError

# Sentinel patch index carried by authentication shares, matching the
# on-disk format where patch_index is a u8.
AS_PATCH_INDEX = 0xFF

NULL_SUBJECT = bytes(16)


class PatchKind(Enum):
    """The six facial regions, in canonical patch-index order."""

    LEFT_EYEBROW = "left_eyebrow"
    RIGHT_EYEBROW = "right_eyebrow"
    LEFT_EYE = "left_eye"
    RIGHT_EYE = "right_eye"
    NOSE = "nose"
    MOUTH = "mouth"


PATCH_KINDS: tuple[PatchKind, ...] = tuple(PatchKind)
PATCH_COUNT = len(PATCH_KINDS)


def kind_index(kind: PatchKind) -> int:
    return PATCH_KINDS.index(kind)


class ShareRole(Enum):
    AUTHENTICATION = 0
    PRIVATE = 1
    SUBGRID = 2


@dataclass(frozen=True)
class PatchImage:
    """One named facial region as an 8-bit image.

    ``pixels`` is row-major, channel-interleaved, exactly
    width * height * channels bytes.
    """

    patch_kind: PatchKind
    width: int
    height: int
    channels: int
    pixels: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"patch dimensions must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise DimensionError(f"channels must be 1 or 3, got {self.channels}")
        if len(self.pixels) != self.width * self.height * self.channels:
            raise DimensionError(
                f"pixel buffer has {len(self.pixels)} bytes, expected "
                f"{self.width * self.height * self.channels}"
            )

    @property
    def size(self) -> int:
        return self.width * self.height * self.channels

    def as_array(self) -> np.ndarray:
        """(height, width, channels) uint8 view of the pixel data."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )

    @classmethod
    def from_array(cls, kind: PatchKind, arr: np.ndarray) -> "PatchImage":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(kind, w, h, c, np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


@dataclass(frozen=True)
class ShareGrid:
    """A random-looking grid: authentication share, private share, or one
    sub-grid of an expanded private share."""

    role: ShareRole
    subject_id: bytes
    patch_index: int
    subgrid_index: int
    subgrid_total: int
    width: int
    height: int
    channels: int
    payload: bytes

    def __post_init__(self):
        if len(self.subject_id) != 16:
            raise ValueError(f"subject_id must be 16 bytes, got {len(self.subject_id)}")
        if len(self.payload) != self.width * self.height * self.channels:
            raise DimensionError(
                f"payload has {len(self.payload)} bytes, expected "
                f"{self.width * self.height * self.channels}"
            )
        if self.role == ShareRole.AUTHENTICATION and self.patch_index != AS_PATCH_INDEX:
            raise ValueError("authentication share must carry the sentinel patch index")
        if self.role == ShareRole.SUBGRID:
            if self.subgrid_total < 2:
                raise ValueError("sub-grids come in groups of at least 2")
            if not 0 <= self.subgrid_index < self.subgrid_total:
                raise ValueError(
                    f"subgrid_index {self.subgrid_index} outside 0..{self.subgrid_total - 1}"
                )

    @property
    def size(self) -> int:
        return self.width * self.height * self.channels

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.payload, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )

    def same_shape(self, other: "ShareGrid | PatchImage") -> bool:
        return (self.width, self.height, self.channels) == (
            other.width,
            other.height,
            other.channels,
        )


def _xor(a: bytes, b: bytes) -> bytes:
    return (
        np.frombuffer(a, dtype=np.uint8) ^ np.frombuffer(b, dtype=np.uint8)
    ).tobytes()


def _xor_many(buffers: list[bytes]) -> bytes:
    acc = np.frombuffer(buffers[0], dtype=np.uint8).copy()
    for buf in buffers[1:]:
        acc ^= np.frombuffer(buf, dtype=np.uint8)
    return acc.tobytes()


def generate_random_grid(
    width: int,
    height: int,
    channels: int,
    rng,
    *,
    role: ShareRole = ShareRole.AUTHENTICATION,
    subject_id: bytes = NULL_SUBJECT,
    patch_index: int = AS_PATCH_INDEX,
) -> ShareGrid:
    """Draw a grid with every byte independently uniform over 0..255.

    ``rng`` is any source with a ``bytes(n)`` method; a seeded generator
    makes the output deterministic.
    """
    if width <= 0 or height <= 0 or channels <= 0:
        raise DimensionError(f"grid dimensions must be positive, got {width}x{height}x{channels}")
    payload = rng.bytes(width * height * channels)
    return ShareGrid(
        role=role,
        subject_id=subject_id,
        patch_index=patch_index,
        subgrid_index=0,
        subgrid_total=1,
        width=width,
        height=height,
        channels=channels,
        payload=payload,
    )


def bootstrap_first_patch(
    p1: PatchImage, rng, *, subject_id: bytes = NULL_SUBJECT
) -> tuple[ShareGrid, ShareGrid]:
    """Encrypt the designated first patch into two random grids.

    One grid is fresh uniform randomness and becomes the authentication
    share; the other is the XOR of the patch with it and becomes the
    first private share. XOR of the two recovers the patch exactly.
    """
    as_grid = generate_random_grid(
        p1.width, p1.height, p1.channels, rng, subject_id=subject_id
    )
    ps1 = ShareGrid(
        role=ShareRole.PRIVATE,
        subject_id=subject_id,
        patch_index=kind_index(p1.patch_kind),
        subgrid_index=0,
        subgrid_total=1,
        width=p1.width,
        height=p1.height,
        channels=p1.channels,
        payload=_xor(p1.pixels, as_grid.payload),
    )
    return as_grid, ps1


def generate_private_share(
    p_i: PatchImage, as_grid: ShareGrid, *, patch_index: int | None = None
) -> ShareGrid:
    """Private share of a patch under an existing authentication share:
    bytewise XOR of patch pixels with the pad.

    ``patch_index`` defaults to the canonical index of the patch kind.
    """
    if not as_grid.same_shape(p_i):
        raise DimensionError(
            f"patch {p_i.width}x{p_i.height}x{p_i.channels} does not match pad "
            f"{as_grid.width}x{as_grid.height}x{as_grid.channels}"
        )
    idx = kind_index(p_i.patch_kind) if patch_index is None else patch_index
    return ShareGrid(
        role=ShareRole.PRIVATE,
        subject_id=as_grid.subject_id,
        patch_index=idx,
        subgrid_index=0,
        subgrid_total=1,
        width=p_i.width,
        height=p_i.height,
        channels=p_i.channels,
        payload=_xor(p_i.pixels, as_grid.payload),
    )


def expand_share(ps: ShareGrid, k: int, rng) -> list[ShareGrid]:
    """Split a private share into k sub-grids whose XOR is the share.

    The first k-1 sub-grids are fresh uniform grids; the last is the XOR
    residual. Every strict subset of the output is statistically
    independent of the original share.
    """
    if k < 2:
        raise ValueError(f"expansion needs k >= 2, got {k}")
    fresh = [rng.bytes(ps.size) for _ in range(k - 1)]
    residual = _xor_many([ps.payload] + fresh)
    payloads = fresh + [residual]
    return [
        ShareGrid(
            role=ShareRole.SUBGRID,
            subject_id=ps.subject_id,
            patch_index=ps.patch_index,
            subgrid_index=i,
            subgrid_total=k,
            width=ps.width,
            height=ps.height,
            channels=ps.channels,
            payload=payload,
        )
        for i, payload in enumerate(payloads)
    ]


def merge_subgrids(subgrids: list[ShareGrid]) -> ShareGrid:
    """Reassemble a private share from all of its sub-grids.

    Raises if the set is incomplete, mixes patches, or mixes dimensions.
    """
    if not subgrids:
        raise IncompleteShareError("no sub-grids supplied")
    first = subgrids[0]
    if first.role != ShareRole.SUBGRID:
        if len(subgrids) == 1:
            return first
        raise IncompleteShareError("cannot merge non-subgrid shares")
    for g in subgrids[1:]:
        if g.patch_index != first.patch_index or g.subject_id != first.subject_id:
            raise IncompleteShareError(
                f"sub-grids disagree on identity: patch {g.patch_index} vs {first.patch_index}"
            )
        if not g.same_shape(first):
            raise DimensionError("sub-grids have mismatched dimensions")
    total = first.subgrid_total
    indices = sorted(g.subgrid_index for g in subgrids)
    if len(subgrids) != total or indices != list(range(total)):
        raise IncompleteShareError(
            f"expected all {total} sub-grids, got indices {indices}"
        )
    return ShareGrid(
        role=ShareRole.PRIVATE,
        subject_id=first.subject_id,
        patch_index=first.patch_index,
        subgrid_index=0,
        subgrid_total=1,
        width=first.width,
        height=first.height,
        channels=first.channels,
        payload=_xor_many([g.payload for g in subgrids]),
    )


def reconstruct_patch(
    as_grid: ShareGrid,
    ps_or_subgrids: ShareGrid | list[ShareGrid],
    *,
    patch_kind: PatchKind | None = None,
) -> PatchImage:
    """Recover a patch: XOR of the authentication share with the private
    share (or with all sub-grids of an expanded one).

    The output carries the patch kind implied by the share's patch index
    unless an explicit kind is given.
    """
    if isinstance(ps_or_subgrids, ShareGrid):
        private = ps_or_subgrids
        if private.role == ShareRole.SUBGRID:
            raise IncompleteShareError(
                f"got 1 sub-grid of {private.subgrid_total}; reconstruction needs all of them"
            )
    else:
        private = merge_subgrids(list(ps_or_subgrids))
    if not as_grid.same_shape(private):
        raise DimensionError("authentication share and private share dimensions differ")
    if patch_kind is None:
        if not 0 <= private.patch_index < PATCH_COUNT:
            raise UnknownKindError(private.patch_index)
        patch_kind = PATCH_KINDS[private.patch_index]
    return PatchImage(
        patch_kind=patch_kind,
        width=private.width,
        height=private.height,
        channels=private.channels,
        pixels=_xor(as_grid.payload, private.payload),
    )


class UnknownKindError(DimensionError):
    def __init__(self, index: int):
        super().__init__(
            f"patch index {index} has no canonical kind; pass patch_kind explicitly"
        )


def with_subject(grid: ShareGrid, subject_id: bytes) -> ShareGrid:
    return replace(grid, subject_id=subject_id)
