"""Face-image ingestion: crop the six landmark boxes, resize uniformly,
and destroy the original.

Landmark detection itself happens upstream; boxes arrive as input (a
JSON file mapping kind names to {x, y, w, h}). Once the patches are
extracted, the session's destroy step zeroizes every buffer that held
the full image, and nothing outside the returned bundle and the audit
record survives the session.

Resampling is plain bilinear interpolation with pixel-center alignment
(the source and destination image rectangles share corners) and
replicated edges, rounding half up. This is pinned so patch bytes are
reproducible across platforms.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .buffers import BufferRegistry
from .errors import (
    DimensionError,
    FullImageUnavailableError,
    IncompleteLandmarksError,
    LandmarkError,
    OrderingError,
)
from .shares import (
    PATCH_KINDS,
    PatchImage,
    PatchKind,
    ShareGrid,
    bootstrap_first_patch,
    generate_private_share,
)

DEFAULT_PATCH_SIZE = 96


@dataclass(frozen=True)
class LandmarkBox:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise LandmarkError(f"box must have positive size, got {self.width}x{self.height}")
        if self.x < 0 or self.y < 0:
            raise LandmarkError(f"box origin must be non-negative, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class LandmarkSet:
    """One box per patch kind, in source-image pixel coordinates."""

    boxes: dict[PatchKind, LandmarkBox]

    def __post_init__(self):
        missing = [k.value for k in PATCH_KINDS if k not in self.boxes]
        if missing:
            raise IncompleteLandmarksError(f"missing landmark boxes: {', '.join(missing)}")
        extra = [k for k in self.boxes if k not in PATCH_KINDS]
        if extra:
            raise LandmarkError(f"unknown patch kinds: {extra}")

    def validate_against(self, width: int, height: int) -> None:
        for kind, box in self.boxes.items():
            if box.x + box.width > width or box.y + box.height > height:
                raise LandmarkError(
                    f"{kind.value} box ({box.x},{box.y},{box.width},{box.height}) "
                    f"exceeds image bounds {width}x{height}"
                )

    @classmethod
    def from_json(cls, data: dict) -> "LandmarkSet":
        boxes = {}
        for kind in PATCH_KINDS:
            if kind.value not in data:
                raise IncompleteLandmarksError(f"missing landmark boxes: {kind.value}")
            entry = data[kind.value]
            boxes[kind] = LandmarkBox(
                x=int(entry["x"]), y=int(entry["y"]),
                width=int(entry["w"]), height=int(entry["h"]),
            )
        return cls(boxes)

    @classmethod
    def load(cls, path: str | Path) -> "LandmarkSet":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PatchBundle:
    """All six patches of one subject at a common size."""

    subject_id: bytes
    patches: tuple[PatchImage, ...]

    def __post_init__(self):
        kinds = [p.patch_kind for p in self.patches]
        if kinds != list(PATCH_KINDS):
            raise DimensionError("bundle must hold the six kinds in canonical order")
        shapes = {(p.width, p.height, p.channels) for p in self.patches}
        if len(shapes) != 1:
            raise DimensionError(f"patches must share dimensions, got {shapes}")

    def __iter__(self):
        return iter(self.patches)

    def patch(self, kind: PatchKind) -> PatchImage:
        return self.patches[PATCH_KINDS.index(kind)]


def decode_image(path: str | Path) -> np.ndarray:
    """Decode a PNG or PPM file to an (h, w, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def bilinear_resize(src: np.ndarray, out_width: int, out_height: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment and clamped edges.

    Identity sizes copy bytes exactly; fractional results round half up.
    """
    if out_width <= 0 or out_height <= 0:
        raise DimensionError("target size must be positive")
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    h, w = src.shape[:2]
    if (w, h) == (out_width, out_height):
        out = src.copy()
        return out[:, :, 0] if squeeze else out
    xs = (np.arange(out_width) + 0.5) * (w / out_width) - 0.5
    ys = (np.arange(out_height) + 0.5) * (h / out_height) - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)

    plane = src.astype(np.float64)
    top = plane[y0c][:, x0c] * (1 - fx)[None, :, None] + plane[y0c][:, x1c] * fx[None, :, None]
    bot = plane[y1c][:, x0c] * (1 - fx)[None, :, None] + plane[y1c][:, x1c] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    out = np.floor(out + 0.5).astype(np.uint8)
    return out[:, :, 0] if squeeze else out


def extract_patches(
    image: np.ndarray,
    landmarks: LandmarkSet,
    target_size: int = DEFAULT_PATCH_SIZE,
    *,
    subject_id: bytes = bytes(16),
) -> PatchBundle:
    """Crop each landmark box and resize to target_size x target_size.

    Output order is the canonical kind order. Deterministic: the same
    image and landmarks always produce byte-identical patches.
    """
    if target_size <= 0:
        raise DimensionError("target size must be positive")
    if image.ndim == 2:
        image = image[:, :, None]
    h, w = image.shape[:2]
    landmarks.validate_against(w, h)
    patches = []
    for kind in PATCH_KINDS:
        box = landmarks.boxes[kind]
        crop = image[box.y : box.y + box.height, box.x : box.x + box.width]
        resized = bilinear_resize(crop, target_size, target_size)
        patches.append(PatchImage.from_array(kind, resized))
    return PatchBundle(subject_id=subject_id, patches=tuple(patches))


def share_bundle(
    bundle: PatchBundle, rng
) -> tuple[ShareGrid, list[ShareGrid]]:
    """Encrypt a bundle: bootstrap the pad from the first patch, then XOR
    the rest under the same pad. Returns (authentication share, private
    shares in patch order)."""
    first = bundle.patches[0]
    as_grid, ps1 = bootstrap_first_patch(first, rng, subject_id=bundle.subject_id)
    privates = [ps1]
    for patch in bundle.patches[1:]:
        privates.append(generate_private_share(patch, as_grid))
    return as_grid, privates


class IngestionSession:
    """Lifecycle of one face image: decode, extract, destroy.

    The full image lives only inside this session's buffer registry.
    After ``destroy_original`` every registered buffer is zeroized and
    ``full_image`` reports not-found. Sessions are single-threaded;
    independent sessions may run concurrently.
    """

    def __init__(self, subject_id: bytes, image: np.ndarray, clock=time.time):
        self.subject_id = subject_id
        self._clock = clock
        self.registry = BufferRegistry()
        self._image = self.registry.register("full_image", np.array(image, dtype=np.uint8))
        self._bundle: PatchBundle | None = None
        self._destroyed = False
        self.audit: list[dict] = [{"event": "ingest", "t": clock()}]

    @classmethod
    def from_file(cls, subject_id: bytes, path: str | Path, clock=time.time) -> "IngestionSession":
        return cls(subject_id, decode_image(path), clock=clock)

    def extract(self, landmarks: LandmarkSet, target_size: int = DEFAULT_PATCH_SIZE) -> PatchBundle:
        if self._destroyed:
            raise OrderingError("session already destroyed")
        self._bundle = extract_patches(
            self._image, landmarks, target_size, subject_id=self.subject_id
        )
        self.audit.append({"event": "extract", "t": self._clock(), "target_size": target_size})
        return self._bundle

    def destroy_original(self) -> dict:
        """Zeroize the full image. Idempotent after the first call;
        calling before extraction is an ordering error."""
        if self._bundle is None:
            raise OrderingError("destroy_original called before extraction")
        if not self._destroyed:
            self.registry.zeroize_all()
            self._image = None
            self._destroyed = True
            self.audit.append({"event": "destroy_original", "t": self._clock()})
        confirmation = {
            "subject_id": self.subject_id.hex(),
            "destroyed": True,
            "destroyed_at": next(
                e["t"] for e in self.audit if e["event"] == "destroy_original"
            ),
        }
        return confirmation

    def full_image(self) -> np.ndarray:
        if self._destroyed or self._image is None:
            raise FullImageUnavailableError(
                f"full image for {self.subject_id.hex()} not found"
            )
        return self._image
