"""Quantitative security evaluation of shares.

Covers the four measurements used to argue the scheme leaks nothing:
pixel change rate between independent encryptions (NPCR), per-channel
Shannon entropy, adjacent-pixel and patch-vs-share correlation, and the
log-space brute-force guessing probability. All statistics are float64;
histograms are exact integer counts.

A correlation over a constant sequence is undefined and is reported as
NaN rather than 0 or an exception: a constant share means the random
source failed and must be loud, not averaged away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal, getcontext
from enum import Enum
from typing import Any

import numpy as np

from .errors import DimensionError
from .shares import PatchImage, ShareGrid, generate_random_grid, generate_private_share


class Direction(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    DIAGONAL = "diagonal"


@dataclass
class MetricReport:
    """One metric's results, broken down per patch kind and, where it
    applies, per channel or direction."""

    metric: str
    values: dict[str, Any]
    sample_count: int
    parameters: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        return {
            "metric": self.metric,
            "values": clean(self.values),
            "sample_count": self.sample_count,
            "parameters": clean(self.parameters),
        }


def _as_bytes_array(img) -> np.ndarray:
    if isinstance(img, PatchImage):
        return np.frombuffer(img.pixels, dtype=np.uint8)
    if isinstance(img, ShareGrid):
        return np.frombuffer(img.payload, dtype=np.uint8)
    if isinstance(img, (bytes, bytearray)):
        return np.frombuffer(bytes(img), dtype=np.uint8)
    return np.asarray(img, dtype=np.uint8).ravel()


def npcr(a, b) -> float:
    """Percentage of byte positions where the two images differ,
    counted over all width*height*channels positions."""
    xa, xb = _as_bytes_array(a), _as_bytes_array(b)
    if xa.size != xb.size:
        raise DimensionError(f"size mismatch: {xa.size} vs {xb.size}")
    return 100.0 * float(np.count_nonzero(xa != xb)) / xa.size


# Expected NPCR between two independent uniform byte grids.
UNIFORM_NPCR_PERCENT = 100.0 * 255.0 / 256.0


def uniform_npcr_stderr(positions: int) -> float:
    """Binomial standard error, in percent, of NPCR over that many positions."""
    p = 255.0 / 256.0
    return 100.0 * math.sqrt(p * (1.0 - p) / positions)


def npcr_campaign(patch: PatchImage, trials: int, rng) -> MetricReport:
    """Encrypt a patch ``trials`` times under fresh pads, pick one share
    at random, and report its mean NPCR against the other trials."""
    if trials < 2:
        raise ValueError(f"need at least 2 trials, got {trials}")
    shares = []
    for _ in range(trials):
        pad = generate_random_grid(patch.width, patch.height, patch.channels, rng)
        shares.append(generate_private_share(patch, pad))
    ref = int(rng.integers(trials)) if hasattr(rng, "integers") else 0
    ref_bytes = _as_bytes_array(shares[ref])
    rates = [
        npcr(ref_bytes, shares[i]) for i in range(trials) if i != ref
    ]
    positions = patch.size
    return MetricReport(
        metric="npcr",
        values={
            "mean_percent": float(np.mean(rates)),
            "min_percent": float(np.min(rates)),
            "max_percent": float(np.max(rates)),
            "uniform_expectation_percent": UNIFORM_NPCR_PERCENT,
            "uniform_3sigma_percent": 3.0 * uniform_npcr_stderr(positions),
        },
        sample_count=len(rates),
        parameters={"trials": trials, "reference_index": ref, "positions": positions},
    )


def shannon_entropy(img, channel: int = 0, channels: int | None = None) -> float:
    """Entropy in bits of the 256-bin histogram of one channel's bytes."""
    data = _as_bytes_array(img)
    if isinstance(img, (PatchImage, ShareGrid)):
        channels = img.channels
    if channels is None:
        channels = 1
    if not 0 <= channel < channels:
        raise DimensionError(f"channel {channel} outside 0..{channels - 1}")
    plane = data.reshape(-1, channels)[:, channel]
    hist = np.bincount(plane, minlength=256)
    probs = hist[hist > 0] / plane.size
    return float(-np.sum(probs * np.log2(probs)))


def _channel_plane(img, channel: int) -> np.ndarray:
    if isinstance(img, (PatchImage, ShareGrid)):
        return img.as_array()[:, :, channel]
    arr = np.asarray(img)
    if arr.ndim == 2:
        return arr
    return arr[:, :, channel]


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r, or NaN when either sequence has zero variance."""
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return math.nan
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def adjacent_correlation(img, direction: Direction, channel: int = 0) -> float:
    """Pearson correlation between each pixel and its neighbor in one
    direction, over all valid positions of one channel plane.

    NaN signals a degenerate (constant) sequence.
    """
    plane = _channel_plane(img, channel)
    if plane.shape[0] < 2 or plane.shape[1] < 2:
        raise DimensionError(f"image {plane.shape} too small for adjacency")
    if direction == Direction.HORIZONTAL:
        x, y = plane[:, :-1], plane[:, 1:]
    elif direction == Direction.VERTICAL:
        x, y = plane[:-1, :], plane[1:, :]
    else:
        x, y = plane[:-1, :-1], plane[1:, 1:]
    return _pearson(x.ravel(), y.ravel())


def patch_share_correlation(patch: PatchImage, share: ShareGrid) -> float:
    """Pearson correlation between flattened patch and share bytes."""
    if not share.same_shape(patch):
        raise DimensionError("patch and share dimensions differ")
    return _pearson(_as_bytes_array(patch), _as_bytes_array(share))


def brute_force_log_probability(
    width: int, height: int, channels: int
) -> tuple[float, float, int, str]:
    """Probability of guessing a whole share, in log space.

    Each byte is an independent 1-in-256 guess, so
    log10 p = -(w*h*c) * log10(256). Returns (log10_p, mantissa,
    exponent, rendering) with p = mantissa * 10**exponent; computed with
    the ``decimal`` module so the mantissa keeps full precision even
    when the exponent is tens of thousands.
    """
    if width <= 0 or height <= 0 or channels <= 0:
        raise DimensionError("dimensions must be positive")
    getcontext().prec = 60
    log10p = -(Decimal(width * height * channels) * Decimal(256).log10())
    exponent = int(log10p.to_integral_value(rounding=ROUND_FLOOR))
    mantissa = float(Decimal(10) ** (log10p - exponent))
    rendering = f"{mantissa:.9f} x 10^{exponent}"
    return float(log10p), mantissa, exponent, rendering


def share_quality_battery(
    patches: dict[str, PatchImage], n_shares: int, rng
) -> MetricReport:
    """Full battery per patch kind over fresh shares: mean per-channel
    entropy, mean absolute adjacent correlation in three directions,
    mean NPCR between encryptions, and mean absolute patch-share
    correlation. Degenerate correlations are counted, not averaged in.
    """
    per_kind: dict[str, Any] = {}
    for kind_name, patch in patches.items():
        shares = []
        for _ in range(n_shares):
            pad = generate_random_grid(patch.width, patch.height, patch.channels, rng)
            shares.append(generate_private_share(patch, pad))

        entropy = {
            c: float(np.mean([shannon_entropy(s, c) for s in shares]))
            for c in range(patch.channels)
        }

        adj: dict[str, float] = {}
        degenerate = 0
        for direction in Direction:
            rs = []
            for s in shares:
                for c in range(patch.channels):
                    r = adjacent_correlation(s, direction, c)
                    if math.isnan(r):
                        degenerate += 1
                    else:
                        rs.append(abs(r))
            adj[direction.value] = float(np.mean(rs))

        pair_rates = [
            npcr(shares[i], shares[i + 1]) for i in range(len(shares) - 1)
        ]
        ps_corr = []
        for s in shares:
            r = patch_share_correlation(patch, s)
            if math.isnan(r):
                degenerate += 1
            else:
                ps_corr.append(abs(r))

        per_kind[kind_name] = {
            "entropy_per_channel": entropy,
            "mean_abs_adjacent_correlation": adj,
            "mean_npcr_percent": float(np.mean(pair_rates)),
            "mean_abs_patch_share_correlation": float(np.mean(ps_corr)),
            "degenerate_correlations": degenerate,
        }
    return MetricReport(
        metric="share_quality_battery",
        values=per_kind,
        sample_count=n_shares,
        parameters={"shares_per_kind": n_shares},
    )
