"""Binary share file format.

Layout (all multi-byte integers little-endian):

    offset  size  field
    0       4     magic ``VOID``
    4       1     version, currently 1
    5       1     role: 0 authentication, 1 private, 2 subgrid
    6       16    subject id
    22      1     patch index (0xFF for the authentication share)
    23      1     subgrid index
    24      1     subgrid total (1 for an unexpanded share)
    25      2     width  (u16)
    27      2     height (u16)
    29      1     channels
    30      n     payload, n = width * height * channels
    30+n    4     CRC32 of every preceding byte (u32)

Readers reject bad magic, unknown versions, truncated files, and CRC
mismatches.
"""

import struct
import zlib
from pathlib import Path

from .errors import ShareFormatError
from .shares import ShareGrid, ShareRole

MAGIC = b"VOID"
VERSION = 1

_HEADER = struct.Struct("<4sBB16sBBBHHB")
HEADER_SIZE = _HEADER.size  # 30
CRC_SIZE = 4

_ROLE_CODES = {
    ShareRole.AUTHENTICATION: 0,
    ShareRole.PRIVATE: 1,
    ShareRole.SUBGRID: 2,
}
_CODE_ROLES = {v: k for k, v in _ROLE_CODES.items()}


def encode_share(grid: ShareGrid) -> bytes:
    """Serialize a grid to the on-disk byte layout, CRC included."""
    if grid.width > 0xFFFF or grid.height > 0xFFFF:
        raise ShareFormatError("width/height exceed u16 range")
    if grid.subgrid_total > 0xFF or grid.patch_index > 0xFF:
        raise ShareFormatError("patch or subgrid counters exceed u8 range")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        _ROLE_CODES[grid.role],
        grid.subject_id,
        grid.patch_index,
        grid.subgrid_index,
        grid.subgrid_total,
        grid.width,
        grid.height,
        grid.channels,
    )
    body = header + grid.payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_share(data: bytes) -> ShareGrid:
    """Parse and verify one share file's bytes."""
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise ShareFormatError(f"file too short: {len(data)} bytes")
    (
        magic,
        version,
        role_code,
        subject_id,
        patch_index,
        subgrid_index,
        subgrid_total,
        width,
        height,
        channels,
    ) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ShareFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ShareFormatError(f"unsupported version {version}")
    if role_code not in _CODE_ROLES:
        raise ShareFormatError(f"unknown role code {role_code}")
    expected_len = HEADER_SIZE + width * height * channels + CRC_SIZE
    if len(data) != expected_len:
        raise ShareFormatError(
            f"file is {len(data)} bytes, header implies {expected_len}"
        )
    body, crc_bytes = data[:-CRC_SIZE], data[-CRC_SIZE:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) != crc_stored:
        raise ShareFormatError("CRC mismatch")
    return ShareGrid(
        role=_CODE_ROLES[role_code],
        subject_id=subject_id,
        patch_index=patch_index,
        subgrid_index=subgrid_index,
        subgrid_total=subgrid_total,
        width=width,
        height=height,
        channels=channels,
        payload=data[HEADER_SIZE:-CRC_SIZE],
    )


def write_share(grid: ShareGrid, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_share(grid))
    return path


def read_share(path: str | Path) -> ShareGrid:
    return decode_share(Path(path).read_bytes())


def share_filename(grid: ShareGrid) -> str:
    """Canonical file name: subject hex, role tag, patch/subgrid ordinals."""
    sid = grid.subject_id.hex()
    if grid.role == ShareRole.AUTHENTICATION:
        return f"{sid}_as.share"
    if grid.role == ShareRole.PRIVATE:
        return f"{sid}_ps{grid.patch_index:02d}.share"
    return f"{sid}_ps{grid.patch_index:02d}_sub{grid.subgrid_index:02d}of{grid.subgrid_total:02d}.share"
