"""Registry of sensitive in-memory buffers.

Zeroization is a best-effort, application-layer contract: every buffer
holding plaintext face data is registered here and wiped before release,
and tests assert the registry drains. This does not defend against OS-level
forensics (swap, copies made by libraries).
"""

import numpy as np


class BufferRegistry:
    """Tracks live numpy buffers holding sensitive pixel data."""

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def register(self, name: str, buf: np.ndarray) -> np.ndarray:
        self._buffers[name] = buf
        return buf

    def zeroize(self, name: str) -> None:
        buf = self._buffers.pop(name, None)
        if buf is not None and buf.flags.writeable:
            buf.fill(0)

    def zeroize_all(self) -> None:
        for name in list(self._buffers):
            self.zeroize(name)

    def live_names(self) -> list[str]:
        return sorted(self._buffers)

    def __len__(self) -> int:
        return len(self._buffers)
