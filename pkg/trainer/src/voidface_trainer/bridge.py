"""Trainer-bridge service.

Speaks the framed wire protocol the orchestrator side defines: every
frame is a 4-byte big-endian length prefix plus a UTF-8 JSON body, and
binary payloads ride base64. Two request shapes, both typed
``TRAIN_PATCH``:

* {"patch_index", "width", "height", "channels", "patch_b64"} asks the
  matching patch branch for its 512-float feature vector;
* {"features": [[...512], ...]} asks the aggregator to fuse per-patch
  features into the global 512-float embedding.

Replies are ``TRAIN_RESULT`` frames carrying {"msg_id", "vector"}. A
malformed frame earns an ``ERROR`` frame and the connection stays open
for the next request. One orchestrator connection is served at a time.
"""

from __future__ import annotations

import argparse
import base64
import json
import socket
import struct
import threading

import numpy as np
import torch

from .config import PatchNetConfig
from .model import MultiPatchNet, load_checkpoint, normalize_patches

MAX_FRAME = 64 * 1024 * 1024


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame_body(sock: socket.socket) -> bytes | None:
    """One frame's raw body; None on clean close. Framing errors (length
    overflow, mid-frame EOF) raise and poison the connection; a body
    that fails to parse is the caller's problem and the connection
    survives it."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ValueError(f"frame of {length} bytes exceeds limit")
    body = _read_exact(sock, length)
    if body is None:
        raise ValueError("connection closed mid-frame")
    return body


def read_frame(sock: socket.socket) -> dict | None:
    body = read_frame_body(sock)
    return None if body is None else json.loads(body.decode("utf-8"))


def write_frame(sock: socket.socket, message: dict) -> None:
    body = json.dumps(message).encode("utf-8")
    sock.sendall(struct.pack(">I", len(body)) + body)


class TrainerBridge:
    """Serves one model over the framed protocol."""

    def __init__(self, model: MultiPatchNet, host: str = "127.0.0.1", port: int = 8571):
        self.model = model
        self.model.eval()
        self.host = host
        self.port = port
        self._server: socket.socket | None = None
        self._stop = threading.Event()
        self.bound_port: int | None = None

    def _patch_feature(self, payload: dict) -> list[float]:
        cfg = self.model.cfg
        raw = base64.b64decode(payload["patch_b64"])
        w, h, c = payload["width"], payload["height"], payload["channels"]
        if len(raw) != w * h * c:
            raise ValueError(f"payload is {len(raw)} bytes, dims imply {w * h * c}")
        if (w, h, c) != (cfg.input_size, cfg.input_size, cfg.channels):
            raise ValueError(
                f"patch {w}x{h}x{c} does not match model input "
                f"{cfg.input_size}x{cfg.input_size}x{cfg.channels}"
            )
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c)
        tensor = normalize_patches(torch.from_numpy(arr.copy()).permute(2, 0, 1)).unsqueeze(0)
        branch = self.model.branches[payload["patch_index"] % cfg.n_p]
        with torch.no_grad():
            feature = branch(tensor)[0]
        return [float(v) for v in feature]

    def _aggregate(self, payload: dict) -> list[float]:
        cfg = self.model.cfg
        feats = payload["features"]
        if len(feats) != cfg.n_p or any(len(f) != cfg.embedding_dim for f in feats):
            raise ValueError(
                f"aggregation expects {cfg.n_p} feature vectors of {cfg.embedding_dim}"
            )
        flat = torch.tensor(feats, dtype=torch.float32).flatten().unsqueeze(0)
        with torch.no_grad():
            embedding = self.model.aggregator(flat)[0]
        return [float(v) for v in embedding]

    def _handle(self, message: dict) -> dict:
        if message.get("type") != "TRAIN_PATCH":
            raise ValueError(f"unsupported message type {message.get('type')!r}")
        if "features" in message:
            vector = self._aggregate(message)
        elif "patch_b64" in message:
            vector = self._patch_feature(message)
        else:
            raise ValueError("TRAIN_PATCH needs either patch_b64 or features")
        return {
            "type": "TRAIN_RESULT",
            "msg_id": message.get("msg_id"),
            "patch_index": message.get("patch_index"),
            "vector": vector,
        }

    def serve_forever(self) -> None:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((self.host, self.port))
            server.listen(1)
            server.settimeout(0.2)
            self._server = server
            self.bound_port = server.getsockname()[1]
            while not self._stop.is_set():
                try:
                    conn, _ = server.accept()
                except socket.timeout:
                    continue
                with conn:
                    self._serve_connection(conn)

    def _serve_connection(self, conn: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                body = read_frame_body(conn)
            except (ValueError, ConnectionError, OSError):
                return  # torn framing is unrecoverable on this connection
            if body is None:
                return
            message: dict | None = None
            try:
                parsed = json.loads(body.decode("utf-8"))
                if not isinstance(parsed, dict):
                    raise ValueError("frame body must be a JSON object")
                message = parsed
                reply = self._handle(message)
            except Exception as e:
                msg_id = message.get("msg_id") if message else None
                reply = {"type": "ERROR", "msg_id": msg_id, "error": str(e)}
            try:
                write_frame(conn, reply)
            except OSError:
                return

    def start_background(self) -> threading.Thread:
        import time

        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        while self.bound_port is None:
            time.sleep(0.005)
        return thread

    def stop(self) -> None:
        self._stop.set()


def serve_bridge(
    host: str = "127.0.0.1",
    port: int = 8571,
    checkpoint: str | None = None,
    seed: int = 0,
    variant: str = "V1",
) -> TrainerBridge:
    """Build a model (fresh seeded weights or a checkpoint) and serve it."""
    if checkpoint:
        model = load_checkpoint(checkpoint)
    else:
        torch.manual_seed(seed)
        model = MultiPatchNet(PatchNetConfig(variant=variant, seed=seed))
    return TrainerBridge(model, host=host, port=port)


def main():
    parser = argparse.ArgumentParser(description="Serve the trainer bridge.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8571)
    parser.add_argument("--checkpoint", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--variant", choices=["V1", "V2"], default="V1")
    args = parser.parse_args()
    bridge = serve_bridge(args.host, args.port, args.checkpoint, args.seed, args.variant)
    print(f"trainer bridge listening on {args.host}:{args.port}")
    bridge.serve_forever()


if __name__ == "__main__":
    main()
