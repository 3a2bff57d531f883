"""Cross-package integration through external interfaces only.

The orchestrator side is exercised via its command line; this package
serves the bridge. Nothing here imports the primary package.
"""

import json
import shutil
import subprocess
import time

import numpy as np
import pytest
import torch

pytest.importorskip("PIL")
from PIL import Image

from voidface_trainer.bridge import TrainerBridge
from voidface_trainer.config import PatchNetConfig
from voidface_trainer.model import MultiPatchNet

VOIDFACE = shutil.which("voidface")
pytestmark = pytest.mark.skipif(
    VOIDFACE is None, reason="primary pipeline CLI not installed"
)

SUBJECT = "00112233445566778899aabbccddeeff"
PATCH_KIND_NAMES = [
    "left_eyebrow", "right_eyebrow", "left_eye", "right_eye", "nose", "mouth",
]


def run_cli(*args):
    return subprocess.run(
        [VOIDFACE, *args], capture_output=True, text=True, timeout=120
    )


@pytest.fixture
def prepared_world(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
    image = tmp_path / "face.png"
    Image.fromarray(np.asarray(arr)).save(image)
    landmarks = tmp_path / "landmarks.json"
    landmarks.write_text(
        json.dumps(
            {
                name: {"x": 10 + 20 * i, "y": 30 + 15 * i, "w": 48, "h": 40}
                for i, name in enumerate(PATCH_KIND_NAMES)
            }
        )
    )
    prep = run_cli(
        "prepare", "--image", str(image), "--landmarks", str(landmarks),
        "--subject", SUBJECT, "--size", "96",
        "--out", str(tmp_path / "out"), "--vault", str(tmp_path / "vault"),
        "--allow", "lab", "--seed", "3",
    )
    assert prep.returncode == 0, prep.stderr
    dist = run_cli(
        "distribute", "--shares", str(tmp_path / "out"), "--subject", SUBJECT,
        "--institutions", "6", "--store", str(tmp_path / "store"),
        "--plan", str(tmp_path / "plan.json"), "--seed", "4",
    )
    assert dist.returncode == 0, dist.stderr
    return tmp_path


def test_full_round_against_bridge(prepared_world):
    tmp_path = prepared_world
    torch.manual_seed(0)
    bridge = TrainerBridge(MultiPatchNet(PatchNetConfig()), port=0)
    bridge.start_background()
    try:
        result = run_cli(
            "train",
            "--vault", str(tmp_path / "vault"),
            "--plan", str(tmp_path / "plan.json"),
            "--store", str(tmp_path / "store"),
            "--subjects", SUBJECT,
            "--requester", "lab",
            "--trainer", "external",
            "--trainer-endpoint", f"127.0.0.1:{bridge.bound_port}",
            "--json",
        )
        assert result.returncode == 0, result.stderr
        doc = json.loads(result.stdout)
        assert doc["status"] == "complete"
        assert doc["trainer"].startswith("external@127.0.0.1")
        assert doc["subjects_trained"] == 1
        assert doc["failed_patches"] == []
    finally:
        bridge.stop()


def test_bridge_down_flags_patches_but_round_survives(prepared_world):
    tmp_path = prepared_world
    # Point the orchestrator at a dead endpoint: every patch is flagged,
    # aggregation proceeds on zero vectors.
    result = run_cli(
        "train",
        "--vault", str(tmp_path / "vault"),
        "--plan", str(tmp_path / "plan.json"),
        "--store", str(tmp_path / "store"),
        "--subjects", SUBJECT,
        "--requester", "lab",
        "--trainer", "external",
        "--trainer-endpoint", "127.0.0.1:1",
        "--json",
    )
    assert result.returncode == 0, result.stderr
    doc = json.loads(result.stdout)
    patch_failures = [f for f in doc["failed_patches"] if f["patch_index"] is not None]
    agg_failures = [f for f in doc["failed_patches"] if f["patch_index"] is None]
    assert len(patch_failures) == 6
    assert all("unreachable" in f["error"] for f in patch_failures)
    # With the bridge fully dead even zero-vector aggregation cannot run,
    # so the subject is flagged rather than trained.
    assert len(agg_failures) == 1
    assert doc["subjects_trained"] == 0


def test_bridge_restart_between_rounds(prepared_world):
    tmp_path = prepared_world
    torch.manual_seed(0)
    model = MultiPatchNet(PatchNetConfig())
    first = TrainerBridge(model, port=0)
    first.start_background()
    port = first.bound_port

    def train_once():
        return run_cli(
            "train", "--vault", str(tmp_path / "vault"),
            "--plan", str(tmp_path / "plan.json"), "--store", str(tmp_path / "store"),
            "--subjects", SUBJECT, "--requester", "lab",
            "--trainer", "external", "--trainer-endpoint", f"127.0.0.1:{port}",
            "--json",
        )

    before = train_once()
    first.stop()
    time.sleep(0.3)
    second = TrainerBridge(model, port=port)
    second.start_background()
    try:
        after = train_once()
    finally:
        second.stop()
    doc_before, doc_after = json.loads(before.stdout), json.loads(after.stdout)
    assert doc_before["failed_patches"] == [] and doc_after["failed_patches"] == []
    assert doc_before["embedding_digest"] == doc_after["embedding_digest"]
