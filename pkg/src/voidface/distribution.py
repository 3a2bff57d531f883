"""Placement of a subject's private shares across storage institutions.

The number of private shares rarely equals the number of institutions,
so planning reconciles the two:

* equal counts: one share per institution, unchanged;
* more shares than institutions: a uniformly random subset is placed
  and the rest are dropped (recorded, since those patches become
  untrainable);
* fewer shares than institutions: with deficit j, either j randomly
  chosen shares are each split into two sub-grids (j small), or every
  share is split into an even composition of floor/ceil(N / N_ps)
  sub-grids summing to N. Splits are XOR-additive, so the union of an
  expanded share's sub-grids reassembles it exactly.

Each institution receives exactly one grid. Planning is pure; actually
sending grids is the network layer's job.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import UnknownSecretError
from .shares import ShareGrid, ShareRole, expand_share
from . import shareio


class PlacementCase(Enum):
    EXACT = "exact"
    CASE1_SUBSET = "case1_subset"
    CASE2_EXPANDED = "case2_expanded"


@dataclass(frozen=True)
class Assignment:
    institution_id: int
    grid: ShareGrid


@dataclass(frozen=True)
class PlacementPlan:
    subject_id: bytes
    assignments: tuple[Assignment, ...]
    case_taken: PlacementCase
    j: int
    source_patches: tuple[int, ...]
    dropped_patches: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id.hex(),
            "case": self.case_taken.value,
            "j": self.j,
            "assignments": [
                {
                    "institution": a.institution_id,
                    "patch_index": a.grid.patch_index,
                    "subgrid_index": a.grid.subgrid_index,
                    "subgrid_total": a.grid.subgrid_total,
                }
                for a in self.assignments
            ],
            "dropped_patches": list(self.dropped_patches),
        }


def plan_distribution(
    shares: list[ShareGrid], n_institutions: int, rng: np.random.Generator
) -> PlacementPlan:
    """Assign exactly one grid to each of ``n_institutions`` institutions.

    See the module docstring for the three case rules. The rng drives
    the random subset and split choices; institution ids are 0..N-1.
    """
    if n_institutions < 1:
        raise ValueError("need at least one institution")
    if not shares:
        raise ValueError("no shares to place")
    n_ps = len(shares)
    n = n_institutions
    subject_id = shares[0].subject_id
    source_patches = tuple(s.patch_index for s in shares)

    dropped: tuple[int, ...] = ()
    if n_ps == n:
        case = PlacementCase.EXACT
        j = 0
        grids = list(shares)
    elif n_ps > n:
        case = PlacementCase.CASE1_SUBSET
        j = 0
        keep = sorted(rng.choice(n_ps, size=n, replace=False).tolist())
        grids = [shares[i] for i in keep]
        dropped = tuple(
            shares[i].patch_index for i in range(n_ps) if i not in set(keep)
        )
    else:
        case = PlacementCase.CASE2_EXPANDED
        j = n - n_ps
        counts = [1] * n_ps
        if j <= n_ps:
            chosen = rng.choice(n_ps, size=j, replace=False).tolist()
            for i in chosen:
                counts[i] = 2
        else:
            q, r = divmod(n, n_ps)
            order = rng.permutation(n_ps).tolist()
            for rank, i in enumerate(order):
                counts[i] = q + 1 if rank < r else q
        grids = []
        for share, k in zip(shares, counts):
            if k == 1:
                grids.append(share)
            else:
                grids.extend(expand_share(share, k, rng))

    assert len(grids) == n
    assignments = tuple(
        Assignment(institution_id=i, grid=g) for i, g in enumerate(grids)
    )
    return PlacementPlan(
        subject_id=subject_id,
        assignments=assignments,
        case_taken=case,
        j=j,
        source_patches=source_patches,
        dropped_patches=dropped,
    )


def locate_shares(plan: PlacementPlan, patch_index: int) -> list[int]:
    """Institutions holding grids needed to reassemble that patch's
    private share. Empty for a patch dropped under case 1."""
    if patch_index not in plan.source_patches:
        raise UnknownSecretError(f"patch {patch_index} was never part of this plan")
    return [
        a.institution_id
        for a in plan.assignments
        if a.grid.patch_index == patch_index
    ]


def grids_for_patch(plan: PlacementPlan, patch_index: int) -> list[ShareGrid]:
    return [a.grid for a in plan.assignments if a.grid.patch_index == patch_index]


def institution_dirname(institution_id: int) -> str:
    return f"inst-{institution_id:02d}"


def materialize_plan(plan: PlacementPlan, store_dir: str | Path) -> list[Path]:
    """Write each assigned grid into its institution's directory under
    ``store_dir``, using the share file format."""
    store_dir = Path(store_dir)
    written = []
    for a in plan.assignments:
        inst_dir = store_dir / institution_dirname(a.institution_id)
        inst_dir.mkdir(parents=True, exist_ok=True)
        written.append(shareio.write_share(a.grid, inst_dir / shareio.share_filename(a.grid)))
    return written


def load_plan(path: str | Path, store_dir: str | Path) -> PlacementPlan:
    """Rehydrate a plan from its JSON file, reloading every assigned grid
    from the institution directories under ``store_dir``."""
    doc = json.loads(Path(path).read_text())
    subject_id = bytes.fromhex(doc["subject_id"])
    assignments = []
    for entry in doc["assignments"]:
        grid = None
        inst_dir = Path(store_dir) / institution_dirname(entry["institution"])
        for f in sorted(inst_dir.glob("*.share")):
            g = shareio.read_share(f)
            if (
                g.subject_id == subject_id
                and g.patch_index == entry["patch_index"]
                and g.subgrid_index == entry["subgrid_index"]
            ):
                grid = g
                break
        if grid is None:
            raise FileNotFoundError(
                f"grid for patch {entry['patch_index']} sub {entry['subgrid_index']} "
                f"not found in store"
            )
        assignments.append(Assignment(entry["institution"], grid))
    source = tuple(
        sorted({e["patch_index"] for e in doc["assignments"]} | set(doc["dropped_patches"]))
    )
    return PlacementPlan(
        subject_id=subject_id,
        assignments=tuple(assignments),
        case_taken=PlacementCase(doc["case"]),
        j=doc["j"],
        source_patches=source,
        dropped_patches=tuple(doc["dropped_patches"]),
    )


def save_plan(plan: PlacementPlan, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plan.to_json(), indent=2))
    return path
