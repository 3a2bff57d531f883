#!/usr/bin/env python3
"""Full security-metrics report over the six synthetic patch kinds.

Prints per-kind NPCR (fresh-encryption change rate), per-channel share
entropy, adjacent and patch-vs-share correlations, and the brute-force
guessing figure. Seeded, so two runs print identical numbers.

Usage: python scripts/security_report.py [--trials 100] [--seed 0]
"""

import argparse

import numpy as np

from voidface.metrics import (
    UNIFORM_NPCR_PERCENT,
    brute_force_log_probability,
    npcr_campaign,
    share_quality_battery,
    uniform_npcr_stderr,
)
from voidface.scenarios import synthetic_patch
from voidface.shares import PATCH_KINDS


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    patches = {kind.value: synthetic_patch(i) for i, kind in enumerate(PATCH_KINDS)}

    print(f"seed={args.seed} trials={args.trials} patch=96x96x3\n")

    print("== NPCR: one share vs the remaining fresh encryptions ==")
    band = 3 * uniform_npcr_stderr(96 * 96 * 3)
    print(f"uniform-model expectation {UNIFORM_NPCR_PERCENT:.4f}% +- {band:.4f}% (3 sigma)")
    for name, patch in patches.items():
        rep = npcr_campaign(patch, trials=args.trials, rng=rng)
        print(f"  {name:14s} mean {rep.values['mean_percent']:7.4f}%  "
              f"min {rep.values['min_percent']:7.4f}%")

    print("\n== Share quality battery (entropy / correlations) ==")
    battery = share_quality_battery(patches, n_shares=args.trials, rng=rng)
    header = f"  {'patch':14s} {'H(R)':>7s} {'H(G)':>7s} {'H(B)':>7s} " \
             f"{'|r|horiz':>9s} {'|r|vert':>9s} {'|r|diag':>9s} {'|r|p-s':>9s}"
    print(header)
    for name, stats in battery.values.items():
        ent = stats["entropy_per_channel"]
        adj = stats["mean_abs_adjacent_correlation"]
        print(
            f"  {name:14s} {ent[0]:7.4f} {ent[1]:7.4f} {ent[2]:7.4f} "
            f"{adj['horizontal']:9.4f} {adj['vertical']:9.4f} {adj['diagonal']:9.4f} "
            f"{stats['mean_abs_patch_share_correlation']:9.4f}"
        )

    print("\n== Brute force ==")
    log10p, mantissa, exponent, rendering = brute_force_log_probability(96, 96, 3)
    print(f"  P(guess one 96x96x3 share) = {rendering}   (log10 = {log10p:.4f})")


if __name__ == "__main__":
    main()
