#!/usr/bin/env python3
"""Calibrate the heuristic monitor, render a 12-mode sweep set and evaluate it."""

import argparse
import logging
import tempfile
from pathlib import Path

from sensorsentry.desk import DeskConfig, run_desk


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", type=Path, help="output directory (default: a temporary one)")
    ap.add_argument("--calib-images", type=int, default=20)
    ap.add_argument("--sweep-images", type=int, default=6)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    cfg = DeskConfig(calib_images=args.calib_images, sweep_images=args.sweep_images, jobs=args.jobs)
    if args.work is None:
        with tempfile.TemporaryDirectory() as tmp:
            res = run_desk(tmp, cfg)
    else:
        res = run_desk(args.work, cfg)
        print(f"report written to {args.work / 'report'}")
    print("\n".join(res.lines()))
    print(f"spearman gate: {'pass' if res.spearman_gate() else 'FAIL'}; AUSE gate: {'pass' if res.ause_gate() else 'FAIL'}")


if __name__ == "__main__":
    main()
