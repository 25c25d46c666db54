#!/usr/bin/env python3
"""Write procedural clean road scenes and depth maps for the CLI to consume."""

import argparse
from pathlib import Path

from sensorsentry.scenes import DEFAULT_SIZE, write_scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--height", type=int, default=DEFAULT_SIZE[0])
    ap.add_argument("--width", type=int, default=DEFAULT_SIZE[1])
    ap.add_argument("--depth-format", choices=["png", "pgm"], default="png")
    args = ap.parse_args()
    imgs, _ = write_scenes(args.out, args.count, args.seed, (args.height, args.width), args.depth_format)
    print(f"{len(imgs)} scenes in {args.out / 'images'}, depth in {args.out / 'depth'}")


if __name__ == "__main__":
    main()
