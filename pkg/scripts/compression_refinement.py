"""Mesh refinement study for the compression preset.

    python scripts/compression_refinement.py [--levels 2 3 4] [--force 5]

Prints the plate displacement at the held force for each level and the
relative change between consecutive levels.
"""
import argparse

from softcontact.benchmarks import compression_displacement


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--force", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=200)
    args = p.parse_args()
    prev = None
    for n in args.levels:
        d = compression_displacement(n, args.steps, force=args.force)
        change = "" if prev is None else f"  change {abs(d - prev) / abs(d):.3%}"
        print(f"cells {n}: displacement {d:.6e} m{change}")
        prev = d


if __name__ == "__main__":
    main()
