"""Long-horizon arch check: simulate the stone arch for ten minutes of model time.

    python scripts/arch_long_run.py [--mu 1.0] [--minutes 10]

This is a manual acceptance run (about 15000 steps at dt = 0.04 s); the
test suite uses a 300-step horizon. Prints keystone motion every 50 steps
and a JSON summary at the end.
"""
import argparse
import json

from softcontact.benchmarks import arch_keystone, arch_summary


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--minutes", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.04)
    p.add_argument("--blocks", type=int, default=9)
    args = p.parse_args()
    steps = int(round(60 * args.minutes / args.dt))
    res = arch_keystone(args.mu, steps, dt=args.dt, blocks=args.blocks, log=print)
    print(json.dumps(arch_summary(res), indent=2))
    stable = res.displacement_fraction <= 0.02
    print(f"keystone moved {res.displacement_fraction:.3%} of block height over "
          f"{res.steps} steps: {'stable' if stable else 'NOT stable'}")


if __name__ == "__main__":
    main()
