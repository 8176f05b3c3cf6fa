"""Arch friction dichotomy: high friction stands, low friction collapses.

    python scripts/arch_friction.py [--steps 300] [--low-steps 2000]
"""
import argparse

from softcontact.benchmarks import arch_keystone


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--low-steps", type=int, default=2000)
    args = p.parse_args()
    hi = arch_keystone(1.0, args.steps)
    print(f"mu=1.0: max keystone displacement {hi.displacement_fraction:.3%} of block height "
          f"after {hi.steps} steps ({hi.wall_time:.1f} s, {hi.mean_constraints:.0f} constraints avg)")
    lo = arch_keystone(0.2, args.low_steps, stop_drop=0.5)
    print(f"mu=0.2: keystone dropped {lo.drop_fraction:.1%} of block height "
          f"after {lo.steps} steps ({lo.wall_time:.1f} s)")


if __name__ == "__main__":
    main()
