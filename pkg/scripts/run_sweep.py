"""Generate-then-test sweep over the additive perturbation scale.

Writes mean aggregate p-values per grid point and per-set rejection counts.
Usage: python scripts/run_sweep.py [--repetitions 10] [--out sweep-out]
"""

from __future__ import annotations

import argparse
import sys

from iiatest import cli


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--kind", choices=("additive", "multiplicative"), default="additive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sweep-out")
    a = p.parse_args(argv)
    return cli.main(
        ["-v", "sweep", "--kind", a.kind, "--repetitions", str(a.repetitions), "--seed", str(a.seed), "--out", a.out]
    )


if __name__ == "__main__":
    sys.exit(main())
