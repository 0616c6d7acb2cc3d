"""Type-I rate, power and planted-outlier behaviour of the homogeneity test."""

from __future__ import annotations

import argparse
import sys

from iiatest.ppc import HomogeneityConfig, homogeneity_test
from iiatest.synthgen import gen_mixture_responses, homogeneous_population, plant_outlier, two_population_mixture


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--participants", type=int, default=150)
    p.add_argument("--copies", type=int, default=10, help="targets per participant (two questions each)")
    p.add_argument("--alpha", type=float, default=0.05)
    a = p.parse_args(argv)
    qs, mix = two_population_mixture(a.copies)
    hom = homogeneous_population({q.id: mix.marginal(q.id) for q in qs})
    for label, pop in (("homogeneous", hom), ("mixture", mix)):
        rej = sum(
            homogeneity_test(gen_mixture_responses(qs, pop, a.participants, s), HomogeneityConfig(seed=s)).p_value < a.alpha
            for s in range(a.runs)
        )
        print(f"{label}: rejected {rej}/{a.runs}")
    last = f"p{a.participants - 1:04d}"
    for s in range(10):
        t = plant_outlier(gen_mixture_responses(qs, hom, a.participants, 500 + s), hom, last)
        full = homogeneity_test(t, HomogeneityConfig(seed=s))
        dropped = homogeneity_test(t, HomogeneityConfig(seed=s), exclude=[last])
        print(f"outlier run {s}: p {full.p_value:.4f} -> {dropped.p_value:.4f}, flagged {list(full.outliers)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
