#!/usr/bin/env python3
"""Solve the small-coefficient Schwinger-Dyson equations and compare the
pushforward moments with a Gibbs chain's mean tracial state at finite N."""

import argparse

import numpy as np

from orbfree.gibbs import GibbsConfig, mean_tracial_state, run
from orbfree.matrices import MatrixTuple, SpectralMeasure, quantile_microstate
from orbfree.poly import FamilyLayout, _format_word, parse
from orbfree.sdsolver import SDProblem, pushforward_x, sd_solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t", type=float, default=0.01)
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--m", type=int, default=4)
    ap.add_argument("--sweeps", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    layout = FamilyLayout(n=2, r=(1, 1), R=2.0)
    h = parse(f"{args.t}*x[1,1]*x[2,1] + {args.t}*x[2,1]*x[1,1]", layout).scale(0.5)

    xi = quantile_microstate(SpectralMeasure.semicircle(2.0), args.N)
    tup = MatrixTuple(layout, args.N, sa={(1, 1): xi, (2, 1): xi})
    emp = SpectralMeasure.empirical(np.linalg.eigvalsh(xi))

    problem = SDProblem(layout, h, [emp, emp], D=8)
    table, report = sd_solve(problem, pushforward_degree=args.m)
    print(f"SD: converged={report.converged} iters={report.iterations} "
          f"residual={report.residual:.2e}")
    pf = pushforward_x(table, problem, args.m)

    cfg = GibbsConfig("unitary-orbital", args.N, h, microstates=tup,
                      sweeps=args.sweeps, burn_in=args.sweeps // 4,
                      thinning=5, seed=args.seed)
    chain = run(cfg)
    mean = mean_tracial_state(chain, args.m)
    print(f"Gibbs: acceptance={chain.acceptance_rate:.2f} samples={len(chain.samples)}")

    print(f"{'word':<26} {'sd':>10} {'gibbs':>10} {'|diff|/se':>10}")
    for w in sorted(pf.values, key=len):
        if not w or not mean.has(w):
            continue
        d = abs(pf.get(w) - mean.get(w))
        se = mean.stderr.get(w, 0.0)
        ratio = d / se if se > 0 else 0.0
        print(f"{_format_word(w):<26} {pf.get(w).real:>10.5f} "
              f"{mean.get(w).real:>10.5f} {ratio:>10.2f}")


if __name__ == "__main__":
    main()
