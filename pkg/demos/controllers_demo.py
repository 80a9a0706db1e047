"""
Certainty-equivalent, cautious and dual gain schedules on both benchmarks.

Prints the feedback gain norm at a few steps, the dual multiplier lambda(k)
and the average cost each schedule predicts for itself from the prior
(CE ignores the parameter spread, so its own prediction is optimistic).
The cautious prediction is also compared with a Monte Carlo mean.
"""

import numpy as np

from pulds.controllers import average_cost, nominal_trajectory, plan_dual, solve_cautious, solve_ce
from pulds.harness import Variant, run_set
from pulds.lds_model import build_scenario


def main():
    for name in ("interception", "soft_landing"):
        sc = build_scenario(name)
        m, cost, prior = sc.model, sc.cost, sc.prior
        nominal = nominal_trajectory(m, prior.x0_cov)
        ce = solve_ce(m, cost)
        ca = solve_cautious(m, cost, sc.moments, nominal)
        du, info, _ = plan_dual(m, cost, prior.x0_mean, prior.x0_cov, sc.moments, prior.P)
        print(name)
        print("   k   |C| CE   |C| cautious   |C| dual   lambda")
        for k in (0, 5, 10, 15, 20, 24):
            print(f"  {k:2d}  {np.linalg.norm(ce.C[k]):7.3f}  {np.linalg.norm(ca.C[k]):12.3f}"
                  f"  {np.linalg.norm(du.C[k]):9.3f}  {du.lam[k]:8.4f}")
        print(f"  singular steps in dual schedule: {int(du.singular.sum())}")
        for label, g in (("CE", ce), ("cautious", ca), ("dual", du)):
            J = average_cost(g, m, cost, prior.x0_cov, prior.x0_mean, nominal, include_reference=True)
            print(f"  self-predicted average cost {label:<9} {float(J):10.3f}")
        # cautious prediction against the Monte Carlo mean on the true plant
        mc = run_set(sc, Variant(1, 1), 1000, sc.base_seed).cost_mean
        J = float(average_cost(ca, m, cost, prior.x0_cov, prior.x0_mean, nominal, include_reference=True))
        print(f"  cautious: predicted {J:.3f}, Monte Carlo {mc:.3f}, relative gap {(mc - J) / J:+.2%}")


if __name__ == "__main__":
    main()
