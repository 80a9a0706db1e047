"""
Predicted information about the uncertain parameters along a control plan.

Compares the pessimistic and optimistic predictions for zero controls and for
a constant excitation, and shows the damped accumulation.
"""

import numpy as np

from pulds.estimation import reducible_from_prior
from pulds.info_metrics import info_accumulate, info_multistep
from pulds.lds_model import build_scenario


def main():
    sc = build_scenario("interception")
    m = sc.model
    state = reducible_from_prior(sc.prior.x0_mean, sc.prior.x0_cov, m.Fbar, m.Gbar, sc.moments)
    plans = {"zeros": np.zeros((m.horizon, m.m)), "u = 5": np.full((m.horizon, m.m), 5.0)}
    for label, u in plans.items():
        print(f"controls {label}")
        print("  mode         I_z(1)   I_z(N)   I_cum(N)  plain sum")
        for mode in ("pessimistic", "optimistic"):
            I_z, _ = info_multistep(m, state, u, mode)
            acc = info_accumulate(I_z, sc.prior.P, mode)
            print(f"  {mode:<11} {I_z[0]:7.4f}  {I_z[-1]:7.4f}  {acc.I_cum[-1]:8.4f}  {acc.I_sigma[-1]:8.4f}")


if __name__ == "__main__":
    main()
