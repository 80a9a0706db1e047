"""
Small Monte Carlo run of the full variant grid for both benchmarks.

Use the ``pulds bench`` command for the 3 x 1000 run tables; this script runs
200 episodes per variant so it finishes in a few seconds.
"""

from pulds.harness import TABLE_VARIANTS, run_set, set_seed_for
from pulds.lds_model import build_scenario


def main(runs=200):
    for name in ("interception", "soft_landing"):
        sc = build_scenario(name)
        print(f"{name}: {runs} runs per variant")
        print("  variant        cost mean   cost std   miss mean  excluded  probes")
        for var in TABLE_VARIANTS:
            st = run_set(sc, var, runs, set_seed_for(sc, 0, runs))
            print(f"  {var.label:<12} {st.cost_mean:10.3f} {st.cost_disp:10.3f} {st.miss_mean:11.3f}"
                  f"  {st.excluded:8d}  {st.probe_freq.sum():6.2f}")


if __name__ == "__main__":
    main()
