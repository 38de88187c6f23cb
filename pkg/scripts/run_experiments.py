"""Train and evaluate everything the statistical acceptance checks read.

Results go to results/acceptance-<code digest>/ and are reused by
tests/test_acceptance.py. Expect about 7 minutes per (config, seed) run on
one core; runs already finished are loaded, so the script can be resumed.
"""

import argparse
import logging

from monoattn import experiments as ex


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default="results", help="parent directory for the results folder")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = ex.acceptance_dir(args.root)
    res = ex.run_acceptance(out)
    for mech, stab in ex.ACCEPTANCE_CONFIGS:
        print(f"{mech}+{stab}: median epochs-to-stable {ex.median_epochs_to_stable(res.convergence, mech, stab):g}, "
              f"median failures {ex.median_failures(res.stability, mech, stab):g}")
    s = res.sweep
    print("speed sweep:", ", ".join(f"{r.bias:+.1f}:{r.mean_ratio:.3f}" for r in s.rows),
          f"| surviving spread {s.spread:.3f}")
    print(f"results in {out}")


if __name__ == "__main__":
    main()
