"""Space-mapping iterations and center-of-mass errors as the noise grows.

Runs the sigma-sweep preset (N=30, M=5, T=20) and prints one row per noise
level: the AMCSM iteration count and the L2 distance between the expected
center of mass and the coarse-optimal one, before and after space mapping.

Run: python3 demos/sigma_study.py [--samples 100] [--out out/sigma-demo]
"""

import argparse

from sheepdog.experiments import preset, run_scenario

parser = argparse.ArgumentParser()
parser.add_argument("--samples", type=int, default=100)
parser.add_argument("--out", default="out/sigma-demo")
args = parser.parse_args()

print(f"{'sigma':>6} {'SM iters':>8} {'L2 deterministic':>17} {'L2 space mapping':>17}")
for label, cfg in preset("sigma-sweep"):
    rec = run_scenario(cfg.replace(n_samples=args.samples), f"{args.out}/{label}")
    print(f"{cfg.noise:>6} {rec.sm_iterations:>8} {rec.l2_error_deterministic:>17.3e} "
          f"{rec.l2_error_space_mapping:>17.3e}")
