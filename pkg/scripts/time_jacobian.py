"""Wall time and solve counts of the Jacobian at several mesh sizes.

    python scripts/time_jacobian.py --h 0.02 0.01 0.005
"""

import argparse
import time

from eitkit import DiskMeshSpec, build_disk_mesh, challenge_patterns, compute_jacobian_fast
from eitkit.sim import SIGMA_BACKGROUND


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, nargs="+", default=[0.02, 0.01, 0.005])
    args = ap.parse_args()
    patterns = challenge_patterns()
    print(f"{'h':>7} {'N':>6} {'M':>6} {'seconds':>8} {'factor.':>7} {'solves':>7} {'naive K*M':>10}")
    for h in args.h:
        mesh = build_disk_mesh(DiskMeshSpec(mesh_size_h=h))
        t0 = time.perf_counter()
        J = compute_jacobian_fast(mesh, SIGMA_BACKGROUND, 1e-6, patterns)
        dt = time.perf_counter() - t0
        print(f"{h:7.3f} {mesh.n_vertices:6d} {mesh.n_elements:6d} {dt:8.2f} "
              f"{J.stats.factorizations:7d} {J.stats.rhs_solved:7d} "
              f"{patterns.n_patterns * mesh.n_elements:10d}")


if __name__ == "__main__":
    main()
