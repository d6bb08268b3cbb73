"""How often a single inclusion is localized under the measurement noise model.

Data are simulated on a fine mesh and reconstructed on a coarser one with the
default ensemble weights.  Rows vary how the noise formula is read (variance or
standard deviation) and the injected current amplitude.

    python scripts/noise_study.py --trials 10
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from eitkit import DiskMeshSpec, build_disk_mesh, challenge_patterns
from eitkit.recon import build_noise_model

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from roundtrip import RoundTrip, disk_phantom  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--centre", type=float, nargs=2, default=[0.04, 0.02])
    ap.add_argument("--radius", type=float, default=0.02)
    ap.add_argument("--currents", type=float, nargs="+", default=[1e-3, 1.0, 1e2, 1e3, 1e4])
    args = ap.parse_args()
    sim = build_disk_mesh(DiskMeshSpec())
    rec = build_disk_mesh(DiskMeshSpec(mesh_size_h=0.01))
    print(f"{'current A':>10} {'reading':>9} {'SNR':>9} {'localized':>10}")
    for current in args.currents:
        rt = RoundTrip(sim, rec, challenge_patterns(current=current))
        du = rt.delta_u(disk_phantom(args.centre, args.radius, 5.5))
        for reading in ("variance", "std"):
            noise = build_noise_model(rt.u_ref, as_std=reading == "std")
            rng = np.random.default_rng(0)
            hits = 0
            for _ in range(args.trials):
                noisy = du + np.sqrt(noise.diag) * rng.standard_normal(du.size)
                hits += bool(rt.localizes(rt.reconstruct(noisy), args.centre, 1)[0])
            snr = np.linalg.norm(du) / np.sqrt(noise.diag.sum())
            print(f"{current:10.0e} {reading:>9} {snr:9.2e} {hits:>5d}/{args.trials}")


if __name__ == "__main__":
    main()
