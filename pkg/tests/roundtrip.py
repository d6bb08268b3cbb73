"""Single-inclusion simulate -> reconstruct helpers shared by the recon and acceptance tests."""

import numpy as np

from eitkit.cem import CEMModel, apply_measurement_operator, solve_forward
from eitkit.interp import pixel_centers, pixel_to_mesh
from eitkit.jacobian import compute_jacobian_fast, reduce_jacobian
from eitkit.levels import level_config
from eitkit.priors import build_fsm, build_sm
from eitkit.recon import Priors, Reconstructor, build_noise_model, load_weights_config

SIGMA_BG = 0.745
Z = 1e-6


def disk_phantom(centre, radius, value, R=0.115, n=256):
    X, Y = pixel_centers(R, n)
    img = np.full((n, n), SIGMA_BG)
    img[(X - centre[0]) ** 2 + (Y - centre[1]) ** 2 < radius**2] = value
    return img


class RoundTrip:
    """Forward data from ``sim_mesh``, reconstructions on ``rec_mesh`` at one level."""

    def __init__(self, sim_mesh, rec_mesh, patterns, level=1):
        self.sim_mesh, self.rec_mesh, self.patterns, self.level = sim_mesh, rec_mesh, patterns, level
        self.cfg = level_config(level, patterns)
        self.sim_model = CEMModel(sim_mesh, Z)
        self.u_ref = self.measure(np.full(sim_mesh.n_elements, SIGMA_BG))
        self.noise = build_noise_model(self.u_ref)
        J = compute_jacobian_fast(rec_mesh, SIGMA_BG, Z, patterns)
        self.J = reduce_jacobian(J, self.cfg, rec_mesh)
        # reconstruction noise model from the reconstruction mesh's own reference data
        rec_ref = apply_measurement_operator(
            solve_forward(CEMModel(rec_mesh, Z).assemble(SIGMA_BG), patterns), self.cfg)
        self.rec_noise = build_noise_model(rec_ref)
        self.priors = Priors(build_fsm(rec_mesh), build_sm(rec_mesh))
        weights, normalize = load_weights_config()
        self.members = [Reconstructor(self.J, self.rec_noise, self.priors, w, level=level,
                                      normalize=normalize) for w in weights[level]]

    def measure(self, sigma_sim):
        frame = solve_forward(self.sim_model.assemble(sigma_sim), self.patterns)
        return apply_measurement_operator(frame, self.cfg).values

    def delta_u(self, img):
        return self.measure(pixel_to_mesh(img, self.sim_mesh)) - self.u_ref

    def reconstruct(self, du):
        """Mean of the ensemble members' mesh reconstructions."""
        return np.mean([r(du) for r in self.members], axis=0)

    def localizes(self, dsigma, centre, sign):
        """argmax |dsigma| within two mean element diameters of ``centre`` with the right sign."""
        j = int(np.argmax(np.abs(dsigma)))
        dist = np.linalg.norm(self.rec_mesh.centroids[j] - np.asarray(centre))
        tol = 2 * float(np.mean(self.rec_mesh.diameters))
        return dist <= tol and np.sign(dsigma[j]) == sign, dist, tol
