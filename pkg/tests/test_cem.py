import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitkit.cem import (CEMModel, ElectrodeFrame, MeasurementVector, apply_measurement_operator,
                        assemble_system, check_conductivity, fit_background_conductivity,
                        local_stiffness, simulate_measurements, solve_forward)
from eitkit.errors import ConfigError, DimensionError, FitError
from eitkit.levels import CurrentPatternSet, level_config, pair_pattern
from eitkit.mesh import TriMesh, boundary_loop

from conftest import SIGMA_BG, Z


def test_unit_triangle_stiffness():
    v = np.array([[0.0, 0], [1, 0], [0, 1]])
    e = np.array([[0, 1, 2]])
    m = TriMesh(v, e, boundary_loop(e), ())
    k = local_stiffness(m)[0]
    np.testing.assert_allclose(np.diag(k), [1.0, 0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(k.sum(axis=1), 0, atol=1e-15)
    np.testing.assert_allclose(k, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)


def test_conductivity_checks(mesh_02):
    with pytest.raises(ConfigError):
        check_conductivity(np.zeros(mesh_02.n_elements), mesh_02.n_elements)
    with pytest.raises(DimensionError):
        check_conductivity(np.ones(3), mesh_02.n_elements)
    with pytest.raises(ConfigError):
        CEMModel(mesh_02, 0.0)


def test_blocks_scale(mesh_02):
    model = CEMModel(mesh_02, Z)
    s1 = model.assemble(1e-3)
    s2 = model.assemble(2e-3)
    A1, A2 = s1.blocks["A"], s2.blocks["A"]
    assert abs(A2 - 2 * A1).max() < 1e-15 * abs(A1).max()
    for b in "BCD":
        assert (s1.blocks[b] != s2.blocks[b]).nnz == 0
    np.testing.assert_allclose(s1.blocks["D"].diagonal(), mesh_02.electrode_lengths / Z, rtol=1e-14)


def test_impedance_scaling_of_boundary_blocks(mesh_02):
    a, b = CEMModel(mesh_02, 1e-3), CEMModel(mesh_02, 2e-3)
    assert abs(a.B - 2 * b.B).max() < 1e-12 * abs(a.B).max()
    assert abs(a.D - 2 * b.D).max() < 1e-12 * abs(a.D).max()


def test_system_symmetric_and_psd_stiffness(mesh_02, rng):
    sigma = rng.uniform(0.1, 5, mesh_02.n_elements)
    z = rng.uniform(1e-6, 1e-2, 32)
    S = CEMModel(mesh_02, z).assemble(sigma)
    M = S.matrix
    assert abs(M - M.T).max() / abs(M).max() < 1e-12
    A = S.blocks["A"].toarray()
    assert np.linalg.eigvalsh(A).min() > -1e-10 * np.abs(A).max()
    assert M.shape == (mesh_02.n_vertices + 33,) * 2


def test_charge_conservation_and_sign(mesh_02, patterns):
    S = assemble_system(mesh_02, SIGMA_BG, Z)
    U = solve_forward(S, patterns).U
    assert np.all(np.abs(U.sum(axis=1)) <= 1e-10 * np.abs(U).max())
    # pattern 0 drives +I into electrode 1 and out of electrode 3
    assert U[0, 0] > 0 > U[0, 2]


def test_factorization_reused(mesh_02, patterns):
    S = assemble_system(mesh_02, SIGMA_BG, Z)
    solve_forward(S, patterns)
    solve_forward(S, patterns)
    assert S.stats.factorizations == 1
    assert S.stats.rhs_solved == 2 * patterns.n_patterns


def test_scaling_identity(mesh_02, patterns, rng):
    sigma = rng.uniform(0.5, 2, mesh_02.n_elements)
    model = CEMModel(mesh_02, Z)
    U = solve_forward(model.assemble(sigma), patterns).U
    c = 3.0
    Uc = solve_forward(CEMModel(mesh_02, Z / c).assemble(c * sigma), patterns).U
    assert np.abs(Uc - U / c).max() / np.abs(U / c).max() < 1e-10


def test_reciprocity(mesh_02, rng):
    sigma = rng.uniform(0.5, 2, mesh_02.n_elements)
    S = CEMModel(mesh_02, Z).assemble(sigma)
    L = 32
    pairs = [(0, 5), (3, 17), (9, 10), (20, 28)]
    P = CurrentPatternSet(np.array([pair_pattern(L, a, b) for a, b in pairs]), np.ones(L, bool))
    U = solve_forward(S, P).U
    R = np.array([[U[i, c] - U[i, d] for (c, d) in pairs] for i in range(len(pairs))])
    assert np.abs(R - R.T).max() / np.abs(R).max() < 1e-8


def test_measurement_operator(patterns):
    cfg = level_config(1)
    frame = ElectrodeFrame(np.full((76, 32), 2.5), np.arange(76))
    mv = apply_measurement_operator(frame, cfg)
    assert len(mv) == 2356 and np.all(mv.values == 0)
    with pytest.raises(DimensionError):
        apply_measurement_operator(ElectrodeFrame(np.zeros((10, 32)), np.arange(10)), cfg)


def test_measurement_order(rng):
    U = rng.standard_normal((76, 32))
    mv = apply_measurement_operator(ElectrodeFrame(U, np.arange(76)), level_config(1))
    assert mv.values[31 * 4 + 7] == U[4, 8] - U[4, 7]


def test_level_seven_measurement_rows(mesh_02, patterns):
    full = simulate_measurements(CEMModel(mesh_02, Z), SIGMA_BG, patterns, level=1)
    l7 = simulate_measurements(CEMModel(mesh_02, Z), SIGMA_BG, patterns, level=7)
    cfg = level_config(7)
    assert len(l7) == cfg.n_rows
    assert np.array_equal(l7.values, full.values[cfg.row_mask])


def test_measurement_vector_roundtrip(tmp_path, rng):
    mv = MeasurementVector(3, np.arange(5), rng.standard_normal(5))
    p = tmp_path / "u.json"
    mv.save(p)
    back = MeasurementVector.load(p)
    assert back.level == 3 and np.array_equal(back.values, mv.values)


@pytest.mark.parametrize("c_true", [0.745, 2.0])
def test_background_fit(mesh_02, patterns, c_true):
    u = simulate_measurements(CEMModel(mesh_02, Z), c_true, patterns)
    c = fit_background_conductivity(mesh_02, Z, patterns, u)
    assert abs(c - c_true) / c_true < 1e-4


def test_background_fit_zero_data(mesh_02, patterns):
    u = MeasurementVector(1, np.arange(76), np.zeros(2356))
    with pytest.raises(FitError):
        fit_background_conductivity(mesh_02, Z, patterns, u)


def test_mesh_convergence(patterns):
    from eitkit.mesh import DiskMeshSpec, build_disk_mesh

    def smooth(mesh):
        x, y = mesh.centroids.T
        return 0.745 + 0.3 * np.exp(-((x - 0.03) ** 2 + y**2) / 0.002)

    Us = []
    for h in (0.02, 0.01, 0.005, 0.0025):
        m = build_disk_mesh(DiskMeshSpec(mesh_size_h=h))
        Us.append(solve_forward(CEMModel(m, Z).assemble(smooth(m)), patterns).U)
    errs = [np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(Us, Us[1:])]
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 2**16))
def test_linear_in_current(mesh_02, c, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.choice(32, 2, replace=False)
    P = CurrentPatternSet(pair_pattern(32, a, b)[None], np.ones(32, bool))
    S = assemble_system(mesh_02, SIGMA_BG, Z)
    U1 = solve_forward(S, P).U
    Pc = CurrentPatternSet(c * P.patterns, np.ones(32, bool))
    np.testing.assert_allclose(solve_forward(S, Pc).U, c * U1, rtol=1e-9, atol=1e-14 * np.abs(U1).max())
