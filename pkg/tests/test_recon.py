
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitkit.errors import ConfigError, DimensionError, NumericalError, ParseError
from eitkit.interp import MeshPixelInterpolator, disk_mask, pixel_centers
from eitkit.recon import (ENSEMBLE_LABELS, NoiseModel, Reconstructor, RegWeights,
                          auto_thresholds, build_ensemble, build_noise_model, load_weights_config,
                          reconstruct, reconstruct_ensemble, save_weights_config, segment)
from roundtrip import RoundTrip, disk_phantom


@pytest.fixture(scope="module")
def rt(default_mesh, mesh_01, patterns):
    return RoundTrip(default_mesh, mesh_01, patterns)


@pytest.fixture(scope="module")
def small(mesh_02, patterns):
    return RoundTrip(mesh_02, mesh_02, patterns)


def test_noise_model_formula():
    np.testing.assert_allclose(build_noise_model(np.array([1.0, 2.0])).diag, [0.07, 0.12])
    np.testing.assert_allclose(build_noise_model(np.array([-1.0, 2.0])).diag, [0.07, 0.12])
    u = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(build_noise_model(10 * u).diag, 10 * build_noise_model(u).diag)
    np.testing.assert_allclose(build_noise_model(u, as_std=True).diag, build_noise_model(u).diag ** 2)
    with pytest.raises(ConfigError):
        build_noise_model(np.zeros(4))
    with pytest.raises(ConfigError):
        NoiseModel(np.array([1.0, 0.0]))


def test_weights_validation():
    with pytest.raises(ConfigError):
        RegWeights(0, 0, 0)
    with pytest.raises(ConfigError):
        RegWeights(-1, 1, 0)


def test_lm_only_is_spd(small):
    rec = Reconstructor(small.J, small.rec_noise, small.priors, RegWeights(0, 0, 1))
    assert np.all(np.linalg.eigvalsh(rec.normal_matrix) > 0)


def test_not_spd_reports_weights(small):
    # a singular normal matrix: the FSM null space is not covered by a zero Jacobian
    J = np.zeros_like(small.J.matrix)
    with pytest.raises(NumericalError, match="fsm=1"):
        Reconstructor(J, small.rec_noise, small.priors, RegWeights(1, 0, 0))


def test_zero_data_and_doubling(small):
    for w in (RegWeights(1, 0, 0), RegWeights(2, 0, 0)):
        rec = Reconstructor(small.J, small.rec_noise, small.priors, w)
        assert np.all(reconstruct(rec, np.zeros(rec.n_rows)) == 0)


def test_dimension_mismatch(small):
    rec = Reconstructor(small.J, small.rec_noise, small.priors, RegWeights(1, 1, 1))
    with pytest.raises(DimensionError):
        rec(np.zeros(5))
    with pytest.raises(DimensionError):
        Reconstructor(small.J, NoiseModel(np.ones(3)), small.priors, RegWeights(1, 0, 0))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-3, 3))
def test_linearity_and_residual(small, seed, a):
    rng = np.random.default_rng(seed)
    rec = small.members[3]
    d1, d2 = rng.standard_normal((2, rec.n_rows)) * 1e-4
    x1, x2, x12 = rec(d1), rec(d2), rec(a * d1 + d2)
    assert np.linalg.norm(x12 - (a * x1 + x2)) <= 1e-10 * max(np.linalg.norm(x12), 1e-300) + 1e-300
    assert rec.residual(d1, x1) < 1e-10


def test_monotone_shrinkage(small, rng):
    du = small.delta_u(disk_phantom((0.03, 0.03), 0.025, 5.5))
    for base in (RegWeights(1, 0, 0), RegWeights(0, 1, 0), RegWeights(0, 0, 1)):
        norms = [np.linalg.norm(Reconstructor(small.J, small.rec_noise, small.priors, base.scaled(s),
                                              normalize=True)(du)) for s in (0.1, 1, 10)]
        assert norms[0] > norms[1] > norms[2]


@pytest.mark.parametrize("value,sign", [(5.5, 1), (0.05, -1)])
def test_single_inclusion_round_trip(rt, value, sign):
    centre = (0.035, -0.025)
    du = rt.delta_u(disk_phantom(centre, 0.02, value))
    for rec in rt.members:
        ok, dist, tol = rt.localizes(rec(du), centre, sign)
        assert ok, (rec.weights.label, dist, tol)
    # sign sanity in the mean over the inclusion's elements
    inside = np.linalg.norm(rt.rec_mesh.centroids - centre, axis=1) < 0.02
    assert np.sign(rt.reconstruct(du)[inside].mean()) == sign


def test_default_weights_file():
    weights, normalize = load_weights_config()
    assert normalize
    assert sorted(weights) == list(range(1, 8))
    for k in range(1, 8):
        assert [w.label for w in weights[k]] == list(ENSEMBLE_LABELS)
    # strengths increase with the level
    for i in range(5):
        s = [weights[k][i].alpha_fsm + weights[k][i].alpha_sm + weights[k][i].alpha_lm for k in range(1, 8)]
        assert all(a < b for a, b in zip(s, s[1:]))


def test_weights_roundtrip_and_errors(tmp_path):
    weights, normalize = load_weights_config()
    p = tmp_path / "w.json"
    save_weights_config(weights, p, normalize)
    back, n2 = load_weights_config(p)
    assert back == weights and n2 == normalize
    p.write_text('{"1": [{"alpha_fsm": 1}]}')
    with pytest.raises(ParseError, match="level"):
        load_weights_config(p)
    p.write_text("{")
    with pytest.raises(ParseError, match="line"):
        load_weights_config(p)


def test_ensemble(small, patterns):
    weights, normalize = load_weights_config()
    interp = MeshPixelInterpolator(small.rec_mesh)
    ens = build_ensemble({1: small.J}, {1: small.u_ref}, small.priors, weights, interp, normalize)
    assert all(len(v) == 5 for v in ens.members.values())
    zero = reconstruct_ensemble(ens, np.zeros(2356), level=1)
    assert zero.shape == (5, 256, 256) and not zero.any()
    du = small.delta_u(disk_phantom((0.03, 0.0), 0.02, 5.5))
    imgs = reconstruct_ensemble(ens, du, level=1)
    for i in range(5):
        for j in range(i + 1, 5):
            assert np.linalg.norm(imgs[i] - imgs[j]) > 0
    with pytest.raises(ConfigError):
        reconstruct_ensemble(ens, du, level=4)


def test_segment_fixed_thresholds():
    assert not segment(np.zeros((64, 64)), (-0.5, 0.5)).any()
    X, Y = pixel_centers(1.0, 64)
    region = (X - 0.3) ** 2 + Y**2 < 0.2**2
    img = np.where(region, -1.0, 0.0)
    cm = segment(img, (-0.5, 0.5))
    assert np.array_equal(cm == 1, region & disk_mask(64))
    assert not (cm == 2).any()
    with pytest.raises(ConfigError):
        segment(img, (0.5, -0.5))


def test_segment_mask_outside_disk():
    cm = segment(np.full((32, 32), 5.0), (-1, 1))
    assert np.array_equal(cm == 2, disk_mask(32))


def test_otsu_planted(rng):
    X, Y = pixel_centers(1.0, 256)
    pos = (X - 0.3) ** 2 + (Y - 0.2) ** 2 < 0.15**2
    neg = (X + 0.35) ** 2 + (Y + 0.1) ** 2 < 0.2**2
    img = 1.0 * pos - 0.8 * neg + 0.05 * rng.standard_normal((256, 256))
    truth = np.zeros((256, 256), np.uint8)
    truth[pos] = 2
    truth[neg] = 1
    truth[~disk_mask(256)] = 0
    cm = segment(img)
    assert np.mean(cm != truth) < 0.02
    lo, hi = auto_thresholds(img)
    assert lo < 0 < hi
