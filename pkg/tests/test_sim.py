import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitkit.errors import ConfigError, DimensionError, GenerationError
from eitkit.gridio import load_class_map, load_grid
from eitkit.interp import disk_mask
from eitkit.cem import MeasurementVector
from eitkit.recon import NoiseModel
from eitkit.sim import (CONDUCTIVE_RANGE, RESISTIVE_RANGE, SIGMA_BACKGROUND, Phantom, PhantomSpec,
                        add_noise, generate_dataset, generate_phantom, prepare_context,
                        simulate_sample)

Z = 1e-6


def test_empty_phantom():
    ph = generate_phantom(PhantomSpec(n_objects=(0, 0)), seed=1)
    assert np.all(ph.conductivity_img == SIGMA_BACKGROUND)
    assert not ph.class_map.any() and ph.objects == []


def test_same_seed_identical():
    a, b = (generate_phantom(PhantomSpec(), seed=42) for _ in range(2))
    assert np.array_equal(a.class_map, b.class_map)
    assert np.array_equal(a.conductivity_img, b.conductivity_img)
    c = generate_phantom(PhantomSpec(), seed=43)
    assert not np.array_equal(a.conductivity_img, c.conductivity_img)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_phantom_invariants(seed):
    ph = generate_phantom(PhantomSpec(grid_size=128), seed=seed)
    img, cm = ph.conductivity_img, ph.class_map
    assert 1 <= len(ph.objects) <= 3
    assert np.all(img[cm == 0] == SIGMA_BACKGROUND)
    assert np.all((img[cm == 1] >= RESISTIVE_RANGE[0]) & (img[cm == 1] <= RESISTIVE_RANGE[1]))
    assert np.all((img[cm == 2] >= CONDUCTIVE_RANGE[0]) & (img[cm == 2] <= CONDUCTIVE_RANGE[1]))
    assert not cm[~disk_mask(128)].any()
    # objects do not overlap: pixel counts add up
    assert sum(o["n_pixels"] for o in ph.objects) == int((cm > 0).sum())


def test_conductivity_ranges_many_objects():
    vals = []
    for s in range(60):
        vals += [o["conductivity"] for o in generate_phantom(PhantomSpec(grid_size=64), seed=s).objects]
    v = np.array(vals)
    res, con = v[v < 1], v[v > 1]
    assert res.size and con.size
    assert res.min() >= 0.025 and res.max() <= 0.125
    assert con.min() >= 5.0 and con.max() <= 6.0


def test_spec_validation():
    for bad in (dict(n_objects=(3, 1)), dict(size_range=(0.5, 0.2)), dict(shape_weights={"hexagon": 1}),
                dict(shape_weights={"circle": 0}), dict(p_conductive=2.0)):
        with pytest.raises(ConfigError):
            PhantomSpec(**bad).validate()
    spec = PhantomSpec(n_objects=(2, 2), size_range=(0.1, 0.2))
    assert PhantomSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        PhantomSpec.from_dict({"bogus": 1})


def test_infeasible_spec():
    with pytest.raises(GenerationError, match="fewer or smaller"):
        generate_phantom(PhantomSpec(n_objects=(40, 40), size_range=(0.5, 0.6), max_attempts=50), seed=0)


def test_add_noise_variance():
    diag = np.array([1e-4, 4e-2, 2.5, 9.0])
    u = MeasurementVector(1, np.arange(1), np.zeros(4))
    draws = np.array([add_noise(u, NoiseModel(diag), seed=s).values for s in range(2000)])
    assert draws.shape == (2000, 4)
    with pytest.raises(DimensionError):
        add_noise(u, NoiseModel(np.ones(3)))


def test_add_noise_monte_carlo():
    diag = np.array([1e-6, 3e-4, 0.2])
    n = 100_000
    u = MeasurementVector(1, np.arange(1), np.tile([1.0, -2.0, 0.5], n))
    out = add_noise(u, NoiseModel(np.tile(diag, n)), seed=7).values.reshape(n, 3) - [1.0, -2.0, 0.5]
    np.testing.assert_allclose(out.var(axis=0), diag, rtol=0.05)


@pytest.fixture(scope="module")
def ctx(mesh_02, patterns):
    return prepare_context(mesh_02, Z, patterns)


def test_empty_tank_noise_within_3sigma(ctx):
    ph = generate_phantom(PhantomSpec(n_objects=(0, 0)), seed=0)
    res = simulate_sample(ctx, ph, 1, noise_seed=3)
    assert np.abs(res["clean"].values).max() < 1e-10 * np.abs(ctx.u_ref_full).max()
    z = res["noisy"].values / np.sqrt(ctx.noise[1].diag)
    assert np.mean(np.abs(z) < 3) >= 0.99


def test_level_rows(ctx):
    ph = generate_phantom(PhantomSpec(), seed=5)
    for k, rows in ((1, 2356), (7, 513)):
        res = simulate_sample(ctx, ph, k, noise_seed=0)
        assert res["clean"].values.size == rows == ctx.noise[k].diag.size


def test_noise_mode_none(mesh_02, patterns):
    c = prepare_context(mesh_02, Z, patterns, noise="none")
    res = simulate_sample(c, generate_phantom(PhantomSpec(), seed=1), 2, noise_seed=0)
    assert np.array_equal(res["clean"].values, res["noisy"].values)
    with pytest.raises(ConfigError):
        prepare_context(mesh_02, Z, patterns, noise="loud")


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_dataset_layout_and_determinism(tmp_path, mesh_02, patterns):
    spec = PhantomSpec(grid_size=64)
    m1 = generate_dataset(spec, mesh_02, Z, patterns, 2, tmp_path / "a", seed=11)
    assert m1["counts"] == {str(k): 2 for k in range(1, 8)} and not m1["failed"]
    files = _tree(tmp_path / "a")
    samples = [k for k in files if k.endswith("meta.json")]
    assert len(samples) == 14
    generate_dataset(spec, mesh_02, Z, patterns, 2, tmp_path / "b", seed=11, threads=3)
    assert files == _tree(tmp_path / "b")
    s = tmp_path / "a" / "level_3" / "sample_00001"
    cm = load_class_map(s / "class_map.bin")
    img, meta = load_grid(s / "conductivity_img.bin")
    assert cm.shape == img.shape == (64, 64) and meta["disk_radius"] == 0.115
    du = MeasurementVector.load(s / "delta_u.json")
    assert du.level == 3 and du.values.size == 1404


def test_dataset_resume(tmp_path, mesh_02, patterns):
    spec = PhantomSpec(grid_size=64)
    root = tmp_path / "d"
    generate_dataset(spec, mesh_02, Z, patterns, 1, root, seed=5)
    full = _tree(root)
    # simulate an interruption: one sample half written, one missing
    meta = root / "level_4" / "sample_00000" / "meta.json"
    doc = json.loads(meta.read_text())
    doc["complete"] = False
    meta.write_text(json.dumps(doc))
    (root / "level_6" / "sample_00000" / "class_map.bin").unlink()
    (root / "level_6" / "sample_00000" / "meta.json").unlink()
    generate_dataset(spec, mesh_02, Z, patterns, 1, root, seed=5)
    assert _tree(root) == full


def test_dataset_bad_counts(tmp_path, mesh_02, patterns):
    with pytest.raises(ConfigError):
        generate_dataset(PhantomSpec(), mesh_02, Z, patterns, [1, 2], tmp_path)
    with pytest.raises(ConfigError):
        generate_dataset(PhantomSpec(), mesh_02, Z, patterns, 1, tmp_path, threads=0)


def test_phantom_type():
    ph = generate_phantom(PhantomSpec(grid_size=32), seed=0)
    assert isinstance(ph, Phantom) and ph.class_map.dtype == np.uint8
