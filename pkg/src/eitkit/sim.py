"""Random phantoms, measurement noise and the batch dataset factory."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from skimage.draw import polygon2mask
from scipy.ndimage import binary_dilation

from .cem import CEMModel, MeasurementVector, apply_measurement_operator, solve_forward
from .errors import ConfigError, DimensionError, EITError, GenerationError
from .gridio import save_class_map, save_grid
from .interp import GRID_SIZE, disk_mask, pixel_to_mesh
from .levels import N_LEVELS, CurrentPatternSet, level_config
from .mesh import TriMesh
from .recon import CONDUCTIVE, RESISTIVE, NoiseModel, build_noise_model

log = logging.getLogger(__name__)

SIGMA_BACKGROUND = 0.745
RESISTIVE_RANGE = (0.025, 0.125)
CONDUCTIVE_RANGE = (5.0, 6.0)
DATASET_IMPEDANCE = 1e-6
SHAPES = ("polygon", "circle", "rectangle", "blob")
NOISE_MODES = ("variance", "std", "none")


@dataclass(frozen=True)
class PhantomSpec:
    """Distribution of random phantoms.

    ``size_range`` is the characteristic object radius as a fraction of the
    tank radius.  ``n_objects`` is an inclusive range.
    """

    n_objects: tuple[int, int] = (1, 3)
    shape_weights: dict = field(default_factory=lambda: {s: 1.0 for s in SHAPES})
    size_range: tuple[float, float] = (0.12, 0.3)
    sigma_bg: float = SIGMA_BACKGROUND
    p_conductive: float = 0.5
    radius: float = 0.115
    grid_size: int = GRID_SIZE
    max_attempts: int = 1000
    seed: int | None = None

    def validate(self) -> "PhantomSpec":
        lo, hi = self.n_objects
        if not 0 <= lo <= hi:
            raise ConfigError(f"n_objects range {self.n_objects} is empty or negative")
        slo, shi = self.size_range
        if not 0 < slo <= shi < 1:
            raise ConfigError(f"size_range {self.size_range} must satisfy 0 < lo <= hi < 1")
        unknown = set(self.shape_weights) - set(SHAPES)
        if unknown:
            raise ConfigError(f"unknown shape kinds {sorted(unknown)}; expected a subset of {SHAPES}")
        w = np.array([self.shape_weights.get(s, 0.0) for s in SHAPES], dtype=float)
        if np.any(w < 0) or not w.sum() > 0:
            raise ConfigError("shape weights must be nonnegative and not all zero")
        if not self.sigma_bg > 0 or not 0 <= self.p_conductive <= 1:
            raise ConfigError("sigma_bg must be positive and p_conductive a probability")
        if self.grid_size < 8 or self.max_attempts < 1:
            raise ConfigError("grid_size must be at least 8 and max_attempts at least 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_weights"] = {s: float(self.shape_weights.get(s, 0.0)) for s in SHAPES}
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "PhantomSpec":
        doc = dict(doc)
        for key in ("n_objects", "size_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc).validate()
        except TypeError as exc:
            raise ConfigError(f"bad phantom spec: {exc}") from exc


@dataclass(eq=False)
class Phantom:
    class_map: np.ndarray  # uint8, 0 background / 1 resistive / 2 conductive
    conductivity_img: np.ndarray  # float64, background exactly sigma_bg
    objects: list = field(default_factory=list)
    radius: float = 0.115


def _outline(kind: str, r: float, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Closed outline centred at the origin, plus its shape parameters."""
    rot = float(rng.uniform(0, 2 * np.pi))
    if kind == "circle":
        t = np.linspace(0, 2 * np.pi, 96, endpoint=False)
        pts = r * np.column_stack([np.cos(t), np.sin(t)])
        params = {"radius": r}
    elif kind == "rectangle":
        hw, hh = r * rng.uniform(0.5, 1.0, size=2)
        pts = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        params = {"half_width": float(hw), "half_height": float(hh), "rotation": rot}
    elif kind == "polygon":
        n = int(rng.integers(3, 8))
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        rad = r * rng.uniform(0.6, 1.0, size=n)
        pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        params = {"angles": ang.tolist(), "radii": rad.tolist(), "rotation": rot}
    else:  # smooth blob: low-order Fourier perturbation of a circle
        amp = rng.uniform(-0.15, 0.15, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        t = np.linspace(0, 2 * np.pi, 128, endpoint=False)
        k = np.arange(2, 5)[:, None]
        rho = r * (1 + np.sum(amp[:, None] * np.cos(k * t + phase[:, None]), axis=0))
        pts = np.column_stack([rho * np.cos(t), rho * np.sin(t)])
        params = {"radius": r, "amplitudes": amp.tolist(), "phases": phase.tolist(), "rotation": rot}
    if kind != "circle":
        c, s = np.cos(rot), np.sin(rot)
        pts = pts @ np.array([[c, s], [-s, c]])
    return pts, params


def _rasterize(pts_xy: np.ndarray, radius: float, n: int) -> np.ndarray:
    step = 2 * radius / n
    rows = (radius - pts_xy[:, 1]) / step - 0.5
    cols = (pts_xy[:, 0] + radius) / step - 0.5
    return polygon2mask((n, n), np.column_stack([rows, cols]))


def generate_phantom(spec: PhantomSpec, seed=None) -> Phantom:
    """Rejection-sample non-overlapping objects inside the tank.

    Objects keep at least one background pixel between each other and the
    tank wall.  Deterministic for a fixed ``seed`` (an int or a
    ``numpy.random.SeedSequence``); ``seed=None`` falls back to ``spec.seed``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n, R = spec.grid_size, spec.radius
    weights = np.array([spec.shape_weights.get(s, 0.0) for s in SHAPES], dtype=float)
    weights /= weights.sum()
    inside = disk_mask(n)
    allowed = ~binary_dilation(~inside)  # one pixel clear of the wall
    occupied = np.zeros((n, n), dtype=bool)
    class_map = np.zeros((n, n), dtype=np.uint8)
    cond = np.full((n, n), float(spec.sigma_bg))
    objects = []
    count = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    blocked = np.zeros((n, n), dtype=bool)
    for i in range(count):
        for _ in range(spec.max_attempts):
            kind = SHAPES[int(rng.choice(len(SHAPES), p=weights))]
            r = float(rng.uniform(*spec.size_range)) * R
            pts, params = _outline(kind, r, rng)
            rc = R * np.sqrt(rng.uniform()) * 0.95
            phi = rng.uniform(0, 2 * np.pi)
            centre = np.array([rc * np.cos(phi), rc * np.sin(phi)])
            mask = _rasterize(pts + centre, R, n)
            if mask.sum() >= 4 and not np.any(mask & ~allowed) and not np.any(mask & blocked):
                break
        else:
            raise GenerationError(
                f"could not place object {i + 1} of {count} after {spec.max_attempts} attempts; "
                "request fewer or smaller objects"
            )
        conductive = bool(rng.uniform() < spec.p_conductive)
        lo, hi = CONDUCTIVE_RANGE if conductive else RESISTIVE_RANGE
        value = float(rng.uniform(lo, hi))
        label = CONDUCTIVE if conductive else RESISTIVE
        class_map[mask] = label
        cond[mask] = value
        occupied |= mask
        blocked = binary_dilation(occupied)
        objects.append({
            "kind": kind, "centre": centre.tolist(), "params": params,
            "class": int(label), "conductivity": value, "n_pixels": int(mask.sum()),
        })
    return Phantom(class_map, cond, objects, R)


def add_noise(u: MeasurementVector, noise: NoiseModel, seed=None) -> MeasurementVector:
    """``u + Sigma^(1/2) xi`` with standard normal ``xi``."""
    if noise.diag.shape != u.values.shape:
        raise DimensionError(f"noise model has {noise.diag.size} entries, measurements {u.values.size}")
    xi = np.random.default_rng(seed).standard_normal(u.values.shape)
    return MeasurementVector(u.level, u.pattern_ids.copy(), u.values + np.sqrt(noise.diag) * xi)


# ---------------------------------------------------------------------------
# dataset factory


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def sample_seed(master: int, level: int, index: int) -> np.random.SeedSequence:
    """Counter-based stream for one sample, independent of generation order."""
    return np.random.SeedSequence(int(master), spawn_key=(int(level), int(index)))


@dataclass(eq=False)
class DatasetContext:
    """Shared immutable inputs for one dataset run."""

    mesh: TriMesh
    model: CEMModel
    patterns: CurrentPatternSet
    u_ref_full: np.ndarray  # level-1 reference measurements (empty tank)
    noise: dict[int, NoiseModel]
    z: np.ndarray
    noise_mode: str = "variance"


def prepare_context(mesh: TriMesh, z, patterns: CurrentPatternSet,
                    sigma_bg: float = SIGMA_BACKGROUND, u_ref: MeasurementVector | None = None,
                    noise: str = "variance") -> DatasetContext:
    """Shared inputs; ``noise`` is "variance", "std" (formula read as a standard
    deviation) or "none" (noise-free samples)."""
    if noise not in NOISE_MODES:
        raise ConfigError(f"noise must be one of {NOISE_MODES}, got {noise!r}")
    model = CEMModel(mesh, z)
    if u_ref is None:
        frame = solve_forward(model.assemble(sigma_bg), patterns)
        u_ref = apply_measurement_operator(frame, level_config(1, patterns))
    elif u_ref.level != 1:
        raise ConfigError("reference measurements must be given at level 1")
    models = {}
    for k in range(1, N_LEVELS + 1):
        mask = level_config(k, patterns).row_mask[level_config(1, patterns).row_mask]
        models[k] = build_noise_model(u_ref.values[mask], as_std=noise == "std")
    return DatasetContext(mesh, model, patterns, u_ref.values.copy(), models, model.z.copy(), noise)


def simulate_sample(ctx: DatasetContext, phantom: Phantom, level: int, noise_seed) -> dict:
    """Noise-free and noisy ``dU`` for one phantom at one level."""
    cfg = level_config(level, ctx.patterns)
    sigma = pixel_to_mesh(phantom.conductivity_img, ctx.mesh)
    frame = solve_forward(ctx.model.assemble(sigma), ctx.patterns)
    u = apply_measurement_operator(frame, cfg)
    ref = ctx.u_ref_full[cfg.row_mask[level_config(1, ctx.patterns).row_mask]]
    clean = MeasurementVector(level, u.pattern_ids, u.values - ref)
    noisy = clean if ctx.noise_mode == "none" else add_noise(clean, ctx.noise[level], noise_seed)
    return {"clean": clean, "noisy": noisy}


def _write_sample(ctx: DatasetContext, spec: PhantomSpec, root: Path, level: int, index: int,
                  master: int) -> dict:
    sid = f"{index:05d}"
    d = root / f"level_{level}" / f"sample_{sid}"
    meta_path = d / "meta.json"
    entry = {"level": level, "id": sid, "path": str(d.relative_to(root))}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
            if meta.get("complete"):
                return dict(entry, status="ok", hashes=meta["hashes"], seed=meta["seed"])
        except (ValueError, KeyError):
            pass
    ss = sample_seed(master, level, index)
    phantom_ss, noise_ss = ss.spawn(2)
    seed_doc = {"master": int(master), "spawn_key": [level, index]}
    d.mkdir(parents=True, exist_ok=True)
    try:
        phantom = generate_phantom(spec, phantom_ss)
        res = simulate_sample(ctx, phantom, level, noise_ss)
    except EITError as exc:
        log.warning("sample %s at level %d failed: %s", sid, level, exc)
        return dict(entry, status="failed", error=str(exc), seed=seed_doc)
    files = save_class_map(d / "class_map.bin", phantom.class_map, spec.radius)
    files += save_grid(d / "conductivity_img.bin", phantom.conductivity_img, spec.radius, "float32")
    res["noisy"].save(d / "delta_u.json")
    files.append(d / "delta_u.json")
    hashes = {p.name: _sha(p) for p in files}
    _dump(meta_path, {
        "complete": True, "level": level, "id": sid, "seed": seed_doc, "objects": phantom.objects,
        "provenance": {"mesh_hash": ctx.mesh.content_hash, "z": ctx.z.tolist(),
                       "patterns_hash": hashlib.sha256(
                           json.dumps(ctx.patterns.to_dict(), sort_keys=True).encode()).hexdigest(),
                       "level": level},
        "hashes": hashes,
    })
    return dict(entry, status="ok", hashes=hashes, seed=seed_doc)


def generate_dataset(spec: PhantomSpec, mesh: TriMesh, z, patterns: CurrentPatternSet,
                     n_per_level, out_dir, seed: int = 0, threads: int = 1,
                     u_ref: MeasurementVector | None = None, noise: str = "variance") -> dict:
    """Write ``out_dir/level_<k>/sample_<id>/...`` and ``manifest.json``; return the manifest.

    ``n_per_level`` is an int (same count per level) or a sequence of seven
    counts.  Complete samples already on disk are kept, so an interrupted
    run can be resumed by calling again with the same arguments.
    """
    spec.validate()
    counts = [int(n_per_level)] * N_LEVELS if np.isscalar(n_per_level) else [int(c) for c in n_per_level]
    if len(counts) != N_LEVELS or min(counts) < 0:
        raise ConfigError(f"n_per_level needs {N_LEVELS} nonnegative counts, got {n_per_level}")
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    ctx = prepare_context(mesh, z, patterns, spec.sigma_bg, u_ref, noise)
    ctx.model.assemble(spec.sigma_bg)  # warm caches before threads start
    MeasurementVector(1, np.arange(patterns.n_patterns), ctx.u_ref_full).save(root / "u_ref.json")
    _dump(root / "patterns.json", patterns.to_dict())
    tasks = [(k, i) for k in range(1, N_LEVELS + 1) for i in range(counts[k - 1])]
    if threads == 1:
        entries = [_write_sample(ctx, spec, root, k, i, seed) for k, i in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(lambda t: _write_sample(ctx, spec, root, t[0], t[1], seed), tasks))
    manifest = {
        "master_seed": int(seed),
        "mesh_hash": mesh.content_hash,
        "z": ctx.z.tolist(),
        "phantom_spec": spec.to_dict(),
        "noise": noise,
        "counts": {str(k): sum(1 for e in entries if e["level"] == k and e["status"] == "ok")
                   for k in range(1, N_LEVELS + 1)},
        "failed": [{"level": e["level"], "id": e["id"], "error": e["error"]}
                   for e in entries if e["status"] == "failed"],
        "u_ref_hash": _sha(root / "u_ref.json"),
        "samples": entries,
    }
    _dump(root / "manifest.json", manifest)
    return manifest
