"""Command-line interface: ``eitkit <command> ...``.

Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on
configuration or validation errors.  Logs go to standard error.  Any
command accepts ``--config FILE`` (JSON object keyed by flag name);
explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cem import CEMModel, MeasurementVector, apply_measurement_operator, solve_forward
from .errors import ConfigError, DimensionError, EITError, ParseError
from .eval import SSIMConfig, score_run, score_segmentation
from .gridio import load_class_map, load_grid, load_image, save_class_map, save_image
from .interp import GRID_SIZE, MeshPixelInterpolator, pixel_to_mesh
from .jacobian import compute_jacobian_fast, load_jacobian, reduce_jacobian, save_jacobian
from .levels import DEFAULT_CURRENT, N_LEVELS, CurrentPatternSet, challenge_patterns, level_config
from .mesh import DiskMeshSpec, build_disk_mesh, load_mesh, save_mesh
from .priors import build_fsm, build_sm
from .recon import (ENSEMBLE_LABELS, Priors, Reconstructor, build_noise_model,
                    load_weights_config, reconstruct, segment)
from .sim import DATASET_IMPEDANCE, SIGMA_BACKGROUND, PhantomSpec, generate_dataset

log = logging.getLogger("eitkit")


@dataclass
class RunConfig:
    """Validated inputs shared by the subcommands."""

    paths: dict = field(default_factory=dict)
    level: int = 1
    seed: int = 0
    threads: int = 1
    current: float = DEFAULT_CURRENT

    def validate(self) -> "RunConfig":
        for name, p in self.paths.items():
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} file not found: {p}")
        if isinstance(self.level, bool) or not 1 <= int(self.level) <= N_LEVELS:
            raise ConfigError(f"level must be in 1..{N_LEVELS}, got {self.level}")
        if self.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if not self.current > 0:
            raise ConfigError("--current must be positive")
        return self


def _run_config(args, **paths) -> RunConfig:
    return RunConfig(paths=paths, level=getattr(args, "level", 1) or 1,
                     seed=getattr(args, "seed", 0), threads=getattr(args, "threads", 1),
                     current=getattr(args, "current", DEFAULT_CURRENT)).validate()


def _patterns(args) -> CurrentPatternSet:
    if getattr(args, "patterns", None):
        return CurrentPatternSet.from_dict(_read_json(args.patterns))
    return challenge_patterns(32, args.current)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _sigma(args, mesh) -> np.ndarray:
    """Conductivity from ``--sigma`` (scalar), ``--sigma-file`` (JSON list) or ``--phantom`` (grid)."""
    if getattr(args, "phantom", None):
        img, _ = load_grid(args.phantom)
        return pixel_to_mesh(img, mesh)
    if getattr(args, "sigma_file", None):
        s = np.asarray(_read_json(args.sigma_file), dtype=np.float64)
        if s.shape != (mesh.n_elements,):
            raise DimensionError(f"{args.sigma_file}: expected {mesh.n_elements} values, got {s.shape}")
        return s
    return np.full(mesh.n_elements, float(args.sigma))


def _write_text(out, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args) -> int:
    spec = DiskMeshSpec(args.radius, args.h, args.electrodes, args.coverage)
    mesh = build_disk_mesh(spec)
    save_mesh(mesh, args.output)
    log.info("mesh: %d vertices, %d elements -> %s", mesh.n_vertices, mesh.n_elements, args.output)
    return 0


def cmd_forward(args) -> int:
    cfg = _run_config(args, mesh=args.mesh, patterns=args.patterns, sigma_file=args.sigma_file,
                      phantom=args.phantom)
    mesh = load_mesh(args.mesh)
    patterns = _patterns(args)
    model = CEMModel(mesh, args.z)
    frame = solve_forward(model.assemble(_sigma(args, mesh)), patterns)
    mv = apply_measurement_operator(frame, level_config(cfg.level, patterns))
    if args.subtract_reference is not None:
        ref = solve_forward(model.assemble(float(args.subtract_reference)), patterns)
        mv.values = mv.values - apply_measurement_operator(ref, level_config(cfg.level, patterns)).values
        frame.U = frame.U - ref.U
    doc = mv.to_dict(patterns)
    doc["electrode_voltages"] = frame.U.tolist()
    _write_text(args.output, json.dumps(doc) + "\n")
    return 0


def cmd_jacobian(args) -> int:
    cfg = _run_config(args, mesh=args.mesh, patterns=args.patterns, sigma_file=args.sigma_file)
    mesh = load_mesh(args.mesh)
    patterns = _patterns(args)
    t0 = time.perf_counter()
    J = compute_jacobian_fast(mesh, _sigma(args, mesh), args.z, patterns)
    MJ = reduce_jacobian(J, level_config(cfg.level, patterns), mesh)
    save_jacobian(MJ, args.output)
    log.info("jacobian %s in %.2fs (%d factorization, %d right-hand sides)", MJ.shape,
             time.perf_counter() - t0, J.stats.factorizations, J.stats.rhs_solved)
    return 0


def cmd_reconstruct(args) -> int:
    _run_config(args, mesh=args.mesh, jacobian=args.jacobian, delta_u=args.delta_u,
                u_ref=args.u_ref, weights=args.weights, patterns=args.patterns)
    mesh = load_mesh(args.mesh)
    patterns = _patterns(args)
    du = MeasurementVector.load(args.delta_u)
    cfg = level_config(du.level, patterns)
    if len(du) != cfg.n_rows:
        raise DimensionError(f"{args.delta_u}: {len(du)} values, level {du.level} has {cfg.n_rows}")
    sigma_ref = np.full(mesh.n_elements, float(args.sigma))
    if args.jacobian:
        J = load_jacobian(args.jacobian, mesh=mesh, sigma_ref=sigma_ref)
        if J.level != du.level:
            raise ConfigError(f"Jacobian is for level {J.level}, measurements for level {du.level}")
    else:
        J = reduce_jacobian(compute_jacobian_fast(mesh, sigma_ref, args.z, patterns), cfg, mesh)
    if args.u_ref:
        u_ref = MeasurementVector.load(args.u_ref)
        full = level_config(1, patterns).row_mask
        if u_ref.level == 1:
            u_ref = u_ref.values[cfg.row_mask[full]]
        elif u_ref.level == du.level:
            u_ref = u_ref.values
        else:
            raise ConfigError(f"{args.u_ref}: reference level {u_ref.level} does not match {du.level}")
    else:
        frame = solve_forward(CEMModel(mesh, args.z).assemble(sigma_ref), patterns)
        u_ref = apply_measurement_operator(frame, cfg).values
    weights, normalize = load_weights_config(args.weights)
    if du.level not in weights:
        raise ConfigError(f"no ensemble weights for level {du.level}")
    members = weights[du.level]
    if args.member != "all":
        members = [members[int(args.member)]]
    priors = Priors(fsm=build_fsm(mesh),
                    sm=build_sm(mesh) if any(w.alpha_sm > 0 for w in members) else None)
    noise = build_noise_model(u_ref, as_std=args.noise == "std")
    cols = []
    for w in members:
        rec = Reconstructor(J, noise, priors, w, level=du.level, normalize=normalize)
        cols.append(reconstruct(rec, du))
    imgs = MeshPixelInterpolator(mesh, args.grid_size, args.interp)(np.column_stack(cols))
    save_image(args.output, np.moveaxis(imgs, -1, 0), mesh.radius, [w.label for w in members])
    log.info("reconstructions (%s) -> %s", ", ".join(w.label or "?" for w in members), args.output)
    return 0


def cmd_segment(args) -> int:
    _run_config(args, image=args.image)
    stack, meta = load_image(args.image)
    if stack.ndim == 2:
        stack = stack[None]
    if args.member == "mean":
        img = stack.mean(axis=0)
    else:
        k = int(args.member)
        if not 0 <= k < len(stack):
            raise ConfigError(f"member {k} out of range 0..{len(stack) - 1}")
        img = stack[k]
    cmap = segment(img.astype(np.float64), args.thresholds)
    out = Path(args.output)
    if args.format:
        out = out.with_suffix({"binary": ".bin", "json": ".json", "png": ".png"}[args.format])
    save_class_map(out, cmap, meta.get("disk_radius", 0.115))
    return 0


def cmd_simulate_dataset(args) -> int:
    cfg = _run_config(args, mesh=args.mesh, patterns=args.patterns, phantom_spec=args.phantom_spec)
    mesh = load_mesh(args.mesh) if args.mesh else build_disk_mesh(DiskMeshSpec(mesh_size_h=args.h))
    counts = args.n_per_level
    if len(counts) == 1:
        counts = counts * N_LEVELS
    spec = PhantomSpec.from_dict(_read_json(args.phantom_spec)) if args.phantom_spec else PhantomSpec()
    man = generate_dataset(spec, mesh, args.z, _patterns(args), counts, args.out,
                           seed=cfg.seed, threads=cfg.threads, noise=args.noise)
    log.info("dataset: %s samples per level, %d failed", man["counts"], len(man["failed"]))
    return 0


def cmd_score(args) -> int:
    _run_config(args, pred=args.pred, truth=args.truth)
    conf = SSIMConfig(window=args.window)
    pred, truth = Path(args.pred), Path(args.truth)
    if pred.is_file() and truth.is_file():
        s = score_segmentation(load_class_map(pred), load_class_map(truth), conf)
        _write_text(args.output, json.dumps({"score": s}) + "\n")
        return 0
    report = score_run(pred, truth, conf)
    _write_text(args.output, report.to_json())
    table = report.to_table(args.name)
    if args.table:
        Path(args.table).write_text(table)
    if args.output != "-":
        sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, seed=False, threads=False):
    p.add_argument("--config", help="JSON file of flag defaults (flags take precedence)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master random seed")
    if threads:
        p.add_argument("--threads", type=int, default=1, help="upper bound on worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _model_flags(p, sigma=True):
    p.add_argument("--mesh", required=True, help="mesh JSON file")
    p.add_argument("--z", type=float, default=DATASET_IMPEDANCE, help="contact impedance (Ohm m^2)")
    p.add_argument("--patterns", help="pattern set JSON (default: the 76 challenge patterns)")
    p.add_argument("--current", type=float, default=DEFAULT_CURRENT, help="injected current (A)")
    if sigma:
        p.add_argument("--sigma", type=float, default=SIGMA_BACKGROUND,
                       help="homogeneous conductivity (S/m)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eitkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build a disk mesh with boundary electrodes")
    p.add_argument("--radius", type=float, default=0.115, help="tank radius (m)")
    p.add_argument("--h", type=float, default=0.005, help="target element size (m)")
    p.add_argument("--electrodes", type=int, default=32, help="number of electrodes")
    p.add_argument("--coverage", type=float, default=0.5, help="fraction of boundary under electrodes")
    p.add_argument("-o", "--output", required=True, help="output mesh JSON")
    _common(p)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("forward", help="simulate measurements for one conductivity")
    _model_flags(p)
    p.add_argument("--sigma-file", help="JSON list of per-element conductivities")
    p.add_argument("--phantom", help="conductivity image (.bin grid with .json sidecar)")
    p.add_argument("--level", type=int, default=1, help="challenge level 1..7")
    p.add_argument("--subtract-reference", type=float, metavar="SIGMA_BG",
                   help="write differences to the homogeneous tank at SIGMA_BG")
    p.add_argument("-o", "--output", default="-", help="measurement JSON ('-' for stdout)")
    _common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("jacobian", help="measurement Jacobian at a reference conductivity")
    _model_flags(p)
    p.add_argument("--sigma-file", help="JSON list of per-element reference conductivities")
    p.add_argument("--level", type=int, default=1, help="challenge level 1..7")
    p.add_argument("-o", "--output", required=True, help="binary Jacobian cache")
    _common(p, threads=True)
    p.set_defaults(func=cmd_jacobian, phantom=None)

    p = sub.add_parser("reconstruct", help="regularised one-step reconstructions")
    _model_flags(p)
    p.add_argument("--delta-u", required=True, help="measurement-difference JSON")
    p.add_argument("--jacobian", help="Jacobian cache (computed if omitted)")
    p.add_argument("--u-ref", help="reference measurements JSON (simulated if omitted)")
    p.add_argument("--weights", help="ensemble weights JSON (bundled defaults if omitted)")
    p.add_argument("--member", default="all", choices=["all", *map(str, range(5))],
                   help=f"ensemble member index ({', '.join(ENSEMBLE_LABELS)}) or all")
    p.add_argument("--noise", choices=["variance", "std"], default="variance",
                   help="read the noise formula as a variance or a standard deviation")
    p.add_argument("--interp", choices=["p1", "nearest"], default="p1", help="mesh-to-pixel mode")
    p.add_argument("--grid-size", type=int, default=GRID_SIZE, help="output image size")
    p.add_argument("-o", "--output", required=True, help="output image stack (float32 with JSON header)")
    _common(p, threads=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("segment", help="threshold reconstructions into a class map")
    p.add_argument("--image", required=True, help="reconstruction image or stack (headered file or .bin grid)")
    p.add_argument("--member", default="mean", help="'mean' or a member index")
    p.add_argument("--thresholds", type=float, nargs=2, metavar=("LOW", "HIGH"),
                   help="fixed thresholds (default: two-sided Otsu)")
    p.add_argument("--format", choices=["binary", "json", "png"], help="override the output suffix")
    p.add_argument("-o", "--output", required=True, help="class map (.bin, .png or .json)")
    _common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("simulate-dataset", help="random phantoms and noisy measurements")
    p.add_argument("--mesh", help="mesh JSON (default: build one with --h)")
    p.add_argument("--h", type=float, default=0.005, help="mesh size when building a mesh")
    p.add_argument("--z", type=float, default=DATASET_IMPEDANCE, help="contact impedance")
    p.add_argument("--patterns", help="pattern set JSON")
    p.add_argument("--current", type=float, default=DEFAULT_CURRENT, help="injected current (A)")
    p.add_argument("--n-per-level", type=int, nargs="+", default=[1],
                   help="samples per level: one count or seven")
    p.add_argument("--phantom-spec", help="PhantomSpec JSON")
    p.add_argument("--noise", choices=["variance", "std", "none"], default="variance",
                   help="noise formula read as a variance, as a standard deviation, or no noise")
    p.add_argument("--out", required=True, help="output directory")
    _common(p, seed=True, threads=True)
    p.set_defaults(func=cmd_simulate_dataset)

    p = sub.add_parser("score", help="SSIM score of predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction directory or class-map file")
    p.add_argument("--truth", required=True, help="ground-truth directory or class-map file")
    p.add_argument("--window", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--name", default="run", help="row label in the text table")
    p.add_argument("--table", help="also write the text table here")
    p.add_argument("-o", "--output", default="-", help="report JSON ('-' for stdout)")
    _common(p)
    p.set_defaults(func=cmd_score)
    ap.subcommands = sub.choices
    return ap


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    doc = _read_json(args.config)
    if not isinstance(doc, dict):
        raise ConfigError(f"{args.config}: expected a JSON object")
    known = set(vars(args))
    unknown = sorted(k for k in doc if k.replace("-", "_") not in known)
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys {unknown}")
    parser.subcommands[args.command].set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"eitkit: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"eitkit: error: {exc}", file=sys.stderr)
        return 2
    except (EITError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"eitkit: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
