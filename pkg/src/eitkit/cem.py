"""Complete electrode model: P1 finite element assembly and solves.

The saddle-point system has unknowns ``(u, U, lambda)`` of size ``N + L + 1``::

    [ A(sigma) + B   C   0 ] [u]        [0]
    [ C^T            D   1 ] [U]    =   [I]
    [ 0^T            1^T 0 ] [lambda]   [0]

Only ``A`` depends on the conductivity, so :class:`CEMModel` precomputes the
per-element unit stiffness matrices and the electrode blocks once per
``(mesh, z)``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .errors import ConfigError, DimensionError, FitError, NumericalError, ParseError
from .levels import CurrentPatternSet, LevelConfig, level_config
from .mesh import TriMesh


def check_conductivity(sigma, n_elements: int) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim == 0:
        s = np.full(n_elements, float(s))
    if s.shape != (n_elements,):
        raise DimensionError(f"conductivity has shape {s.shape}, expected ({n_elements},)")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ConfigError("conductivity must be finite and strictly positive")
    return s


def check_impedances(z, n_electrodes: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        z = np.full(n_electrodes, float(z))
    if z.shape != (n_electrodes,):
        raise DimensionError(f"contact impedances have shape {z.shape}, expected ({n_electrodes},)")
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise ConfigError("contact impedances must be finite and strictly positive")
    return z


def gradients(mesh: TriMesh) -> np.ndarray:
    """Constant gradients of the three P1 basis functions on every element, (M, 3, 2)."""
    p = mesh.vertices[mesh.elements]
    x, y = p[..., 0], p[..., 1]
    area2 = 2.0 * mesh.areas
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.stack([gx, gy], axis=2) / area2[:, None, None]


def local_stiffness(mesh: TriMesh) -> np.ndarray:
    """Unit-conductivity element stiffness matrices ``int grad phi_a . grad phi_b``, (M, 3, 3)."""
    if np.any(mesh.areas <= 0):
        raise ConfigError("mesh contains degenerate or inverted elements")
    g = gradients(mesh)
    return mesh.areas[:, None, None] * np.einsum("mad,mbd->mab", g, g)


@dataclass
class SolveStats:
    factorizations: int = 0
    rhs_solved: int = 0


class CEMSystem:
    """Assembled block matrix with a lazily computed, reusable LU factorization.

    Solves are serialised behind a lock so one
    instance can be shared between threads.
    """

    def __init__(self, matrix: sp.csc_matrix, n_nodes: int, n_electrodes: int,
                 blocks: dict | None = None, stats: SolveStats | None = None):
        self.matrix = matrix
        self.n_nodes = n_nodes
        self.n_electrodes = n_electrodes
        self.blocks = blocks or {}
        self.stats = stats if stats is not None else SolveStats()
        self._lu = None
        self._lock = threading.Lock()

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def factorize(self):
        with self._lock:
            if self._lu is None:
                try:
                    self._lu = splu(self.matrix.tocsc())
                except RuntimeError as exc:
                    raise NumericalError(f"CEM system factorization failed: {exc}") from exc
                self.stats.factorizations += 1
        return self._lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.size:
            raise DimensionError(f"right-hand side has {rhs.shape[0]} rows, system has {self.size}")
        lu = self.factorize()
        with self._lock:
            x = lu.solve(np.ascontiguousarray(rhs))
            self.stats.rhs_solved += 1 if rhs.ndim == 1 else rhs.shape[1]
        if not np.all(np.isfinite(x)):
            raise NumericalError("CEM solve produced non-finite values (singular system?)")
        return x


class CEMModel:
    """Conductivity-independent parts of the CEM discretisation for one mesh and ``z``."""

    def __init__(self, mesh: TriMesh, z):
        self.mesh = mesh
        self.z = check_impedances(z, mesh.n_electrodes)
        self.k_local = local_stiffness(mesh)
        N, L = mesh.n_vertices, mesh.n_electrodes
        self.n_nodes, self.n_electrodes = N, L
        el = mesh.elements
        self._rows = np.repeat(el, 3, axis=1).ravel()
        self._cols = np.tile(el, (1, 3)).ravel()

        bi, bj, bv = [], [], []
        ci, cj, cv = [], [], []
        d = np.zeros(L)
        for l, edges in enumerate(mesh.electrode_edges):
            a, b = edges[:, 0], edges[:, 1]
            s = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a], axis=1) / self.z[l]
            bi += [a, b, a, b]
            bj += [a, b, b, a]
            bv += [s / 3, s / 3, s / 6, s / 6]
            ci += [a, b]
            cj += [np.full(len(a), l)] * 2
            cv += [-s / 2, -s / 2]
            d[l] = s.sum()
        self.B = sp.csc_matrix(
            (np.concatenate(bv), (np.concatenate(bi), np.concatenate(bj))), shape=(N, N)
        )
        self.C = sp.csc_matrix(
            (np.concatenate(cv), (np.concatenate(ci), np.concatenate(cj))), shape=(N, L)
        )
        self.D = sp.diags(d).tocsc()
        ones = sp.csc_matrix(np.ones((L, 1)))
        self._lower = sp.bmat([[self.C.T, self.D, ones], [None, ones.T, None]], format="csc")

    @property
    def size(self) -> int:
        return self.n_nodes + self.n_electrodes + 1

    def stiffness(self, sigma) -> sp.csc_matrix:
        s = check_conductivity(sigma, self.mesh.n_elements)
        vals = (s[:, None, None] * self.k_local).ravel()
        N = self.n_nodes
        return sp.csc_matrix((vals, (self._rows, self._cols)), shape=(N, N))

    def assemble(self, sigma, stats: SolveStats | None = None) -> CEMSystem:
        A = self.stiffness(sigma)
        L = self.n_electrodes
        top = sp.hstack([A + self.B, self.C, sp.csc_matrix((self.n_nodes, 1))])
        S = sp.vstack([top, self._lower], format="csc")
        S.sort_indices()
        return CEMSystem(S, self.n_nodes, L, blocks={"A": A, "B": self.B, "C": self.C, "D": self.D},
                         stats=stats)

    def unit_element_gradient_load(self, u: np.ndarray) -> np.ndarray:
        """``G[j, a, k] = int_{T_j} grad u^k . grad phi_a`` for nodal fields ``u`` (N, K)."""
        return np.einsum("jab,jbk->jak", self.k_local, u[self.mesh.elements])


def assemble_system(mesh: TriMesh, sigma, z) -> CEMSystem:
    return CEMModel(mesh, z).assemble(sigma)


@dataclass(eq=False)
class ElectrodeFrame:
    """Electrode voltages ``U`` (K, L) and optionally nodal potentials (K, N)."""

    U: np.ndarray
    pattern_ids: np.ndarray
    interior: np.ndarray | None = None


def solve_forward(system: CEMSystem, patterns: CurrentPatternSet,
                  keep_interior: bool = False) -> ElectrodeFrame:
    N, L = system.n_nodes, system.n_electrodes
    if patterns.n_electrodes != L:
        raise DimensionError(f"pattern width {patterns.n_electrodes} does not match {L} electrodes")
    rhs = np.zeros((system.size, patterns.n_patterns))
    rhs[N:N + L] = patterns.patterns.T
    x = system.solve(rhs)
    return ElectrodeFrame(
        U=x[N:N + L].T.copy(),
        pattern_ids=np.arange(patterns.n_patterns),
        interior=x[:N].T.copy() if keep_interior else None,
    )


@dataclass(eq=False)
class MeasurementVector:
    level: int
    pattern_ids: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def to_dict(self, patterns: CurrentPatternSet | None = None) -> dict:
        doc = {
            "level": int(self.level),
            "pattern_ids": [int(k) for k in self.pattern_ids],
            "values": [float(v) for v in self.values],
        }
        if patterns is not None:
            doc["patterns"] = patterns.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<dict>") -> "MeasurementVector":
        try:
            mv = cls(int(doc["level"]), np.asarray(doc["pattern_ids"], dtype=np.int64),
                     np.asarray(doc["values"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: malformed measurement file: {exc}") from exc
        if mv.values.ndim != 1:
            raise ParseError(f"{source}: 'values' must be a flat list")
        return mv

    def save(self, path, patterns: CurrentPatternSet | None = None, **extra) -> None:
        doc = self.to_dict(patterns)
        doc.update(extra)
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, path) -> "MeasurementVector":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc, source=str(path))


def apply_measurement_operator(frame: ElectrodeFrame, level_cfg: LevelConfig) -> MeasurementVector:
    """Adjacent differences ``U[p+1] - U[p]``, pattern-major, restricted to the level."""
    K, L = frame.U.shape
    if K != level_cfg.n_patterns or L != level_cfg.n_electrodes:
        raise DimensionError(
            f"frame is {K}x{L} but level {level_cfg.level} expects "
            f"{level_cfg.n_patterns}x{level_cfg.n_electrodes}"
        )
    diffs = np.diff(frame.U, axis=1).ravel()
    return MeasurementVector(level_cfg.level, level_cfg.active_patterns.copy(), diffs[level_cfg.row_mask])


def simulate_measurements(model: CEMModel, sigma, patterns: CurrentPatternSet,
                          level: int = 1) -> MeasurementVector:
    system = model.assemble(sigma)
    frame = solve_forward(system, patterns)
    return apply_measurement_operator(frame, level_config(level, patterns))


def fit_background_conductivity(mesh: TriMesh, z, patterns: CurrentPatternSet,
                                u_ref: MeasurementVector, bounds=(1e-3, 1e3),
                                rtol: float = 1e-6) -> float:
    """Least-squares fit of a homogeneous conductivity to level-1 reference data."""
    if u_ref.level != 1:
        raise ConfigError("background fit requires level-1 reference measurements")
    model = CEMModel(mesh, z)
    cfg = level_config(1, patterns)
    if len(u_ref.values) != cfg.n_rows:
        raise DimensionError(f"u_ref has {len(u_ref.values)} values, level 1 has {cfg.n_rows}")
    target = u_ref.values
    lo, hi = np.log(bounds[0]), np.log(bounds[1])

    def misfit(t):
        frame = solve_forward(model.assemble(np.exp(t)), patterns)
        return float(np.sum((np.diff(frame.U, axis=1).ravel()[cfg.row_mask] - target) ** 2))

    res = minimize_scalar(misfit, bounds=(lo, hi), method="bounded",
                          options={"xatol": rtol * 0.1, "maxiter": 500})
    t = float(res.x)
    edge = 1e-3 * (hi - lo)
    if not res.success or t - lo < edge or hi - t < edge:
        raise FitError(
            f"no interior least-squares minimum for the background conductivity in "
            f"[{bounds[0]:g}, {bounds[1]:g}]"
        )
    return float(np.exp(t))
