"""Linearisation of the electrode voltages around a reference conductivity.

``compute_jacobian_fast`` factorises the CEM matrix once, solves the K
forward problems and N unit-vector problems, and then combines the unit
responses element by element.  ``compute_jacobian_direct`` and
``compute_jacobian_fd`` are independent checks.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .cem import CEMModel, SolveStats, check_conductivity, solve_forward
from .errors import ConfigError, DimensionError, ParseError
from .gridio import read_headered, write_headered
from .levels import CurrentPatternSet, LevelConfig, difference_operator
from .mesh import TriMesh

CACHE_MAGIC = b"EITJAC01"


@dataclass(eq=False)
class ElectrodeJacobian:
    """``matrix[k * L + l, j] = dU_l^(k) / d sigma_j`` (level 1, all patterns)."""

    matrix: np.ndarray
    n_patterns: int
    n_electrodes: int
    sigma_ref: np.ndarray
    level: int = 1
    stats: SolveStats | None = None

    def tensor(self) -> np.ndarray:
        """View as (K, L, M)."""
        return self.matrix.reshape(self.n_patterns, self.n_electrodes, -1)


@dataclass(eq=False)
class MeasurementJacobian:
    matrix: np.ndarray
    level: int
    sigma_ref_hash: str = ""
    mesh_hash: str = ""

    @property
    def shape(self):
        return self.matrix.shape


def sigma_hash(sigma: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(sigma, dtype="<f8").tobytes()).hexdigest()


def compute_jacobian_fast(mesh: TriMesh, sigma_ref, z, patterns: CurrentPatternSet,
                          model: CEMModel | None = None) -> ElectrodeJacobian:
    model = model or CEMModel(mesh, z)
    sigma = check_conductivity(sigma_ref, mesh.n_elements)
    stats = SolveStats()
    system = model.assemble(sigma, stats=stats)
    N, L = model.n_nodes, model.n_electrodes
    frame = solve_forward(system, patterns, keep_interior=True)
    u = frame.interior.T  # (N, K)

    # W[:, r] = electrode part of the response to the r-th unit load
    rhs = np.zeros((system.size, N))
    rhs[np.arange(N), np.arange(N)] = 1.0
    W = system.solve(rhs)[N:N + L]  # (L, N)

    # f_{k,j} restricted to the vertices of element j: -K_j u^k|_j
    f_local = -model.unit_element_gradient_load(u)  # (M, 3, K)
    W_local = W[:, mesh.elements]  # (L, M, 3)
    J = np.einsum("lja,jak->klj", W_local, f_local, optimize=True)
    K = patterns.n_patterns
    return ElectrodeJacobian(J.reshape(K * L, -1), K, L, sigma, stats=stats)


def compute_jacobian_direct(mesh: TriMesh, sigma_ref, z, patterns: CurrentPatternSet,
                            columns=None, model: CEMModel | None = None) -> np.ndarray:
    """Columns of the electrode Jacobian from one solve per (pattern, element) pair.

    Returns an array of shape (K * L, len(columns)).
    """
    model = model or CEMModel(mesh, z)
    sigma = check_conductivity(sigma_ref, mesh.n_elements)
    columns = _check_columns(columns, mesh.n_elements)
    system = model.assemble(sigma)
    N, L, K = model.n_nodes, model.n_electrodes, patterns.n_patterns
    u = solve_forward(system, patterns, keep_interior=True).interior.T
    out = np.empty((K * L, len(columns)))
    for c, j in enumerate(columns):
        verts = mesh.elements[j]
        rhs = np.zeros((system.size, K))
        rhs[verts] = -model.k_local[j] @ u[verts]
        out[:, c] = system.solve(rhs)[N:N + L].T.ravel()
    return out


def compute_jacobian_fd(mesh: TriMesh, sigma_ref, z, patterns: CurrentPatternSet,
                        eps: float = 1e-6, columns=None,
                        model: CEMModel | None = None) -> np.ndarray:
    """Central differences with step ``eps * sigma_ref[j]``; meant for small meshes.

    With ``S+ x+ = b`` and ``S- x- = b`` at the two perturbed conductivities,
    ``x+ - x- = -S+^{-1} (S+ - S-) x-`` holds exactly for any pair of
    systems.  Only the stiffness block depends on the conductivity, so
    ``S+ - S-`` is the difference of the two assembled stiffness matrices.
    The difference quotient is evaluated through this identity: it equals
    ``(F(sigma + step) - F(sigma - step)) / (2 step)`` without subtracting two
    nearly equal voltage vectors, which would lose most significant digits for
    small elements.  Each column costs two factorizations and two solves per
    pattern.  Warns when the step is so small that round-off in the perturbed
    systems is likely to dominate.
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if eps < 1e-9:
        warnings.warn(f"finite-difference step {eps:g} is likely dominated by round-off",
                      RuntimeWarning, stacklevel=2)
    model = model or CEMModel(mesh, z)
    sigma = check_conductivity(sigma_ref, mesh.n_elements)
    columns = _check_columns(columns, mesh.n_elements)
    N, L = model.n_nodes, model.n_electrodes
    out = np.empty((patterns.n_patterns * L, len(columns)))
    for c, j in enumerate(columns):
        step = eps * sigma[j]
        sp_, sm_ = sigma.copy(), sigma.copy()
        sp_[j] += step
        sm_[j] -= step
        s_plus, s_minus = model.assemble(sp_), model.assemble(sm_)
        rhs = np.zeros((model.size, patterns.n_patterns))
        rhs[N:N + L] = patterns.patterns.T
        x_minus = s_minus.solve(rhs)
        dA = s_plus.blocks["A"] - s_minus.blocks["A"]
        rhs = np.zeros_like(x_minus)
        rhs[:N] = -(dA @ x_minus[:N])
        diff = s_plus.solve(rhs)[N:N + L]  # (L, K)
        out[:, c] = (diff / (2 * step)).T.ravel()
    return out


def _check_columns(columns, n_elements: int) -> np.ndarray:
    if columns is None:
        return np.arange(n_elements)
    cols = np.atleast_1d(np.asarray(columns, dtype=np.int64))
    if cols.size and (cols.min() < 0 or cols.max() >= n_elements):
        raise IndexError(f"element index out of range 0..{n_elements - 1}")
    return cols


def measurement_rows(J: np.ndarray, n_patterns: int, n_electrodes: int) -> np.ndarray:
    """Apply the adjacent-difference operator to an electrode-level matrix (K*L, X)."""
    D = difference_operator(n_electrodes)
    T = J.reshape(n_patterns, n_electrodes, -1)
    return np.einsum("pl,klx->kpx", D, T).reshape(n_patterns * (n_electrodes - 1), -1)


def reduce_jacobian(J: ElectrodeJacobian, level_cfg: LevelConfig,
                    mesh: TriMesh | None = None) -> MeasurementJacobian:
    if not isinstance(level_cfg, LevelConfig):
        raise ConfigError("reduce_jacobian needs a LevelConfig")
    if J.level != 1:
        raise ConfigError("the electrode Jacobian must be built at level 1")
    if (J.n_patterns, J.n_electrodes) != (level_cfg.n_patterns, level_cfg.n_electrodes):
        raise DimensionError("Jacobian and level configuration disagree on patterns/electrodes")
    full = measurement_rows(J.matrix, J.n_patterns, J.n_electrodes)
    return MeasurementJacobian(
        np.ascontiguousarray(full[level_cfg.row_mask]),
        level_cfg.level,
        sigma_ref_hash=sigma_hash(J.sigma_ref),
        mesh_hash=mesh.content_hash if mesh is not None else "",
    )


def save_jacobian(J: MeasurementJacobian, path) -> None:
    """Binary cache: magic, u64 header length, JSON header, little-endian float64 data."""
    rows, cols = J.matrix.shape
    header = {"rows": rows, "cols": cols, "level": J.level,
              "sigma_ref_hash": J.sigma_ref_hash, "mesh_hash": J.mesh_hash}
    write_headered(path, CACHE_MAGIC, header, J.matrix, "float64")


def load_jacobian(path, mesh: TriMesh | None = None, sigma_ref=None) -> MeasurementJacobian:
    header, matrix = read_headered(path, CACHE_MAGIC)
    if matrix.ndim != 2:
        raise ParseError(f"{path}: Jacobian payload must be two-dimensional")
    if mesh is not None and header.get("mesh_hash") != mesh.content_hash:
        raise ConfigError(f"{path}: Jacobian was built on a different mesh")
    if sigma_ref is not None:
        s = check_conductivity(sigma_ref, matrix.shape[1])
        if header.get("sigma_ref_hash") != sigma_hash(s):
            raise ConfigError(f"{path}: Jacobian was built at a different reference conductivity")
    return MeasurementJacobian(matrix, int(header.get("level", 1)), header.get("sigma_ref_hash", ""),
                               header.get("mesh_hash", ""))
