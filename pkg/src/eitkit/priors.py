"""Quadratic regularisers ``P = L^T L`` over the piecewise-constant conductivity."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DimensionError, IllConditionedError
from .mesh import TriMesh, element_adjacency

log = logging.getLogger(__name__)

SM_AMPLITUDE = 0.025
SM_LENGTH = 0.4 * 0.115
MAX_KERNEL_COND = 1e14


@dataclass(eq=False)
class PriorMatrix:
    kind: str  # "FSM", "SM" or "LM"
    matrix: object  # scipy.sparse for FSM/LM, ndarray for SM
    params: dict = field(default_factory=dict)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)


def build_fsm(mesh: TriMesh) -> PriorMatrix:
    """Graph Laplacian of the element edge-adjacency graph."""
    adj = element_adjacency(mesh)
    rows = np.repeat(np.arange(len(adj)), [len(a) for a in adj])
    cols = np.fromiter((j for a in adj for j in a), dtype=np.int64, count=len(rows))
    M = mesh.n_elements
    W = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(M, M))
    deg = np.asarray(W.sum(axis=1)).ravel()
    return PriorMatrix("FSM", (sp.diags(deg) - W).tocsr())


def sm_covariance(coords: np.ndarray, a: float = SM_AMPLITUDE, b: float = SM_LENGTH) -> np.ndarray:
    d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=2)
    return a * np.exp(-d2 / (2 * b * b))


def build_sm(mesh: TriMesh, a: float = SM_AMPLITUDE, b: float = SM_LENGTH,
             jitter: str | float | None = "auto", coords: np.ndarray | None = None) -> PriorMatrix:
    """Inverse of the Gaussian-kernel covariance between element coordinates.

    ``jitter="auto"`` retries with ``1e-10 * a`` added to the diagonal when the
    kernel is too ill-conditioned to invert; ``jitter=None`` raises instead; a
    number is always added.  ``coords`` overrides the element centroids.
    """
    if not (a > 0 and b > 0):
        raise ConfigError(f"SM prior needs a > 0 and b > 0, got a={a}, b={b}")
    if coords is None:
        coords = mesh.centroids
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (mesh.n_elements, 2):
        raise DimensionError(f"need one coordinate pair per element, got {coords.shape}")
    cov = sm_covariance(coords, a, b)
    used = 0.0
    if isinstance(jitter, (int, float)) and not isinstance(jitter, bool):
        used = float(jitter)
    P = _spd_inverse(cov, used)
    if P is None and jitter == "auto":
        used = 1e-10 * a
        log.info("SM kernel ill-conditioned; adding diagonal jitter %.3g", used)
        P = _spd_inverse(cov, used)
    if P is None:
        raise IllConditionedError(
            f"SM kernel matrix (a={a}, b={b}) has condition number above {MAX_KERNEL_COND:g}; "
            "rebuild with diagonal jitter (jitter='auto' or a positive value)"
        )
    return PriorMatrix("SM", P, {"a": a, "b": b, "jitter": used})


def _spd_inverse(cov: np.ndarray, jitter: float) -> np.ndarray | None:
    K = cov + jitter * np.eye(len(cov)) if jitter else cov
    try:
        c, low = sla.cho_factor(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    # reciprocal condition estimate from the Cholesky diagonal is too optimistic; use eigvals
    w = np.linalg.eigvalsh(K)
    if w[0] <= 0 or w[-1] / w[0] > MAX_KERNEL_COND:
        return None
    P = sla.cho_solve((c, low), np.eye(len(K)), check_finite=False)
    return 0.5 * (P + P.T)


def build_lm(J, noise) -> PriorMatrix:
    """``diag(J^T Sigma^-1 J)`` for diagonal noise covariance ``Sigma``."""
    Jm = np.asarray(getattr(J, "matrix", J), dtype=np.float64)
    var = np.asarray(getattr(noise, "diag", noise), dtype=np.float64)
    if Jm.ndim != 2 or var.shape != (Jm.shape[0],):
        raise DimensionError(f"Jacobian rows {Jm.shape} and noise variances {var.shape} disagree")
    d = np.einsum("rj,r->j", Jm * Jm, 1.0 / var)
    return PriorMatrix("LM", sp.diags(d).tocsr())
