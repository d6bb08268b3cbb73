"""Transfer between the 256 x 256 pixel grid and the P0 mesh representation.

The grid covers the square ``[-R, R]^2``; row 0 is the top (``y = +R``),
column 0 the left edge (``x = -R``).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ConfigError, DimensionError
from .mesh import TriMesh

GRID_SIZE = 256


def pixel_centers(radius: float, n: int = GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    step = 2 * radius / n
    c = -radius + (np.arange(n) + 0.5) * step
    X, Y = np.meshgrid(c, c[::-1])
    return X, Y


@lru_cache(maxsize=8)
def disk_mask(n: int = GRID_SIZE) -> np.ndarray:
    """Pixels whose centre lies strictly inside the inscribed disk."""
    c = (np.arange(n) + 0.5) * 2 / n - 1
    m = (c[None, :] ** 2 + c[:, None] ** 2) < 1.0
    m.setflags(write=False)
    return m


def pixel_to_mesh(img: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Sample the image at each element centroid (nearest pixel)."""
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise DimensionError(f"expected a square image, got shape {img.shape}")
    n = img.shape[0]
    R = mesh.radius
    step = 2 * R / n
    c = mesh.centroids
    col = np.floor((c[:, 0] + R) / step).astype(np.int64)
    row = np.floor((R - c[:, 1]) / step).astype(np.int64)
    if col.min() < 0 or row.min() < 0 or col.max() >= n or row.max() >= n:
        raise ConfigError("element centroid outside the pixel grid; mesh and grid radius disagree")
    return img[row, col].astype(np.float64)


def _locate(mesh: TriMesh, pts: np.ndarray, k: int = 12):
    """Containing element and barycentric coordinates for each point.

    Points outside the polygonal mesh (between the chord and the circle) are
    assigned to the least-violated candidate with clipped coordinates.
    """
    tree = cKDTree(mesh.centroids)
    k = min(k, mesh.n_elements)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    p = mesh.vertices[mesh.elements[cand]]  # (P, k, 3, 2)
    v0, v1, v2 = p[..., 0, :], p[..., 1, :], p[..., 2, :]
    q = pts[:, None, :]
    det = (v1[..., 0] - v0[..., 0]) * (v2[..., 1] - v0[..., 1]) - (v1[..., 1] - v0[..., 1]) * (v2[..., 0] - v0[..., 0])
    l1 = ((q[..., 0] - v0[..., 0]) * (v2[..., 1] - v0[..., 1]) - (q[..., 1] - v0[..., 1]) * (v2[..., 0] - v0[..., 0])) / det
    l2 = ((v1[..., 0] - v0[..., 0]) * (q[..., 1] - v0[..., 1]) - (v1[..., 1] - v0[..., 1]) * (q[..., 0] - v0[..., 0])) / det
    bary = np.stack([1 - l1 - l2, l1, l2], axis=-1)
    worst = bary.min(axis=-1)  # (P, k)
    inside = worst >= -1e-12
    pick = np.where(inside.any(axis=1), inside.argmax(axis=1), worst.argmax(axis=1))
    rows = np.arange(len(pts))
    elem = cand[rows, pick]
    b = np.clip(bary[rows, pick], 0.0, None)
    b /= b.sum(axis=1, keepdims=True)
    return elem, b


def vertex_average_matrix(mesh: TriMesh) -> sp.csr_matrix:
    """Area-weighted element-to-vertex averaging, (N, M)."""
    M, N = mesh.n_elements, mesh.n_vertices
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(M), 3)
    w = np.repeat(mesh.areas, 3)
    S = sp.csr_matrix((w, (rows, cols)), shape=(N, M))
    tot = np.asarray(S.sum(axis=1)).ravel()
    return sp.diags(1.0 / tot) @ S


class MeshPixelInterpolator:
    """Linear map from P0 mesh vectors to ``n x n`` images; zero outside the disk.

    ``mode="p1"`` averages element values onto vertices and evaluates the
    piecewise-linear interpolant at pixel centres; ``mode="nearest"`` samples
    the containing element.
    """

    def __init__(self, mesh: TriMesh, n: int = GRID_SIZE, mode: str = "p1"):
        if mode not in ("p1", "nearest"):
            raise ConfigError(f"unknown interpolation mode {mode!r}")
        self.mesh, self.n, self.mode = mesh, n, mode
        X, Y = pixel_centers(mesh.radius, n)
        mask = disk_mask(n).ravel()
        idx = np.flatnonzero(mask)
        pts = np.column_stack([X.ravel()[idx], Y.ravel()[idx]])
        elem, bary = _locate(mesh, pts)
        self.pixel_index, self.pixel_element = idx, elem
        if mode == "nearest":
            self.matrix = sp.csr_matrix(
                (np.ones(len(idx)), (idx, elem)), shape=(n * n, mesh.n_elements)
            )
        else:
            verts = mesh.elements[elem]
            P = sp.csr_matrix(
                (bary.ravel(), (np.repeat(idx, 3), verts.ravel())), shape=(n * n, mesh.n_vertices)
            )
            self.matrix = (P @ vertex_average_matrix(mesh)).tocsr()

    def __call__(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if v.shape[0] != self.mesh.n_elements:
            raise DimensionError(f"expected {self.mesh.n_elements} element values, got {v.shape[0]}")
        out = self.matrix @ v
        return out.reshape((self.n, self.n) + v.shape[1:])


def mesh_to_pixel(values: np.ndarray, mesh: TriMesh, n: int = GRID_SIZE, mode: str = "p1") -> np.ndarray:
    return MeshPixelInterpolator(mesh, n, mode)(values)
