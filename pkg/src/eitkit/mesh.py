"""Triangular disk meshes with electrode arcs.

Potentials live on the vertices (P1, ``N`` values) and conductivities on the
triangles (P0, ``M`` values).  Electrodes are numbered from zero in code; the
first electrode is centred at angle pi/2 and numbering runs counter-clockwise.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshError, ParseError

MESH_FORMAT_VERSION = 1
MIN_ELEMENT_AREA = 1e-14


@dataclass(frozen=True)
class DiskMeshSpec:
    radius: float = 0.115
    mesh_size_h: float = 0.005
    n_electrodes: int = 32
    electrode_coverage: float = 0.5

    def validate(self) -> None:
        if not self.radius > 0:
            raise MeshError(f"radius must be > 0, got {self.radius}")
        if not 0 < self.mesh_size_h < self.radius:
            raise MeshError(
                f"mesh size h must satisfy 0 < h < radius, got h={self.mesh_size_h}, "
                f"radius={self.radius}"
            )
        if self.n_electrodes < 2:
            raise MeshError(f"need at least 2 electrodes, got {self.n_electrodes}")
        if not 0 < self.electrode_coverage < 1:
            raise MeshError(
                f"electrode coverage must lie in (0, 1), got {self.electrode_coverage}"
            )


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (N, 2) float64
    elements: np.ndarray  # (M, 3) int64, counter-clockwise
    boundary_edges: np.ndarray  # (B, 2) int64, ordered counter-clockwise loop
    electrode_edges: tuple[np.ndarray, ...]  # per electrode, (E_l, 2) subset of boundary_edges
    radius: float = field(default=0.115)

    def __post_init__(self):
        for arr in (self.vertices, self.elements, self.boundary_edges, *self.electrode_edges):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_edges)

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.elements)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge of every element."""
        p = self.vertices[self.elements]
        d = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return d.max(axis=1)

    @cached_property
    def electrode_lengths(self) -> np.ndarray:
        return np.array([
            np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).sum()
            for e in self.electrode_edges
        ])

    @cached_property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.elements, dtype="<i8").tobytes())
        for l, e in enumerate(self.electrode_edges):
            h.update(f"e{l}".encode())
            h.update(np.ascontiguousarray(e, dtype="<i8").tobytes())
        h.update(repr(float(self.radius)).encode())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, TriMesh):
            return NotImplemented
        return (
            self.radius == other.radius
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and len(self.electrode_edges) == len(other.electrode_edges)
            and all(np.array_equal(a, b) for a, b in zip(self.electrode_edges, other.electrode_edges))
        )

    __hash__ = None


def signed_areas(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = vertices[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_counts(elements: np.ndarray) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Map undirected edge -> list of (element, local edge) occurrences."""
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for j, tri in enumerate(elements.tolist()):
        for a in range(3):
            u, v = tri[a], tri[(a + 1) % 3]
            key = (u, v) if u < v else (v, u)
            out.setdefault(key, []).append((j, a))
    return out


def boundary_loop(elements: np.ndarray) -> np.ndarray:
    """Ordered counter-clockwise loop of boundary edges.

    Edges keep the orientation they have in their (counter-clockwise) element.
    The loop starts at the edge whose first vertex has the smallest index.
    """
    directed = {}
    for key, occ in _edge_counts(elements).items():
        if len(occ) == 1:
            j, a = occ[0]
            u, v = int(elements[j, a]), int(elements[j, (a + 1) % 3])
            if u in directed:
                raise MeshError(f"boundary vertex {u} has more than one outgoing boundary edge")
            directed[u] = v
        elif len(occ) > 2:
            raise MeshError(f"edge {key} is shared by {len(occ)} elements")
    if not directed:
        return np.zeros((0, 2), dtype=np.int64)
    start = min(directed)
    loop = []
    u = start
    while True:
        v = directed[u]
        loop.append((u, v))
        u = v
        if u == start:
            break
        if u not in directed or len(loop) > len(directed):
            raise MeshError("boundary edges do not form a single closed loop")
    if len(loop) != len(directed):
        raise MeshError("boundary consists of more than one loop")
    return np.asarray(loop, dtype=np.int64)


def validate_mesh(mesh: TriMesh) -> TriMesh:
    """Check every structural invariant; returns the mesh unchanged."""
    n = mesh.n_vertices
    if mesh.vertices.ndim != 2 or mesh.vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (N, 2)")
    if mesh.elements.ndim != 2 or mesh.elements.shape[1] != 3:
        raise MeshError("elements must have shape (M, 3)")
    if mesh.elements.size and (mesh.elements.min() < 0 or mesh.elements.max() >= n):
        raise MeshError("element references a vertex index out of range")
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("non-finite vertex coordinates")
    bad = np.flatnonzero(mesh.areas <= MIN_ELEMENT_AREA)
    if bad.size:
        raise MeshError(
            f"element {bad[0]} has signed area {mesh.areas[bad[0]]:.3e} <= {MIN_ELEMENT_AREA}"
        )
    loop = boundary_loop(mesh.elements)
    if not np.array_equal(loop, mesh.boundary_edges):
        raise MeshError("boundary_edges do not match the boundary loop of the elements")
    position = {(int(a), int(b)): i for i, (a, b) in enumerate(loop)}
    nb = len(loop)
    seen: dict[int, int] = {}
    for l, edges in enumerate(mesh.electrode_edges):
        if len(edges) == 0:
            raise MeshError(f"electrode {l} covers no boundary edge")
        idx = []
        for a, b in edges.tolist():
            p = position.get((a, b))
            if p is None:
                raise MeshError(f"electrode {l}: edge ({a}, {b}) is not a boundary edge")
            if p in seen:
                raise MeshError(f"electrode {l} overlaps electrode {seen[p]} at edge ({a}, {b})")
            seen[p] = l
            idx.append(p)
        # contiguous arc: consecutive loop positions modulo the loop length
        steps = [(idx[i + 1] - idx[i]) % nb for i in range(len(idx) - 1)]
        if any(s != 1 for s in steps):
            raise MeshError(f"electrode {l} is not a contiguous ordered boundary arc")
    return mesh


def _boundary_points(spec: DiskMeshSpec):
    """Boundary angles in counter-clockwise order and, per segment, the electrode index or -1."""
    R, h, L, cov = spec.radius, spec.mesh_size_h, spec.n_electrodes, spec.electrode_coverage
    pitch = 2 * math.pi / L
    arc_ang = cov * pitch
    gap_ang = pitch - arc_ang
    arc_len, gap_len = arc_ang * R, gap_ang * R
    if arc_len < h / 4:
        raise MeshError(
            f"electrode arc length {arc_len:.4g} is shorter than h/4 = {h / 4:.4g}; "
            "reduce h or the number of electrodes"
        )
    if gap_len < h / 4:
        raise MeshError(
            f"inter-electrode gap {gap_len:.4g} is shorter than h/4 = {h / 4:.4g}; "
            "reduce h or the electrode coverage"
        )
    n_arc = max(1, math.ceil(arc_len / h - 1e-9))
    n_gap = max(1, math.ceil(gap_len / h - 1e-9))
    angles, owner = [], []
    for l in range(L):
        start = math.pi / 2 + l * pitch - arc_ang / 2
        for i in range(n_arc):
            angles.append(start + arc_ang * i / n_arc)
            owner.append(l)
        gstart = start + arc_ang
        for i in range(n_gap):
            angles.append(gstart + gap_ang * i / n_gap)
            owner.append(-1)
    return np.asarray(angles), np.asarray(owner)


def build_disk_mesh(spec: DiskMeshSpec | None = None) -> TriMesh:
    """Quasi-uniform Delaunay mesh of the disk with boundary vertices snapped to
    the electrode arc endpoints."""
    spec = spec or DiskMeshSpec()
    spec.validate()
    R, h = spec.radius, spec.mesh_size_h

    b_ang, owner = _boundary_points(spec)
    nb = len(b_ang)
    pts = [np.column_stack([R * np.cos(b_ang), R * np.sin(b_ang)])]

    n_rings = max(2, math.ceil(R / h - 1e-9))
    for k in range(n_rings - 1, 0, -1):
        r = R * k / n_rings
        nk = max(6, round(2 * math.pi * r / h))
        offset = math.pi / 2 + (0.5 * 2 * math.pi / nk if k % 2 else 0.0)
        t = offset + 2 * math.pi * np.arange(nk) / nk
        pts.append(np.column_stack([r * np.cos(t), r * np.sin(t)]))
    pts.append(np.zeros((1, 2)))
    vertices = np.vstack(pts)

    tri = Delaunay(vertices, qhull_options="Qbb Qc Qz Q12")
    elements = np.asarray(tri.simplices, dtype=np.int64)
    area = signed_areas(vertices, elements)
    flip = area < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    area = np.abs(area)
    elements = elements[area > MIN_ELEMENT_AREA]
    # qhull output order is not part of the contract; sort for reproducibility
    elements = elements[np.lexsort((elements[:, 2], elements[:, 1], elements[:, 0]))]

    loop = boundary_loop(elements)
    if len(loop) != nb or set(loop[:, 0].tolist()) != set(range(nb)):
        raise MeshError("triangulation lost boundary vertices; try a smaller h")

    # boundary segment i joins boundary point i and i+1 (mod nb)
    seg_of = {(i, (i + 1) % nb): i for i in range(nb)}
    electrodes: list[list[tuple[int, int]]] = [[] for _ in range(spec.n_electrodes)]
    for a, b in loop.tolist():
        s = seg_of.get((a, b))
        if s is None:
            raise MeshError(f"boundary edge ({a}, {b}) does not join consecutive boundary points")
    for s in range(nb):
        l = owner[s]
        if l >= 0:
            electrodes[l].append((s, (s + 1) % nb))
    mesh = TriMesh(
        vertices=vertices,
        elements=elements,
        boundary_edges=loop,
        electrode_edges=tuple(np.asarray(e, dtype=np.int64) for e in electrodes),
        radius=float(R),
    )
    return validate_mesh(mesh)


def element_adjacency(mesh: TriMesh) -> list[list[int]]:
    """Edge-sharing neighbours of every element, ascending."""
    adj: list[list[int]] = [[] for _ in range(mesh.n_elements)]
    for occ in _edge_counts(mesh.elements).values():
        if len(occ) == 2:
            (i, _), (j, _) = occ
            adj[i].append(j)
            adj[j].append(i)
    for a in adj:
        a.sort()
    return adj


def mesh_to_dict(mesh: TriMesh) -> dict:
    return {
        "version": MESH_FORMAT_VERSION,
        "radius": float(mesh.radius),
        "vertices": mesh.vertices.tolist(),
        "elements": mesh.elements.tolist(),
        "electrodes": [{"id": l, "edges": e.tolist()} for l, e in enumerate(mesh.electrode_edges)],
    }


def save_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)) + "\n")


def mesh_from_dict(doc: dict, source: str = "<dict>") -> TriMesh:
    def need(key, container=doc, where=""):
        if not isinstance(container, dict) or key not in container:
            raise ParseError(f"{source}: missing field '{where}{key}'")
        return container[key]

    try:
        version = need("version")
        if version != MESH_FORMAT_VERSION:
            raise ParseError(f"{source}: unsupported mesh version {version!r}")
        radius = float(need("radius"))
        vertices = np.asarray(need("vertices"), dtype=np.float64)
        elements = np.asarray(need("elements"), dtype=np.int64)
        electrodes = need("electrodes")
        if vertices.ndim != 2 or vertices.shape[1:] != (2,):
            raise ParseError(f"{source}: field 'vertices' must be a list of [x, y] pairs")
        if elements.ndim != 2 or elements.shape[1:] != (3,):
            raise ParseError(f"{source}: field 'elements' must be a list of [i, j, k] triples")
        edges = []
        for n, e in enumerate(electrodes):
            ident = need("id", e, f"electrodes[{n}].")
            if ident != n:
                raise ParseError(f"{source}: electrodes[{n}].id is {ident!r}, expected {n}")
            arr = np.asarray(need("edges", e, f"electrodes[{n}]."), dtype=np.int64).reshape(-1, 2)
            edges.append(arr)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{source}: malformed mesh field: {exc}") from exc
    if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
        raise MeshError(f"{source}: element references a vertex index out of range")
    mesh = TriMesh(
        vertices=vertices,
        elements=elements,
        boundary_edges=boundary_loop(elements),
        electrode_edges=tuple(edges),
        radius=radius,
    )
    return validate_mesh(mesh)


def load_mesh(path) -> TriMesh:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return mesh_from_dict(doc, source=str(path))
