"""Simplicial meshes and P1 finite element operators with homogeneous
Dirichlet conditions.

Meshes are 1D interval partitions or 2D triangulations.  Boundary degrees of
freedom are eliminated, so the assembled stiffness and mass matrices act on
interior vertices only and are exactly symmetric positive definite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameter, MeshFormatError, MeshValidationError

# Poincare constants ||v|| <= C_P ||grad v||.  The L-shape reuses the square's
# value (subset domain, so the true constant is smaller).
POINCARE = {
    "interval": 1.0 / math.pi,
    "square": 1.0 / (math.sqrt(2.0) * math.pi),
    "lshape": 1.0 / (math.sqrt(2.0) * math.pi),
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh.

    Parameters
    ----------
    vertices : (n_vertices, dim) float array
    cells : (n_cells, dim + 1) int array, positively oriented
    boundary_vertices : sorted int array of vertices on the domain boundary
    domain : tag used to look up the Poincare constant, or ``None``
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_vertices: np.ndarray
    domain: str | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def poincare_constant(self) -> float:
        if self.domain is None:
            # diameter-based fallback: any domain fits in a box of side L
            span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
            return 1.0 / (math.pi * math.sqrt(float(np.sum(1.0 / span**2))))
        return POINCARE[self.domain]

    def volumes(self) -> np.ndarray:
        """Signed cell volumes (lengths in 1D, areas in 2D)."""
        x = self.vertices[self.cells]
        if self.dim == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        d = np.zeros(self.n_cells)
        nv = self.dim + 1
        for i in range(nv):
            for j in range(i + 1, nv):
                d = np.maximum(d, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return d

    def dofmap(self) -> "DofMap":
        return DofMap.from_mesh(self)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Dense numbering of interior vertices.

    ``interior_index[v]`` is the DOF of vertex ``v`` or -1 for boundary vertices.
    """

    interior_index: np.ndarray
    interior_vertices: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.interior_vertices.size

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        is_bnd = np.zeros(mesh.n_vertices, dtype=bool)
        is_bnd[mesh.boundary_vertices] = True
        interior = np.flatnonzero(~is_bnd)
        index = np.full(mesh.n_vertices, -1, dtype=np.int64)
        index[interior] = np.arange(interior.size)
        return cls(index, interior)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Stiffness ``A0``, mass ``A1`` and load ``F`` on interior DOFs."""

    A0: sp.csr_matrix
    A1: sp.csr_matrix
    F: np.ndarray
    f_norm: float
    mesh: Mesh
    dofmap: DofMap
    poincare: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_dofs(self) -> int:
        return self.F.size

    def a0_solver(self):
        """Cached sparse LU of the stiffness matrix."""
        if "a0_lu" not in self._cache:
            import scipy.sparse.linalg as spla

            self._cache["a0_lu"] = spla.splu(self.A0.tocsc())
        return self._cache["a0_lu"]


# --------------------------------------------------------------------------
# generators


def _check_h(h: float) -> None:
    if not (0.0 < h < 1.0) or not math.isfinite(h):
        raise InvalidParameter(f"mesh size must lie in (0, 1), got {h!r}")


def build_interval_mesh(h: float) -> Mesh:
    """Uniform partition of (0, 1) into ``ceil(1/h)`` subintervals."""
    _check_h(h)
    n = math.ceil(1.0 / h - 1e-12)
    x = np.linspace(0.0, 1.0, n + 1)
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x[:, None], cells, np.array([0, n]), domain="interval")


def _crisscross(n: int, keep=None) -> tuple[np.ndarray, np.ndarray]:
    """Split each of the n x n unit-square grid cells into 4 triangles
    through its centre.  ``keep(cx, cy)`` filters cells by centre."""
    a = 1.0 / n
    corner_id = np.full((n + 1, n + 1), -1, dtype=np.int64)
    verts: list[tuple[float, float]] = []
    tris: list[tuple[int, int, int]] = []

    def corner(i: int, j: int) -> int:
        if corner_id[i, j] < 0:
            corner_id[i, j] = len(verts)
            verts.append((i * a, j * a))
        return int(corner_id[i, j])

    for j in range(n):
        for i in range(n):
            cx, cy = (i + 0.5) * a, (j + 0.5) * a
            if keep is not None and not keep(cx, cy):
                continue
            v00, v10 = corner(i, j), corner(i + 1, j)
            v11, v01 = corner(i + 1, j + 1), corner(i, j + 1)
            c = len(verts)
            verts.append((cx, cy))
            # counter-clockwise
            tris += [(v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c)]
    return np.array(verts), np.array(tris, dtype=np.int64)


def _boundary_from_faces(cells: np.ndarray, dim: int) -> np.ndarray:
    faces, counts = _face_counts(cells, dim)
    return np.unique(faces[counts == 1].ravel())


def _face_counts(cells: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 1:
        faces = cells.reshape(-1, 1)
    else:
        faces = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
        faces = np.sort(faces, axis=1)
    return np.unique(faces, axis=0, return_counts=True)


def _grid_count(target_h: float) -> int:
    # cell side 1/n with n even, so x = 0.5 and y = 0.5 are grid lines
    n = math.ceil(1.0 / target_h - 1e-12)
    return n + (n % 2)


def build_square_mesh(target_h: float) -> Mesh:
    """Criss-cross triangulation of (0, 1)^2 with element diameters in
    ``[target_h / 2, target_h]``."""
    _check_h(target_h)
    verts, tris = _crisscross(_grid_count(target_h))
    return Mesh(verts, tris, _boundary_from_faces(tris, 2), domain="square")


def build_lshape_mesh(target_h: float) -> Mesh:
    """Criss-cross triangulation of (0,1)^2 minus [0,0.5] x [0.5,1]."""
    _check_h(target_h)
    verts, tris = _crisscross(
        _grid_count(target_h), keep=lambda cx, cy: not (cx < 0.5 and cy > 0.5)
    )
    return Mesh(verts, tris, _boundary_from_faces(tris, 2), domain="lshape")


def build_mesh(domain: str, h: float) -> Mesh:
    builders = {
        "interval": build_interval_mesh,
        "square": build_square_mesh,
        "lshape": build_lshape_mesh,
    }
    if domain in builders:
        return builders[domain](h)
    return load_mesh(domain)


# --------------------------------------------------------------------------
# validation and text I/O


def validate_mesh(mesh: Mesh) -> None:
    """Raise :class:`MeshValidationError` unless every mesh invariant holds."""
    dim = mesh.dim
    if dim not in (1, 2):
        raise MeshValidationError(f"unsupported dimension {dim}")
    cells = mesh.cells
    if cells.ndim != 2 or cells.shape[1] != dim + 1:
        raise MeshValidationError(f"cells must have {dim + 1} vertices")
    if cells.size and (cells.min() < 0 or cells.max() >= mesh.n_vertices):
        raise MeshValidationError("cell references a vertex index out of range")
    if np.any(np.sort(cells, axis=1)[:, 1:] == np.sort(cells, axis=1)[:, :-1]):
        raise MeshValidationError("cell with repeated vertex")
    vol = mesh.volumes()
    if np.any(vol <= 0.0):
        bad = int(np.flatnonzero(vol <= 0.0)[0])
        raise MeshValidationError(f"cell {bad} has non-positive oriented volume")
    faces, counts = _face_counts(cells, dim)
    if np.any(counts > 2):
        raise MeshValidationError("non-conforming mesh: face shared by more than two cells")
    if len(np.unique(np.sort(cells, axis=1), axis=0)) != len(cells):
        raise MeshValidationError("duplicate cells")
    expected = np.unique(faces[counts == 1].ravel())
    if not np.array_equal(np.unique(mesh.boundary_vertices), expected):
        raise MeshValidationError("boundary vertex set does not match the mesh boundary")
    if dim == 2:
        _check_hanging_nodes(mesh, faces[counts == 1])


def _check_hanging_nodes(mesh: Mesh, bfaces: np.ndarray) -> None:
    # a vertex lying strictly inside a boundary edge signals a T-junction
    p = mesh.vertices
    a, b = p[bfaces[:, 0]], p[bfaces[:, 1]]
    for v in np.unique(bfaces.ravel()):
        q = p[v]
        d = b - a
        t = np.einsum("ij,ij->i", q - a, d) / np.einsum("ij,ij->i", d, d)
        cross = d[:, 0] * (q - a)[:, 1] - d[:, 1] * (q - a)[:, 0]
        inside = (t > 1e-12) & (t < 1 - 1e-12) & (np.abs(cross) < 1e-12)
        if np.any(inside):
            raise MeshValidationError(f"non-conforming mesh: hanging vertex {v}")


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(" ".join(str(int(i)) for i in mesh.boundary_vertices))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_mesh(path, domain: str | None = None) -> Mesh:
    """Read the whitespace-separated text mesh format and validate it."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def ints(lineno: int, want: int | None = None) -> list[int]:
        try:
            vals = [int(t) for t in lines[lineno].split()]
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"line {lineno + 1}: expected integers") from exc
        if want is not None and len(vals) != want:
            raise MeshFormatError(f"line {lineno + 1}: expected {want} integers")
        return vals

    dim, nv, nc = ints(0, 3)
    if dim not in (1, 2):
        raise MeshFormatError(f"line 1: unsupported dimension {dim}")
    if len(lines) != 1 + nv + nc + 1:
        raise MeshFormatError(
            f"expected {2 + nv + nc} lines, found {len(lines)}"
        )
    verts = np.empty((nv, dim))
    for i in range(nv):
        try:
            row = [float(t) for t in lines[1 + i].split()]
        except ValueError as exc:
            raise MeshFormatError(f"line {2 + i}: bad coordinate") from exc
        if len(row) != dim:
            raise MeshFormatError(f"line {2 + i}: expected {dim} coordinates")
        verts[i] = row
    cells = np.array(
        [ints(1 + nv + i, dim + 1) for i in range(nc)], dtype=np.int64
    ).reshape(nc, dim + 1)
    bnd = np.array(ints(1 + nv + nc), dtype=np.int64)
    mesh = Mesh(verts, cells, bnd, domain=domain)
    validate_mesh(mesh)
    return mesh


# --------------------------------------------------------------------------
# assembly


def _local_matrices(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell P1 stiffness and mass matrices, plus cell volumes."""
    vol = mesh.volumes()
    d = mesh.dim
    if d == 1:
        g = np.stack([-1.0 / vol, 1.0 / vol], axis=1)[:, :, None]
    else:
        x = mesh.vertices[mesh.cells]
        # gradient of barycentric coordinate i is rot90(opposite edge) / (2|T|)
        e = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        g = np.stack([-e[:, :, 1], e[:, :, 0]], axis=2) / (2.0 * vol[:, None, None])
    k = np.einsum("cid,cjd->cij", g, g) * vol[:, None, None]
    m_ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    m = m_ref[None] * vol[:, None, None]
    return k, m, vol


def assemble(mesh: Mesh, f=1.0, poincare: float | None = None) -> AssembledSystem:
    """Assemble stiffness, mass and load on interior DOFs.

    ``f`` is either a scalar constant (integrated exactly) or an array of
    nodal values over all mesh vertices (vertex quadrature).
    """
    dm = mesh.dofmap()
    k, m, vol = _local_matrices(mesh)
    nloc = mesh.dim + 1
    rows = np.repeat(mesh.cells, nloc, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nloc)).ravel()
    nv = mesh.n_vertices
    K = sp.coo_matrix((k.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    Mfull = sp.coo_matrix((m.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    if np.isscalar(f):
        const = float(f)
        load = np.zeros(nv)
        np.add.at(load, mesh.cells.ravel(), np.repeat(vol / nloc, nloc) * const)
        f_norm = abs(const) * math.sqrt(float(vol.sum()))
    else:
        fv = np.asarray(f, dtype=float)
        if fv.shape != (nv,):
            raise InvalidParameter(f"nodal source needs {nv} values, got {fv.shape}")
        load = np.zeros(nv)
        np.add.at(load, mesh.cells.ravel(), (fv[mesh.cells] * (vol / nloc)[:, None]).ravel())
        f_norm = math.sqrt(max(float(fv @ (Mfull @ fv)), 0.0))

    # Both operators share the coo triplet structure and duplicates are summed
    # in the same order for (i, j) and (j, i), so they come out exactly
    # symmetric with identical sparsity (explicit zeros are kept).
    idx = dm.interior_vertices
    A0 = K[idx][:, idx].tocsr()
    A1 = Mfull[idx][:, idx].tocsr()
    A0.sort_indices()
    A1.sort_indices()
    cp = mesh.poincare_constant if poincare is None else poincare
    return AssembledSystem(A0, A1, load[idx], f_norm, mesh, dm, cp)


# --------------------------------------------------------------------------
# norms


def _check_len(v: np.ndarray, sys: AssembledSystem) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (sys.n_dofs,):
        raise InvalidParameter(f"vector of length {sys.n_dofs} expected, got {v.shape}")
    return v


def l2_norm(v, sys: AssembledSystem) -> float:
    v = _check_len(v, sys)
    return math.sqrt(max(float(v @ (sys.A1 @ v)), 0.0))


def h10_norm(v, sys: AssembledSystem) -> float:
    v = _check_len(v, sys)
    return math.sqrt(max(float(v @ (sys.A0 @ v)), 0.0))


def hr_norm(v, r: float, eig) -> float:
    """Discrete interpolation norm between L2 (r=0) and H^1_0 (r=1).

    Expands ``v`` in the a0-orthonormal generalized eigenbasis and weights
    mode ``i`` by ``mu_i ** (1 - r)``.
    """
    if not (0.0 <= r <= 1.0):
        raise InvalidParameter(f"r must lie in [0, 1], got {r!r}")
    v = np.asarray(v, dtype=float)
    if v.shape != (eig.Phi.shape[0],):
        raise InvalidParameter("dimension mismatch")
    c = eig.coefficients(v)
    return math.sqrt(float(np.sum(c**2 * eig.mu ** (1.0 - r))))
