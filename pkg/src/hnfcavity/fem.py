"""Taylor-Hood (P2 velocity, P1 pressure) and P2 temperature discretization.

Global unknown ordering of a full state vector::

    [ U (n2) | V (n2) | T (n2) | p (n1) | mean-pressure multiplier (1) ]

where ``n2`` = vertices + edges and ``n1`` = vertices.  P2 dofs number
the vertices first and then the edges in lexicographic order of their
sorted endpoint pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh, unique_edges
from .properties import PropertyRatios
from .quadrature import triangle_rule

# local edges (0,1), (1,2), (2,0) carry P2 dofs 3, 4, 5
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def p2_basis(points: np.ndarray):
    """P2 shape values ``(nq, 6)`` and reference gradients ``(nq, 6, 2)``."""
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(points)
    val = np.empty((nq, 6))
    grad = np.empty((nq, 6, 2))
    for i in range(3):
        val[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        grad[:, i] = (4 * lam[:, i] - 1)[:, None] * dlam[i]
    for k, (i, j) in enumerate(LOCAL_EDGES):
        val[:, 3 + k] = 4 * lam[:, i] * lam[:, j]
        grad[:, 3 + k] = 4 * (lam[:, i, None] * dlam[j] + lam[:, j, None] * dlam[i])
    return val, grad


def p1_basis(points: np.ndarray):
    x, y = points[:, 0], points[:, 1]
    val = np.stack([1 - x - y, x, y], axis=1)
    grad = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(points), 3, 2))
    return val, grad


@dataclass(frozen=True, eq=False)
class DofMap:
    """Degree-of-freedom numbering and Dirichlet data.

    ``p2_cells[k]`` lists the six P2 dofs of triangle ``k`` (three vertices,
    then the midpoints of its local edges 01, 12, 20); ``p1_cells`` are the
    triangles themselves.  ``dirichlet_velocity`` and
    ``dirichlet_temperature`` hold P2 indices; the corresponding ``*_values``
    arrays give the prescribed values in the same order.
    """

    n_vertices: int
    edges: np.ndarray
    p2_cells: np.ndarray
    p2_coords: np.ndarray
    dirichlet_velocity: np.ndarray
    velocity_values: np.ndarray          # (k, 2): prescribed (U, V)
    dirichlet_temperature: np.ndarray
    temperature_values: np.ndarray
    boundary_p2: np.ndarray = field(repr=False)

    @property
    def n_p2(self) -> int:
        return self.n_vertices + len(self.edges)

    @property
    def n_p1(self) -> int:
        return self.n_vertices

    @property
    def p1_cells(self) -> np.ndarray:
        return self.p2_cells[:, :3]

    @property
    def size(self) -> int:
        """Length of a full state vector."""
        return 3 * self.n_p2 + self.n_p1 + 1

    def slices(self) -> dict[str, slice]:
        n2, n1 = self.n_p2, self.n_p1
        return {"u": slice(0, n2), "v": slice(n2, 2 * n2), "t": slice(2 * n2, 3 * n2),
                "p": slice(3 * n2, 3 * n2 + n1), "multiplier": slice(3 * n2 + n1, 3 * n2 + n1 + 1)}

    def fixed_indices(self) -> np.ndarray:
        """Positions of Dirichlet unknowns in the full state vector."""
        n2 = self.n_p2
        dv = self.dirichlet_velocity
        return np.concatenate([dv, n2 + dv, 2 * n2 + self.dirichlet_temperature])

    def fixed_values(self) -> np.ndarray:
        return np.concatenate([self.velocity_values[:, 0], self.velocity_values[:, 1],
                               self.temperature_values])

    def free_indices(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[self.fixed_indices()] = False
        return np.flatnonzero(mask)


def enumerate_dofs(mesh: Mesh, temperature_dirichlet: str = "walls",
                   boundary_values: tuple[Callable, Callable, Callable] | None = None,
                   hot_value: float = 1.0, cold_value: float = 0.0) -> DofMap:
    """Number P2/P1 dofs of ``mesh`` and collect Dirichlet data.

    With ``temperature_dirichlet="walls"`` the temperature is prescribed on
    hot (``hot_value``) and cold (``cold_value``) edges only; adiabatic
    dofs stay free.  With ``"boundary"`` every boundary temperature dof is
    prescribed.  ``boundary_values=(u, v, T)`` replaces the prescribed
    values by the given functions of ``(x, y)`` at the dof positions.
    """
    if temperature_dirichlet not in ("walls", "boundary"):
        raise ValueError(f"unknown temperature_dirichlet {temperature_dirichlet!r}")
    tri = mesh.triangles
    nv = mesh.n_nodes
    edges, tri_edges, _ = unique_edges(tri)
    p2_cells = np.hstack([tri, nv + tri_edges])
    coords = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])])

    key = edges[:, 0] * (nv + 1) + edges[:, 1]
    be = np.sort(mesh.boundary_edges, axis=1)
    bpos = np.searchsorted(key, be[:, 0] * (nv + 1) + be[:, 1])

    def dofs_of(mask):
        ids = np.concatenate([be[mask].ravel(), nv + bpos[mask]])
        return np.unique(ids)

    boundary = dofs_of(np.ones(len(be), dtype=bool))
    hot = dofs_of(mesh.boundary_tags == int(BoundaryTag.HOT))
    cold = dofs_of(mesh.boundary_tags == int(BoundaryTag.COLD))

    if temperature_dirichlet == "walls":
        t_dofs = np.union1d(hot, cold)
        t_vals = np.where(np.isin(t_dofs, hot), hot_value, cold_value)
    else:
        t_dofs = boundary
        t_vals = np.zeros(len(boundary))
    v_vals = np.zeros((len(boundary), 2))
    if boundary_values is not None:
        fu, fv, ft = boundary_values
        xb, yb = coords[boundary, 0], coords[boundary, 1]
        v_vals = np.column_stack([np.broadcast_to(fu(xb, yb), xb.shape),
                                  np.broadcast_to(fv(xb, yb), xb.shape)]).astype(float)
        xt, yt = coords[t_dofs, 0], coords[t_dofs, 1]
        t_vals = np.broadcast_to(ft(xt, yt), xt.shape).astype(float)
    return DofMap(nv, edges, p2_cells, coords, boundary, v_vals, t_dofs,
                  np.asarray(t_vals, dtype=float), boundary)


@dataclass(frozen=True)
class SparseTriplets:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)

    @classmethod
    def from_matrix(cls, mat) -> "SparseTriplets":
        c = sp.coo_matrix(mat)
        return cls(c.row, c.col, c.data, c.shape)


class ElementData:
    """Per-element geometry and basis data at quadrature points."""

    def __init__(self, mesh: Mesh, dofs: DofMap, degree: int = 5):
        rule = triangle_rule(degree)
        self.rule = rule
        p = mesh.nodes[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0], inv[:, 1, 1] = jac[:, 1, 1] / det, jac[:, 0, 0] / det
        inv[:, 0, 1], inv[:, 1, 0] = -jac[:, 0, 1] / det, -jac[:, 1, 0] / det
        self.origin = p[:, 0]
        self.jac = jac
        self.det = det
        self.inv = inv
        self.cells = dofs.p2_cells
        self.p1_cells = dofs.p1_cells

        self.phi, ref_grad = p2_basis(rule.points)           # (nq, 6), (nq, 6, 2)
        self.psi, ref_grad1 = p1_basis(rule.points)          # (nq, 3)
        # physical gradient = J^{-T} reference gradient
        self.dphi = np.einsum("qia,eab->eqib", ref_grad, inv)  # (ne, nq, 6, 2)
        self.dpsi = np.einsum("ia,eab->eib", ref_grad1[0], inv)  # (ne, 3, 2)
        self.wdet = np.abs(det)[:, None] * rule.weights[None, :]  # (ne, nq)
        self.qpoints = self.origin[:, None, :] + np.einsum("eab,qb->eqa", jac, rule.points)

    @property
    def n_elements(self) -> int:
        return len(self.det)

    # field evaluation at quadrature points
    def values(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.cells] @ self.phi.T                 # (ne, nq)

    def gradients(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("ei,eqia->eqa", coeffs[self.cells], self.dphi)  # (ne, nq, 2)

    # element matrices
    def stiffness(self) -> np.ndarray:
        return np.einsum("eq,eqia,eqja->eij", self.wdet, self.dphi, self.dphi)

    def mass(self, weight: np.ndarray | None = None) -> np.ndarray:
        w = self.wdet if weight is None else self.wdet * weight
        return np.einsum("eq,qi,qj->eij", w, self.phi, self.phi)

    def convection(self, wq: np.ndarray) -> np.ndarray:
        """Entries ``int (w . grad phi_j) phi_i`` with ``wq`` of shape (ne, nq, 2)."""
        adv = np.einsum("eqa,eqja->eqj", wq, self.dphi)
        return np.einsum("eq,qi,eqj->eij", self.wdet, self.phi, adv)

    def divergence(self) -> tuple[np.ndarray, np.ndarray]:
        """Entries ``int psi_k d(phi_j)/dx`` and ``.../dy``, shape (ne, 3, 6)."""
        bx = np.einsum("eq,qk,eqj->ekj", self.wdet, self.psi, self.dphi[..., 0])
        by = np.einsum("eq,qk,eqj->ekj", self.wdet, self.psi, self.dphi[..., 1])
        return bx, by

    def load(self, fq: np.ndarray) -> np.ndarray:
        """Element vectors ``int f phi_i`` from values ``fq`` (ne, nq)."""
        return np.einsum("eq,qi->ei", self.wdet * fq, self.phi)


def scatter(rows_cells: np.ndarray, cols_cells: np.ndarray, local: np.ndarray,
            shape: tuple[int, int]) -> SparseTriplets:
    nr, nc = rows_cells.shape[1], cols_cells.shape[1]
    r = np.broadcast_to(rows_cells[:, :, None], (len(local), nr, nc))
    c = np.broadcast_to(cols_cells[:, None, :], (len(local), nr, nc))
    return SparseTriplets(r.ravel(), c.ravel(), local.ravel(), shape)


def scatter_vector(cells: np.ndarray, local: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(cells.ravel(), weights=local.ravel(), minlength=size)


def assemble_linear_forms(mesh: Mesh, dofs: DofMap, ratios: PropertyRatios, pr: float, ra: float,
                          elements: ElementData | None = None) -> dict[str, SparseTriplets]:
    """Constant operators of the weak form.

    Returns triplets indexed by scalar-field dofs (P2 rows/cols, P1 rows
    for the divergence blocks):

    ``a0``   viscous term, applied to each velocity component
    ``bx``, ``by``  ``rho_f/rho_hnf * int q d(v)/dx`` and ``.../dy``
    ``a2``   buoyancy, maps T into the V-equation
    ``a3``   thermal diffusion
    """
    ed = elements or ElementData(mesh, dofs)
    n2, n1 = dofs.n_p2, dofs.n_p1
    cells, pcells = dofs.p2_cells, dofs.p1_cells
    k = ed.stiffness()
    m = ed.mass()
    bx, by = ed.divergence()
    c_rho = ratios.rho_ratio
    return {
        "a0": scatter(cells, cells, ratios.viscous_coefficient(pr) * k, (n2, n2)),
        "bx": scatter(pcells, cells, c_rho * bx, (n1, n2)),
        "by": scatter(pcells, cells, c_rho * by, (n1, n2)),
        "a2": scatter(cells, cells, ratios.buoyancy_coefficient(pr, ra) * m, (n2, n2)),
        "a3": scatter(cells, cells, ratios.alpha_ratio * k, (n2, n2)),
    }


def assemble_convection(w: tuple[np.ndarray, np.ndarray], dofs: DofMap,
                        elements: ElementData) -> SparseTriplets:
    """Scalar operator ``u -> a1(w; u, .)`` per velocity component.

    ``a1(w; u, v) = sum_i int (w . grad u_i) v_i`` is block diagonal in the
    components with this scalar block on each.
    """
    wq = np.stack([elements.values(w[0]), elements.values(w[1])], axis=-1)
    local = elements.convection(wq)
    return scatter(dofs.p2_cells, dofs.p2_cells, local, (dofs.n_p2, dofs.n_p2))


def assemble_thermal_advection(w: tuple[np.ndarray, np.ndarray], dofs: DofMap,
                               elements: ElementData) -> SparseTriplets:
    """Operator ``T -> a4(w; T, .)`` on the P2 temperature space."""
    return assemble_convection(w, dofs, elements)


def pressure_mass_vector(dofs: DofMap, elements: ElementData) -> np.ndarray:
    """``int q_k`` for every P1 basis function."""
    local = np.einsum("eq,qk->ek", elements.wdet, elements.psi)
    return scatter_vector(dofs.p1_cells, local, dofs.n_p1)


def write_matrix(matrix, path) -> None:
    """Coordinate text dump, one ``row col value`` per line, sorted."""
    c = sp.coo_matrix(matrix)
    c.sum_duplicates()
    order = np.lexsort((c.col, c.row))
    lines = [f"{r} {col} {v!r}" for r, col, v in
             zip(c.row[order].tolist(), c.col[order].tolist(), c.data[order].tolist())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
