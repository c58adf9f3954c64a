"""Nusselt numbers, stream function, wall heat balance and field export."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, ElementData, LOCAL_EDGES, p2_basis, scatter
from .linalg import solve_sparse
from .mesh import BoundaryTag, Mesh, unique_edges
from .properties import PropertyRatios
from .quadrature import edge_rule
from .system import CoupledProblem, SolutionFields


class PostprocessError(ValueError):
    pass


@dataclass
class NusseltReport:
    """Wall heat flux, positive for heat entering the fluid.

    ``local_profile`` holds ``(s, flux)`` pairs at both ends of every wall
    edge, ordered by arc length ``s``; the flux is linear on each edge, so
    the trapezoid rule over the profile integrates it exactly.
    """

    global_nu: float
    local_profile: np.ndarray
    wall: BoundaryTag
    weighted: bool = True

    def profile_integral(self) -> float:
        s, q = self.local_profile[:, 0], self.local_profile[:, 1]
        return float(np.sum(0.5 * (q[1:] + q[:-1]) * np.diff(s)))


@dataclass
class StreamFunctionField:
    psi: np.ndarray
    psi_max: float
    psi_min: float


def _wall_edges(mesh: Mesh, wall: BoundaryTag):
    """Triangle and local edge index of every boundary edge carrying ``wall``."""
    mask = mesh.boundary_tags == int(wall)
    if not mask.any():
        raise PostprocessError(f"mesh has no {BoundaryTag(wall).label} edges")
    be = mesh.boundary_edges[mask]
    edges, tri_edges, _ = unique_edges(mesh.triangles)
    owner = np.full((len(edges), 2), -1, dtype=np.int64)
    flat = tri_edges.ravel()
    order = np.argsort(flat, kind="stable")
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    owner[flat[order][first], 0] = order[first]
    nv = mesh.n_nodes + 1
    key = edges[:, 0] * nv + edges[:, 1]
    sb = np.sort(be, axis=1)
    pos = np.searchsorted(key, sb[:, 0] * nv + sb[:, 1])
    slot = owner[pos, 0]
    return be, slot // 3, slot % 3


def _arc_positions(nodes, be):
    """Arc length of each edge's endpoints along the chained wall.

    Chains start at the end with the smallest ``(y, x)``.
    """
    a, b = nodes[be[:, 0]], nodes[be[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    starts = {int(i): k for k, i in enumerate(be[:, 0])}
    ends = {int(j): k for k, j in enumerate(be[:, 1])}
    s0 = np.zeros(len(be))
    s1 = np.zeros(len(be))
    seen = np.zeros(len(be), dtype=bool)
    offset = 0.0
    heads = [k for k in range(len(be)) if int(be[k, 0]) not in ends] or [0]
    for head in heads:
        chain = []
        k = head
        while k is not None and not seen[k]:
            seen[k] = True
            chain.append(k)
            k = starts.get(int(be[k, 1]))
        p_first, p_last = nodes[be[chain[0], 0]], nodes[be[chain[-1], 1]]
        forward = (p_first[1], p_first[0]) <= (p_last[1], p_last[0])
        ordered = chain if forward else chain[::-1]
        s = offset
        for k in ordered:
            if forward:
                s0[k], s1[k] = s, s + lengths[k]
            else:
                s1[k], s0[k] = s, s + lengths[k]
            s += lengths[k]
        offset = s
    return s0, s1, lengths


def _edge_gradients(mesh: Mesh, dofs: DofMap, t: np.ndarray, tri, ledge, s: np.ndarray):
    """Gradient of the P2 field ``t`` at fractions ``s`` along local edges."""
    i = np.array([e[0] for e in LOCAL_EDGES])[ledge]
    j = np.array([e[1] for e in LOCAL_EDGES])[ledge]
    p = mesh.nodes[mesh.triangles[tri]]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    inv = np.linalg.inv(jac)
    coeff = t[dofs.p2_cells[tri]]
    ns = len(s)
    lam = np.zeros((len(tri), ns, 3))
    rows = np.arange(len(tri))
    lam[rows, :, i] = 1 - s[None, :]
    lam[rows, :, j] += s[None, :]
    _, g = p2_basis(lam[..., 1:].reshape(-1, 2))
    g = g.reshape(len(tri), ns, 6, 2)
    return np.einsum("ei,eqia,eab->eqb", coeff, g, inv)


def global_nusselt(solution: SolutionFields, mesh: Mesh, dofs: DofMap, ratios: PropertyRatios,
                   wall: BoundaryTag = BoundaryTag.HOT, weighted: bool = True) -> NusseltReport:
    """Wall-normal temperature gradient integrated over ``wall``.

    ``weighted`` multiplies by ``k_hnf / k_f``.  The gradient is the
    one-sided trace from the triangle owning each wall edge, integrated
    with 3-point Gauss per edge.
    """
    be, tri, ledge = _wall_edges(mesh, wall)
    a, b = mesh.nodes[be[:, 0]], mesh.nodes[be[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    inward = np.column_stack([-d[:, 1], d[:, 0]]) / length[:, None]
    gs, gw = edge_rule(3)
    grads = _edge_gradients(mesh, dofs, solution.t, tri, ledge, np.concatenate([gs, [0.0, 1.0]]))
    flux = -np.einsum("eqa,ea->eq", grads, inward)
    if wall == BoundaryTag.COLD:
        flux = -flux  # heat leaving through the cold wall counts positive
    scale = ratios.k_ratio if weighted else 1.0
    flux *= scale
    total = float(np.sum(flux[:, :3] * gw[None, :] * length[:, None]))

    s0, s1, _ = _arc_positions(mesh.nodes, be)
    prof = _pair_sorted(s0, s1, flux[:, 3], flux[:, 4])
    return NusseltReport(total, prof, BoundaryTag(wall), weighted)


def _pair_sorted(s0, s1, q0, q1):
    lo = np.minimum(s0, s1)
    first_q = np.where(s0 <= s1, q0, q1)
    last_q = np.where(s0 <= s1, q1, q0)
    hi = np.maximum(s0, s1)
    order = np.argsort(lo, kind="stable")
    out = np.empty((2 * len(lo), 2))
    out[0::2, 0], out[0::2, 1] = lo[order], first_q[order]
    out[1::2, 0], out[1::2, 1] = hi[order], last_q[order]
    return out


def consistent_wall_flux(solution: SolutionFields, problem: CoupledProblem,
                         wall: BoundaryTag = BoundaryTag.HOT, weighted: bool = True) -> float:
    """Wall heat flux recovered from the energy residual at the wall's Dirichlet dofs.

    Positive for heat entering at the hot wall and leaving at the cold wall.
    """
    mesh, dofs = problem.mesh, problem.dofs
    mask = mesh.boundary_tags == int(wall)
    if not mask.any():
        raise PostprocessError(f"mesh has no {BoundaryTag(wall).label} edges")
    r = problem.full_residual(solution.pack())[dofs.slices()["t"]]
    wall_dofs = _tag_dofs(mesh, dofs, wall)
    total = float(r[wall_dofs].sum()) / problem.c_alpha
    if wall == BoundaryTag.COLD:
        total = -total
    return total * (problem.ratios.k_ratio if weighted else 1.0)


def _tag_dofs(mesh, dofs, tag):
    be = np.sort(mesh.boundary_edges[mesh.boundary_tags == int(tag)], axis=1)
    nv = dofs.n_vertices
    key = dofs.edges[:, 0] * (nv + 1) + dofs.edges[:, 1]
    pos = np.searchsorted(key, be[:, 0] * (nv + 1) + be[:, 1])
    return np.unique(np.concatenate([be.ravel(), nv + pos]))


def energy_balance(solution: SolutionFields, mesh: Mesh, dofs: DofMap, ratios: PropertyRatios,
                   method: str = "consistent", problem: CoupledProblem | None = None):
    """Return ``(hot_flux, cold_flux, imbalance)``.

    Fluxes use the outward-normal convention, so a balanced state has
    ``hot + cold = 0``; ``imbalance = |hot + cold| / |hot|``.

    ``method="consistent"`` (default) recovers the wall fluxes from the
    energy residual at the Dirichlet dofs; these are conservative up to the
    weakly enforced incompressibility.  ``method="gradient"`` integrates the
    one-sided gradient traces, whose error dominates in thin boundary layers.
    """
    if method == "gradient":
        hot = global_nusselt(solution, mesh, dofs, ratios, BoundaryTag.HOT).global_nu
        cold = global_nusselt(solution, mesh, dofs, ratios, BoundaryTag.COLD).global_nu
    elif method == "consistent":
        if problem is None:
            # the energy rows do not depend on Pr or Ra
            problem = CoupledProblem(mesh, dofs, ratios, 1.0, 0.0)
        hot = consistent_wall_flux(solution, problem, BoundaryTag.HOT)
        cold = consistent_wall_flux(solution, problem, BoundaryTag.COLD)
    else:
        raise ValueError(f"unknown method {method!r}")
    # outward normal: heat enters at the hot wall (negative outward flux)
    hot_out, cold_out = -hot, cold
    imbalance = abs(hot_out + cold_out) / abs(hot_out) if hot_out else float("inf")
    return hot_out, cold_out, imbalance


def stream_function(solution: SolutionFields, mesh: Mesh, dofs: DofMap,
                    elements: ElementData | None = None, backend: str = "auto") -> StreamFunctionField:
    """Solve ``lap psi = dV/dx - dU/dy`` with ``psi = 0`` on the boundary.

    With this sign ``U = -dpsi/dy`` and ``V = dpsi/dx``: a clockwise cell
    (fluid rising along a hot left wall) has positive ``psi``.
    """
    ed = elements or ElementData(mesh, dofs)
    n2 = dofs.n_p2
    gu, gv = ed.gradients(solution.u), ed.gradients(solution.v)
    omega = gv[..., 0] - gu[..., 1]
    # weak form: int grad(psi).grad(th) = -int omega th
    rhs = np.bincount(dofs.p2_cells.ravel(), weights=-ed.load(omega).ravel(), minlength=n2)
    k = scatter(dofs.p2_cells, dofs.p2_cells, ed.stiffness(), (n2, n2)).tocsr()
    free = np.setdiff1d(np.arange(n2), dofs.boundary_p2)
    psi = np.zeros(n2)
    if np.any(rhs[free]):
        psi[free] = solve_sparse(k[free][:, free], rhs[free], backend)
    return StreamFunctionField(psi, float(psi.max()), float(psi.min()))


def nodal_pressure(solution: SolutionFields, dofs: DofMap) -> np.ndarray:
    """P1 pressure evaluated at every P2 node (edge midpoints averaged)."""
    p = solution.p
    mid = 0.5 * (p[dofs.edges[:, 0]] + p[dofs.edges[:, 1]])
    return np.concatenate([p, mid])


def export_fields(solution: SolutionFields, mesh: Mesh, dofs: DofMap, path,
                  psi: StreamFunctionField | None = None) -> list[Path]:
    """Write ``<path>.csv`` (x,y,U,V,T,p,psi per P2 node) and ``<path>.vtk``."""
    base = Path(path)
    if base.suffix in (".csv", ".vtk"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    psi = psi or stream_function(solution, mesh, dofs)
    xy = dofs.p2_coords
    p_nodal = nodal_pressure(solution, dofs)
    cols = [xy[:, 0], xy[:, 1], solution.u, solution.v, solution.t, p_nodal, psi.psi]
    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("x,y,U,V,T,p,psi\n")
        for row in zip(*(c.tolist() for c in cols)):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    vtk_path = base.with_suffix(".vtk")
    n = len(xy)
    cells = dofs.p2_cells
    with open(vtk_path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 2.0\nhybrid nanofluid cavity solution\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in xy.tolist():
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        fh.write(f"CELLS {len(cells)} {7 * len(cells)}\n")
        for c in cells.tolist():
            fh.write("6 " + " ".join(map(str, c)) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("22\n" * len(cells))  # VTK_QUADRATIC_TRIANGLE
        fh.write(f"POINT_DATA {n}\n")
        for name, values in (("U", solution.u), ("V", solution.v), ("T", solution.t),
                             ("p", p_nodal), ("psi", psi.psi)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.17g}" for v in values.tolist()) + "\n")
        fh.write("VECTORS velocity double\n")
        for u, v in zip(solution.u.tolist(), solution.v.tolist()):
            fh.write(f"{u:.17g} {v:.17g} 0\n")
    return [csv_path, vtk_path]


def read_fields_csv(path) -> dict[str, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    names = Path(path).read_text().split("\n", 1)[0].split(",")
    return {name: data[:, k] for k, name in enumerate(names)}
