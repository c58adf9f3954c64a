"""Structured triangular meshes of square, L-shaped and H-shaped cavities.

The outline of every cavity is a union of axis-aligned rectangles.  An
``n x n`` background grid over the bounding box is cut to that outline and
each retained cell is split into two right triangles.  Diagonals alternate
in a checkerboard so that meshes with even ``n`` inherit the reflection and
point symmetries of the outline.

Boundary edges are tagged as hot (left wall, optionally only its lower
part), cold (right wall) or adiabatic (everything else).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Shape(str, enum.Enum):
    SQUARE = "square"
    LSHAPE = "lshape"
    HSHAPE = "hshape"


class BoundaryTag(enum.IntEnum):
    HOT = 0
    COLD = 1
    ADIABATIC = 2

    @property
    def label(self) -> str:
        return {0: "HotWall", 1: "ColdWall", 2: "Adiabatic"}[int(self)]

    @classmethod
    def from_label(cls, name: str) -> "BoundaryTag":
        for tag in cls:
            if tag.label == name:
                return tag
        raise ValueError(f"unknown boundary tag {name!r}")


class MeshError(ValueError):
    """Raised for geometries that cannot be meshed on the requested grid."""


@dataclass(frozen=True)
class GeometrySpec:
    """Parametric cavity outline.

    ``arm_thickness`` is the width of the vertical pillars (L and H) and
    the height of the bottom arm (L).  ``bridge_height`` is the height of
    the horizontal connector of the H, centred vertically.
    ``heater_extent`` is the heated fraction of the left wall, measured
    upward from its bottom end.
    """

    shape: Shape = Shape.SQUARE
    outer_width: float = 1.0
    outer_height: float = 1.0
    arm_thickness: float = 0.25
    bridge_height: float = 0.25
    heater_extent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        w, h = self.outer_width, self.outer_height
        if not (np.isfinite(w) and np.isfinite(h) and w > 0 and h > 0):
            raise MeshError("outer dimensions must be positive")
        if not 0 < self.heater_extent <= 1:
            raise MeshError("heater_extent must lie in (0, 1]")
        if self.shape is not Shape.SQUARE:
            if not 0 < self.arm_thickness < min(w, h):
                raise MeshError("arm_thickness must lie in (0, min(width, height))")
        if self.shape is Shape.HSHAPE:
            if not 2 * self.arm_thickness < w:
                raise MeshError("H pillars overlap")
            if not 0 < self.bridge_height < h:
                raise MeshError("bridge_height must lie in (0, outer_height)")

    def rectangles(self) -> list[tuple[float, float, float, float]]:
        """Outline as a union of ``(x0, x1, y0, y1)`` rectangles."""
        w, h, a = self.outer_width, self.outer_height, self.arm_thickness
        if self.shape is Shape.SQUARE:
            return [(0.0, w, 0.0, h)]
        if self.shape is Shape.LSHAPE:
            return [(0.0, a, 0.0, h), (0.0, w, 0.0, a)]
        y0, y1 = self._bridge_span()
        return [(0.0, a, 0.0, h), (w - a, w, 0.0, h), (a, w - a, y0, y1)]

    def _bridge_span(self):
        h, b = self.outer_height, self.bridge_height
        return 0.5 * (h - b), 0.5 * (h + b)

    def outline(self) -> np.ndarray:
        """Counterclockwise polygon vertices."""
        w, h, a = self.outer_width, self.outer_height, self.arm_thickness
        if self.shape is Shape.SQUARE:
            pts = [(0, 0), (w, 0), (w, h), (0, h)]
        elif self.shape is Shape.LSHAPE:
            pts = [(0, 0), (w, 0), (w, a), (a, a), (a, h), (0, h)]
        else:
            y0, y1 = self._bridge_span()
            pts = [(0, 0), (a, 0), (a, y0), (w - a, y0), (w - a, 0), (w, 0),
                   (w, h), (w - a, h), (w - a, y1), (a, y1), (a, h), (0, h)]
        return np.asarray(pts, dtype=float)

    def area(self) -> float:
        p = self.outline()
        x, y = p[:, 0], p[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def breakpoints(self) -> tuple[list[float], list[float]]:
        xs, ys = set(), set()
        for x0, x1, y0, y1 in self.rectangles():
            xs.update((x0, x1))
            ys.update((y0, y1))
        ys.add(self.heater_extent * self.outer_height)
        return sorted(xs), sorted(ys)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (M, 3) int array, counterclockwise
    boundary_edges : (E, 2) int array, oriented with the domain on the left
    boundary_tags : (E,) int array of :class:`BoundaryTag` values
    resolution : background grid count ``n`` (doubled by refinement)
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    resolution: int
    geometry: GeometrySpec | None = field(default=None, compare=False)

    def __post_init__(self):
        for name, dtype in (("nodes", float), ("triangles", np.int64),
                            ("boundary_edges", np.int64), ("boundary_tags", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.boundary_edges.size == 0:
            object.__setattr__(self, "boundary_edges", self.boundary_edges.reshape(0, 2))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted node pairs, lexicographic order."""
        return unique_edges(self.triangles)[0]

    def max_edge_length(self) -> float:
        e = self.edges()
        return float(np.max(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)))

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == int(tag)]


def unique_edges(triangles: np.ndarray):
    """Return ``(edges, tri_edges, counts)``.

    ``edges`` are sorted node pairs in lexicographic order and
    ``tri_edges[k, i]`` indexes the edge joining local vertices ``i`` and
    ``(i + 1) % 3`` of triangle ``k``.
    """
    t = np.asarray(triangles, dtype=np.int64)
    local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1, 3), counts


def _aligned(value: float, step: float) -> bool:
    k = value / step
    return abs(k - round(k)) < 1e-9


def build_mesh(spec: GeometrySpec, n: int, snap: bool = False) -> Mesh:
    """Mesh ``spec`` on an ``n x n`` background grid.

    With ``snap=True`` the grid line nearest to each outline corner (and to
    the heater end) is moved onto it, so any proportions can be meshed on
    any grid; the grid stays ``n x n`` but is no longer uniform.

    Raises
    ------
    MeshError
        If ``n < 2``, or, without ``snap``, if an outline corner or the
        heater end does not fall on a grid line (the cut would leave a
        staircase boundary).
    """
    if n < 2:
        raise MeshError("grid count must be at least 2")
    xs, ys = spec.breakpoints()
    gx = _grid_lines(xs, spec.outer_width, n, snap, "x")
    gy = _grid_lines(ys, spec.outer_height, n, snap, "y")
    return _structured_mesh(spec, n, gx, gy)


def _grid_lines(breaks, length, n, snap, axis):
    step = length / n
    lines = np.arange(n + 1) * step
    lines[-1] = length
    moved = set()
    for b in breaks:
        k = int(round(b / step))
        if _aligned(b, step):
            lines[k] = b
            continue
        if not snap:
            raise MeshError(f"{axis} = {b:g} is not a multiple of the cell size {step:g}")
        if k in moved or k in (0, n):
            raise MeshError(f"grid too coarse to resolve {axis} = {b:g}")
        lines[k] = b
        moved.add(k)
    if np.any(np.diff(lines) <= 0):
        raise MeshError(f"grid too coarse to resolve the outline along {axis}")
    return lines


def _structured_mesh(spec: GeometrySpec, n: int, gx: np.ndarray, gy: np.ndarray) -> Mesh:
    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()  # row-major: j outer, i inner
    xc = 0.5 * (gx[ci] + gx[ci + 1])
    yc = 0.5 * (gy[cj] + gy[cj + 1])
    inside = np.zeros(ci.shape, dtype=bool)
    for x0, x1, y0, y1 in spec.rectangles():
        inside |= (xc > x0) & (xc < x1) & (yc > y0) & (yc < y1)
    ci, cj = ci[inside], cj[inside]

    def gid(i, j):
        return j * (n + 1) + i

    v00, v10 = gid(ci, cj), gid(ci + 1, cj)
    v11, v01 = gid(ci + 1, cj + 1), gid(ci, cj + 1)
    slash = (ci + cj) % 2 == 0
    tri = np.empty((2 * len(ci), 3), dtype=np.int64)
    tri[0::2] = np.where(slash[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    tri[1::2] = np.where(slash[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))

    used = np.unique(tri)
    renumber = np.full((n + 1) ** 2, -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    nodes = np.column_stack([gx[used % (n + 1)], gy[used // (n + 1)]])
    tri = renumber[tri]

    bedges = _boundary_edges(tri)
    tags = _tag_edges(nodes, bedges, spec)
    return Mesh(nodes, tri, bedges, tags, n, spec)


def _boundary_edges(tri: np.ndarray) -> np.ndarray:
    edges, tri_edges, counts = unique_edges(tri)
    local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1).reshape(-1, 2)
    on_boundary = counts[tri_edges.ravel()] == 1
    directed = local[on_boundary]
    order = np.lexsort((directed.max(axis=1), directed.min(axis=1)))
    return directed[order]


def _tag_edges(nodes, bedges, spec: GeometrySpec) -> np.ndarray:
    w, h = spec.outer_width, spec.outer_height
    tol = 1e-9 * max(w, h)
    mid = 0.5 * (nodes[bedges[:, 0]] + nodes[bedges[:, 1]])
    tags = np.full(len(bedges), int(BoundaryTag.ADIABATIC), dtype=np.int64)
    left = np.abs(mid[:, 0]) < tol
    heated = left & (mid[:, 1] < spec.heater_extent * h + tol)
    tags[heated] = int(BoundaryTag.HOT)
    tags[np.abs(mid[:, 0] - w) < tol] = int(BoundaryTag.COLD)
    return tags


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four by joining edge midpoints."""
    t = mesh.triangles
    edges, tri_edges, _ = unique_edges(t)
    nv = mesh.n_nodes
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    m01, m12, m20 = (nv + tri_edges[:, k] for k in range(3))
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    children = np.stack([
        np.stack([a, m01, m20], 1),
        np.stack([m01, b, m12], 1),
        np.stack([m20, m12, c], 1),
        np.stack([m01, m12, m20], 1),
    ], axis=1).reshape(-1, 3)

    be = mesh.boundary_edges
    key = np.sort(be, axis=1)
    # locate each boundary edge among the unique edges (both are lexicographic)
    pos = _row_lookup(edges, key)
    mid_ids = nv + pos
    new_edges = np.empty((2 * len(be), 2), dtype=np.int64)
    new_edges[0::2] = np.column_stack([be[:, 0], mid_ids])
    new_edges[1::2] = np.column_stack([mid_ids, be[:, 1]])
    new_tags = np.repeat(mesh.boundary_tags, 2)
    return Mesh(nodes, children, new_edges, new_tags, 2 * mesh.resolution, mesh.geometry)


def _row_lookup(table: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Index of each row of ``rows`` in the lexicographically sorted ``table``."""
    big = int(max(table.max(initial=0), rows.max(initial=0))) + 1
    tk = table[:, 0] * big + table[:, 1]
    rk = rows[:, 0] * big + rows[:, 1]
    pos = np.searchsorted(tk, rk)
    if np.any(pos >= len(tk)) or np.any(tk[np.minimum(pos, len(tk) - 1)] != rk):
        raise MeshError("boundary edge not found among triangle edges")
    return pos


@dataclass
class MeshReport:
    """Pass/fail per mesh invariant; ``offenders`` names the first failing entity."""

    checks: dict[str, bool]
    offenders: dict[str, str | None]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def __str__(self):
        lines = []
        for name, passed in self.checks.items():
            extra = "" if passed else f"  ({self.offenders[name]})"
            lines.append(f"{name}: {'pass' if passed else 'FAIL'}{extra}")
        return "\n".join(lines)


def validate_mesh(mesh: Mesh) -> MeshReport:
    checks: dict[str, bool] = {}
    offenders: dict[str, str | None] = {}

    def record(name, bad_index, what):
        checks[name] = bad_index is None
        offenders[name] = None if bad_index is None else f"{what} {bad_index}"

    finite = np.all(np.isfinite(mesh.nodes), axis=1)
    record("finite_coordinates", _first(~finite), "node")

    t = mesh.triangles
    in_range = np.all((t >= 0) & (t < mesh.n_nodes), axis=1)
    record("valid_indices", _first(~in_range), "triangle")
    if not in_range.all():
        for name in ("positive_area", "conforming", "boundary_closed", "boundary_single_owner", "tags_valid"):
            record(name, "skipped", "check")
        return MeshReport(checks, offenders)

    record("positive_area", _first(mesh.signed_areas() <= 0), "triangle")

    edges, tri_edges, counts = unique_edges(t)
    overshared = counts > 2
    hanging = _first(overshared)
    if hanging is not None:
        record("conforming", f"{tuple(edges[hanging])} shared by {counts[hanging]} triangles", "edge")
    else:
        bad = _hanging_node(mesh.nodes, edges[counts == 1])
        record("conforming", bad, "node lies inside boundary edge; node")

    topo = {tuple(e) for e in edges[counts == 1]}
    tagged = [tuple(sorted(e)) for e in mesh.boundary_edges]
    tagged_set = set(tagged)
    missing = sorted(topo - tagged_set)
    extra = sorted(tagged_set - topo)
    if missing:
        record("boundary_closed", f"{missing[0]} untagged", "edge")
    elif extra or len(tagged) != len(tagged_set):
        record("boundary_closed", f"{(extra or tagged)[0]} not on boundary or duplicated", "edge")
    else:
        record("boundary_closed", None, "")

    lookup = {tuple(e): c for e, c in zip(edges, counts)}
    single = [lookup.get(e, 0) == 1 for e in tagged]
    record("boundary_single_owner", _first(~np.asarray(single, dtype=bool)), "boundary edge")

    valid_tags = np.isin(mesh.boundary_tags, [int(x) for x in BoundaryTag])
    record("tags_valid", _first(~valid_tags), "boundary edge")
    return MeshReport(checks, offenders)


def _first(mask) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def _hanging_node(nodes, edges) -> int | None:
    if len(edges) == 0:
        return None
    a, b = nodes[edges[:, 0]], nodes[edges[:, 1]]
    scale = np.max(np.linalg.norm(b - a, axis=1))
    for start in range(0, len(nodes), 2048):
        p = nodes[start:start + 2048, None, :]
        d = b[None] - a[None]
        r = p - a[None]
        cross = d[..., 0] * r[..., 1] - d[..., 1] * r[..., 0]
        s = np.einsum("ijk,ijk->ij", r, d) / np.einsum("ijk,ijk->ij", d, d)
        hit = (np.abs(cross) < 1e-10 * scale**2) & (s > 1e-9) & (s < 1 - 1e-9)
        if hit.any():
            return start + int(np.argwhere(hit)[0, 0])
    return None


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format (header, nodes, triangles, edges)."""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} edges {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines += [f"{a} {b} {BoundaryTag(t).label}"
              for (a, b), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, resolution: int = 0) -> Mesh:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if len(head) != 6 or head[0::2] != ["nodes", "triangles", "edges"]:
        raise MeshError(f"{path}: line 1: bad header {text[0]!r}")
    nn, nt, ne = (int(v) for v in head[1::2])
    body = text[1:]
    if len(body) < nn + nt + ne:
        raise MeshError(f"{path}: truncated file")
    nodes = np.array([[float(v) for v in ln.split()] for ln in body[:nn]]).reshape(-1, 2)
    tris = np.array([[int(v) for v in ln.split()] for ln in body[nn:nn + nt]]).reshape(-1, 3)
    edges, tags = [], []
    for ln in body[nn + nt:nn + nt + ne]:
        a, b, name = ln.split()
        edges.append((int(a), int(b)))
        tags.append(int(BoundaryTag.from_label(name)))
    return Mesh(nodes, tris, np.array(edges).reshape(-1, 2), np.array(tags), resolution)
