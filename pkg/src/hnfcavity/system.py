"""Discrete coupled residual and its exact Jacobian.

Residual rows (test functions in brackets)::

    [v_x]  a0(u, v) + a1(u; u, v) - b(v, p) - (f_u, v)
    [v_y]  a0(u, v) + a1(u; u, v) - b(v, p) - a2(T, v) - (f_v, v)
    [th ]  a3(T, th) + a4(u; T, th) - (f_T, th)
    [q  ]  -b(u, q) + lambda * int q
    [lam]  int p

Dirichlet unknowns are lifted: they keep their prescribed values in the
state and their rows and columns are dropped from the linear system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, ElementData, pressure_mass_vector
from .mesh import Mesh
from .properties import PropertyRatios

BLOCKS = ("u", "v", "t", "p", "multiplier")


class DimensionError(ValueError):
    pass


@dataclass
class SolutionFields:
    u: np.ndarray
    v: np.ndarray
    t: np.ndarray
    p: np.ndarray
    multiplier: float = 0.0

    def pack(self) -> np.ndarray:
        return np.concatenate([self.u, self.v, self.t, self.p, [self.multiplier]])

    @classmethod
    def unpack(cls, x: np.ndarray, dofs: DofMap) -> "SolutionFields":
        if len(x) != dofs.size:
            raise DimensionError(f"state has {len(x)} entries, dof map expects {dofs.size}")
        s = dofs.slices()
        return cls(x[s["u"]].copy(), x[s["v"]].copy(), x[s["t"]].copy(),
                   x[s["p"]].copy(), float(x[s["multiplier"]][0]))

    @classmethod
    def zeros(cls, dofs: DofMap) -> "SolutionFields":
        return cls.unpack(np.zeros(dofs.size), dofs)


@dataclass
class AssembledSystem:
    """Jacobian and residual restricted to free unknowns.

    ``free`` maps rows of the reduced system to positions in the full
    state vector; ``blocks`` gives, per field, the reduced row indices.
    """

    jacobian: sp.csr_matrix
    residual: np.ndarray
    free: np.ndarray
    blocks: dict[str, np.ndarray]

    def block_norms(self) -> dict[str, float]:
        return {k: float(np.linalg.norm(self.residual[idx])) for k, idx in self.blocks.items()}


class CoupledProblem:
    """Assembles the coupled flow/heat system for fixed parameters.

    ``momentum_source(x, y) -> (fx, fy)`` and ``energy_source(x, y)`` add
    volume forcing; physics runs leave both unset.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, ratios: PropertyRatios, pr: float, ra: float,
                 momentum_source: Callable | None = None, energy_source: Callable | None = None,
                 quad_degree: int = 5):
        if pr <= 0:
            raise ValueError("Pr must be positive")
        if ra < 0:
            raise ValueError("Ra must be non-negative")
        self.mesh = mesh
        self.dofs = dofs
        self.ratios = ratios
        self.pr = float(pr)
        self.ra = float(ra)
        self.ed = ElementData(mesh, dofs, quad_degree)
        ed = self.ed
        self.k_loc = ed.stiffness()
        self.m_loc = ed.mass()
        self.bx_loc, self.by_loc = ed.divergence()
        self.mvec = pressure_mass_vector(dofs, ed)

        n2 = dofs.n_p2
        self.f_u = np.zeros(n2)
        self.f_v = np.zeros(n2)
        self.f_t = np.zeros(n2)
        xq, yq = ed.qpoints[..., 0], ed.qpoints[..., 1]
        if momentum_source is not None:
            fx, fy = momentum_source(xq, yq)
            self.f_u = self._load(np.broadcast_to(fx, xq.shape))
            self.f_v = self._load(np.broadcast_to(fy, xq.shape))
        if energy_source is not None:
            self.f_t = self._load(np.broadcast_to(energy_source(xq, yq), xq.shape))

        self.free = dofs.free_indices()
        self._build_pattern()

    # coefficients follow the current pr / ra so continuation can mutate them
    @property
    def nu(self) -> float:
        return self.ratios.viscous_coefficient(self.pr)

    @property
    def c_buoy(self) -> float:
        return self.ratios.buoyancy_coefficient(self.pr, self.ra)

    @property
    def c_rho(self) -> float:
        return self.ratios.rho_ratio

    @property
    def c_alpha(self) -> float:
        return self.ratios.alpha_ratio

    def _load(self, fq):
        return np.bincount(self.dofs.p2_cells.ravel(), weights=self.ed.load(fq).ravel(),
                           minlength=self.dofs.n_p2)

    # sparsity pattern -------------------------------------------------------
    def _block_entries(self):
        """(row, col) index arrays of every element block, in a fixed order."""
        d = self.dofs
        n2, n1 = d.n_p2, d.n_p1
        off = {"u": 0, "v": n2, "t": 2 * n2, "p": 3 * n2}
        lam = 3 * n2 + n1
        c2, c1 = d.p2_cells, d.p1_cells
        out = []

        def block(r_off, r_cells, c_off, c_cells):
            ne, nr, nc = len(r_cells), r_cells.shape[1], c_cells.shape[1]
            r = np.broadcast_to(r_off + r_cells[:, :, None], (ne, nr, nc)).ravel()
            c = np.broadcast_to(c_off + c_cells[:, None, :], (ne, nr, nc)).ravel()
            out.append((r, c))

        for rb, cb in (("u", "u"), ("u", "v"), ("v", "u"), ("v", "v"), ("v", "t"),
                       ("t", "u"), ("t", "v"), ("t", "t")):
            block(off[rb], c2, off[cb], c2)
        block(off["u"], c2, off["p"], c1)
        block(off["v"], c2, off["p"], c1)
        block(off["p"], c1, off["u"], c2)
        block(off["p"], c1, off["v"], c2)
        pidx = np.arange(n1)
        out.append((off["p"] + pidx, np.full(n1, lam)))
        out.append((np.full(n1, lam), off["p"] + pidx))
        return out

    def _build_pattern(self):
        entries = self._block_entries()
        rows = np.concatenate([r for r, _ in entries])
        cols = np.concatenate([c for _, c in entries])
        size = self.dofs.size
        reduced = np.full(size, -1, dtype=np.int64)
        reduced[self.free] = np.arange(len(self.free))
        rr, cc = reduced[rows], reduced[cols]
        keep = (rr >= 0) & (cc >= 0)
        nf = len(self.free)
        key = rr[keep] * nf + cc[keep]
        uniq, inv = np.unique(key, return_inverse=True)
        self._keep = keep
        self._inv = inv
        self._nnz = len(uniq)
        indices = (uniq % nf).astype(np.int32)
        counts = np.bincount(uniq // nf, minlength=nf)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._indices, self._indptr = indices, indptr

        s = self.dofs.slices()
        self.blocks = {}
        for name in BLOCKS:
            sl = s[name]
            self.blocks[name] = np.flatnonzero((self.free >= sl.start) & (self.free < sl.stop))

    # evaluation ---------------------------------------------------------------
    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.dofs.size)
        x[self.dofs.fixed_indices()] = self.dofs.fixed_values()
        return x

    def apply_dirichlet(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[self.dofs.fixed_indices()] = self.dofs.fixed_values()
        return x

    def _fields(self, x):
        if len(x) != self.dofs.size:
            raise DimensionError(f"state has {len(x)} entries, dof map expects {self.dofs.size}")
        s = self.dofs.slices()
        return (x[s["u"]], x[s["v"]], x[s["t"]], x[s["p"]], x[s["multiplier"]][0])

    def full_residual(self, x: np.ndarray) -> np.ndarray:
        u, v, t, p, lam = self._fields(x)
        ed, d = self.ed, self.dofs
        c2, c1 = d.p2_cells, d.p1_cells
        ue, ve, te, pe = u[c2], v[c2], t[c2], p[c1]
        wq = np.stack([ed.values(u), ed.values(v)], axis=-1)

        def adv(coeffs):
            g = ed.gradients(coeffs)
            return ed.load(np.einsum("eqa,eqa->eq", wq, g))

        ku = np.einsum("eij,ej->ei", self.k_loc, ue)
        kv = np.einsum("eij,ej->ei", self.k_loc, ve)
        kt = np.einsum("eij,ej->ei", self.k_loc, te)
        mt = np.einsum("eij,ej->ei", self.m_loc, te)
        bxp = np.einsum("ekj,ek->ej", self.bx_loc, pe)
        byp = np.einsum("ekj,ek->ej", self.by_loc, pe)
        div = np.einsum("ekj,ej->ek", self.bx_loc, ue) + np.einsum("ekj,ej->ek", self.by_loc, ve)

        n2, n1 = d.n_p2, d.n_p1

        def gather(local):
            return np.bincount(c2.ravel(), weights=local.ravel(), minlength=n2)

        r_u = gather(self.nu * ku + adv(u) - self.c_rho * bxp) - self.f_u
        r_v = gather(self.nu * kv + adv(v) - self.c_rho * byp - self.c_buoy * mt) - self.f_v
        r_t = gather(self.c_alpha * kt + adv(t)) - self.f_t
        r_p = -self.c_rho * np.bincount(c1.ravel(), weights=div.ravel(), minlength=n1) + lam * self.mvec
        r_l = np.array([self.mvec @ p])
        return np.concatenate([r_u, r_v, r_t, r_p, r_l])

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.full_residual(x)[self.free]

    def jacobian(self, x: np.ndarray, newton: bool = True) -> sp.csr_matrix:
        """Exact Jacobian (``newton=True``) or the frozen-convection Picard matrix."""
        u, v, t, _, _ = self._fields(x)
        ed = self.ed
        wq = np.stack([ed.values(u), ed.values(v)], axis=-1)
        conv = ed.convection(wq)
        nuk = self.nu * self.k_loc
        zero = np.zeros_like(conv)
        if newton:
            gu, gv, gt = ed.gradients(u), ed.gradients(v), ed.gradients(t)
            uu = nuk + conv + ed.mass(gu[..., 0])
            uv = ed.mass(gu[..., 1])
            vu = ed.mass(gv[..., 0])
            vv = nuk + conv + ed.mass(gv[..., 1])
            tu = ed.mass(gt[..., 0])
            tv = ed.mass(gt[..., 1])
        else:
            uu = vv = nuk + conv
            uv = vu = tu = tv = zero
        vt = -self.c_buoy * self.m_loc
        tt = self.c_alpha * self.k_loc + conv
        bxt = -self.c_rho * np.transpose(self.bx_loc, (0, 2, 1))
        byt = -self.c_rho * np.transpose(self.by_loc, (0, 2, 1))
        values = np.concatenate([
            uu.ravel(), uv.ravel(), vu.ravel(), vv.ravel(), vt.ravel(), tu.ravel(), tv.ravel(),
            tt.ravel(), bxt.ravel(), byt.ravel(),
            (-self.c_rho * self.bx_loc).ravel(), (-self.c_rho * self.by_loc).ravel(),
            self.mvec, self.mvec,
        ])
        data = np.bincount(self._inv, weights=values[self._keep], minlength=self._nnz)
        nf = len(self.free)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(nf, nf))

    def assemble(self, x: np.ndarray, newton: bool = True) -> AssembledSystem:
        return AssembledSystem(self.jacobian(x, newton), self.residual(x), self.free, self.blocks)


def assemble_newton_system(state: SolutionFields, mesh: Mesh, dofs: DofMap, ratios: PropertyRatios,
                           pr: float, ra: float, problem: CoupledProblem | None = None) -> AssembledSystem:
    """Residual and exact Jacobian at ``state`` (Dirichlet values imposed first)."""
    problem = problem or CoupledProblem(mesh, dofs, ratios, pr, ra)
    x = state.pack()
    if len(x) != dofs.size:
        raise DimensionError(f"state has {len(x)} entries, dof map expects {dofs.size}")
    return problem.assemble(problem.apply_dirichlet(x))
