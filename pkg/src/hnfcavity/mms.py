"""Manufactured-solution convergence studies on the unit square.

Exact fields are closed-form sympy expressions; the forcings are the exact
residuals of the momentum and energy equations, derived symbolically.
The discrete problem is solved with the exact fields as Dirichlet data and
the errors are integrated with a high-order rule.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import sympy as sym

from .fem import DofMap, ElementData, enumerate_dofs
from .mesh import GeometrySpec, Mesh, Shape, build_mesh, uniform_refine
from .properties import CLEAR_FLUID, PropertyRatios
from .solver import NonConvergence, SolverConfig, solve_stationary
from .system import CoupledProblem, SolutionFields

X, Y = sym.symbols("x y", real=True)

# Pr = 1 with Ra in {10, 100}: the regime where the harness is known to converge
ADMISSIBLE_PR = (1.0,)
ADMISSIBLE_RA = (0.0, 10.0, 100.0)


class InadmissibleParameters(ValueError):
    pass


def _numeric(expr):
    f = sym.lambdify((X, Y), expr, "numpy")
    return lambda x, y: np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x))


@dataclass
class ManufacturedCase:
    name: str
    u: sym.Expr
    v: sym.Expr
    p: sym.Expr
    t: sym.Expr
    _cache: dict = field(default_factory=dict, repr=False)

    def divergence(self) -> sym.Expr:
        return sym.simplify(sym.diff(self.u, X) + sym.diff(self.v, Y))

    def forcing_expressions(self, ratios: PropertyRatios, pr: float, ra: float):
        nu = ratios.viscous_coefficient(pr)
        cb = ratios.buoyancy_coefficient(pr, ra)
        cr, ca = ratios.rho_ratio, ratios.alpha_ratio
        u, v, p, t = self.u, self.v, self.p, self.t

        def lap(f):
            return sym.diff(f, X, 2) + sym.diff(f, Y, 2)

        def adv(f):
            return u * sym.diff(f, X) + v * sym.diff(f, Y)

        fx = -nu * lap(u) + adv(u) + cr * sym.diff(p, X)
        fy = -nu * lap(v) + adv(v) + cr * sym.diff(p, Y) - cb * t
        ft = -ca * lap(t) + adv(t)
        return fx, fy, ft

    def sources(self, ratios: PropertyRatios, pr: float, ra: float):
        """``(momentum_source, energy_source)`` callables for :class:`CoupledProblem`."""
        fx, fy, ft = (_numeric(e) for e in self.forcing_expressions(ratios, pr, ra))
        return (lambda x, y: (fx(x, y), fy(x, y))), ft

    def functions(self):
        if "f" not in self._cache:
            self._cache["f"] = {k: _numeric(getattr(self, k)) for k in ("u", "v", "p", "t")}
            self._cache["grad"] = {
                k: (_numeric(sym.diff(getattr(self, k), X)), _numeric(sym.diff(getattr(self, k), Y)))
                for k in ("u", "v", "t")}
        return self._cache["f"], self._cache["grad"]

    def boundary_values(self):
        f, _ = self.functions()
        return f["u"], f["v"], f["t"]


def zero_case() -> ManufacturedCase:
    z = sym.Integer(0)
    return ManufacturedCase("zero", z, z, z, z)


def polynomial_case() -> ManufacturedCase:
    """Fields inside the discrete spaces: quadratic velocity and temperature, linear pressure."""
    return ManufacturedCase("polynomial", X**2, -2 * X * Y, X - sym.Rational(1, 2),
                            X**2 - Y**2 + X * Y)


def trigonometric_case() -> ManufacturedCase:
    """Velocity is the curl of ``sin^2(pi x) sin^2(pi y)``, so it vanishes to
    second order on the boundary; pressure has zero mean and T = 0 on the
    boundary."""
    pi = sym.pi
    stream = sym.sin(pi * X) ** 2 * sym.sin(pi * Y) ** 2
    return ManufacturedCase("trigonometric", sym.diff(stream, Y), -sym.diff(stream, X),
                            sym.cos(pi * X) * sym.cos(pi * Y), sym.sin(pi * X) * sym.sin(pi * Y))


CASES = {"zero": zero_case, "polynomial": polynomial_case, "trigonometric": trigonometric_case}


@dataclass
class ConvergenceReport:
    case: str
    h: list[float] = field(default_factory=list)
    err_u_h1: list[float] = field(default_factory=list)
    err_t_h1: list[float] = field(default_factory=list)
    err_p_l2: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    complete: bool = True

    def rates(self, last: int = 3) -> dict[str, float]:
        return {name: fit_rate(self.h, getattr(self, name), last)
                for name in ("err_u_h1", "err_t_h1", "err_p_l2")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "err_u_h1", "err_T_h1", "err_p_l2"])
        for row in zip(self.h, self.err_u_h1, self.err_t_h1, self.err_p_l2):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()

    def summary(self) -> str:
        r = self.rates()
        return (f"{self.case}: rate_u_h1={r['err_u_h1']:.4f} rate_T_h1={r['err_t_h1']:.4f} "
                f"rate_p_l2={r['err_p_l2']:.4f} levels={len(self.h)}")


def fit_rate(h, err, last: int = 3) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)`` over the last points."""
    h = np.asarray(h[-last:], dtype=float)
    e = np.asarray(err[-last:], dtype=float)
    if len(h) < 2 or np.any(e <= 0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def discretization_errors(case: ManufacturedCase, solution: SolutionFields, mesh: Mesh,
                          dofs: DofMap, degree: int = 7) -> tuple[float, float, float]:
    """``(|u - u_h|_1, |T - T_h|_1, ||p - p_h||_0)`` by quadrature of ``degree``."""
    ed = ElementData(mesh, dofs, degree)
    f, grad = case.functions()
    xq, yq = ed.qpoints[..., 0], ed.qpoints[..., 1]

    def h1_sq(name, coeffs):
        g = ed.gradients(coeffs)
        gx, gy = grad[name]
        return float(np.sum(ed.wdet * ((gx(xq, yq) - g[..., 0]) ** 2 + (gy(xq, yq) - g[..., 1]) ** 2)))

    eu = np.sqrt(h1_sq("u", solution.u) + h1_sq("v", solution.v))
    et = np.sqrt(h1_sq("t", solution.t))
    ph = solution.p[dofs.p1_cells] @ ed.psi.T
    ep = np.sqrt(float(np.sum(ed.wdet * (f["p"](xq, yq) - ph) ** 2)))
    return float(eu), float(et), float(ep)


def unit_square_family(n0: int, levels: int) -> list[Mesh]:
    meshes = [build_mesh(GeometrySpec(Shape.SQUARE), n0)]
    for _ in range(levels - 1):
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


def mms_dofs(case: ManufacturedCase, mesh: Mesh) -> DofMap:
    return enumerate_dofs(mesh, temperature_dirichlet="boundary", boundary_values=case.boundary_values())


def check_admissible(pr: float, ra: float) -> None:
    if pr not in ADMISSIBLE_PR or ra not in ADMISSIBLE_RA:
        raise InadmissibleParameters(
            f"(Pr={pr:g}, Ra={ra:g}) is outside the verified regime Pr in {ADMISSIBLE_PR}, "
            f"Ra in {ADMISSIBLE_RA}; pass strict=False to try anyway")


def run_mms_study(case: ManufacturedCase, levels: int = 4, pr: float = 1.0, ra: float = 100.0,
                  ratios: PropertyRatios = CLEAR_FLUID, n0: int = 8, error_degree: int = 7,
                  config: SolverConfig | None = None, strict: bool = True) -> ConvergenceReport:
    """Solve on ``levels`` uniformly refined unit-square meshes and measure errors.

    The coarsest mesh has ``n0 x n0`` cells, so ``h = 1/n0, 1/(2 n0), ...``.
    On non-convergence the partial report is attached to the raised
    :class:`NonConvergence` as ``exc.partial``.
    """
    if levels < 3:
        raise ValueError("at least three levels are needed to fit a rate")
    if strict:
        check_admissible(pr, ra)
    # tight tolerance so that in-space cases reach round-off, not the Newton floor
    config = config or SolverConfig(tolerance=1e-10, continuation=[ra])
    report = ConvergenceReport(case.name)
    m_src, e_src = case.sources(ratios, pr, ra)
    for mesh in unit_square_family(n0, levels):
        dofs = mms_dofs(case, mesh)
        try:
            sol, rep = solve_stationary(mesh, dofs, ratios, pr, ra, config,
                                        momentum_source=m_src, energy_source=e_src)
        except NonConvergence as exc:
            report.complete = False
            exc.partial = report
            raise
        report.h.append(1.0 / mesh.resolution)
        report.iterations.append(rep.total_iterations)
        eu, et, ep = discretization_errors(case, sol, mesh, dofs, error_degree)
        report.err_u_h1.append(eu)
        report.err_t_h1.append(et)
        report.err_p_l2.append(ep)
    return report


def interpolate_exact(case: ManufacturedCase, dofs: DofMap) -> SolutionFields:
    f, _ = case.functions()
    x, y = dofs.p2_coords[:, 0], dofs.p2_coords[:, 1]
    xv, yv = x[:dofs.n_vertices], y[:dofs.n_vertices]
    return SolutionFields(f["u"](x, y).copy(), f["v"](x, y).copy(), f["t"](x, y).copy(),
                          f["p"](xv, yv).copy(), 0.0)


def residual_of_exact(case: ManufacturedCase, mesh: Mesh, dofs: DofMap, ratios: PropertyRatios = CLEAR_FLUID,
                      pr: float = 1.0, ra: float = 100.0) -> float:
    """Euclidean norm of the forced discrete residual at the interpolated exact fields."""
    m_src, e_src = case.sources(ratios, pr, ra)
    problem = CoupledProblem(mesh, dofs, ratios, pr, ra, m_src, e_src)
    x = problem.apply_dirichlet(interpolate_exact(case, dofs).pack())
    return float(np.linalg.norm(problem.residual(x)))
