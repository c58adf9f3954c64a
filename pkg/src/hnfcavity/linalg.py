"""Sparse direct solves with iterative refinement.

Backends, in order of preference for ``backend="auto"``:

``pardiso``  MKL PARDISO through :mod:`pypardiso` (optional)
``umfpack``  UMFPACK bundled with :mod:`cvxopt`
``superlu``  :func:`scipy.sparse.linalg.splu` (slow on large saddle-point systems)
"""
from __future__ import annotations

import glob
import os
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

RTOL = 1e-10
_MAX_REFINE = 6


class SingularLinearSystem(RuntimeError):
    pass


def _find_mkl_rt():
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    roots = [sys.prefix, os.path.join(sys.prefix, "local"), "/usr/local", "/usr"]
    for root in roots:
        hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def available_backends() -> list[str]:
    out = []
    try:
        _find_mkl_rt()
        import pypardiso  # noqa: F401
        out.append("pardiso")
    except (ImportError, OSError):
        pass
    try:
        from cvxopt import umfpack  # noqa: F401
        out.append("umfpack")
    except ImportError:
        pass
    out.append("superlu")
    return out


_AVAILABLE: list[str] | None = None


def default_backend() -> str:
    global _AVAILABLE
    if _AVAILABLE is None:
        _AVAILABLE = available_backends()
    env = os.environ.get("HNFCAVITY_LINEAR_BACKEND")
    if env:
        if env not in _AVAILABLE:
            raise ValueError(f"linear backend {env!r} unavailable (have {_AVAILABLE})")
        return env
    return _AVAILABLE[0]


class Factorization:
    """LU factors of a square sparse matrix; ``solve`` refines iteratively."""

    def __init__(self, matrix, backend: str = "auto"):
        a = sp.csr_matrix(matrix)
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if not np.all(np.isfinite(a.data)):
            raise SingularLinearSystem("matrix has non-finite entries")
        self.matrix = a
        self._release = None
        self.backend = default_backend() if backend == "auto" else backend
        try:
            self._solve = getattr(self, f"_factor_{self.backend}")(a)
        except (RuntimeError, ArithmeticError, ValueError) as exc:
            raise SingularLinearSystem(f"{self.backend} factorization failed: {exc}") from exc

    def _factor_pardiso(self, a):
        import pypardiso

        solver = pypardiso.PyPardisoSolver()
        solver.set_iparm(8, 0)  # refinement is done here, uniformly across backends
        a = a.astype(np.float64)
        a.sort_indices()
        solver.factorize(a)
        self._release = lambda: solver.free_memory(everything=True)
        return lambda b: solver.solve(a, b)

    def _factor_umfpack(self, a):
        from cvxopt import matrix, spmatrix, umfpack

        c = a.tocoo()
        m = spmatrix(c.data.tolist(), c.row.tolist(), c.col.tolist(), c.shape)
        numeric = umfpack.numeric(m, umfpack.symbolic(m))

        def solve(b):
            x = matrix(np.asarray(b, dtype=float))
            umfpack.solve(m, numeric, x)
            return np.array(x).ravel()

        return solve

    def _factor_superlu(self, a):
        lu = sla.splu(a.tocsc(), permc_spec="MMD_AT_PLUS_A")
        return lu.solve

    def close(self):
        """Release solver-held memory (PARDISO keeps factors until told)."""
        if self._release is not None:
            self._release()
            self._release = None
        self._solve = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def solve(self, b: np.ndarray, rtol: float = RTOL) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        x = self._solve(b)
        for _ in range(_MAX_REFINE):
            r = b - self.matrix @ x
            if not np.all(np.isfinite(r)):
                break
            if np.linalg.norm(r) <= 0.1 * rtol * bnorm:
                break
            x = x + self._solve(r)
        rel = np.linalg.norm(b - self.matrix @ x) / bnorm
        if not np.isfinite(rel) or rel > rtol:
            raise SingularLinearSystem(f"relative residual {rel:.3e} exceeds {rtol:.1e} ({self.backend})")
        return x


def solve_sparse(matrix, rhs, backend: str = "auto", rtol: float = RTOL) -> np.ndarray:
    with Factorization(matrix, backend) as lu:
        return lu.solve(rhs, rtol)


def linear_solve(system, backend: str = "auto") -> np.ndarray:
    """Solve ``jacobian @ delta = residual`` for an assembled system."""
    return solve_sparse(system.jacobian, system.residual, backend)
