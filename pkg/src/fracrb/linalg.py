"""Linear algebra for shifted SPD systems, small dense systems and the
generalized eigendecomposition used as a verification oracle."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter, OracleTooLarge, SingularMatrix, SolverFailure

DEFAULT_TOL = 1e-10
# Above this many DOFs the default method switches to Jacobi-preconditioned CG.
DIRECT_THRESHOLD = 50_000
EIGEN_CAP = 5000


@dataclass(frozen=True)
class SpdSolver:
    """Solver settings for ``(A0 + sigma A1) x = b``."""

    method: str = "auto"  # "direct", "cg" or "auto"
    tol: float = DEFAULT_TOL

    def resolve(self, n: int) -> str:
        if self.method == "auto":
            return "direct" if n <= DIRECT_THRESHOLD else "cg"
        if self.method not in ("direct", "cg"):
            raise InvalidParameter(f"unknown solver method {self.method!r}")
        return self.method


def shifted_matrix(sys, sigma: float) -> sp.csr_matrix:
    return (sys.A0 + sigma * sys.A1).tocsr()


def _residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def factorize(sys, sigma: float):
    """Sparse LU of the shifted matrix; reusable for many right-hand sides."""
    return spla.splu(shifted_matrix(sys, sigma).tocsc())


def solve_spd(sys, sigma: float, b, tol: float = DEFAULT_TOL, method: str = "auto",
              lu=None) -> np.ndarray:
    """Solve ``(A0 + sigma A1) x = b`` to relative residual ``tol``.

    Raises
    ------
    SolverFailure
        if the residual contract cannot be met (carries the final residual).
    """
    if not (sigma >= 0.0) or not math.isfinite(sigma):
        raise InvalidParameter(f"shift must be finite and >= 0, got {sigma!r}")
    if not (0.0 < tol <= 1e-4):
        raise InvalidParameter(f"tolerance must lie in (0, 1e-4], got {tol!r}")
    b = np.asarray(b, dtype=float)
    n = sys.n_dofs
    if b.shape != (n,):
        raise InvalidParameter(f"right-hand side of length {n} expected")
    if not np.any(b):
        return np.zeros(n)
    A = shifted_matrix(sys, sigma)
    kind = SpdSolver(method, tol).resolve(n)
    if kind == "direct":
        if lu is None:
            lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        res = _residual(A, x, b)
        if res > tol:
            # one step of iterative refinement
            x = x + lu.solve(b - A @ x)
            res = _residual(A, x, b)
    else:
        x, res = _pcg(A, b, tol, maxiter=10 * n)
    if not (res <= tol):
        raise SolverFailure(f"{kind} solve stalled at relative residual {res:.3e}", res)
    return x


def _pcg(A, b, tol: float, maxiter: int) -> tuple[np.ndarray, float]:
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    x, _ = spla.cg(A, b, rtol=tol * 0.5, atol=0.0, maxiter=maxiter, M=M)
    return x, _residual(A, x, b)


def solve_dense(M, b) -> np.ndarray:
    """Direct solve of a small dense system (LU with partial pivoting)."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidParameter("square matrix expected")
    if M.shape[0] == 0:
        return np.zeros(0)
    try:
        with warnings.catch_warnings():
            # singularity is reported below as SingularMatrix
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularMatrix(str(exc)) from exc
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * max(diag.max(), 1e-300) * M.shape[0]:
        raise SingularMatrix("matrix is numerically singular")
    return sla.lu_solve((lu, piv), b)


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Generalized eigenpairs ``A1 phi = mu A0 phi`` with ``Phi^T A0 Phi = I``.

    ``mu`` is ascending; ``lam = 1 / mu`` are the discrete Laplacian eigenvalues.
    """

    mu: np.ndarray
    Phi: np.ndarray
    A0: sp.csr_matrix

    @property
    def lam(self) -> np.ndarray:
        return 1.0 / self.mu

    def coefficients(self, v) -> np.ndarray:
        """Coordinates of ``v`` in the eigenbasis."""
        return self.Phi.T @ (self.A0 @ v)


def generalized_eigen(sys, cap: int = EIGEN_CAP) -> EigenDecomposition:
    n = sys.n_dofs
    if n > cap:
        raise OracleTooLarge(f"{n} DOFs exceeds the dense eigen-oracle cap {cap}")
    mu, Phi = sla.eigh(sys.A1.toarray(), sys.A0.toarray())
    return EigenDecomposition(mu, Phi, sys.A0)


def inverse_constant(sys) -> float:
    """Numerical inverse-inequality constant ``h * sqrt(max eig(A0, A1))``."""
    h = float(sys.mesh.diameters().max())
    top = spla.eigsh(sys.A0, k=1, M=sys.A1.tocsc(), which="LM",
                     return_eigenvectors=False)[0] if sys.n_dofs > 2 else \
        sla.eigh(sys.A0.toarray(), sys.A1.toarray(), eigvals_only=True)[-1]
    return h * math.sqrt(top)
