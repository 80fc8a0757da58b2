"""Full-order evaluation of the discrete fractional power ``u_{h,k}(s)``.

Each sinc node requires one reaction-diffusion solve
``(A0 + e^y A1) w = F``; the weighted sum of these solves approximates
``(-Delta_h)^{-s} f``.  The eigen-expansion oracle evaluates the same
quantity mode by mode and is used to cross-check at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import InvalidParameter, SolverFailure
from .sinc import SincGrid, compensated_sum, log_weights, sinc_params

MAX_ABS_Y = 700.0


@dataclass(eq=False)
class FractionalProblem:
    """Assembled system plus the universal sinc grid it is queried on.

    ``cache_factorizations`` keeps one sparse LU per node so repeated
    evaluations for several ``s`` reuse them.  ``solve_count`` counts shifted
    solves performed through this object.
    """

    sys: object
    grid: SincGrid
    solver: linalg.SpdSolver = field(default_factory=linalg.SpdSolver)
    cache_factorizations: bool = False
    solve_count: int = 0
    _lu: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lo, hi = self.grid.domain
        if max(-lo, hi) > MAX_ABS_Y:
            raise InvalidParameter(
                f"sinc domain [{lo}, {hi}] exceeds |y| <= {MAX_ABS_Y}"
            )

    def solve_shifted(self, y: float, rhs=None) -> np.ndarray:
        """Finite element solution ``w_h(y)`` of ``(A0 + e^y A1) w = rhs``."""
        if not math.isfinite(y) or abs(y) > MAX_ABS_Y:
            raise InvalidParameter(f"shift parameter y={y!r} outside |y| <= {MAX_ABS_Y}")
        b = self.sys.F if rhs is None else rhs
        sigma = math.exp(y)
        lu = None
        if self.cache_factorizations and self.solver.resolve(self.sys.n_dofs) == "direct":
            lu = self._lu.get(y)
            if lu is None:
                lu = self._lu[y] = linalg.factorize(self.sys, sigma)
        self.solve_count += 1
        return linalg.solve_spd(self.sys, sigma, b, tol=self.solver.tol,
                                method=self.solver.method, lu=lu)


def solve_shifted(prob: FractionalProblem, y: float, rhs=None) -> np.ndarray:
    return prob.solve_shifted(y, rhs)


def evaluate_full(prob: FractionalProblem, s: float) -> np.ndarray:
    """``u_{h,k}(s)`` from ``M_s + N_s + 1`` full shifted solves."""
    if not (0.0 < s < 1.0):
        raise InvalidParameter(f"fractional power must lie in (0, 1), got {s!r}")
    pos, lw = log_weights(s, prob.grid)
    y = prob.grid.nodes[pos]
    terms = np.empty((pos.size, prob.sys.n_dofs))
    for i, (yl, lwl) in enumerate(zip(y, lw)):
        try:
            w = prob.solve_shifted(float(yl))
        except SolverFailure as exc:
            raise SolverFailure(f"node y={yl}: {exc}", exc.residual) from exc
        terms[i] = math.exp(lwl) * w
    return compensated_sum(terms)


def transfer(s: float, k: float, lam: np.ndarray) -> np.ndarray:
    """Per-eigenvalue quadrature ``Q(lam) ~ lam^{-s}``, summed directly.

    Kept separate from :func:`fracrb.sinc.scalar_sinc` so the oracle and the
    scalar routine share no code path.
    """
    Ms, Ns = sinc_params(s, k)
    lam = np.asarray(lam, dtype=float)
    c = k * math.sin(s * math.pi) / math.pi
    acc = np.zeros_like(lam)
    # ascending |y| from both tails inward keeps small terms first
    for l in sorted(range(-Ms, Ns + 1), key=lambda l: -abs(l)):
        y = l * k
        acc += c * np.exp((1.0 - s) * y) / (np.exp(y) + lam)
    return acc


def evaluate_oracle(prob: FractionalProblem, s: float, eig, exact: bool = False) -> np.ndarray:
    """Mode-by-mode evaluation in the generalized eigenbasis.

    With ``F_i = phi_i . F`` the shifted solution is
    ``sum_i F_i phi_i / (1 + e^y mu_i)``; summing the quadrature gives
    ``sum_i F_i lam_i Q(lam_i) phi_i`` with ``lam_i = 1 / mu_i``.
    ``exact=True`` replaces ``Q`` by the exact power, yielding the
    semi-discrete ``u_h(s)``.
    """
    if not (0.0 < s < 1.0):
        raise InvalidParameter(f"fractional power must lie in (0, 1), got {s!r}")
    prob.grid.window(s)
    fi = eig.Phi.T @ prob.sys.F
    lam = eig.lam
    q = lam ** (1.0 - s) if exact else lam * transfer(s, prob.grid.k, lam)
    return eig.Phi @ (fi * q)


# --------------------------------------------------------------------------
# exact spectral reference on (0, 1) with f = 1


def series_coefficients(s: float, n_terms: int) -> np.ndarray:
    """Coefficients ``lam_m^{-s} f_m`` of the exact solution in the basis
    ``sqrt(2) sin(m pi x)`` for ``f = 1`` on (0, 1), ``m = 1..n_terms``."""
    m = np.arange(1, n_terms + 1, dtype=float)
    fm = math.sqrt(2.0) * (1.0 - np.cos(m * math.pi)) / (m * math.pi)
    return (m * math.pi) ** (-2.0 * s) * fm


def exact_series(s: float, x, n_terms: int = 2000) -> np.ndarray:
    """Truncated eigenfunction series of ``(-Delta)^{-s} 1`` on (0, 1)."""
    x = np.asarray(x, dtype=float)
    coef = series_coefficients(s, n_terms)
    out = np.zeros_like(x)
    for start in range(0, n_terms, 512):
        m = np.arange(start + 1, min(start + 512, n_terms) + 1)
        out += np.sin(np.pi * np.multiply.outer(x, m)) @ coef[m - 1]
    return math.sqrt(2.0) * out


def series_l2_error(s: float, uh, sys, n_terms: int = 2000) -> tuple[float, float]:
    """L2 distance between the P1 field ``uh`` and the ``n_terms`` series.

    Computed exactly (no quadrature) from the sine transform of hat
    functions.  Returns ``(error, tail)`` where ``tail`` bounds the L2 norm of
    the discarded series modes, so the distance to the untruncated solution
    lies within ``error +- tail``.
    """
    mesh = sys.mesh
    if mesh.dim != 1 or mesh.domain != "interval":
        raise InvalidParameter("series reference only exists on the unit interval")
    xv = mesh.vertices[sys.dofmap.interior_vertices, 0]
    hs = np.diff(np.sort(mesh.vertices[:, 0]))
    if not np.allclose(hs, hs[0]):
        raise InvalidParameter("series reference needs a uniform mesh")
    h = hs[0]
    uh = np.asarray(uh, dtype=float)
    coef = series_coefficients(s, n_terms)
    cross = 0.0
    for start in range(0, n_terms, 512):
        m = np.arange(start + 1, min(start + 512, n_terms) + 1, dtype=float)
        w = m * math.pi
        # integral of sqrt(2) sin(m pi x) against the hat at x_j
        hat = (math.sqrt(2.0) * 2.0 * (1.0 - np.cos(w * h)) / (w**2 * h))[:, None] \
            * np.sin(np.multiply.outer(w, xv))
        cross += float(coef[m.astype(int) - 1] @ (hat @ uh))
    sq = float(np.sum(coef**2)) - 2.0 * cross + float(uh @ (sys.A1 @ uh))
    # odd modes only: sum_{m > n} 8 / (m pi)^{2 + 4s}, bounded by the integral
    p = 2.0 + 4.0 * s
    tail = math.sqrt(8.0 / math.pi**p * n_terms ** (1.0 - p) / (p - 1.0))
    return math.sqrt(max(sq, 0.0)), tail
