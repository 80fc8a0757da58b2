"""Weak-greedy reduced basis for the shifted problems ``(A0 + e^y A1) w = F``.

One basis is built over the universal parameter interval ``[-Mk, Nk]`` and
then reused for every fractional power in ``[s_min, s_max]``.

The residual dual norm is evaluated online without touching full-size
vectors.  Its Riesz representer is

    z(y) = A0^{-1} F - B c - e^y A0^{-1} A1 B c,

a linear combination of the vectors ``[A0^{-1}F, b_1, A0^{-1}A1 b_1, b_2, ...]``.
Offline these are orthonormalized in the A0 inner product, giving an upper
triangular coefficient matrix ``R``; online the dual norm is simply
``||R x||_2`` for the combination weights ``x``.  This avoids the round-off
floor of the expanded quadratic form.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import BasisFormatError, InvalidParameter
from .fractional import FractionalProblem
from .sinc import SincGrid, compensated_sum, log_weights

log = logging.getLogger(__name__)

MAGIC = b"FLRB"
FORMAT_VERSION = 1
DROP_RATIO = 1e-12
THETA_EXACT_CAP = 500
# Relative round-off floor (times ||f||) of the offline-decomposed estimator.
ESTIMATOR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Sorted training parameters inside the universal interval."""

    points: np.ndarray
    kind: str = "explicit"  # "uniform", "random" or "explicit"
    seed: int = 0
    lo: float = float("nan")
    hi: float = float("nan")

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.size == 0:
            raise InvalidParameter("training set is empty")
        if np.any(np.diff(p) < 0):
            raise InvalidParameter("training set must be sorted ascending")
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, grid: SincGrid, count: int = 10_000) -> "TrainingSet":
        lo, hi = grid.domain
        return cls(np.linspace(lo, hi, count), "uniform", 0, lo, hi)

    @classmethod
    def random(cls, grid: SincGrid, count: int, seed: int) -> "TrainingSet":
        lo, hi = grid.domain
        rng = np.random.default_rng(seed)
        return cls(np.sort(rng.uniform(lo, hi, count)), "random", seed, lo, hi)

    @classmethod
    def explicit(cls, points) -> "TrainingSet":
        p = np.sort(np.asarray(points, dtype=float))
        return cls(p, "explicit", 0, float(p[0]), float(p[-1]))

    def check_within(self, grid: SincGrid) -> None:
        lo, hi = grid.domain
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if self.points[0] < lo - tol or self.points[-1] > hi + tol:
            raise InvalidParameter("training points outside the universal domain")


@dataclass(frozen=True)
class GreedyStep:
    n: int
    y: float
    estimator_max: float
    error_max: float = float("nan")


@dataclass(eq=False)
class ReducedBasis:
    """A0-orthonormal reduced basis with offline estimator data.

    ``R`` is the ``(1 + 2n) x (1 + 2n)`` upper triangular coefficient matrix of
    the Riesz vectors (see module docstring).  Leading blocks of every array
    describe the nested bases of smaller size, so :meth:`truncate` is a slice.
    """

    selected_y: np.ndarray
    B: np.ndarray
    A1r: np.ndarray
    Fr: np.ndarray
    R: np.ndarray
    training: TrainingSet
    grid: SincGrid
    poincare: float
    trace: list = field(default_factory=list)
    stagnated: bool = False

    @property
    def n(self) -> int:
        return self.selected_y.size

    @property
    def n_dofs(self) -> int:
        return self.B.shape[0]

    @property
    def A0r(self) -> np.ndarray:
        return np.eye(self.n)

    @property
    def gamma(self) -> float:
        """Weak-greedy constant ``(1 + C_P^2 e^{Nk})^{-1}``."""
        return 1.0 / (1.0 + self.poincare**2 * math.exp(self.grid.N * self.grid.k))

    @property
    def gamma_linear(self) -> float:
        """Same constant with ``C_P`` instead of ``C_P^2`` (diagnostics only)."""
        return 1.0 / (1.0 + self.poincare * math.exp(self.grid.N * self.grid.k))

    def truncate(self, n: int) -> "ReducedBasis":
        if not (0 <= n <= self.n):
            raise InvalidParameter(f"cannot truncate a size-{self.n} basis to {n}")
        m = 1 + 2 * n
        return ReducedBasis(
            self.selected_y[:n].copy(), self.B[:, :n].copy(),
            self.A1r[:n, :n].copy(), self.Fr[:n].copy(), self.R[:m, :m].copy(),
            self.training, self.grid, self.poincare, self.trace[:n], False,
        )

    def lift(self, c) -> np.ndarray:
        return self.B @ c

    # -- batched online kernels --------------------------------------------

    def coefficients(self, ys) -> np.ndarray:
        """Galerkin coefficients for many parameters at once, shape (n, len(ys)).

        Uses the eigendecomposition of ``A1r`` (``A0r`` is the identity).
        """
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if self.n == 0:
            return np.zeros((0, ys.size))
        d, V = np.linalg.eigh(self.A1r)
        g = V.T @ self.Fr
        return V @ (g[:, None] / (1.0 + np.exp(ys)[None, :] * d[:, None]))

    def estimator(self, ys, C=None) -> np.ndarray:
        """Residual dual norms for many parameters (offline-decomposed)."""
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if C is None:
            C = self.coefficients(ys)
        X = np.empty((1 + 2 * self.n, ys.size))
        X[0] = 1.0
        X[1::2] = -C
        X[2::2] = -np.exp(ys)[None, :] * C
        return np.linalg.norm(self.R @ X, axis=0)


def rb_solve(rb: ReducedBasis, y: float) -> np.ndarray:
    """Reduced Galerkin coefficients at parameter ``y`` (dense n x n solve)."""
    lo, hi = rb.grid.domain
    if not (lo - 1e-12 <= y <= hi + 1e-12):
        raise InvalidParameter(f"y={y} outside the universal domain [{lo}, {hi}]")
    return linalg.solve_dense(rb.A0r + math.exp(y) * rb.A1r, rb.Fr)


def residual_dual_norm(rb: ReducedBasis, sys, y: float, c, direct: bool = False) -> float:
    """Dual norm of ``F - (A0 + e^y A1) B c`` with respect to the H^1_0 norm.

    ``direct=True`` forms the full residual and applies ``A0^{-1}``; otherwise
    only the precomputed reduced quantities are used.
    """
    c = np.asarray(c, dtype=float)
    if not direct:
        return float(rb.estimator([y], c[:, None])[0])
    rho = sys.F - (sys.A0 @ (rb.B @ c) + math.exp(y) * (sys.A1 @ (rb.B @ c)))
    z = sys.a0_solver().solve(rho)
    return math.sqrt(max(float(rho @ z), 0.0))


# --------------------------------------------------------------------------
# offline construction


class _Builder:
    """Incremental basis plus the A0-orthonormal Riesz frame ``Q``."""

    def __init__(self, sys, grid: SincGrid, training: TrainingSet, poincare: float):
        self.sys = sys
        self.grid = grid
        self.training = training
        self.poincare = poincare
        self.lu0 = sys.a0_solver()
        self.B = np.zeros((sys.n_dofs, 0))
        self.Q = np.zeros((sys.n_dofs, 0))
        self.R = np.zeros((0, 0))
        self.ys: list[float] = []
        self._append_riesz(self.lu0.solve(sys.F))

    def _a0_orthogonalize(self, v: np.ndarray, basis: np.ndarray):
        A0 = self.sys.A0
        pre = math.sqrt(max(float(v @ (A0 @ v)), 0.0))
        coef = np.zeros(basis.shape[1])
        for _ in range(2):
            r = basis.T @ (A0 @ v)
            v = v - basis @ r
            coef += r
        post = math.sqrt(max(float(v @ (A0 @ v)), 0.0))
        return v, coef, pre, post

    def _append_riesz(self, v: np.ndarray) -> None:
        v, coef, pre, post = self._a0_orthogonalize(v, self.Q)
        m = self.R.shape[0]
        R = np.zeros((m + 1, m + 1))
        R[:m, :m] = self.R
        # row j of R belongs to the j-th processed vector; a dependent vector
        # leaves its row zero and adds no frame vector
        R[_rows_of_q(self.R), m] = coef
        if post > DROP_RATIO * max(pre, 1e-300):
            self.Q = np.column_stack([self.Q, v / post])
            R[m, m] = post
        self.R = R

    def add(self, y: float, w: np.ndarray) -> bool:
        """Orthonormalize snapshot ``w`` into the basis; False if dependent."""
        v, _, pre, post = self._a0_orthogonalize(w, self.B)
        if post <= DROP_RATIO * max(pre, 1e-300):
            return False
        b = v / post
        self.B = np.column_stack([self.B, b])
        self.ys.append(float(y))
        self._append_riesz(b)
        self._append_riesz(self.lu0.solve(self.sys.A1 @ b))
        return True

    def basis(self, trace, stagnated) -> ReducedBasis:
        B = self.B
        return ReducedBasis(
            np.array(self.ys), B.copy(), B.T @ (self.sys.A1 @ B), B.T @ self.sys.F,
            self.R.copy(), self.training, self.grid, self.poincare, list(trace), stagnated,
        )


def _rows_of_q(R: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.diag(R) != 0)


def greedy_build(sys, grid: SincGrid, theta: TrainingSet | None = None, eps: float = 1e-8,
                 n_max: int = 60, prob: FractionalProblem | None = None,
                 selector=None) -> ReducedBasis:
    """Weak-greedy basis: select the training point with the largest residual
    dual norm until it drops to ``eps * ||f||`` or ``n_max`` is reached.

    ``selector(rb, est)`` may override the choice; it returns the index of the
    next training point and the selection score (used by the true-error
    variant).
    """
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if n_max < 1:
        raise InvalidParameter("n_max must be >= 1")
    theta = TrainingSet.uniform(grid) if theta is None else theta
    theta.check_within(grid)
    prob = FractionalProblem(sys, grid) if prob is None else prob
    b = _Builder(sys, grid, theta, sys.poincare)
    target = eps * sys.f_norm
    trace: list[GreedyStep] = []
    stagnated = False
    y_next, err_prev = 0.0, float("nan")
    while True:
        if not b.add(y_next, prob.solve_shifted(y_next)):
            stagnated = True
            log.info("greedy stagnated: snapshot at y=%g is linearly dependent", y_next)
            break
        rb = b.basis(trace, False)
        est = rb.estimator(theta.points)
        i_est = int(np.argmax(est))
        if selector is None:
            i_next, err = i_est, float("nan")
        else:
            i_next, err = selector(rb, est)
        trace.append(GreedyStep(rb.n, y_next, float(est[i_est]), err))
        score = est[i_est] if selector is None else err
        log.debug("n=%d y=%g estimator max %.3e", rb.n, y_next, est[i_est])
        if score <= target or rb.n >= n_max:
            break
        y_next = float(theta.points[i_next])
    return b.basis(trace, stagnated)


def greedy_build_exact(sys, grid: SincGrid, theta: TrainingSet | None = None,
                       eps: float = 1e-8, n_max: int = 60,
                       prob: FractionalProblem | None = None) -> ReducedBasis:
    """Strong greedy: select by the true H^1_0 error over the training set.

    Every training snapshot is computed by a full solve, so the training set
    is capped at 500 points.
    """
    if theta is None:
        lo, hi = grid.domain
        theta = TrainingSet(np.linspace(lo, hi, THETA_EXACT_CAP), "uniform", 0, lo, hi)
    if theta.points.size > THETA_EXACT_CAP:
        raise InvalidParameter(f"exact greedy is limited to {THETA_EXACT_CAP} training points")
    prob = FractionalProblem(sys, grid) if prob is None else prob
    W = np.column_stack([prob.solve_shifted(float(y)) for y in theta.points])

    def select(rb, est):
        err = true_errors(rb, sys, theta.points, W)
        i = int(np.argmax(err))
        return i, float(err[i])

    return greedy_build(sys, grid, theta, eps, n_max, prob, selector=select)


def true_errors(rb: ReducedBasis, sys, ys, W) -> np.ndarray:
    """H^1_0 errors ``||w_h(y) - B c(y)||`` given full snapshots ``W``."""
    E = W - rb.B @ rb.coefficients(ys)
    return np.sqrt(np.maximum(np.einsum("ij,ij->j", E, sys.A0 @ E), 0.0))


def error_norm(rb: ReducedBasis, sys, y: float, c, prob: FractionalProblem) -> float:
    """H^1_0 norm of ``w_h(y) - B c`` from the error equation
    ``(A0 + e^y A1) e = F - (A0 + e^y A1) B c``.

    Same quantity as the snapshot difference but free of the cancellation
    between two O(1) fields, so it stays accurate when the error is small.
    """
    v = rb.B @ np.asarray(c, dtype=float)
    rho = sys.F - (sys.A0 @ v + math.exp(y) * (sys.A1 @ v))
    e = prob.solve_shifted(float(y), rho)
    return math.sqrt(max(float(e @ (sys.A0 @ e)), 0.0))


def error_norms(rb: ReducedBasis, sys, ys, prob: FractionalProblem) -> np.ndarray:
    """:func:`error_norm` for many parameters (batched reduced solves)."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    C = rb.coefficients(ys)
    return np.array([error_norm(rb, sys, float(y), C[:, j], prob) for j, y in enumerate(ys)])


def evaluate_rb(rb: ReducedBasis, grid: SincGrid, s: float) -> np.ndarray:
    """Online ``u^n_{h,k}(s)``: reduced solves at every node, one lift."""
    lo, hi = rb.grid.domain
    glo, ghi = grid.domain
    if glo < lo - 1e-12 or ghi > hi + 1e-12:
        raise InvalidParameter("quadrature grid exceeds the basis parameter domain")
    pos, lw = log_weights(s, grid)
    y = grid.nodes[pos]
    C = rb.coefficients(y)
    combo = compensated_sum((C * np.exp(lw)[None, :]).T)
    return rb.B @ combo


# --------------------------------------------------------------------------
# persistence

_KINDS = {"uniform": 0, "random": 1, "explicit": 2}


def _pack_f64(a) -> bytes:
    return np.ascontiguousarray(np.asarray(a, dtype="<f8")).tobytes()


def dumps_basis(rb: ReducedBasis) -> bytes:
    n, nh = rb.n, rb.n_dofs
    t = rb.training
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<QQ", nh, n),
        _pack_f64(rb.selected_y),
        _pack_f64(rb.B.T),  # column-major
        _pack_f64(rb.A1r.T),
        _pack_f64(rb.Fr),
        _pack_f64(rb.R.T),
        struct.pack("<QQQdd", _KINDS[t.kind], t.points.size, t.seed, t.lo, t.hi),
    ]
    if t.kind == "explicit":
        parts.append(_pack_f64(t.points))
    parts += [
        struct.pack("<dQQ", rb.grid.k, rb.grid.M, rb.grid.N),
        struct.pack("<dd", rb.poincare, rb.gamma),
    ]
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_basis(rb: ReducedBasis, path) -> None:
    Path(path).write_bytes(dumps_basis(rb))


def loads_basis(data: bytes) -> ReducedBasis:
    if len(data) < 4 + 4 + 16 + 4:
        raise BasisFormatError("truncated basis file")
    if data[:4] != MAGIC:
        raise BasisFormatError("not a basis file (bad magic)")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise BasisFormatError(f"unsupported basis format version {version}")
    if zlib.crc32(payload) != crc:
        raise BasisFormatError("checksum mismatch: basis file is corrupted")
    off = 8

    def take(fmt):
        nonlocal off
        try:
            vals = struct.unpack_from(fmt, payload, off)
        except struct.error as exc:
            raise BasisFormatError("truncated basis file") from exc
        off += struct.calcsize(fmt)
        return vals

    def arr(count, shape=None):
        nonlocal off
        nbytes = 8 * count
        if off + nbytes > len(payload):
            raise BasisFormatError("truncated basis file")
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=off).astype(float)
        off += nbytes
        return a if shape is None else a.reshape(shape[::-1]).T.copy()

    nh, n = take("<QQ")
    m = 1 + 2 * n
    ys = arr(n)
    B = arr(nh * n, (nh, n))
    A1r = arr(n * n, (n, n))
    Fr = arr(n)
    R = arr(m * m, (m, m))
    kind_code, count, seed, lo, hi = take("<QQQdd")
    kind = {v: k for k, v in _KINDS.items()}.get(kind_code)
    if kind is None:
        raise BasisFormatError(f"unknown training-set kind {kind_code}")
    if kind == "explicit":
        pts = arr(int(count))
    elif kind == "uniform":
        pts = np.linspace(lo, hi, int(count))
    else:
        pts = np.sort(np.random.default_rng(int(seed)).uniform(lo, hi, int(count)))
    k, M, N = take("<dQQ")
    cp, gamma = take("<dd")
    try:
        grid = SincGrid(k, int(M), int(N))
    except InvalidParameter as exc:
        raise BasisFormatError(f"invalid quadrature grid record: {exc}") from exc
    if off != len(payload):
        raise BasisFormatError("unexpected trailing bytes in basis file")
    training = TrainingSet(pts, kind, int(seed), lo, hi)
    rb = ReducedBasis(ys, B, A1r, Fr, R, training, grid, cp)
    if not math.isclose(rb.gamma, gamma, rel_tol=0.0, abs_tol=0.0) and not (
        math.isnan(gamma) and math.isnan(rb.gamma)
    ):
        raise BasisFormatError("stored weak-greedy constant is inconsistent")
    return rb


def load_basis(path) -> ReducedBasis:
    return loads_basis(Path(path).read_bytes())
