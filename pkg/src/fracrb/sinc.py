"""Sinc quadrature for the log-substituted integral representation of lambda^{-s}.

The fractional power is approximated by

    lambda^{-s} ~ (k sin(s pi) / pi) * sum_{l=-M}^{N} e^{(1-s) y_l} / (e^{y_l} + lambda)

with nodes ``y_l = l k``.  Per-s truncation windows are sub-windows of a
universal grid so full-order snapshots can be shared across fractional powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter


def _check_s(s: float) -> None:
    if not (0.0 < s < 1.0):
        raise InvalidParameter(f"fractional power must lie in (0, 1), got {s!r}")


def _check_k(k: float) -> None:
    if not (k > 0.0) or not math.isfinite(k):
        raise InvalidParameter(f"quadrature step must be positive, got {k!r}")


def sinc_params(s: float, k: float) -> tuple[int, int]:
    """Truncation counts ``(M_s, N_s)`` balancing the quadrature error."""
    _check_s(s)
    _check_k(k)
    c = math.pi**2 / k**2
    return math.ceil(c / (1.0 - s)), math.ceil(c / s)


def universal_params(s_min: float, s_max: float, k: float) -> tuple[int, int]:
    """Counts ``(M, N)`` whose window covers every ``s`` in ``[s_min, s_max]``."""
    _check_s(s_min)
    _check_s(s_max)
    if s_min > s_max:
        raise InvalidParameter(f"empty range [{s_min}, {s_max}]")
    _check_k(k)
    c = math.pi**2 / k**2
    return math.ceil(c / (1.0 - s_max)), math.ceil(c / s_min)


@dataclass(frozen=True)
class SincGrid:
    k: float
    M: int
    N: int

    def __post_init__(self):
        _check_k(self.k)
        if self.M < 1 or self.N < 1:
            raise InvalidParameter("truncation counts must be >= 1")

    @classmethod
    def for_power(cls, s: float, k: float) -> "SincGrid":
        return cls(k, *sinc_params(s, k))

    @classmethod
    def universal(cls, s_min: float, s_max: float, k: float) -> "SincGrid":
        return cls(k, *universal_params(s_min, s_max, k))

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.M, self.N + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.indices * self.k

    @property
    def size(self) -> int:
        return self.M + self.N + 1

    @property
    def domain(self) -> tuple[float, float]:
        return -self.M * self.k, self.N * self.k

    def window(self, s: float) -> np.ndarray:
        """Positions (into ``nodes``) of the per-s truncation window."""
        Ms, Ns = sinc_params(s, self.k)
        if Ms > self.M or Ns > self.N:
            raise InvalidParameter(
                f"grid (M={self.M}, N={self.N}) does not cover s={s} "
                f"(needs M={Ms}, N={Ns})"
            )
        return np.arange(self.M - Ms, self.M + Ns + 1)


def log_weights(s: float, grid: SincGrid) -> tuple[np.ndarray, np.ndarray]:
    """Window positions and natural logs of the quadrature weights."""
    pos = grid.window(s)
    y = grid.nodes[pos]
    base = math.log(grid.k * math.sin(s * math.pi) / math.pi)
    return pos, base + (1.0 - s) * y


def weights(s: float, grid: SincGrid) -> tuple[np.ndarray, np.ndarray]:
    """Window positions into ``grid.nodes`` and the matching weights
    ``(k sin(s pi) / pi) e^{(1-s) y_l}``."""
    pos, lw = log_weights(s, grid)
    return pos, np.exp(lw)


def scalar_sinc(s: float, k: float, lam) -> np.ndarray | float:
    """Quadrature approximation of ``lam ** -s`` (scalar resolvent transfer)."""
    _check_s(s)
    _check_k(k)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(~(lam_arr > 0.0)):
        raise InvalidParameter("lambda must be positive")
    grid = SincGrid.for_power(s, k)
    _, lw = log_weights(s, grid)
    y = grid.nodes
    log_lam = np.log(lam_arr)[..., None]
    # e^{lw} / (e^y + lam) evaluated in log space
    terms = np.exp(lw - np.logaddexp(y, log_lam))
    out = np.sort(terms, axis=-1).sum(axis=-1)
    return float(out) if np.ndim(lam) == 0 else out


def compensated_sum(terms: np.ndarray) -> np.ndarray:
    """Neumaier-compensated sum over axis 0, taking rows in ascending norm."""
    terms = np.asarray(terms, dtype=float)
    if terms.shape[0] == 0:
        return np.zeros(terms.shape[1:])
    flat = terms.reshape(terms.shape[0], -1)
    order = np.argsort(np.max(np.abs(flat), axis=1), kind="stable")
    total = np.zeros(flat.shape[1])
    comp = np.zeros(flat.shape[1])
    for i in order:
        t = flat[i]
        s = total + t
        big = np.abs(total) >= np.abs(t)
        comp += np.where(big, (total - s) + t, (t - s) + total)
        total = s
    return (total + comp).reshape(terms.shape[1:])
