"""Smoothed complementarity for second-order cone pairs.

Two families are provided. ``chks`` is the Chen-Harker-Kanzow-Smale function
built from F(a) = (sqrt(a^2 + 4) + a) / 2 and ``kanzow`` is the smoothed
Fischer-Burmeister variant. For a pair x = (x0, xbar), y = (y0, ybar) both
residuals vanish exactly when x and y lie in the cone interior with the
spectral product law x o y = eps^2 e; for scalar pairs that is x0 * y0 = eps^2.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

CHKS = "CHKS"
KANZOW = "Kanzow"
KINDS = (CHKS, KANZOW)

# only used when forming unit directions
_NORM_FLOOR = 1e-300
# below this the direction-dependent terms switch to their limits
_DEGENERATE = 1e-12


@dataclass(frozen=True)
class SmoothedPairRow:
    """Residual-equals-zero rows replacing one cone pair."""
    pair_name: str
    eps: float
    kind: str
    dim: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"Smoothing parameter must be positive, got {self.eps}")
        if self.dim < 1:
            raise ValueError("Smoothed pair needs dimension >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"Unknown smoothing kind '{self.kind}'")


def chks_f(a):
    return 0.5 * (np.sqrt(a * a + 4.0) + a)


def chks_df(a):
    return 0.5 * (a / np.sqrt(a * a + 4.0) + 1.0)


def chks_d2f(a):
    return 2.0 / (a * a + 4.0) ** 1.5


def _direction(v: np.ndarray) -> Tuple[np.ndarray, float]:
    nv = float(np.linalg.norm(v))
    if nv <= _DEGENERATE:
        # canonical direction: first tail coordinate
        w = np.zeros_like(v)
        if len(w):
            w[0] = 1.0
        return w, nv
    return v / max(nv, _NORM_FLOOR), nv


def _split(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 1:
        raise ValueError("Cone vectors must be 1-d arrays of equal length")
    return x, y


def chks_residual(x, y, eps: float) -> np.ndarray:
    x, y = _split(x, y)
    if len(x) == 1:
        return np.array([x[0] - eps * chks_f((x[0] - y[0]) / eps)])
    w, nd = _direction(x[1:] - y[1:])
    f1 = chks_f((x[0] - y[0] - nd) / eps)
    f2 = chks_f((x[0] - y[0] + nd) / eps)
    r = np.empty_like(x)
    r[0] = x[0] - 0.5 * eps * (f1 + f2)
    r[1:] = x[1:] - 0.5 * eps * (f2 - f1) * w
    return r


def kanzow_residual(x, y, eps: float) -> np.ndarray:
    x, y = _split(x, y)
    if len(x) == 1:
        return np.array([x[0] + y[0] - np.sqrt(x[0] ** 2 + y[0] ** 2 + 2.0 * eps * eps)])
    v = x[0] * x[1:] + y[0] * y[1:]
    w, nv = _direction(v)
    s = x @ x + y @ y + 2.0 * eps * eps
    s1 = np.sqrt(max(s - 2.0 * nv, 0.0))
    s2 = np.sqrt(s + 2.0 * nv)
    r = np.empty_like(x)
    r[0] = x[0] + y[0] - 0.5 * (s1 + s2)
    r[1:] = x[1:] + y[1:] - 0.5 * (s2 - s1) * w
    return r


def residual(kind: str, x, y, eps: float) -> np.ndarray:
    if kind == CHKS:
        return chks_residual(x, y, eps)
    if kind == KANZOW:
        return kanzow_residual(x, y, eps)
    raise ValueError(f"Unknown smoothing kind '{kind}'")


def _chks_jacobian(x, y, eps):
    d = len(x)
    if d == 1:
        fp = chks_df((x[0] - y[0]) / eps)
        return np.array([[1.0 - fp]]), np.array([[fp]])
    w, nd = _direction(x[1:] - y[1:])
    a1 = (x[0] - y[0] - nd) / eps
    a2 = (x[0] - y[0] + nd) / eps
    f1, f2 = chks_f(a1), chks_f(a2)
    g1, g2 = chks_df(a1), chks_df(a2)
    if nd <= _DEGENERATE:
        ratio = g1  # eps * (F2 - F1) / (2 nd) as nd -> 0
    else:
        ratio = eps * (f2 - f1) / (2.0 * nd)
    P = np.eye(d - 1) - np.outer(w, w)
    ww = np.outer(w, w)
    half_sum, half_diff = 0.5 * (g1 + g2), 0.5 * (g2 - g1)

    jx = np.zeros((d, d))
    jx[0, 0] = 1.0 - half_sum
    jx[0, 1:] = -half_diff * w
    jx[1:, 0] = -half_diff * w
    jx[1:, 1:] = np.eye(d - 1) - half_sum * ww - ratio * P

    jy = np.zeros((d, d))
    jy[0, 0] = half_sum
    jy[0, 1:] = half_diff * w
    jy[1:, 0] = half_diff * w
    jy[1:, 1:] = half_sum * ww + ratio * P
    return jx, jy


def _kanzow_jacobian(x, y, eps):
    d = len(x)
    s = x @ x + y @ y + 2.0 * eps * eps
    if d == 1:
        rho = np.sqrt(s)
        return np.array([[1.0 - x[0] / rho]]), np.array([[1.0 - y[0] / rho]])
    v = x[0] * x[1:] + y[0] * y[1:]
    w, nv = _direction(v)
    s1 = np.sqrt(max(s - 2.0 * nv, 0.0))
    s2 = np.sqrt(s + 2.0 * nv)
    if nv <= _DEGENERATE:
        ratio = 1.0 / np.sqrt(s)  # (s2 - s1) / (2 nv) as nv -> 0
    else:
        ratio = (s2 - s1) / (2.0 * nv)
    P = np.eye(d - 1) - np.outer(w, w)

    def block(u, other):
        # derivatives with respect to the vector u = (u0, ubar); other is the partner vector
        dnv = np.concatenate(([w @ u[1:]], u[0] * w))
        ds1 = (u - dnv) / s1 if s1 > 0 else np.full(d, np.inf)
        ds2 = (u + dnv) / s2
        dv = np.zeros((d - 1, d))
        dv[:, 0] = u[1:]
        dv[:, 1:] = u[0] * np.eye(d - 1)
        j = np.zeros((d, d))
        j[0] = -0.5 * (ds1 + ds2)
        j[0, 0] += 1.0
        j[1:] = -0.5 * np.outer(w, ds2 - ds1) - ratio * (P @ dv)
        j[1:, 1:] += np.eye(d - 1)
        return j

    return block(x, y), block(y, x)


def jacobian(kind: str, x, y, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (d residual / dx, d residual / dy)."""
    x, y = _split(x, y)
    if kind == CHKS:
        return _chks_jacobian(x, y, eps)
    if kind == KANZOW:
        return _kanzow_jacobian(x, y, eps)
    raise ValueError(f"Unknown smoothing kind '{kind}'")


def scalar_hessians(kind: str, x0: np.ndarray, y0: np.ndarray, eps: float):
    """Second derivatives (rxx, rxy, ryy) of the scalar residuals, vectorized."""
    if kind == CHKS:
        c = chks_d2f((x0 - y0) / eps) / eps
        return -c, c, -c
    rho = np.sqrt(x0 * x0 + y0 * y0 + 2.0 * eps * eps)
    r3 = rho ** 3
    return -(y0 * y0 + 2.0 * eps * eps) / r3, x0 * y0 / r3, -(x0 * x0 + 2.0 * eps * eps) / r3


def scalar_residuals(kind: str, x0: np.ndarray, y0: np.ndarray, eps: float):
    """Residuals and first derivatives of many scalar pairs at once."""
    if kind == CHKS:
        a = (x0 - y0) / eps
        fp = chks_df(a)
        return x0 - eps * chks_f(a), 1.0 - fp, fp
    rho = np.sqrt(x0 * x0 + y0 * y0 + 2.0 * eps * eps)
    return x0 + y0 - rho, 1.0 - x0 / rho, 1.0 - y0 / rho
