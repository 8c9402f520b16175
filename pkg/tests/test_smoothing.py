import numpy as np
import pytest
from scipy.optimize import brentq

from storage_bidding.smoothing import (CHKS, KANZOW, SmoothedPairRow, jacobian, residual, scalar_hessians,
                                       scalar_residuals)

KINDS = [CHKS, KANZOW]


def _root(kind, x0, eps):
    def r(y0):
        return residual(kind, [x0], [y0], eps)[0]
    return brentq(r, 1e-14, 10.0 * (eps * eps / x0) + 1.0, xtol=1e-15, rtol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
def test_scalar_root_example(kind):
    assert _root(kind, 0.2, 0.1) == pytest.approx(0.05, rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_scalar_product_law(kind):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x0 = rng.uniform(0.05, 5.0)
        eps = rng.uniform(0.01, 0.5)
        y0 = _root(kind, x0, eps)
        assert y0 > 0
        assert abs(x0 * y0 - eps * eps) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_cone_roots_satisfy_jordan_product(kind):
    # x = eps * (a + b, u * (a - b)) type points: x o y = eps^2 e with y the Jordan inverse scaled by eps^2
    eps = 0.3
    u = np.array([0.6, 0.8])
    lam1, lam2 = 2.0, 0.5
    x = np.concatenate(([0.5 * (lam1 + lam2)], 0.5 * (lam2 - lam1) * u))
    y = eps ** 2 * np.concatenate(([0.5 * (1 / lam1 + 1 / lam2)], 0.5 * (1 / lam2 - 1 / lam1) * u))
    np.testing.assert_allclose(residual(kind, x, y, eps), 0.0, atol=1e-12)
    assert np.max(np.abs(residual(kind, x, 2 * y, eps))) > 1e-3


def _fd(kind, x, y, eps, h=1e-6):
    d = len(x)
    jx, jy = np.zeros((d, d)), np.zeros((d, d))
    for k in range(d):
        step = np.zeros(d)
        step[k] = h
        jx[:, k] = (residual(kind, x + step, y, eps) - residual(kind, x - step, y, eps)) / (2 * h)
        jy[:, k] = (residual(kind, x, y + step, eps) - residual(kind, x, y - step, eps)) / (2 * h)
    return jx, jy


@pytest.mark.parametrize("kind", KINDS)
def test_jacobians_match_central_differences(kind):
    rng = np.random.default_rng(5)
    for trial in range(100):
        d = 1 + trial % 5
        x = rng.normal(size=d)
        y = rng.normal(size=d)
        if d > 1 and np.linalg.norm(x[1:] - y[1:]) < 1e-2:
            continue
        eps = rng.uniform(0.05, 1.0)
        jx, jy = jacobian(kind, x, y, eps)
        fx, fy = _fd(kind, x, y, eps)
        scale = max(1.0, np.max(np.abs(jx)), np.max(np.abs(jy)))
        assert np.max(np.abs(jx - fx)) / scale <= 1e-6
        assert np.max(np.abs(jy - fy)) / scale <= 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_vectorized_scalar_forms_agree(kind):
    rng = np.random.default_rng(9)
    x0, y0, eps = rng.normal(size=20), rng.normal(size=20), 0.2
    values, dx, dy = scalar_residuals(kind, x0, y0, eps)
    for i in range(20):
        assert values[i] == pytest.approx(residual(kind, [x0[i]], [y0[i]], eps)[0], abs=1e-14)
        jx, jy = jacobian(kind, [x0[i]], [y0[i]], eps)
        assert dx[i] == pytest.approx(jx[0, 0], abs=1e-14)
        assert dy[i] == pytest.approx(jy[0, 0], abs=1e-14)

    h = 1e-5
    rxx, rxy, ryy = scalar_hessians(kind, x0, y0, eps)
    _, dx_plus, dy_plus = scalar_residuals(kind, x0 + h, y0, eps)
    _, dx_minus, dy_minus = scalar_residuals(kind, x0 - h, y0, eps)
    np.testing.assert_allclose(rxx, (dx_plus - dx_minus) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(rxy, (dy_plus - dy_minus) / (2 * h), atol=1e-6)
    _, _, dy_up = scalar_residuals(kind, x0, y0 + h, eps)
    _, _, dy_dn = scalar_residuals(kind, x0, y0 - h, eps)
    np.testing.assert_allclose(ryy, (dy_up - dy_dn) / (2 * h), atol=1e-6)


def test_degenerate_direction_is_finite():
    x = np.array([1.0, 0.2, 0.0])
    for kind in KINDS:
        jx, jy = jacobian(kind, x, x.copy(), 0.1)
        assert np.all(np.isfinite(jx)) and np.all(np.isfinite(jy))


def test_row_validation():
    with pytest.raises(ValueError):
        SmoothedPairRow("p", 0.0, CHKS, 1)
    with pytest.raises(ValueError):
        SmoothedPairRow("p", 0.1, "other", 1)
    with pytest.raises(ValueError):
        residual(CHKS, [1.0, 2.0], [1.0], 0.1)
