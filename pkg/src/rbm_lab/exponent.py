"""Lyapunov-exponent constants for the unit-sphere obstacle.

Two integrals over the angle coordinates of :mod:`rbm_lab.excursion`:

* ``I1`` integrates ``f`` against the excursion endpoint density,
  giving ``sqrt(2) - 1 - log(1 + sqrt(2))``;
* ``I2`` integrates ``f`` against the uniform probability on the sphere,
  ``sin(alpha) / (4 pi) dalpha dbeta``, giving ``log(2) - 1``.

Their sum is the large-torus limit of ``lambda``; the exponent itself is
``lambda* = 1 + lambda``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import mpmath
import numpy as np

from .errors import ValidationError
from .excursion import DEFAULT_DELTA, DEFAULT_FAR_RADIUS, estimate_Hf_mc
from .geometry import DomainGeometry
from .quadrature import QuadratureResult, integrate2d

HALF_PI = 0.5 * math.pi


def closed_forms() -> dict:
    """Analytic constants, evaluated at 50 digits and rounded to float."""
    with mpmath.workdps(50):
        s2 = mpmath.sqrt(2)
        i1 = s2 - 1 - mpmath.log(1 + s2)
        i2 = mpmath.log(2) - 1
        lam = s2 + mpmath.log(2) - 2 - mpmath.log(1 + s2)
    return {"I1_exact": float(i1), "I2_exact": float(i2), "lambda_limit": float(lam),
            "H_hat_f": float(i1)}


def _log_factor(alpha, beta):
    # 0.5 * log(cos^2 b + sin^2 b cos^2 a), written to avoid cancellation
    s = (np.sin(beta) * np.sin(alpha)) ** 2
    with np.errstate(divide="ignore"):
        return 0.5 * np.log1p(-np.minimum(s, 1.0))


def _i1_integrand(beta, alpha):
    # f * sin(a) / sin(a/2)^3 / (16 pi), with sin(a) = 2 sin(a/2) cos(a/2)
    h = 0.5 * alpha
    return _log_factor(alpha, beta) * 2.0 * np.cos(h) / np.sin(h) ** 2 / (16.0 * math.pi)


def _i2_integrand(beta, alpha):
    return _log_factor(alpha, beta) * np.sin(alpha) / (4.0 * math.pi)


def _check_tol(tol):
    if not tol >= 1e-12:
        raise ValidationError("tol must be at least 1e-12")


def integral_I1(tol: float = 1e-8) -> QuadratureResult:
    """Endpoint-density integral of ``f`` over alpha in (0, pi], beta in [0, 2 pi).

    ``f`` is even about beta = 0 and beta = pi/2, so the integral is four
    times the quarter-period one.
    """
    _check_tol(tol)
    r = integrate2d(_i1_integrand, (0.0, HALF_PI), (0.0, math.pi), tol / 4.0, y_breaks=(HALF_PI,))
    return QuadratureResult(4.0 * r.value, 4.0 * r.error_estimate, r.evaluations)


def integral_I2(tol: float = 1e-8) -> QuadratureResult:
    """Uniform-measure integral of ``f`` over the same angles."""
    _check_tol(tol)
    r = integrate2d(_i2_integrand, (0.0, HALF_PI), (0.0, math.pi), tol / 4.0, y_breaks=(HALF_PI,))
    return QuadratureResult(4.0 * r.value, 4.0 * r.error_estimate, r.evaluations)


def integral_I1_cos(tol: float = 1e-8) -> QuadratureResult:
    """``I1`` after the substitution ``u = cos(alpha)``:
    ``(1 / (sqrt(8) pi)) int_0^{pi/2} dbeta int_{-1}^{1} (1-u)^{-3/2} log(cos^2 b + sin^2 b u^2) du``.

    The inner integrand behaves like ``(1-u)^{-1/2}`` at ``u = 1``; writing
    ``u = 1 - w^2`` makes it smooth on ``w in [0, sqrt(2)]``.
    """
    _check_tol(tol)

    def g(beta, w):
        u = 1.0 - w * w
        s = math.sin(beta) ** 2 * (1.0 - u * u)
        with np.errstate(divide="ignore"):
            # (1-u)^{-3/2} du = 2 w^{-2} dw, and 1 - u^2 = w^2 (2 - w^2)
            return np.log1p(-np.minimum(s, 1.0)) / w**2 * 2.0 / (math.sqrt(8.0) * math.pi)

    return integrate2d(g, (0.0, HALF_PI), (0.0, math.sqrt(2.0)), tol, y_breaks=(1.0,))


def integral_I2_cos(tol: float = 1e-8) -> QuadratureResult:
    """``I2`` with ``u = cos(alpha)``: ``(1/pi) int_0^{pi/2} dbeta int_0^1 log(cos^2 b + u^2 sin^2 b) du``."""
    _check_tol(tol)

    def g(beta, u):
        s = math.sin(beta) ** 2 * (1.0 - u * u)
        with np.errstate(divide="ignore"):
            return np.log1p(-np.minimum(s, 1.0)) / math.pi

    return integrate2d(g, (0.0, HALF_PI), (0.0, 1.0), tol)


def finite_delta_value(delta: float, tol: float = 1e-9, far_radius: float = math.inf) -> QuadratureResult:
    """Exact ``E[f(hit)] / delta`` for Brownian motion from ``(1 + delta) x``
    in free space, using the exterior Poisson kernel
    ``(r^2 - 1) / |p - y|^3`` (relative to the uniform law; mass ``1/r``).

    With a finite ``far_radius`` the paths that reach it before the sphere
    are scored 0, as in the Monte Carlo estimator, and the shell kernel is
    summed as a Legendre series.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    r = 1.0 + delta
    if math.isinf(far_radius):
        def g(beta, alpha):
            d2 = r * r + 1.0 - 2.0 * r * np.cos(alpha)
            k = (r * r - 1.0) / d2**1.5
            return _log_factor(alpha, beta) * k * np.sin(alpha) / (4.0 * math.pi)
    else:
        g = _shell_integrand(r, far_radius)
    res = integrate2d(g, (0.0, HALF_PI), (0.0, math.pi), tol * delta / 4.0, y_breaks=(HALF_PI,))
    return QuadratureResult(4.0 * res.value / delta, 4.0 * res.error_estimate / delta, res.evaluations)


def _shell_integrand(r, R):
    # Mode l of the hit density on the inner sphere decays radially like
    # g_l(r) = (r^-(l+1) - r^l R^-(2l+1)) / (1 - R^-(2l+1)); in free space
    # g_l = r^-(l+1), whose Legendre sum is the closed-form kernel.
    from scipy.special import eval_legendre

    def kernel(alpha):
        c = np.cos(alpha)
        d2 = r * r + 1.0 - 2.0 * r * c
        out = (r * r - 1.0) / d2**1.5
        for ell in range(200):
            q = R ** (-2 * ell - 1)
            g = (r ** (-ell - 1) - r**ell * q) / (1.0 - q)
            term = (2 * ell + 1) * (r ** (-ell - 1) - g)
            out = out - term * eval_legendre(ell, c)
            if term < 1e-17:
                break
        return out

    def g(beta, alpha):
        return _log_factor(alpha, beta) * kernel(alpha) * np.sin(alpha) / (4.0 * math.pi)

    return g


@dataclass
class LyapunovEstimate:
    lam: float
    lambda_star: float
    stderr: float
    rho: float
    params: dict

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def exact_lambda_limit() -> LyapunovEstimate:
    lam = closed_forms()["lambda_limit"]
    return LyapunovEstimate(lam, 1.0 + lam, 0.0, math.inf, {"source": "exact"})


def estimate_lambda(rho: float = math.inf, *, delta: float = DEFAULT_DELTA, dt: float | None = None,
                    N: int = 10**6, seed: int = 0, far_radius: float = DEFAULT_FAR_RADIUS,
                    threads: int = 1) -> LyapunovEstimate:
    """Monte Carlo ``lambda`` at torus scale ``rho`` (``inf`` for free space)."""
    if int(N) < 1:
        raise ValidationError("N must be at least 1")
    geom = DomainGeometry.exterior() if math.isinf(rho) else DomainGeometry.torus(rho)
    x = np.array([0.0, 0.0, 1.0])
    v = np.array([1.0, 0.0, 0.0])
    est = estimate_Hf_mc(x, v, delta, dt, N, geom, far_radius=far_radius, seed=seed, threads=threads)
    params = {"rho": rho, "delta": delta, "dt": est.dt, "N": int(N), "seed": seed,
              "far_radius": est.far_radius, "n_hit": est.n_hit, "n_escape": est.n_escape}
    return LyapunovEstimate(est.mean, 1.0 + est.mean, est.stderr, rho, params)
