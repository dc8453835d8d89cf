"""Excursion-law observables for the unit sphere.

Angles: for a start point ``x`` on the sphere, a tangent vector ``v`` and an
endpoint ``y``, ``alpha`` is the angle at the origin between ``x`` and ``y``
and ``beta`` is the angle between the great circle x->y and the great circle
through ``x`` orthogonal to ``v``.  With that convention

    |pi_y v| / |v| = sqrt(cos^2 beta + sin^2 beta cos^2 alpha)

and the endpoint law of excursions from ``x`` (normalised as the 1/delta limit
of Brownian motion started at ``x + delta n(x)``) has density
``2 |x - y|^-3`` against the uniform probability on the sphere, i.e.
``sin(alpha) sin(alpha/2)^-3 / (16 pi) dalpha dbeta``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import BudgetExceededError, GeometryError, ValidationError
from .geometry import DomainGeometry, canonicalize, inward_normal
from .noise import NoiseStream, replica_stream

DEFAULT_DELTA = 1e-3
DEFAULT_FAR_RADIUS = 64.0
#: sqrt(dt) = delta / DT_RATIO by default
DT_RATIO = 30.0
CHUNK = 1 << 14
K_BLOCK = 1 << 15
_SALT_HF = 0x48F1


@dataclass(frozen=True)
class AngleCoords:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= math.pi):
            raise ValidationError(f"alpha must lie in (0, pi] (got {self.alpha})")


def endpoint_density(x, y) -> float:
    """``2 |x - y|^-3``: endpoint density relative to the uniform law on the sphere."""
    d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
    if d == 0.0:
        raise GeometryError("endpoint density is singular at y = x")
    return 2.0 / d**3


def angle_density(alpha) -> np.ndarray | float:
    """Density of the endpoint law in (alpha, beta) coordinates; free of beta."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0.0) or np.any(a > math.pi):
        raise ValidationError("alpha must lie in (0, pi]")
    out = np.sin(a) / np.sin(0.5 * a) ** 3 / (16.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def f_value(alpha, beta):
    """Log-contraction of a unit tangent vector projected at the endpoint.

    Written as ``0.5*log1p(-sin^2(beta) sin^2(alpha))`` to stay accurate for
    small angles.  Returns -inf at alpha = beta = pi/2 (mod symmetry).
    """
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    s = (np.sin(b) * np.sin(a)) ** 2
    with np.errstate(divide="ignore"):
        out = 0.5 * np.log1p(-np.minimum(s, 1.0))
    return float(out) if out.ndim == 0 else out


def f_endpoint(v, y):
    """``log|pi_y v| - log|v|`` for endpoint(s) ``y`` on the unit sphere."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    c = (y @ v) / np.linalg.norm(v)
    with np.errstate(divide="ignore"):
        return 0.5 * np.log1p(-np.minimum(c * c, 1.0))


def angle_coords(x, v, y) -> AngleCoords:
    """Angles of endpoint ``y`` relative to start ``x`` and tangent ``v``."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    y = np.asarray(y, float)
    alpha = math.acos(max(-1.0, min(1.0, float(x @ y))))
    w = np.cross(x, v)
    w /= np.linalg.norm(w)
    vt = v - (v @ x) * x
    vt /= np.linalg.norm(vt)
    t = y - (y @ x) * x
    beta = math.atan2(float(t @ vt), float(t @ w)) % (2.0 * math.pi)
    return AngleCoords(alpha, beta)


def point_from_angles(x, v, a: AngleCoords) -> np.ndarray:
    """Inverse of :func:`angle_coords`."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    w = np.cross(x, v)
    w /= np.linalg.norm(w)
    vt = v - (v @ x) * x
    vt /= np.linalg.norm(vt)
    t = math.cos(a.beta) * w + math.sin(a.beta) * vt
    return math.cos(a.alpha) * x + math.sin(a.alpha) * t


# ---------------------------------------------------------------------------
# truncated endpoint sampler


def _alpha_cut(eps_cut: float) -> float:
    return 2.0 * math.asin(eps_cut / 2.0)


def truncated_mass(eps_cut: float) -> float:
    """Mass of the endpoint law on ``|x - y| >= eps_cut``: ``1/eps_cut - 1/2``."""
    if not (0.0 < eps_cut <= 2.0):
        raise ValidationError("eps_cut must lie in (0, 2]")
    return 1.0 / eps_cut - 0.5


def truncated_alpha_cdf(alpha, eps_cut: float):
    """CDF of alpha under the endpoint law restricted to ``|x - y| >= eps_cut``.

    In ``s = sin(alpha/2)`` the angular density is ``ds / (2 s^2)``, so the
    CDF is ``(1/s_c - 1/s) / (1/s_c - 1)``.
    """
    if not (0.0 < eps_cut < 2.0):
        raise ValidationError("eps_cut must lie in (0, 2)")
    sc = eps_cut / 2.0
    a = np.clip(np.asarray(alpha, dtype=float), _alpha_cut(eps_cut), math.pi)
    s = np.sin(0.5 * a)
    out = (1.0 / sc - 1.0 / s) / (1.0 / sc - 1.0)
    return float(out) if out.ndim == 0 else out


def sample_truncated_endpoint(eps_cut: float, rng: np.random.Generator, size=None):
    """Draw ``AngleCoords`` from the endpoint law restricted to
    ``|x - y| >= eps_cut`` (beta uniform, alpha by the inverse CDF).

    With ``size`` given, returns arrays ``(alpha, beta)`` instead.
    """
    if not (0.0 < eps_cut <= 2.0):
        raise ValidationError("eps_cut must lie in (0, 2]")
    n = 1 if size is None else size
    u = rng.random(n)
    beta = 2.0 * math.pi * rng.random(n)
    inv_sc = 2.0 / eps_cut
    s = 1.0 / (inv_sc - u * (inv_sc - 1.0))
    alpha = 2.0 * np.arcsin(np.minimum(s, 1.0))
    if size is None:
        return AngleCoords(float(alpha[0]), float(beta[0]))
    return alpha, beta


# ---------------------------------------------------------------------------
# Monte Carlo estimator of H^x(f_v)


@dataclass
class HfEstimate:
    mean: float
    stderr: float
    n_hit: int
    n_escape: int
    N: int
    delta: float
    dt: float
    geometry: str
    far_radius: float
    seed: int
    chunks: int = field(default=0)


def default_dt(delta: float) -> float:
    return (delta / DT_RATIO) ** 2


def _validate_inputs(x, v, delta, dt, N):
    if not delta > 0:
        raise ValidationError("delta must be positive")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if math.sqrt(dt) > delta / 10.0:
        raise ValidationError(f"dt too coarse for delta: sqrt(dt)={math.sqrt(dt):.3g} > delta/10")
    if int(N) < 1:
        raise ValidationError("N must be at least 1")
    n = inward_normal(x)
    v = np.asarray(v, float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValidationError("v must be a unit vector")
    if abs(float(v @ n)) > 1e-9:
        raise ValidationError("v must be tangent to the sphere at x")
    return n, v


def _run_chunk(start, count, stream: NoiseStream, rho, escape_r, layer_w, max_steps):
    pos = np.repeat(start[None, :], count, axis=0)
    status = np.zeros(count, dtype=np.int64)
    hit = np.zeros((count, 3))
    steps = np.zeros(count, dtype=np.int64)
    cursor = np.zeros(2, dtype=np.int64)
    reader = stream.reader(K_BLOCK)
    z = reader.next_block()
    while True:
        st = K.hit_batch(pos, status, hit, steps, cursor, z, stream.dt, rho, escape_r, layer_w, max_steps)
        if st == K.NEED_NOISE:
            z = reader.next_block()
        elif st == K.BUDGET:
            raise BudgetExceededError(f"excursion walker exceeded {max_steps} moves")
        else:
            return status, hit



def sample_endpoints(x, delta: float, dt: float, N: int, geom: DomainGeometry, *, seed: int = 0,
                     far_radius: float = DEFAULT_FAR_RADIUS, layer: float = 4.0,
                     max_steps: int = 10**9, threads: int = 1, salt: int = _SALT_HF):
    """Endpoints of ``N`` killed Brownian paths started at ``x + delta n(x)``.

    Returns ``(hit_mask, points)``; rows of escaped paths are zero.  Work is
    split into fixed chunks with their own noise streams, so results do not
    depend on ``threads``.
    """
    n = inward_normal(x)
    start = canonicalize(np.asarray(x, float) + delta * n, geom)
    escape_r = far_radius if not geom.is_torus else math.inf
    layer_w = layer * math.sqrt(dt)
    sizes = [min(CHUNK, N - s) for s in range(0, N, CHUNK)]

    def work(c):
        return _run_chunk(start, sizes[c], replica_stream(seed, c, dt, salt), geom.rho,
                          escape_r, layer_w, max_steps)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        parts = list(pool.map(work, range(len(sizes))))
    status = np.concatenate([p[0] for p in parts])
    pts = np.concatenate([p[1] for p in parts])
    return status == K.HIT, pts


@dataclass
class ExcursionSample:
    start: np.ndarray
    endpoint: np.ndarray | None
    f_value: float
    delta: float

    @property
    def escaped(self) -> bool:
        return self.endpoint is None


def excursion_samples(x, v, delta: float, dt: float, N: int, geom: DomainGeometry, *, seed: int = 0,
                      far_radius: float = DEFAULT_FAR_RADIUS) -> list[ExcursionSample]:
    """Individual runs behind :func:`estimate_Hf_mc` (same streams, same order)."""
    _, v = _validate_inputs(x, v, delta, dt, N)
    hit, pts = sample_endpoints(x, delta, dt, int(N), geom, seed=seed, far_radius=far_radius)
    x = np.asarray(x, float)
    out = []
    for h, p in zip(hit, pts):
        if h:
            out.append(ExcursionSample(x, p.copy(), float(f_endpoint(v, p)), delta))
        else:
            out.append(ExcursionSample(x, None, 0.0, delta))
    return out


def estimate_Hf_mc(x, v, delta: float = DEFAULT_DELTA, dt: float | None = None, N: int = 10**6,
                   geom: DomainGeometry | None = None, *, far_radius: float = DEFAULT_FAR_RADIUS,
                   seed: int = 0, threads: int = 1, layer: float = 4.0,
                   max_steps: int = 10**9) -> HfEstimate:
    """Monte Carlo estimate of ``H^x(f_v)`` as ``mean(f)/delta``.

    Each run is Brownian motion from ``x + delta n(x)`` killed at the sphere;
    the observable is ``f_v`` at the hit point, and 0 for runs escaping past
    ``far_radius`` (exterior mode only; in a torus every run hits).
    """
    geom = geom or DomainGeometry.exterior()
    dt = default_dt(delta) if dt is None else float(dt)
    _, v = _validate_inputs(x, v, delta, dt, N)
    N = int(N)
    hit, pts = sample_endpoints(x, delta, dt, N, geom, seed=seed, far_radius=far_radius,
                                layer=layer, max_steps=max_steps, threads=threads)
    f = np.zeros(N)
    f[hit] = f_endpoint(v, pts[hit])
    # chunk-ordered reduction keeps the sum independent of thread count
    sums = [math.fsum(f[s:s + CHUNK]) for s in range(0, N, CHUNK)]
    sq = [math.fsum(f[s:s + CHUNK] ** 2) for s in range(0, N, CHUNK)]
    m = math.fsum(sums) / N
    var = max(math.fsum(sq) / N - m * m, 0.0) * N / max(N - 1, 1)
    n_hit = int(hit.sum())
    return HfEstimate(mean=m / delta, stderr=math.sqrt(var / N) / delta, n_hit=n_hit,
                      n_escape=N - n_hit, N=N, delta=delta, dt=dt, geometry=str(geom),
                      far_radius=far_radius if not geom.is_torus else math.inf, seed=seed,
                      chunks=len(sums))


# ---------------------------------------------------------------------------
# harmonic-measure validation


@dataclass
class HarmonicValidation:
    ks_statistic: float
    p_value: float
    n_samples: int
    n_runs: int
    n_hit: int
    eps_cut: float
    passed: bool
    level: float


def validate_harmonic(N: int = 10**5, delta: float = DEFAULT_DELTA, dt: float | None = None, *,
                      eps_cut: float = 0.05, far_radius: float = DEFAULT_FAR_RADIUS, seed: int = 0,
                      level: float = 0.01, threads: int = 1) -> HarmonicValidation:
    """KS test of simulated sphere-hit angles against the endpoint density.

    Runs start at ``x + delta n(x)`` in exterior mode.  The endpoint density
    ``2|x-y|^-3`` is not normalisable near ``y = x``, so hits with
    ``|x - y| >= eps_cut`` are compared against the normalised restriction.
    """
    from scipy import stats

    dt = default_dt(delta) if dt is None else float(dt)
    if int(N) < 1:
        raise ValidationError("N must be at least 1")
    x = np.array([0.0, 0.0, 1.0])
    hit, pts = sample_endpoints(x, delta, dt, int(N), DomainGeometry.exterior(), seed=seed,
                                far_radius=far_radius, threads=threads, salt=0x4A12)
    y = pts[hit]
    alpha = np.arccos(np.clip(y @ x, -1.0, 1.0))
    keep = np.linalg.norm(y - x, axis=1) >= eps_cut
    a = alpha[keep]
    if a.size == 0:
        return HarmonicValidation(float("nan"), 0.0, 0, int(N), int(hit.sum()), eps_cut, False, level)
    res = stats.kstest(a, lambda t: truncated_alpha_cdf(t, eps_cut))
    return HarmonicValidation(float(res.statistic), float(res.pvalue), int(a.size), int(N),
                              int(hit.sum()), eps_cut, bool(res.pvalue > level), level)
