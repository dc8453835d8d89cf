"""Observables of synchronously coupled reflected Brownian motions.

``R_t`` is the torus distance between the two processes and ``M_t = log R_t``.
The ladder ``V_k`` reads ``M`` at successive local-time quanta: segment
``k+1`` runs until X gains ``b`` more local time or Y does, counted from the
end of segment ``k``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import BudgetExceededError, GeometryError, ValidationError
from .geometry import (BOUNDARY_TOL, DomainGeometry, canonicalize, geodesic_dist, inward_normal, is_on_sphere,
                       min_image_diff, tangent_project)
from .noise import NoiseStream
from .sde import DEFAULT_LAYER, DEFAULT_MAX_STEPS, PathTrace, _Run

DEFAULT_C4 = 1.0
#: tangential alignment exponent used to build drift-experiment pairs
BETA1 = 0.4


@dataclass
class LogSeparationLadder:
    b: float
    V: np.ndarray
    ladder_times: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    overshoot: np.ndarray
    complete: bool
    steps: int
    min_M: float = math.inf
    tail_M: np.ndarray | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.V) - 1


def log_separation_ladder(x0, y0, b: float, K_max: int, noise: NoiseStream, geom: DomainGeometry, *,
                          accelerate: bool = True, layer: float = DEFAULT_LAYER,
                          max_steps: int = DEFAULT_MAX_STEPS, monitor_every: int = 0) -> LogSeparationLadder:
    """Run the coupled pair through ``K_max`` ladder segments.

    Stops early, with ``complete=False``, if the step budget runs out.
    ``monitor_every > 0`` also samples ``M`` every that many moves to
    report its running minimum.
    """
    if not b > 0:
        raise ValidationError("b must be positive")
    if K_max < 0:
        raise ValidationError("K must be >= 0")
    x0 = canonicalize(np.asarray(x0, float), geom)
    y0 = canonicalize(np.asarray(y0, float), geom)
    r0 = geodesic_dist(x0, y0, geom)
    if r0 == 0.0:
        raise GeometryError("x0 and y0 coincide")
    run = _Run(np.vstack([x0, y0]), noise, geom, accelerate=accelerate, layer=layer,
               max_steps=max_steps, record_every=monitor_every)
    V = [math.log(r0)]
    times, lx, ly, over = [0.0], [0.0], [0.0], [0.0]
    complete = True
    for _ in range(K_max):
        target = run.lt + b
        status = run.run(lt_stop=target)
        if status == K.BUDGET:
            complete = False
            break
        V.append(math.log(geodesic_dist(run.pos[0], run.pos[1], geom)))
        times.append(float(run.clock[0]))
        lx.append(float(run.lt[0]))
        ly.append(float(run.lt[1]))
        over.append(float(np.max(run.lt - target)))
    min_M = min(V)
    tail = None
    rec = run.records()
    if rec is not None:
        R = np.linalg.norm(min_image_diff(rec[1][:, 0], rec[1][:, 1], geom), axis=1)
        with np.errstate(divide="ignore"):
            M = np.log(R)
        min_M = min(min_M, float(M.min()))
        tail = M[int(0.9 * M.size):]
    return LogSeparationLadder(b, np.array(V), np.array(times), np.array(lx), np.array(ly),
                               np.array(over), complete, run.steps, min_M, tail)


def write_ladder_csv(path, ladder: LogSeparationLadder) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "V_k", "L_X", "L_Y"])
        for k in range(len(ladder.V)):
            w.writerow([k, repr(float(ladder.ladder_times[k])), repr(float(ladder.V[k])),
                        repr(float(ladder.lx[k])), repr(float(ladder.ly[k]))])


def alignment_ratio(x, y, geom: DomainGeometry | None = None) -> float:
    """``|<y - x, n(x)>| / |y - x|`` with the minimal-image difference."""
    geom = geom or DomainGeometry.exterior()
    n = inward_normal(x)
    d = min_image_diff(y, x, geom)
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise GeometryError("alignment ratio undefined for y = x")
    return min(1.0, abs(float(d @ n)) / r)


def aligned_pair(x, separation: float, rng: np.random.Generator):
    """Point at distance ``separation`` from sphere point ``x`` along a
    random tangent direction, then pushed back onto the closed domain.

    The result has alignment ratio of order ``separation``, well inside the
    ``separation ** BETA1`` bound.
    """
    n = inward_normal(x)
    g = rng.standard_normal(3)
    t = g - (g @ n) * n
    t /= np.linalg.norm(t)
    y = np.asarray(x, float) + separation * t
    return y / np.linalg.norm(y) * max(1.0, np.linalg.norm(y))


# ---------------------------------------------------------------------------
# big excursions and the derivative map


@dataclass
class BigExcursionChain:
    eps_star: float
    endpoints: np.ndarray
    dl: np.ndarray
    total_local_time: float

    def __len__(self):
        return len(self.endpoints)


def extract_big_excursions(trace: PathTrace, eps_star: float,
                           geom: DomainGeometry | None = None) -> BigExcursionChain:
    """Excursions of one reflected path whose endpoints are at least
    ``eps_star`` apart.

    A contact is a sample whose move fired the reflection branch; an
    excursion runs from one contact to the next with at least one interior
    sample in between.  ``dl[0]`` is the local time before the first kept
    endpoint, ``dl[k]`` the local time between kept endpoints ``k-1`` and
    ``k``, and the final entry the remainder after the last one, so ``dl``
    has one more entry than ``endpoints`` and sums to the total.
    """
    if trace is None or trace.reflected is None:
        raise ValidationError("trace lacks boundary flags")
    if not trace.complete:
        raise ValidationError("trace does not resolve every boundary contact")
    geom = geom or DomainGeometry.exterior()
    flags = np.asarray(trace.reflected, bool)
    pos = np.asarray(trace.positions, float)
    lt = np.asarray(trace.local_time, float)
    total = float(lt[-1]) if len(lt) else 0.0
    idx = np.flatnonzero(flags)
    a, c = idx[:-1], idx[1:]
    # consecutive contacts enclose no interior interval
    gap = c - a >= 2
    a, c = a[gap], c[gap]
    d = np.linalg.norm(min_image_diff(pos[c], pos[a], geom), axis=1) if a.size else np.zeros(0)
    kept = c[d >= eps_star]
    ends = pos[kept]
    marks = lt[kept]
    dl = list(np.diff(np.concatenate([[0.0], marks])))
    prev_l = float(marks[-1]) if kept.size else 0.0
    dl.append(total - prev_l)
    ep = np.asarray(ends, float).reshape(-1, 3)
    return BigExcursionChain(float(eps_star), ep, np.array(dl), total)


def derivative_map(chain: BigExcursionChain | np.ndarray, L: float, v0) -> np.ndarray:
    """``exp(L) * pi_{x_m} ... pi_{x_0} v0`` over the chain endpoints."""
    pts = chain.endpoints if isinstance(chain, BigExcursionChain) else np.asarray(chain, float).reshape(-1, 3)
    v = np.asarray(v0, dtype=float).copy()
    if len(pts) and np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) > BOUNDARY_TOL:
        raise GeometryError("chain endpoints must lie on the unit sphere")
    # same as repeated geometry.tangent_project, without per-call checks
    n = pts / np.linalg.norm(pts, axis=1)[:, None]
    for p in n:
        v -= (v @ p) * p
    return math.exp(L) * v


@dataclass
class FlowDerivativeCheck:
    finite_diff: np.ndarray
    product: np.ndarray
    rel_err: float
    eps: float
    eps_star: float
    local_time: float
    n_kept: int
    steps: int


def check_flow_derivative(x, v, eps: float, b: float, noise: NoiseStream, geom: DomainGeometry, *,
                          c4: float = DEFAULT_C4, accelerate: bool = True, layer: float = DEFAULT_LAYER,
                          max_steps: int = DEFAULT_MAX_STEPS) -> FlowDerivativeCheck:
    """Compare ``(X^{x + eps v} - X^x) / eps`` at X's local time ``b`` with the
    projection product along the big excursions of ``X^x`` (``eps* = c4 eps``).
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    n = inward_normal(x)
    if abs(float(v @ n)) > 1e-9 or abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValidationError("v must be a unit tangent vector at x")
    if not eps > 0:
        raise ValidationError("eps must be positive")
    if noise.sqrt_dt > eps:
        raise ValidationError(f"dt too coarse for eps: sqrt(dt)={noise.sqrt_dt:.3g} > eps")
    xe = x + eps * v
    if np.linalg.norm(xe) < 1.0:
        raise GeometryError("x + eps v lies inside the obstacle")
    if b < 0:
        raise ValidationError("b must be >= 0")
    run = _Run(np.vstack([x, xe]), noise, geom, accelerate=accelerate, layer=layer,
               max_steps=max_steps, contacts=True)
    lt_stop = np.array([b, np.inf])
    status = run.run(lt_stop=lt_stop)
    if status == K.BUDGET:
        raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    fd = min_image_diff(run.pos[1], run.pos[0], geom) / eps
    trace = run.contact_trace()
    eps_star = c4 * eps
    chain = extract_big_excursions(trace, eps_star, geom)
    L = float(run.lt[0])
    prod = derivative_map(chain, L, v)
    scale = max(float(np.linalg.norm(prod)), 1e-300)
    rel = float(np.linalg.norm(fd - prod)) / scale
    return FlowDerivativeCheck(fd, prod, rel, eps, eps_star, L, len(chain), run.steps)


# ---------------------------------------------------------------------------
# non-collapse diagnostic


@dataclass
class NonCollapseReport:
    replicas: int
    finite_min: int
    not_decreasing: int
    passed: bool


def tail_not_decreasing(tail: np.ndarray) -> bool:
    """True unless the samples are strictly decreasing throughout."""
    if tail is None or tail.size < 2:
        return True
    return not bool(np.all(np.diff(tail) < 0))
