"""Many reflected Brownian motions driven by one Brownian path.

Particles start on a regular lattice over the torus cell and never interact;
the only coupling is the shared increment sequence.  Diagnostics here are
per-realization trends, not tests of a limit statement.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import BudgetExceededError, GeometryError, ValidationError
from .geometry import DomainGeometry, canonicalize, min_image_diff
from .noise import NoiseStream
from .sde import DEFAULT_LAYER, DEFAULT_MAX_STEPS, RbmState, _Run

SUBSAMPLE = 5
RANDOM_MEASURE_NOTE = ("single noise realization: cannot distinguish convergence to a random "
                       "limit measure from slow mixing")


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    local_time: np.ndarray
    clock: float
    drive: np.ndarray
    origin: np.ndarray
    spacing: float
    geom: DomainGeometry

    def __len__(self):
        return self.positions.shape[0]

    def states(self) -> list[RbmState]:
        return [RbmState(p.copy(), float(l), self.clock) for p, l in zip(self.positions, self.local_time)]


@dataclass
class Snapshot:
    t: float
    positions: np.ndarray
    local_time: np.ndarray
    drive: np.ndarray


def init_lattice(n_per_axis: int, geom: DomainGeometry) -> ParticleEnsemble:
    """Cell-centred ``n^3`` lattice over ``[-rho, rho)^3`` minus the open ball."""
    if n_per_axis < 2:
        raise ValidationError("need at least 2 lattice points per axis")
    if not geom.is_torus:
        raise ValidationError("lattice ensembles need a torus")
    h = geom.side / n_per_axis
    c = -geom.rho + (np.arange(n_per_axis) + 0.5) * h
    g = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    g = g[np.linalg.norm(g, axis=1) >= 1.0]
    return ParticleEnsemble(g.copy(), np.zeros(len(g)), 0.0, np.zeros(3), g.copy(), h, geom)


def evolve_ensemble(ens: ParticleEnsemble, noise: NoiseStream, snapshot_times, geom: DomainGeometry | None = None,
                    *, max_steps: int = DEFAULT_MAX_STEPS) -> list[Snapshot]:
    """Step every particle with the shared increments, copying the state at
    each requested time (rounded to the step grid).  Updates ``ens`` in place.
    """
    geom = geom or ens.geom
    times = np.asarray(snapshot_times, dtype=float)
    if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0):
        raise ValidationError("snapshot times must be non-negative and increasing")
    if ens.clock != 0.0:
        raise ValidationError("evolve_ensemble expects a fresh ensemble")
    run = _Run(ens.positions, noise, geom, max_steps=max_steps)
    out = []
    for t in times:
        status = run.run(step_target=int(round(t / noise.dt)))
        if status == K.BUDGET:
            raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
        if np.any(np.linalg.norm(run.pos, axis=1) < 1.0 - 1e-12):
            raise GeometryError("particle inside the obstacle")
        out.append(Snapshot(float(run.clock[0]), run.pos.copy(), run.lt.copy(), run.drive.copy()))
    ens.positions = run.pos.copy()
    ens.local_time = run.lt.copy()
    ens.clock = float(run.clock[0])
    ens.drive = run.drive.copy()
    return out


def earthworm_frame(positions, drive, geom: DomainGeometry) -> np.ndarray:
    """Positions seen from the moving obstacle: ``X_t - B_t`` mod the torus."""
    return canonicalize(np.asarray(positions, float) - np.asarray(drive, float), geom)


# ---------------------------------------------------------------------------
# empirical measures


@dataclass
class EmpiricalMeasure:
    n_bins: int
    counts: np.ndarray
    volumes: np.ndarray
    total: int
    rho: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.rho, self.rho, self.n_bins + 1)


def corrected_volumes(n_bins: int, geom: DomainGeometry, sub: int = SUBSAMPLE) -> np.ndarray:
    """Bin volumes minus the obstacle, by ``sub^3`` midpoint sampling per bin."""
    h = geom.side / n_bins
    fine = -geom.rho + (np.arange(n_bins * sub) + 0.5) * h / sub
    x2 = fine**2
    inside = (x2[:, None, None] + x2[None, :, None] + x2[None, None, :]) < 1.0
    frac = inside.reshape(n_bins, sub, n_bins, sub, n_bins, sub).mean(axis=(1, 3, 5))
    return h**3 * (1.0 - frac)


def empirical_measure(positions, n_bins: int, geom: DomainGeometry) -> EmpiricalMeasure:
    if n_bins < 2:
        raise ValidationError("need at least 2 bins per axis")
    p = canonicalize(np.atleast_2d(np.asarray(positions, float)), geom)
    idx = np.floor((p + geom.rho) / geom.side * n_bins).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    flat = np.ravel_multi_index(idx.T, (n_bins,) * 3)
    counts = np.bincount(flat, minlength=n_bins**3).reshape((n_bins,) * 3)
    return EmpiricalMeasure(n_bins, counts, corrected_volumes(n_bins, geom), int(len(p)), geom.rho)


def uniformity_metric(m: EmpiricalMeasure) -> dict:
    """Chi-square statistic and total-variation distance to the uniform law on D."""
    if m.total <= 0:
        raise ValidationError("empty measure")
    p = m.volumes / m.volumes.sum()
    q = m.counts / m.total
    live = p > 0
    exp = m.total * p[live]
    chi2 = float(np.sum((m.counts[live] - exp) ** 2 / exp))
    tv = 0.5 * float(np.abs(q - p).sum())
    return {"chi_square": chi2, "tv_distance": tv, "dof": int(live.sum()) - 1}


def trend_diagnostic(times, values) -> dict:
    """Spearman rank correlation of a metric sequence against time."""
    r = stats.spearmanr(times, values)
    return {"spearman": float(r.statistic), "p_value": float(r.pvalue),
            "decreasing": bool(r.statistic < 0), "note": RANDOM_MEASURE_NOTE}


# ---------------------------------------------------------------------------
# pair-distance occupation


@dataclass
class PairHistogram:
    edges: np.ndarray
    mass: np.ndarray
    threshold: float
    mass_below: float
    T: float
    burn_in: float
    smallest_bin_mass: float = field(init=False)

    def __post_init__(self):
        self.smallest_bin_mass = float(self.mass[0]) if self.mass.size else 0.0


def default_distance_edges(geom: DomainGeometry, n_bins: int, smallest: float = 1e-3) -> np.ndarray:
    top = geom.max_separation if geom.is_torus else 1e3
    return np.concatenate([[0.0], np.geomspace(smallest, top * (1 + 1e-12), n_bins)])


def pair_distance_histogram(x0, y0, T: float, noise: NoiseStream, geom: DomainGeometry, n_bins: int = 40, *,
                            edges=None, threshold: float = 1e-3, burn_in: float = 0.5,
                            accelerate: bool = True, slice_lt: float = 1.0, layer: float = DEFAULT_LAYER,
                            max_steps: int = DEFAULT_MAX_STEPS) -> PairHistogram:
    """Time-occupation histogram of the torus distance between X and Y over
    ``[burn_in * T, T]``.

    Every move is recorded with its clock time; the distance holds until the
    next move, so walk-on-spheres jumps are weighted by their durations.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    if not 0.0 <= burn_in < 1.0:
        raise ValidationError("burn_in must lie in [0, 1)")
    edges = default_distance_edges(geom, n_bins, threshold) if edges is None else np.asarray(edges, float)
    mass = np.zeros(len(edges) - 1)
    below = 0.0
    t0 = burn_in * T
    run = _Run(np.vstack([x0, y0]), noise, geom, accelerate=accelerate, layer=layer,
               max_steps=max_steps, record_every=1)
    prev_t, prev_R = None, None

    def absorb(chunks):
        nonlocal prev_t, prev_R, below
        for t, p, _, _ in chunks:
            R = np.linalg.norm(min_image_diff(p[:, 0], p[:, 1], geom), axis=1)
            if prev_t is not None:
                t = np.concatenate([[prev_t], t])
                R = np.concatenate([[prev_R], R])
            lo = np.clip(t[:-1], t0, T)
            hi = np.clip(t[1:], t0, T)
            w = hi - lo
            r = R[:-1]
            mass[:] += np.histogram(r, bins=edges, weights=w)[0]
            below += float(w[r < threshold].sum())
            prev_t, prev_R = float(t[-1]), float(R[-1])

    if accelerate:
        while run.clock[0] < T:
            status = run.run(lt_stop=np.array([run.lt[0] + slice_lt, np.inf]))
            absorb(run.take_records())
            if status == K.BUDGET:
                raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    else:
        status = run.run(step_target=int(round(T / noise.dt)))
        absorb(run.take_records())
        if status == K.BUDGET:
            raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    total = T - t0
    return PairHistogram(edges, mass / total, threshold, below / total, T, burn_in)


# ---------------------------------------------------------------------------
# file output


def write_snapshot_csv(path, snap: Snapshot) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle_id", "x", "y", "z", "local_time"])
        for i, (p, l) in enumerate(zip(snap.positions, snap.local_time)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(l))])


def write_measure_csv(path, m: EmpiricalMeasure) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "k", "count", "corrected_volume"])
        for (i, j, k), c in np.ndenumerate(m.counts):
            w.writerow([i, j, k, int(c), repr(float(m.volumes[i, j, k]))])


def write_manifest(path, config: dict, files: list[str], extra: dict | None = None) -> None:
    doc = {"config": config, "files": files, "note": RANDOM_MEASURE_NOTE}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)

