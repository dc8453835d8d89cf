"""Reflected Brownian motion in the torus minus the unit ball.

The discretisation is the projection scheme: take the free Brownian step,
and if it lands inside the ball, project radially back onto the sphere and
add the penetration depth to the local time.  With ``accelerate=True`` the
free flight away from the obstacle is replaced by walk-on-spheres jumps (see
``_kernels``), which leaves the law of the path at boundary contacts
unchanged but skips the millions of interior steps a small ``dt`` would
otherwise cost.  Time-based stopping needs plain Euler stepping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from . import _kernels as K
from .errors import BudgetExceededError, DegenerateStepError, GeometryError, ValidationError
from .geometry import DomainGeometry, canonicalize, is_on_sphere, min_image_diff
from .noise import NoiseStream

DEFAULT_MAX_STEPS = 10**9
#: boundary-layer half-width in units of sqrt(dt) for accelerated runs
DEFAULT_LAYER = 4.0

_REC_CAP = 1 << 14
_CON_CAP = 1 << 14


@lru_cache(maxsize=1)
def exit_time_table() -> np.ndarray:
    return K.build_exit_time_table()


# ---------------------------------------------------------------------------
# value types


@dataclass
class RbmState:
    position: np.ndarray
    local_time: float = 0.0
    clock: float = 0.0

    def copy(self) -> "RbmState":
        return RbmState(self.position.copy(), self.local_time, self.clock)


@dataclass(frozen=True)
class FixedTime:
    T: float


@dataclass(frozen=True)
class LocalTimeX:
    """Stop when the first process has local time >= b."""

    b: float


@dataclass(frozen=True)
class LocalTimeEither:
    """Stop when either process has local time >= b."""

    b: float


@dataclass(frozen=True)
class HitSphere:
    """Stop at the first boundary contact."""


@dataclass(frozen=True)
class EscapeRadius:
    R: float


StoppingRule = Union[FixedTime, LocalTimeX, LocalTimeEither, HitSphere, EscapeRadius]


@dataclass
class PathTrace:
    """Samples of one process.

    ``reflected[j]`` says whether the move ending at sample ``j`` fired the
    reflection branch.  ``complete`` is True when the trace holds every
    boundary contact and at least one sample inside every interior interval
    between contacts, which is what excursion extraction needs.
    """

    t: np.ndarray
    positions: np.ndarray
    local_time: np.ndarray
    reflected: np.ndarray
    complete: bool = True

    def __len__(self):
        return len(self.t)


@dataclass
class Trajectory:
    state: RbmState
    trace: PathTrace | None
    steps: int
    jumps: int
    status: str
    drive: np.ndarray


@dataclass
class CoupledPath:
    """Synchronously coupled pair driven by one noise stream."""

    x: RbmState
    y: RbmState
    t: np.ndarray
    R: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    steps: int
    jumps: int
    status: str
    x_contacts: PathTrace | None = None
    positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def M(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.R)


@dataclass
class FirstPassage:
    hit: bool
    point: np.ndarray | None
    position: np.ndarray
    steps: int


# ---------------------------------------------------------------------------
# single step (reference implementation of the scheme)


def step(state: RbmState, increment, geom: DomainGeometry, dt: float) -> tuple[RbmState, float]:
    """One projection-scheme step.  Returns the new state and its local-time
    increment."""
    inc = np.asarray(increment, dtype=np.float64)
    if inc.shape != (3,) or not np.all(np.isfinite(inc)):
        raise ValidationError("increment must be a finite 3-vector")
    if np.linalg.norm(state.position) < 1.0 - 1e-12:
        raise GeometryError("state lies inside the obstacle")
    x = canonicalize(state.position + inc, geom)
    r = float(np.linalg.norm(x))
    dl = 0.0
    if r < 1.0:
        if r == 0.0:
            raise DegenerateStepError("free move landed on the obstacle centre")
        x = x / r
        dl = 1.0 - r
    return RbmState(x, state.local_time + dl, state.clock + dt), dl


# ---------------------------------------------------------------------------
# kernel driver


def _rules(rule) -> list:
    if rule is None:
        return []
    if isinstance(rule, (list, tuple)):
        return list(rule)
    return [rule]


class _Run:
    """Owns the kernel state of one (possibly multi-particle) simulation."""

    def __init__(self, starts, noise: NoiseStream, geom: DomainGeometry, *, accelerate=False,
                 layer=DEFAULT_LAYER, max_steps=DEFAULT_MAX_STEPS, record_every=0,
                 contacts=False, killed=False):
        starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
        for p in starts:
            if not np.all(np.isfinite(p)):
                raise GeometryError("non-finite start")
        self.pos = np.ascontiguousarray(canonicalize(starts, geom))
        if np.any(np.linalg.norm(self.pos, axis=1) < 1.0 - 1e-12):
            raise GeometryError("start point lies inside the obstacle")
        self.n = self.pos.shape[0]
        self.geom = geom
        self.noise = noise
        self.reader = noise.reader()
        self.z = self.reader.next_block()
        self.lt = np.zeros(self.n)
        self.clock = np.zeros(1)
        self.ctr = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.drive = np.zeros(3)
        self.accel = bool(accelerate)
        self.layer_w = layer * noise.sqrt_dt
        self.max_steps = int(max_steps)
        self.killed = bool(killed)
        self.record_every = int(record_every)
        rc = _REC_CAP if self.record_every > 0 else 1
        self.rec_t = np.zeros(rc)
        self.rec_pos = np.zeros((rc, self.n, 3))
        self.rec_lt = np.zeros((rc, self.n))
        self.rec_flag = np.zeros((rc, self.n), dtype=np.uint8)
        self.contacts = bool(contacts)
        self.con_t = np.zeros(_CON_CAP)
        self.con_pos = np.zeros((_CON_CAP, 3))
        self.con_lt = np.zeros(_CON_CAP)
        self.con_flag = np.zeros(_CON_CAP, dtype=np.uint8)
        self.hit_point = np.zeros(3)
        self._rec_chunks: list = []
        self._con_chunks: list = []
        on_sphere = is_on_sphere(self.pos[0], 1e-12)
        self.ctr[K.C_PREV_CONTACT] = 1 if on_sphere else 0
        if self.record_every > 0:
            self._rec_chunks.append((np.zeros(1), self.pos[None].copy(), np.zeros((1, self.n)),
                                     np.zeros((1, self.n), dtype=np.uint8)))
        if self.contacts:
            self._con_chunks.append((np.zeros(1), self.pos[:1].copy(), np.zeros(1),
                                     np.array([1 if on_sphere else 0], dtype=np.uint8)))

    def _drain(self):
        n = self.ctr[K.C_NREC]
        if n and self.record_every > 0:
            self._rec_chunks.append((self.rec_t[:n].copy(), self.rec_pos[:n].copy(),
                                     self.rec_lt[:n].copy(), self.rec_flag[:n].copy()))
        self.ctr[K.C_NREC] = 0
        m = self.ctr[K.C_NCON]
        if m and self.contacts:
            self._con_chunks.append((self.con_t[:m].copy(), self.con_pos[:m].copy(),
                                     self.con_lt[:m].copy(), self.con_flag[:m].copy()))
        self.ctr[K.C_NCON] = 0

    def take_records(self):
        """Hand over recorded samples gathered so far and forget them."""
        self._drain()
        chunks, self._rec_chunks = self._rec_chunks, []
        return chunks

    def run(self, *, step_target=-1, lt_stop=None, stop_on_contact=False, escape_r=math.inf) -> int:
        if lt_stop is None:
            lt_stop = np.full(self.n, np.inf)
        lt_stop = np.asarray(lt_stop, dtype=np.float64)
        table = exit_time_table()
        while True:
            status = K.advance(
                self.pos, self.lt, self.clock, self.ctr, self.drive, self.z,
                self.noise.dt, self.geom.rho, self.killed, int(step_target), lt_stop,
                bool(stop_on_contact), float(escape_r), self.accel, self.layer_w,
                self.max_steps, self.record_every, self.rec_t, self.rec_pos, self.rec_lt,
                self.rec_flag, self.con_t, self.con_pos, self.con_lt, self.con_flag,
                self.hit_point, table,
            )
            if status == K.NEED_NOISE:
                self.z = self.reader.next_block()
                self.ctr[K.C_KZ] = 0
            elif status == K.DRAIN:
                self._drain()
            elif status == K.DEGENERATE:
                raise DegenerateStepError("free move landed on the obstacle centre")
            else:
                self._drain()
                return status

    @property
    def steps(self) -> int:
        return int(self.ctr[K.C_EULER])

    @property
    def jumps(self) -> int:
        return int(self.ctr[K.C_WOS])

    def state(self, i: int) -> RbmState:
        return RbmState(self.pos[i].copy(), float(self.lt[i]), float(self.clock[0]))

    def records(self):
        chunks = self._rec_chunks
        if not chunks:
            return None
        return (np.concatenate([c[0] for c in chunks]), np.concatenate([c[1] for c in chunks]),
                np.concatenate([c[2] for c in chunks]), np.concatenate([c[3] for c in chunks]))

    def contact_trace(self) -> PathTrace | None:
        if not self.contacts:
            return None
        c = self._con_chunks
        return PathTrace(np.concatenate([a[0] for a in c]), np.concatenate([a[1] for a in c]),
                         np.concatenate([a[2] for a in c]), np.concatenate([a[3] for a in c]).astype(bool))


def _rule_params(rules, geom: DomainGeometry, dt: float, npart: int) -> dict:
    step_target = -1
    lt_stop = np.full(npart, np.inf)
    stop_on_contact = False
    escape_r = math.inf
    for r in rules:
        if isinstance(r, FixedTime):
            if r.T < 0:
                raise ValidationError("FixedTime needs T >= 0")
            step_target = int(round(r.T / dt))
        elif isinstance(r, LocalTimeX):
            if r.b < 0:
                raise ValidationError("local-time threshold must be >= 0")
            lt_stop[0] = min(lt_stop[0], r.b)
        elif isinstance(r, LocalTimeEither):
            if r.b < 0:
                raise ValidationError("local-time threshold must be >= 0")
            lt_stop[:] = np.minimum(lt_stop, r.b)
        elif isinstance(r, HitSphere):
            stop_on_contact = True
        elif isinstance(r, EscapeRadius):
            if geom.is_torus:
                raise ValidationError("EscapeRadius is only valid in exterior mode")
            escape_r = float(r.R)
        else:
            raise ValidationError(f"unknown stopping rule {r!r}")
    if step_target < 0 and not np.any(np.isfinite(lt_stop)) and not stop_on_contact and not math.isfinite(escape_r):
        raise ValidationError("no stopping rule given")
    return dict(step_target=step_target, lt_stop=lt_stop, stop_on_contact=stop_on_contact, escape_r=escape_r)


def _check_accel(rules, accelerate):
    if accelerate and any(isinstance(r, FixedTime) for r in rules):
        raise ValidationError("FixedTime rules need plain Euler stepping (accelerate=False)")


_STATUS = {K.DONE: "stopped", K.BUDGET: "budget", K.ESCAPED: "escaped", K.HIT: "hit"}


def simulate(x0, noise: NoiseStream, rule, geom: DomainGeometry, *, record_every: int = 0,
             contacts: bool = False, accelerate: bool = False, layer: float = DEFAULT_LAYER,
             max_steps: int = DEFAULT_MAX_STEPS, raise_on_budget: bool = True) -> Trajectory:
    """Run one reflected Brownian motion until ``rule`` fires.

    ``rule`` may be a single stopping rule or a sequence (first to fire
    wins).  ``record_every=k`` keeps every k-th sample; ``contacts=True``
    keeps the compressed boundary-contact trace needed for excursion work.
    """
    rules = _rules(rule)
    _check_accel(rules, accelerate)
    params = _rule_params(rules, geom, noise.dt, 1)
    run = _Run(x0, noise, geom, accelerate=accelerate, layer=layer, max_steps=max_steps,
               record_every=record_every, contacts=contacts)
    status = run.run(**params)
    if status == K.BUDGET and raise_on_budget:
        raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    trace = None
    if contacts:
        trace = run.contact_trace()
    elif record_every > 0:
        t, p, l, f = run.records()
        trace = PathTrace(t, p[:, 0], l[:, 0], f[:, 0].astype(bool), complete=record_every == 1 and not accelerate)
    return Trajectory(run.state(0), trace, run.steps, run.jumps, _STATUS.get(status, "stopped"), run.drive.copy())


def simulate_pair(x0, y0, noise: NoiseStream, rule, geom: DomainGeometry, *, record_every: int = 1,
                  contacts: bool = False, accelerate: bool = False, layer: float = DEFAULT_LAYER,
                  max_steps: int = DEFAULT_MAX_STEPS, raise_on_budget: bool = True,
                  keep_positions: bool = False) -> CoupledPath:
    """Run X from ``x0`` and Y from ``y0`` on the same increments."""
    rules = _rules(rule)
    _check_accel(rules, accelerate)
    params = _rule_params(rules, geom, noise.dt, 2)
    run = _Run(np.vstack([x0, y0]), noise, geom, accelerate=accelerate, layer=layer,
               max_steps=max_steps, record_every=record_every, contacts=contacts)
    status = run.run(**params)
    if status == K.BUDGET and raise_on_budget:
        raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    return _coupled_from_run(run, status, keep_positions)


def _coupled_from_run(run: _Run, status: int, keep_positions: bool) -> CoupledPath:
    rec = run.records()
    if rec is None:
        t = np.zeros(0)
        R = lx = ly = np.zeros(0)
        p = None
    else:
        t, p, l, _ = rec
        R = np.linalg.norm(min_image_diff(p[:, 0], p[:, 1], run.geom), axis=1)
        lx, ly = l[:, 0], l[:, 1]
    return CoupledPath(run.state(0), run.state(1), t, R, lx, ly, run.steps, run.jumps,
                       _STATUS.get(status, "stopped"), run.contact_trace(),
                       p if keep_positions else None)


def first_hit_or_escape(x0, noise: NoiseStream, far_radius: float = math.inf,
                        geom: DomainGeometry | None = None, *, method: str = "wos",
                        layer: float = DEFAULT_LAYER, max_steps: int = DEFAULT_MAX_STEPS) -> FirstPassage:
    """Run un-reflected Brownian motion from ``x0`` until it reaches the unit
    sphere or (exterior mode) radius ``far_radius``.

    The hit point is the exact crossing of the straight-line interpolant of
    the last step with the sphere.  ``method="wos"`` uses walk-on-spheres
    jumps outside the boundary layer, ``"euler"`` steps every ``dt``.
    """
    geom = geom or DomainGeometry.exterior()
    x0 = np.asarray(x0, dtype=np.float64)
    r0 = float(np.linalg.norm(canonicalize(x0, geom)))
    if r0 <= 1.0:
        raise GeometryError("start must lie strictly outside the unit ball")
    if geom.is_torus:
        if math.isfinite(far_radius):
            raise ValidationError("far_radius is only meaningful in exterior mode")
    elif r0 > far_radius:
        raise GeometryError("start lies beyond far_radius")
    if method not in ("wos", "euler"):
        raise ValidationError(f"unknown method {method!r}")
    run = _Run(x0, noise, geom, accelerate=method == "wos", layer=layer, max_steps=max_steps, killed=True)
    status = run.run(escape_r=far_radius)
    if status == K.BUDGET:
        raise BudgetExceededError(f"step budget {max_steps} exhausted at dt={noise.dt}")
    if status == K.HIT:
        return FirstPassage(True, run.hit_point.copy(), run.pos[0].copy(), run.steps + run.jumps)
    return FirstPassage(False, None, run.pos[0].copy(), run.steps + run.jumps)


# ---------------------------------------------------------------------------
# JSONL trace emission


def write_trace_jsonl(path, trace: PathTrace | CoupledPath, config: dict) -> None:
    """Header record with the configuration, then one record per sample."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": config}, sort_keys=True) + "\n")
        if isinstance(trace, CoupledPath):
            if trace.positions is None:
                raise ValidationError("coupled trace needs keep_positions=True")
            for j in range(len(trace.t)):
                rec = {"t": float(trace.t[j]), "x": trace.positions[j, 0].tolist(), "l": float(trace.lx[j]),
                       "y": trace.positions[j, 1].tolist(), "ly": float(trace.ly[j])}
                fh.write(json.dumps(rec) + "\n")
        else:
            for j in range(len(trace.t)):
                rec = {"t": float(trace.t[j]), "x": trace.positions[j].tolist(), "l": float(trace.local_time[j])}
                fh.write(json.dumps(rec) + "\n")
