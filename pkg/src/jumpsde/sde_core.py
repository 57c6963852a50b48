"""Event-driven exact integration of pure-jump SDEs.

The state solves ``dx/dt = b(x) - c0(x)`` between events, where ``c0`` is
the compensator of the compensated jump part, and jumps by
``x <- x + g_source(x-, mark)`` at each event of a realized
:class:`~jumpsde.point_process.EventStream`.

Drift flows are exact for affine drifts. Other drifts use classical RK4
with ``n = ceil(max(1, dt) * 1024 / substep_scale)`` equal substeps over an
inter-event gap ``dt``, i.e. ``h = 2**-10 * dt`` capped at ``2**-10``.
The stepper assumes the drift is locally Lipschitz.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from . import _io
from .errors import IntegrationError, InvalidInput
from .point_process import (
    EventStream,
    IntensityRegion,
    Source,
    StreamRole,
    derive_seed,
    merge_streams,
    sample_stream,
)

SUBSTEPS = 1024


class Drift:
    """A drift ``x -> b(x)`` with its inter-event flow."""

    affine: Optional[tuple[float, float]] = None

    def __init__(self, fn: Callable[[float], float], label: str = "drift"):
        self.fn = fn
        self.label = label

    def __call__(self, x):
        return self.fn(x)

    def __repr__(self):
        return f"{type(self).__name__}({self.label!r})"

    def is_zero_at(self, x) -> bool:
        """True if the flow is the identity for a state started at ``x``."""
        return False

    def flow(self, x: float, dt: float, substep_scale: float = 1.0) -> float:
        if dt == 0:
            return x
        n = math.ceil(max(1.0, dt) * SUBSTEPS / substep_scale)
        return rk4(self.fn, x, dt, n)


class AffineDrift(Drift):
    """``b(x) = alpha + beta * x``, flowed in closed form."""

    def __init__(self, alpha: float = 0.0, beta: float = 0.0):
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.affine = (self.alpha, self.beta)
        super().__init__(self._value, label=f"{self.alpha!r}+{self.beta!r}*x")

    def _value(self, x):
        return self.alpha + self.beta * x

    def is_zero_at(self, x):
        return self.alpha == 0.0 and self.beta == 0.0

    def flow(self, x, dt, substep_scale=1.0):
        if dt == 0 or (self.alpha == 0.0 and self.beta == 0.0):
            return x
        bdt = self.beta * dt
        if abs(bdt) < 1e-300:
            return x + self.alpha * dt
        # both terms are monotone in x under rounding, so ordered starts stay ordered
        return x * math.exp(bdt) + self.alpha * (math.expm1(bdt) / self.beta)


ZERO_DRIFT = AffineDrift(0.0, 0.0)


def rk4(f, x, dt, n):
    h = dt / n
    half = 0.5 * h
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + half * k1)
        k3 = f(x + half * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def as_drift(b) -> Drift:
    if isinstance(b, Drift):
        return b
    if b is None:
        return ZERO_DRIFT
    if isinstance(b, tuple):
        return AffineDrift(*b)
    return Drift(b)


def drift_flow(b, x: float, dt: float, substep_scale: float = 1.0) -> float:
    """Flow ``dx/dt = b(x)`` from ``x`` for time ``dt``."""
    if not dt >= 0:
        raise InvalidInput(f"dt must be non-negative, got {dt}")
    out = as_drift(b).flow(x, dt, substep_scale)
    if not math.isfinite(out):
        raise IntegrationError("drift flow produced a non-finite state", state=x)
    return out


def merge_drift(b, compensator) -> Drift:
    """Effective drift ``b - c0`` stepped as a single vector field."""
    b = as_drift(b)
    if compensator is None:
        return b
    merged = getattr(compensator, "merged_with", None)
    if merged is not None:
        out = merged(b)
        if out is not None:
            return out
    c = as_drift(compensator)
    if b.affine is not None and c.affine is not None:
        return AffineDrift(b.affine[0] - c.affine[0], b.affine[1] - c.affine[1])
    return Drift(lambda x: b(x) - c(x), label=f"{b.label}-{c.label}")


class MonotoneFlag(str, enum.Enum):
    VERIFIED = "verified"
    FALSIFIED = "falsified"
    UNCHECKED = "unchecked"


@dataclass(frozen=True)
class JumpKernel:
    """Jump size ``g(x, mark)`` plus optional fast paths.

    ``jump_map(x, mark)`` returns ``x + g(x, mark)`` directly when the sum
    has a rounding-exact form. ``batch_jump_map(x, marks)`` is a numpy
    version that broadcasts ``x`` against the mark array.
    """

    displacement: Callable[[float, Any], float]
    compensator: Any = None
    monotone_flag: MonotoneFlag = MonotoneFlag.UNCHECKED
    jump_map: Optional[Callable[[float, Any], float]] = None
    batch_jump_map: Optional[Callable[[Any, np.ndarray], np.ndarray]] = None
    label: str = "kernel"

    def apply(self, x, mark):
        if self.jump_map is not None:
            return float(self.jump_map(x, mark))
        return x + float(self.displacement(x, mark))

    def with_flag(self, flag) -> "JumpKernel":
        return replace(self, monotone_flag=MonotoneFlag(flag))


def additive_kernel(field_name: str = "u", compensator=None) -> JumpKernel:
    """``g(x, u) = u``: every event translates the state by its mark."""

    def g(x, mark):
        return float(mark[field_name])

    def batch(x, marks):
        return x + marks[field_name]

    return JumpKernel(g, compensator=compensator, batch_jump_map=batch, label="additive")


@dataclass(frozen=True)
class ModelSpec:
    """Drift, compensated part (kernel0, region0) and uncompensated part.

    ``interior`` optionally bounds the states on which the model is faithful
    (for truncated models); leaving it sets the path's boundary flag.
    ``fixed_stream`` replaces sampling with a scripted event list.
    """

    drift: Any
    kernel0: Optional[JumpKernel]
    region0: IntensityRegion
    kernel1: Optional[JumpKernel] = None
    region1: Optional[IntensityRegion] = None
    label: str = "model"
    interior: Optional[tuple[float, float]] = None
    fixed_stream: Optional[EventStream] = None
    effective_drift: Drift = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.region0 is not None and self.region0.total_rate > 0:
            if self.kernel0 is None or self.kernel0.compensator is None:
                raise InvalidInput("compensated region with positive mass needs a compensator")
        if self.region1 is not None and self.region1.total_rate > 0 and self.kernel1 is None:
            raise InvalidInput("uncompensated region without kernel")
        compensator = self.kernel0.compensator if self.kernel0 is not None else None
        object.__setattr__(self, "drift", as_drift(self.drift))
        object.__setattr__(self, "effective_drift", merge_drift(self.drift, compensator))

    def kernel(self, source) -> JumpKernel:
        k = self.kernel0 if int(source) == Source.COMPENSATED0 else self.kernel1
        if k is None:
            raise InvalidInput(f"model {self.label!r} has no kernel for source {int(source)}")
        return k

    def in_interior(self, x) -> bool:
        return self.interior is None or self.interior[0] <= x <= self.interior[1]

    def sample_noise(self, T: float, master_seed: int, replicate_id: int) -> EventStream:
        """Sample both driving measures with role-derived seeds and merge them.

        Models with a ``fixed_stream`` return it unchanged for every seed;
        :func:`integrate` ignores events after ``T``.
        """
        if self.fixed_stream is not None:
            if self.fixed_stream.horizon < T:
                raise InvalidInput("scripted stream is shorter than T")
            return self.fixed_stream
        parts = []
        for region, role in ((self.region0, StreamRole.NOISE0), (self.region1, StreamRole.NOISE1)):
            if region is not None:
                parts.append(sample_stream(region, T, derive_seed(master_seed, replicate_id, role)))
        stream = parts[0]
        for other in parts[1:]:
            stream = merge_streams(stream, other)
        return stream


class CadlagPath:
    """Exact piecewise record of one integrated path.

    Segment ``i`` starts at ``seg_t[i]`` with value ``seg_x[i]`` and follows
    the drift flow until the next ledger time. The ledger holds every event
    of the driving stream, including ones that did not move the state.
    """

    def __init__(
        self,
        x0,
        horizon,
        drift,
        times,
        pre,
        post,
        sources,
        seq,
        marks,
        *,
        substep_scale=1.0,
        boundary_touched=False,
        valid_until=None,
    ):
        self.x0 = float(x0)
        self.horizon = float(horizon)
        self.drift = drift
        self.times = times
        self.pre = pre
        self.post = post
        self.sources = sources
        self.seq = seq
        self.marks = marks
        self.substep_scale = substep_scale
        self.boundary_touched = boundary_touched
        self.valid_until = self.horizon if valid_until is None else float(valid_until)
        self.seg_t = np.concatenate([[0.0], times])
        self.seg_x = np.concatenate([[self.x0], post])
        self._times_list = times.tolist()
        for arr in (times, pre, post, sources, seq, self.seg_t, self.seg_x):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        return f"CadlagPath(x0={self.x0!r}, horizon={self.horizon!r}, n_events={len(self)})"

    @property
    def halted(self) -> bool:
        return self.valid_until < self.horizon

    @property
    def segments(self):
        ends = np.concatenate([self.times, [self.valid_until]])
        return [
            (float(s), float(e), float(x), self.drift)
            for s, e, x in zip(self.seg_t, ends, self.seg_x)
        ]

    def _check_t(self, t):
        if not 0 <= t <= self.valid_until:
            raise InvalidInput(f"time {t} outside the valid range [0, {self.valid_until}]")

    def value_at(self, t: float) -> float:
        """X(t)."""
        self._check_t(t)
        i = bisect_right(self._times_list, t)
        return self.drift.flow(float(self.seg_x[i]), t - float(self.seg_t[i]), self.substep_scale)

    def left_limit(self, t: float) -> float:
        """X(t-); equals X(0) at t = 0."""
        self._check_t(t)
        i = bisect_left(self._times_list, t)
        return self.drift.flow(float(self.seg_x[i]), t - float(self.seg_t[i]), self.substep_scale)

    @property
    def terminal(self) -> float:
        return self.value_at(self.valid_until)

    @property
    def drift_is_trivial(self) -> bool:
        """True when every segment is constant (pure-jump path)."""
        return all(self.drift.is_zero_at(float(x)) for x in self.seg_x)

    def ledger_keys(self) -> set:
        return set(zip(self.times.tolist(), self.sources.tolist(), self.seq.tolist()))

    def summary(self) -> dict:
        return {
            "x0": self.x0,
            "T": self.horizon,
            "n_events": len(self),
            "n_moves": int(np.count_nonzero(self.pre != self.post)),
            "X_T": self.terminal if not self.halted else None,
            "boundary_touched": self.boundary_touched,
            "valid_until": self.valid_until,
        }

    def rows(self, grid_points: int = 0):
        """``(t, X(t-), X(t), kind)`` at ledger times plus optional grid times."""
        out = [(0.0, self.x0, self.x0, "start")]
        out += [
            (t, a, b, "event")
            for t, a, b in zip(self.times.tolist(), self.pre.tolist(), self.post.tolist())
        ]
        if grid_points > 0:
            event_times = set(self._times_list)
            for t in np.linspace(0.0, self.valid_until, grid_points + 1)[1:].tolist():
                if t not in event_times:
                    out.append((t, self.left_limit(t), self.value_at(t), "grid"))
        out.sort(key=lambda r: (r[0], r[3] != "event"))
        return out

    def to_csv(self, path, grid_points: int = 0, meta=None) -> None:
        info = {"kind": "path", "x0": self.x0, "T": self.horizon}
        info.update(meta or {})
        _io.write_csv(path, ["t", "x_minus", "x", "kind"], self.rows(grid_points), info)


def _tie_reversed(times: np.ndarray) -> np.ndarray:
    n = len(times)
    return np.lexsort((-np.arange(n), times))


def integrate(
    model: ModelSpec,
    stream: EventStream,
    x0: float,
    T: Optional[float] = None,
    *,
    substep_scale: float = 1.0,
    tie_order: str = "forward",
    halt_on_boundary: bool = False,
    chunk: int = 256,
) -> CadlagPath:
    """Integrate ``model`` against the realized ``stream`` from ``x0`` on [0, T].

    ``tie_order="reverse"`` processes events with identical times in
    reverse key order (a scheme variant; ties have probability zero).
    With ``halt_on_boundary`` the path stops at the first ledger time where
    the state leaves ``model.interior``.
    """
    if T is None:
        T = stream.horizon
    T = float(T)
    if not (math.isfinite(T) and T > 0):
        raise InvalidInput(f"T must be finite and positive, got {T}")
    if stream.horizon < T:
        raise InvalidInput(f"stream horizon {stream.horizon} shorter than T={T}")
    x0 = float(x0)
    if not math.isfinite(x0):
        raise InvalidInput("x0 must be finite")

    if tie_order not in ("forward", "reverse"):
        raise InvalidInput(f"unknown tie_order {tie_order!r}")

    m = int(np.searchsorted(stream.times, T, side="right"))
    times, sources, seq, marks = stream.times[:m], stream.sources[:m], stream.seq[:m], stream.marks[:m]
    if tie_order == "reverse" and m:
        order = _tie_reversed(times)
        times, sources, seq, marks = times[order], sources[order], seq[order], marks[order]

    drift = model.effective_drift
    kernels = {}
    for s in np.unique(sources).tolist():
        kernels[s] = model.kernel(s)
    batchable = all(k.batch_jump_map is not None for k in kernels.values())
    single_source = len(kernels) == 1

    pre = np.empty(m)
    post = np.empty(m)
    touched = not model.in_interior(x0)
    halt_at = None
    if touched and halt_on_boundary:
        halt_at = 0.0
        m = 0

    x = x0
    t_prev = 0.0
    i = 0
    width = chunk
    while i < m and halt_at is None:
        if batchable and drift.is_zero_at(x):
            stop = min(m, i + width)
            block = marks[i:stop]
            if single_source:
                (k,) = kernels.values()
                posts = np.asarray(k.batch_jump_map(x, block), dtype=np.float64)
            else:
                posts = np.empty(stop - i)
                src = sources[i:stop]
                for s, k in kernels.items():
                    sel = src == s
                    if sel.any():
                        posts[sel] = k.batch_jump_map(x, block[sel])
            moved = np.flatnonzero(posts != x)
            if len(moved) == 0:
                pre[i:stop] = x
                post[i:stop] = x
                t_prev = float(times[stop - 1])
                i = stop
                width *= 2
                continue
            j = i + int(moved[0])
            pre[i : j + 1] = x
            post[i:j] = x
            x_new = float(posts[j - i])
            if not math.isfinite(x_new):
                raise IntegrationError(
                    "kernel returned a non-finite value", float(times[j]), x, marks[j]
                )
            post[j] = x_new
            x = x_new
            t_prev = float(times[j])
            i = j + 1
            width = chunk
        else:
            t = float(times[i])
            x_minus = drift.flow(x, t - t_prev, substep_scale)
            if not math.isfinite(x_minus):
                raise IntegrationError("drift stepper diverged", t, x, None)
            try:
                x_new = model.kernel(sources[i]).apply(x_minus, marks[i])
            except (OverflowError, ZeroDivisionError, ValueError) as exc:
                raise IntegrationError(f"kernel evaluation failed: {exc}", t, x_minus, marks[i]) from exc
            if not math.isfinite(x_new):
                raise IntegrationError("kernel returned a non-finite value", t, x_minus, marks[i])
            pre[i] = x_minus
            post[i] = x_new
            x = x_new
            t_prev = t
            i += 1
            j = i - 1
        if model.interior is not None:
            lo, hi = model.interior
            if not (lo <= pre[j] <= hi and lo <= x <= hi):
                touched = True
                if halt_on_boundary:
                    halt_at = float(times[j])
                    m = j + 1

    if halt_at is None:
        x_T = drift.flow(x, T - t_prev, substep_scale)
        if not math.isfinite(x_T):
            raise IntegrationError("drift stepper diverged", T, x, None)
        if not model.in_interior(x_T):
            touched = True

    return CadlagPath(
        x0,
        T,
        drift,
        np.array(times[:m]),
        pre[:m],
        post[:m],
        np.array(sources[:m]),
        np.array(seq[:m]),
        marks[:m],
        substep_scale=substep_scale,
        boundary_touched=touched,
        valid_until=halt_at,
    )


@dataclass
class MonotoneReport:
    status: MonotoneFlag
    witnesses: list
    n_marks: int
    n_grid: int

    @property
    def verified(self) -> bool:
        return self.status is MonotoneFlag.VERIFIED

    def to_dict(self):
        return {
            "status": self.status.value,
            "n_marks": self.n_marks,
            "n_grid": self.n_grid,
            "witnesses": [
                {"mark": _mark_dict(u), "x1": x1, "x2": x2} for u, x1, x2 in self.witnesses
            ],
        }


def _mark_dict(mark):
    names = getattr(getattr(mark, "dtype", None), "names", None)
    if names:
        return {n: float(mark[n]) for n in names}
    return float(mark) if np.isscalar(mark) else mark


def check_monotone(kernel: JumpKernel, mark_sample, x_grid, max_witnesses: int = 10) -> MonotoneReport:
    """Check that ``x -> x + g(x, u)`` is non-decreasing along ``x_grid``.

    ``x_grid`` is either one sorted 1-D grid shared by all marks or a 2-D
    array holding one sorted grid per mark.
    """
    grid = np.asarray(x_grid, dtype=np.float64)
    n_marks = len(mark_sample)
    if n_marks == 0 or grid.size == 0:
        raise InvalidInput("mark sample and grid must be non-empty")
    per_mark = grid.ndim == 2
    if per_mark and grid.shape[0] != n_marks:
        raise InvalidInput("2-D grid needs one row per mark")
    if np.any(np.diff(grid, axis=-1) < 0):
        raise InvalidInput("grid must be sorted")

    witnesses = []
    block = 128
    for start in range(0, n_marks, block):
        marks = mark_sample[start : start + block]
        g = grid[start : start + block] if per_mark else np.broadcast_to(grid, (len(marks), grid.size))
        if kernel.batch_jump_map is not None and isinstance(marks, np.ndarray) and marks.dtype.names:
            with np.errstate(all="ignore"):
                vals = np.asarray(kernel.batch_jump_map(g, marks[:, None]), dtype=np.float64)
        else:
            vals = np.array(
                [[_safe_apply(kernel, float(x), u) for x in row] for row, u in zip(g, marks)]
            )
        bad_value = ~np.isfinite(vals)
        bad_order = np.zeros_like(bad_value)
        bad_order[:, :-1] = np.diff(vals, axis=1) < 0
        rows, cols = np.nonzero(bad_value | bad_order)
        for r, c in zip(rows.tolist(), cols.tolist()):
            if len(witnesses) >= max_witnesses:
                break
            x1 = float(g[r, c])
            x2 = x1 if bad_value[r, c] else float(g[r, c + 1])
            witnesses.append((marks[r], x1, x2))
        if len(witnesses) >= max_witnesses:
            break
    status = MonotoneFlag.FALSIFIED if witnesses else MonotoneFlag.VERIFIED
    return MonotoneReport(status, witnesses, n_marks, grid.shape[-1])


def _safe_apply(kernel, x, u):
    try:
        return kernel.apply(x, u)
    except (OverflowError, ZeroDivisionError, ValueError):
        return math.nan
