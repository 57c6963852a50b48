"""Marked Poisson event streams.

A stream is the realized atoms of one or two Poisson random measures on
``(0, T] x marks``. Streams are stored column-wise: a time array, a source
array, an insertion-index array and a structured array of float64 mark
fields. All randomness comes from Philox, a counter-based generator, keyed
by :class:`SeedSpec`.

Seed derivation
---------------
The 128-bit Philox key for ``SeedSpec(master, replicate, role)`` is::

    key = (master mod 2**64) | ((4 * replicate + role) << 64)

which is injective for ``replicate < 2**62``. Distinct keys give
independent substreams without any shared state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import _io
from .errors import InvalidInput

_MASK64 = (1 << 64) - 1


class Source(enum.IntEnum):
    """Which Poisson random measure produced an event."""

    COMPENSATED0 = 0
    UNCOMPENSATED1 = 1


class StreamRole(enum.IntEnum):
    NOISE0 = 0
    NOISE1 = 1
    AUXILIARY = 2


_ROLE_SOURCE = {
    StreamRole.NOISE0: Source.COMPENSATED0,
    StreamRole.NOISE1: Source.UNCOMPENSATED1,
    StreamRole.AUXILIARY: Source.COMPENSATED0,
}


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replicate_id: int
    stream_role: StreamRole

    def __post_init__(self):
        if self.replicate_id < 0 or self.replicate_id >= 1 << 62:
            raise InvalidInput(f"replicate_id out of range: {self.replicate_id}")

    @property
    def key(self) -> int:
        counter = 4 * self.replicate_id + int(self.stream_role)
        return (self.master_seed & _MASK64) | (counter << 64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key))


def derive_seed(master: int, replicate_id: int, stream_role=StreamRole.NOISE0) -> SeedSpec:
    return SeedSpec(int(master), int(replicate_id), StreamRole(stream_role))


def mark_dtype(*names: str) -> np.dtype:
    return np.dtype([(name, np.float64) for name in names])


@dataclass(frozen=True)
class MarkedEvent:
    time: float
    mark: Any
    source: Source
    index: int = 0


@dataclass(frozen=True)
class IntensityRegion:
    """A finite-mass piece of a characteristic measure.

    ``mark_sampler(rng, n)`` must return a structured float64 array of ``n``
    marks drawn from the normalized restriction of the measure.
    """

    total_rate: float
    mark_sampler: Callable[[np.random.Generator, int], np.ndarray]
    region_descriptor: Any = None

    @property
    def mark_dtype(self) -> np.dtype:
        return self.mark_sampler(np.random.Generator(np.random.Philox(0)), 0).dtype

    @classmethod
    def empty(cls, dtype: np.dtype, descriptor: Any = "empty") -> "IntensityRegion":
        def sampler(rng, n):
            return np.zeros(n, dtype=dtype)

        return cls(0.0, sampler, descriptor)


class EventStream:
    """Immutable, totally ordered realization of marked Poisson events.

    Events are sorted by ``(time, source, seq)`` where ``seq`` is the
    insertion index assigned at sampling time; filtering and merging keep
    ``seq`` so keys stay unique.
    """

    __slots__ = ("horizon", "times", "sources", "seq", "marks")

    def __init__(self, horizon, times, sources, seq, marks, *, check=True):
        horizon = float(horizon)
        times = np.ascontiguousarray(times, dtype=np.float64)
        sources = np.ascontiguousarray(sources, dtype=np.int8)
        seq = np.ascontiguousarray(seq, dtype=np.int64)
        marks = np.ascontiguousarray(marks)
        if check:
            if not (math.isfinite(horizon) and horizon > 0):
                raise InvalidInput(f"horizon must be finite and positive, got {horizon}")
            n = len(times)
            if not (len(sources) == len(seq) == len(marks) == n):
                raise InvalidInput("column lengths differ")
            if n:
                if not np.all(np.isfinite(times)) or times[0] <= 0 or times[-1] > horizon:
                    raise InvalidInput("event times must lie in (0, horizon]")
                if np.any(np.diff(times) < 0):
                    raise InvalidInput("event times are not sorted")
                same = times[1:] == times[:-1]
                if np.any(same):
                    a = sources[:-1].astype(np.int64) * (1 << 62) + seq[:-1]
                    b = sources[1:].astype(np.int64) * (1 << 62) + seq[1:]
                    if np.any(same & (b <= a)):
                        raise InvalidInput("tied events are not strictly ordered by (source, seq)")
        for arr in (times, sources, seq, marks):
            arr.flags.writeable = False
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "seq", seq)
        object.__setattr__(self, "marks", marks)

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(self.events)

    def __repr__(self):
        return f"EventStream(horizon={self.horizon!r}, n={len(self)})"

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.marks.dtype == other.marks.dtype
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.sources, other.sources)
            and np.array_equal(self.seq, other.seq)
            and self.marks.tobytes() == other.marks.tobytes()
        )

    __hash__ = None

    @property
    def events(self) -> tuple[MarkedEvent, ...]:
        return tuple(
            MarkedEvent(float(t), m, Source(int(s)), int(i))
            for t, s, i, m in zip(self.times, self.sources, self.seq, self.marks)
        )

    @property
    def mark_fields(self) -> tuple[str, ...]:
        return self.marks.dtype.names or ()

    def keys(self) -> set:
        """Set of ``(time, source, seq)`` keys, used for ledger inclusion."""
        return set(zip(self.times.tolist(), self.sources.tolist(), self.seq.tolist()))

    @classmethod
    def empty(cls, horizon: float, dtype: np.dtype) -> "EventStream":
        return cls(horizon, [], [], [], np.zeros(0, dtype=dtype))

    @classmethod
    def from_events(cls, horizon, events, dtype=None) -> "EventStream":
        """Build a stream from ``(time, mark_dict_or_scalar, source)`` tuples."""
        events = list(events)
        if dtype is None:
            first = events[0][1] if events else {"u": 0.0}
            dtype = mark_dtype(*first.keys()) if isinstance(first, dict) else mark_dtype("u")
        marks = np.zeros(len(events), dtype=dtype)
        for i, (_, mark, _) in enumerate(events):
            if isinstance(mark, dict):
                for name, value in mark.items():
                    marks[i][name] = value
            else:
                marks[i][dtype.names[0]] = mark
        times = np.array([float(e[0]) for e in events], dtype=np.float64)
        sources = np.array([int(e[2]) for e in events], dtype=np.int8)
        seq = np.arange(len(events), dtype=np.int64)
        order = np.lexsort((seq, sources, times))
        return cls(horizon, times[order], sources[order], seq[order], marks[order])

    def to_csv(self, path, meta=None) -> None:
        names = self.mark_fields
        header = ["time", "source", "seq", *names]
        rows = (
            (t, s, i, *(m[name] for name in names))
            for t, s, i, m in zip(self.times, self.sources, self.seq, self.marks)
        )
        info = {"horizon": self.horizon, "kind": "event-stream"}
        info.update(meta or {})
        _io.write_csv(path, header, rows, info)

    @classmethod
    def from_csv(cls, path) -> "EventStream":
        meta, header, rows = _io.read_csv(path)
        if header[:3] != ["time", "source", "seq"]:
            raise InvalidInput(f"not an event-stream CSV: header {header}")
        names = header[3:]
        dtype = mark_dtype(*names)
        marks = np.zeros(len(rows), dtype=dtype)
        for j, name in enumerate(names):
            marks[name] = [float(r[3 + j]) for r in rows]
        return cls(
            float(meta["horizon"]),
            [float(r[0]) for r in rows],
            [int(r[1]) for r in rows],
            [int(r[2]) for r in rows],
            marks,
        )


def _check_horizon(T):
    T = float(T)
    if not math.isfinite(T) or T <= 0:
        raise InvalidInput(f"horizon must be finite and positive, got {T}")
    return T


def sample_stream(region: IntensityRegion, T: float, seed: SeedSpec, source=None) -> EventStream:
    """Sample the Poisson random measure restricted to ``region`` on (0, T].

    Draw order is fixed: count, then times, then marks. The source tag
    defaults to the one implied by ``seed.stream_role``.
    """
    T = _check_horizon(T)
    rate = float(region.total_rate)
    if not math.isfinite(rate) or rate < 0:
        raise InvalidInput(f"region rate must be finite and non-negative, got {rate}")
    if source is None:
        source = _ROLE_SOURCE[seed.stream_role]
    rng = seed.generator()
    n = int(rng.poisson(rate * T)) if rate > 0 else 0
    # 1 - U lies in (0, 1], so times land in (0, T]
    times = np.sort(T * (1.0 - rng.random(n)))
    marks = region.mark_sampler(rng, n)
    if len(marks) != n:
        raise InvalidInput("mark sampler returned the wrong number of marks")
    return EventStream(
        T,
        times,
        np.full(n, int(source), dtype=np.int8),
        np.arange(n, dtype=np.int64),
        marks,
        check=False,
    )


def _promote_marks(a: np.ndarray, b: np.ndarray):
    if a.dtype == b.dtype:
        return np.concatenate([a, b])
    names = list(a.dtype.names or ())
    for name in b.dtype.names or ():
        if name not in names:
            names.append(name)
    out = np.full(len(a) + len(b), np.nan, dtype=mark_dtype(*names))
    for name in a.dtype.names or ():
        out[name][: len(a)] = a[name]
    for name in b.dtype.names or ():
        out[name][len(a):] = b[name]
    return out


def merge_streams(s1: EventStream, s2: EventStream) -> EventStream:
    """Superpose two streams on the same horizon.

    Mark fields missing from one side are filled with NaN.
    """
    if s1.horizon != s2.horizon:
        raise InvalidInput(f"horizons differ: {s1.horizon} vs {s2.horizon}")
    times = np.concatenate([s1.times, s2.times])
    sources = np.concatenate([s1.sources, s2.sources])
    seq = np.concatenate([s1.seq, s2.seq])
    marks = _promote_marks(s1.marks, s2.marks)
    order = np.lexsort((seq, sources, times))
    return EventStream(s1.horizon, times[order], sources[order], seq[order], marks[order])


def filter_stream(s: EventStream, predicate) -> EventStream:
    """Keep the events whose marks satisfy ``predicate``.

    ``predicate`` receives the structured mark array and returns a boolean
    mask (a scalar boolean is broadcast).
    """
    mask = np.asarray(predicate(s.marks))
    if mask.ndim == 0:
        mask = np.full(len(s), bool(mask))
    if mask.shape != (len(s),):
        raise InvalidInput("predicate must return one boolean per event")
    mask = mask.astype(bool)
    return EventStream(
        s.horizon, s.times[mask], s.sources[mask], s.seq[mask], s.marks[mask], check=False
    )
