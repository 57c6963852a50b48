"""Coupled-noise experiments.

Pathwise checks run two integrations on one realized event stream; law
checks compare terminal values across independent seed banks with a
two-sample Kolmogorov-Smirnov test; the truncation ladder realizes every
level from one master stream by filtering.

Replicates are independent tasks keyed by derived seeds. They may run on a
thread pool (``JUMPSDE_THREADS``); results are collected in replicate order
and summed with ``math.fsum``, so reports do not depend on scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput
from .lfv import RadiusLaw, TruncationLevel, lfv_model_spec, lfv_region
from .point_process import (
    EventStream,
    IntensityRegion,
    StreamRole,
    derive_seed,
    filter_stream,
    sample_stream,
)
from .sde_core import CadlagPath, ModelSpec, integrate

KS_C99 = 1.628
MAX_EXPECTED_EVENTS = 5e6


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("JUMPSDE_THREADS", "1")))
    except ValueError:
        return 1


def run_replicates(fn: Callable[[int], object], n: int, threads: int | None = None) -> list:
    threads = worker_count() if threads is None else threads
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class CoupleReport:
    sup_distance: float
    order_violations: int
    terminal_gap: float

    def to_dict(self):
        return asdict(self)


def compare_paths(p1: CadlagPath, p2: CadlagPath) -> CoupleReport:
    """Distance and order statistics over all ledger times of two coupled paths.

    Order violations count ledger values where the path started lower is
    strictly above the other; they are 0 by definition for equal starts.
    """
    if not np.array_equal(p1.times, p2.times):
        raise InvalidInput("paths have different ledgers")
    a = np.concatenate([[p1.x0], p1.pre, p1.post, [p1.terminal]])
    b = np.concatenate([[p2.x0], p2.pre, p2.post, [p2.terminal]])
    sup = float(np.max(np.abs(a - b)))
    if p1.x0 < p2.x0:
        violations = int(np.count_nonzero(a > b))
    elif p1.x0 > p2.x0:
        violations = int(np.count_nonzero(a < b))
    else:
        violations = 0
    return CoupleReport(sup, violations, abs(p1.terminal - p2.terminal))


def couple_paths(
    model: ModelSpec,
    x0a: float,
    x0b: float,
    T: float,
    seed: int,
    replicate_id: int = 0,
    **kwargs,
) -> tuple[CadlagPath, CadlagPath]:
    """Integrate from two starts on the same sampled noise."""
    stream = model.sample_noise(T, seed, replicate_id)
    return integrate(model, stream, x0a, T, **kwargs), integrate(model, stream, x0b, T, **kwargs)


@dataclass(frozen=True)
class SchemeVariant:
    """Integrator options that leave the mathematical solution unchanged."""

    substep_scale: float = 1.0
    tie_order: str = "forward"

    def options(self):
        return {"substep_scale": self.substep_scale, "tie_order": self.tie_order}


def pathwise_uniqueness_probe(
    model: ModelSpec,
    x0: float,
    T: float,
    seed: int,
    scheme_variant: SchemeVariant,
    baseline: SchemeVariant = SchemeVariant(),
    replicate_id: int = 0,
) -> CoupleReport:
    stream = model.sample_noise(T, seed, replicate_id)
    p1 = integrate(model, stream, x0, T, **baseline.options())
    p2 = integrate(model, stream, x0, T, **scheme_variant.options())
    return compare_paths(p1, p2)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / len(a)
    fb = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_threshold(n: int, m: int, c: float = KS_C99) -> float:
    return c * math.sqrt((n + m) / (n * m))


@dataclass
class KSReport:
    statistic: float
    threshold: float
    n_a: int
    n_b: int
    exceeds: bool
    boundary_touched_a: int = 0
    boundary_touched_b: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Representation:
    """A model together with the way its driving stream is produced."""

    model: ModelSpec
    sampler: Callable[[float, int, int], EventStream]
    label: str = ""

    def stream(self, T, master_seed, replicate_id) -> EventStream:
        return self.sampler(T, master_seed, replicate_id)


def direct(model: ModelSpec) -> Representation:
    return Representation(model, model.sample_noise, f"direct:{model.label}")


def filtered(model: ModelSpec, master_region: IntensityRegion, predicate, label="") -> Representation:
    """Noise sampled on a larger region and filtered down to ``predicate``."""

    def sampler(T, master_seed, replicate_id):
        big = sample_stream(master_region, T, derive_seed(master_seed, replicate_id, StreamRole.NOISE0))
        return filter_stream(big, predicate)

    return Representation(model, sampler, label or f"filtered:{model.label}")


def terminal_values(rep: Representation, T, n, master_seed, x0=0.0, threads=None):
    def one(i):
        path = integrate(rep.model, rep.stream(T, master_seed, i), x0, T)
        return path.terminal, path.boundary_touched

    out = run_replicates(one, n, threads)
    return np.array([v for v, _ in out]), sum(1 for _, t in out if t)


def weak_uniqueness_check(
    model_a: Representation,
    model_b: Representation,
    T: float,
    n: int,
    seeds: tuple[int, int],
    x0: float = 0.0,
    threads: int | None = None,
) -> KSReport:
    """KS test on terminal values of two representations of one law."""
    if n < 100:
        raise InvalidInput(f"n={n} is too small for the KS check (need >= 100)")
    if not isinstance(model_a, Representation):
        model_a = direct(model_a)
    if not isinstance(model_b, Representation):
        model_b = direct(model_b)
    xa, ta = terminal_values(model_a, T, n, seeds[0], x0, threads)
    xb, tb = terminal_values(model_b, T, n, seeds[1], x0, threads)
    stat = ks_statistic(xa, xb)
    thr = ks_threshold(n, n)
    config = {
        "representation_a": model_a.label,
        "representation_b": model_b.label,
        "T": T,
        "n": n,
        "seeds": list(seeds),
        "x0": x0,
        "c": KS_C99,
    }
    return KSReport(stat, thr, n, n, stat > thr, ta, tb, config)


@dataclass
class LadderRow:
    k: int
    mean_gap: float
    std_error: float
    replicates: int
    invalidated: int


@dataclass
class LadderReport:
    rows: list
    nesting_violations: int
    config: dict

    def means(self) -> list[float]:
        return [r.mean_gap for r in self.rows]

    def to_dict(self):
        return {
            "rows": [asdict(r) for r in self.rows],
            "nesting_violations": self.nesting_violations,
            "config": self.config,
        }


def truncation_ladder_run(
    law: RadiusLaw,
    kmin: int,
    kmax: int,
    T: float,
    x0: float,
    n: int,
    master_seed: int,
    threads: int | None = None,
) -> LadderReport:
    """Mean ``|X^k_T - X^{k+1}_T|`` for ``k = kmin .. kmax - 1``.

    Each replicate samples one master stream on level ``kmax`` and filters
    it down to every lower level, so consecutive levels share all common
    jumps. Paths stop at their first boundary touch; a replicate is
    excluded from row ``k`` when either level ``k`` or ``k + 1`` touched.
    """
    if not (1 <= kmin < kmax):
        raise InvalidInput(f"need 1 <= kmin < kmax, got {kmin}, {kmax}")
    if n < 1:
        raise InvalidInput("n must be positive")
    levels = list(range(kmin, kmax + 1))
    for k in levels:
        rate = lfv_region(k, law).total_rate
        if rate * T > MAX_EXPECTED_EVENTS:
            raise InvalidInput(f"level {k} expects {rate * T:.3g} events per replicate; too many")
    master_region = lfv_region(kmax, law)
    models = {k: lfv_model_spec(k, law) for k in levels}
    cuts = {k: TruncationLevel(k) for k in levels}

    def one(i):
        master = sample_stream(master_region, T, derive_seed(master_seed, i, StreamRole.NOISE0))
        finals, touched, keys = {}, {}, {}
        for k in levels:
            stream = master if k == kmax else filter_stream(master, cuts[k].contains)
            path = integrate(models[k], stream, x0, T, halt_on_boundary=True)
            touched[k] = path.boundary_touched
            finals[k] = None if path.halted else path.terminal
            keys[k] = path.ledger_keys() if not path.halted else None
        nest = 0
        for k in levels[:-1]:
            if keys[k] is not None and keys[k + 1] is not None and not keys[k] <= keys[k + 1]:
                nest += 1
        return finals, touched, nest

    results = run_replicates(one, n, threads)
    rows = []
    for k in levels[:-1]:
        gaps = [
            abs(f[k] - f[k + 1])
            for f, t, _ in results
            if not (t[k] or t[k + 1])
        ]
        valid = len(gaps)
        if valid:
            mean = math.fsum(gaps) / valid
            var = math.fsum((g - mean) ** 2 for g in gaps) / max(valid - 1, 1)
            se = math.sqrt(var / valid)
        else:
            mean, se = math.nan, math.nan
        rows.append(LadderRow(k, mean, se, valid, n - valid))
    config = {
        "law": law.describe(),
        "kmin": kmin,
        "kmax": kmax,
        "T": T,
        "x0": x0,
        "n": n,
        "master_seed": master_seed,
    }
    return LadderReport(rows, sum(r[2] for r in results), config)
