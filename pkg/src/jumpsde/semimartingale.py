"""Pathwise evaluation of Tanaka's formula and the max-of-two-solutions identity.

Every path produced by :func:`jumpsde.sde_core.integrate` is a finite
variation process: drift flows between events plus a jump ledger. Its
continuous quadratic variation is zero, so the local-time term of Tanaka's
formula must vanish for almost every level. Here that term is computed as a
residual from the other, exactly evaluable, terms.

Drift contributions ``int 1{X_s > a} b(X_s) ds`` are evaluated with 16-point
Gauss-Legendre quadrature on each drift segment, split at the level-crossing
time (found by bracketing root search, ``xtol = 1e-14``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import IntegrationError, InvalidInput
from .point_process import EventStream
from .sde_core import AffineDrift, CadlagPath, ModelSpec

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
CROSSING_XTOL = 1e-14


@dataclass
class TanakaReport:
    level: float
    lhs: float
    stieltjes_term: float
    down_corrections: float
    up_corrections: float
    residual: float

    def to_dict(self):
        return asdict(self)


def _flow_many(drift, u, taus, scale):
    taus = np.asarray(taus, dtype=np.float64)
    if isinstance(drift, AffineDrift):
        a, b = drift.affine
        if a == 0.0 and b == 0.0:
            return np.full_like(taus, u)
        if np.all(np.abs(b * taus) < 1e-300):
            return u + a * taus
        return np.array([drift.flow(u, float(t)) for t in taus])
    return np.array([drift.flow(u, float(t), scale) for t in taus])


def _drift_values(drift, xs):
    if isinstance(drift, AffineDrift):
        return drift.alpha + drift.beta * xs
    return np.array([drift(float(x)) for x in xs])


def _drift_integral(drift, u, lo, hi, scale):
    """``int_lo^hi b(flow(u, tau)) dtau`` by Gauss-Legendre."""
    if hi <= lo:
        return 0.0
    half = 0.5 * (hi - lo)
    taus = lo + half * (_GL_NODES + 1.0)
    xs = _flow_many(drift, u, taus, scale)
    return float(half * np.dot(_GL_WEIGHTS, _drift_values(drift, xs)))


def _segments(path: CadlagPath):
    """Yield ``(start, length, start value, end value)`` for each drift segment."""
    starts = path.seg_t
    ends = np.concatenate([path.times, [path.valid_until]])
    end_vals = np.concatenate([path.pre, [path.terminal]])
    for s, e, u, v in zip(starts.tolist(), ends.tolist(), path.seg_x.tolist(), end_vals.tolist()):
        yield s, e - s, u, v


def _crossing_time(path, u, length, a):
    drift, scale = path.drift, path.substep_scale

    def f(tau):
        return drift.flow(u, tau, scale) - a

    try:
        return brentq(f, 0.0, length, xtol=CROSSING_XTOL)
    except (ValueError, RuntimeError) as exc:
        raise IntegrationError(f"level-crossing root search failed: {exc}", state=u) from exc


def ledger_values(path: CadlagPath) -> np.ndarray:
    return np.unique(np.concatenate([[path.x0, path.terminal], path.pre, path.post]))


def path_range(path: CadlagPath) -> tuple[float, float]:
    vals = ledger_values(path)
    return float(vals.min()), float(vals.max())


def sample_levels(path: CadlagPath, n: int, rng: np.random.Generator) -> np.ndarray:
    """Levels uniform on [min - 1, max + 1] of the path, avoiding ledger values."""
    lo, hi = path_range(path)
    forbidden = ledger_values(path)
    levels = rng.uniform(lo - 1.0, hi + 1.0, n)
    while True:
        clash = np.isin(levels, forbidden)
        if not clash.any():
            return levels
        levels[clash] = rng.uniform(lo - 1.0, hi + 1.0, int(clash.sum()))


def tanaka_sweep(path: CadlagPath, levels) -> list[TanakaReport]:
    """Tanaka decomposition of ``(X_T - a)^+`` at each level."""
    levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.isin(levels, ledger_values(path)).any():
        raise InvalidInput("a level coincides with a ledger value; resample it")
    x0, xT = path.x0, path.terminal
    lhs = np.maximum(xT - levels, 0.0) - np.maximum(x0 - levels, 0.0)

    pre = path.pre[:, None]
    post = path.post[:, None]
    A = levels[None, :]
    above = pre > A
    stieltjes = np.where(above, post - pre, 0.0).sum(axis=0)
    down = np.where(above, np.maximum(A - post, 0.0), 0.0).sum(axis=0)
    up = np.where(~above, np.maximum(post - A, 0.0), 0.0).sum(axis=0)

    drift, scale = path.drift, path.substep_scale
    for _, length, u, v in _segments(path):
        if length <= 0 or drift.is_zero_at(u):
            continue
        full = _drift_integral(drift, u, 0.0, length, scale)
        stieltjes += np.where(np.minimum(u, v) > levels, full, 0.0)
        crossing = np.flatnonzero((np.minimum(u, v) <= levels) & (np.maximum(u, v) > levels))
        for j in crossing.tolist():
            a = float(levels[j])
            tau = _crossing_time(path, u, length, a)
            if u > a:
                stieltjes[j] += _drift_integral(drift, u, 0.0, tau, scale)
            else:
                stieltjes[j] += _drift_integral(drift, u, tau, length, scale)

    residual = lhs - stieltjes - down - up
    return [
        TanakaReport(float(a), float(l), float(s), float(d), float(p), float(r))
        for a, l, s, d, p, r in zip(levels, lhs, stieltjes, down, up, residual)
    ]


def tanaka_residual(path: CadlagPath, a: float) -> TanakaReport:
    return tanaka_sweep(path, [a])[0]


class PathDifference:
    """``X = X2 - X1`` for two paths driven by the same event stream."""

    def __init__(self, path1: CadlagPath, path2: CadlagPath):
        check_same_noise(path1, path2)
        self.path1 = path1
        self.path2 = path2
        self.x0 = path2.x0 - path1.x0
        self.times = path1.times
        self.pre = path2.pre - path1.pre
        self.post = path2.post - path1.post
        self.seg_x = path2.seg_x - path1.seg_x
        self.valid_until = path1.valid_until

    @property
    def terminal(self):
        return self.path2.terminal - self.path1.terminal


def check_same_noise(path1: CadlagPath, path2: CadlagPath) -> None:
    if not (
        path1.horizon == path2.horizon
        and path1.valid_until == path2.valid_until
        and np.array_equal(path1.times, path2.times)
        and np.array_equal(path1.sources, path2.sources)
        and np.array_equal(path1.seq, path2.seq)
        and path1.marks.tobytes() == path2.marks.tobytes()
    ):
        raise InvalidInput("paths were not driven by the same event stream")


def continuous_qv(path) -> float:
    """Continuous quadratic variation ``[X, X]^c_T``.

    Engine paths (and differences of coupled engine paths) are drift flows,
    which are C^1 in time, plus jumps, so this is identically zero. The
    function still refuses malformed input.
    """
    if not isinstance(path, (CadlagPath, PathDifference)):
        raise InvalidInput(f"not an engine path: {type(path).__name__}")
    if not (np.all(np.isfinite(path.pre)) and np.all(np.isfinite(path.post))):
        raise InvalidInput("path ledger contains non-finite values")
    return 0.0


@dataclass
class LocalTimeReport:
    rhs: float
    residual_quadrature: float
    n_levels: int
    agree: bool


def local_time_integral(
    path: CadlagPath,
    g: Callable[[float], float],
    n_levels: int = 400,
    tol: float = 1e-10,
) -> LocalTimeReport:
    """``int g(X_s) d[X,X]^c_s`` and its level-integrated Tanaka cross-check.

    The cross-check is the midpoint rule for ``int 2 * residual(a) g(a) da``
    over [min - 1, max + 1] of the path.
    """
    lo, hi = path_range(path)
    lo, hi = lo - 1.0, hi + 1.0
    width = (hi - lo) / n_levels
    levels = lo + width * (np.arange(n_levels) + 0.5)
    forbidden = ledger_values(path)
    clash = np.isin(levels, forbidden)
    while clash.any():
        levels[clash] = np.nextafter(levels[clash], np.inf)
        clash = np.isin(levels, forbidden)
    g_vals = np.array([float(g(float(a))) for a in levels])
    g_path = np.array([float(g(float(x))) for x in forbidden])
    if not (np.all(np.isfinite(g_vals)) and np.all(np.isfinite(g_path))):
        raise InvalidInput("g is not bounded on the path range")
    residuals = np.array([r.residual for r in tanaka_sweep(path, levels)])
    quad = float(np.sum(2.0 * residuals * g_vals) * width)
    rhs = continuous_qv(path) * float(np.max(np.abs(g_vals), initial=0.0))
    return LocalTimeReport(rhs, quad, n_levels, abs(quad - rhs) <= tol)


@dataclass
class MaxIdentityReport:
    residual: float
    down_correction: float
    up_correction: float
    max_event_down: float
    max_event_up: float
    n_events: int

    @property
    def corrections_zero(self) -> bool:
        return self.down_correction == 0.0 and self.up_correction == 0.0

    def to_dict(self):
        d = asdict(self)
        d["corrections_zero"] = self.corrections_zero
        return d


def _pair_drift_integral(path1, path2, length, u1, u2):
    """``int (b(X2) - b(X1)) ds`` over one common drift segment."""
    d1 = 0.0 if path1.drift.is_zero_at(u1) else _drift_integral(path1.drift, u1, 0.0, length, path1.substep_scale)
    d2 = 0.0 if path2.drift.is_zero_at(u2) else _drift_integral(path2.drift, u2, 0.0, length, path2.substep_scale)
    return d2 - d1


def max_identity_residual(path1: CadlagPath, path2: CadlagPath) -> MaxIdentityReport:
    """Check ``X1 v X2 = X1 + (X_0)^+ + int 1{X_{s-} > 0} dX_s``, ``X = X2 - X1``.

    The ``(X_0)^+`` term vanishes for equal starts. Also returns the two
    jump-correction sums of Tanaka's formula at level zero, which vanish
    when every jump map is non-decreasing.
    """
    diff = PathDifference(path1, path2)
    n = len(diff.times)
    worst = 0.0
    stieltjes = max(diff.x0, 0.0)
    seg_starts = path1.seg_t
    ends = np.concatenate([path1.times, [path1.valid_until]])
    x1_pre = np.concatenate([path1.pre, [path1.terminal]])
    x2_pre = np.concatenate([path2.pre, [path2.terminal]])
    for i in range(n + 1):
        d_start = diff.seg_x[i]
        length = float(ends[i] - seg_starts[i])
        if d_start > 0 and length > 0:
            stieltjes += _pair_drift_integral(
                path1, path2, length, float(path1.seg_x[i]), float(path2.seg_x[i])
            )
        lhs = max(x1_pre[i], x2_pre[i]) - x1_pre[i]
        worst = max(worst, abs(lhs - stieltjes))
        if i == n:
            break
        if diff.pre[i] > 0:
            stieltjes += diff.post[i] - diff.pre[i]
        x1, x2 = path1.post[i], path2.post[i]
        worst = max(worst, abs(max(x1, x2) - x1 - stieltjes))

    pos = diff.pre > 0
    down_each = np.where(pos, np.maximum(-diff.post, 0.0), 0.0)
    up_each = np.where(~pos, np.maximum(diff.post, 0.0), 0.0)
    return MaxIdentityReport(
        residual=float(worst),
        down_correction=float(down_each.sum()),
        up_correction=float(up_each.sum()),
        max_event_down=float(down_each.max(initial=0.0)),
        max_event_up=float(up_each.max(initial=0.0)),
        n_events=n,
    )


def _check_stream(path: CadlagPath, stream: EventStream) -> None:
    m = len(path)
    if (
        len(stream) < m
        or not np.array_equal(stream.times[:m], path.times)
        or not np.array_equal(stream.sources[:m], path.sources)
        or not np.array_equal(stream.seq[:m], path.seq)
    ):
        raise InvalidInput("path ledger does not match the given stream")


@dataclass
class MaxSolutionReport:
    ok: bool
    deviation: float
    n_events: int


def verify_max_is_solution(
    path1: CadlagPath,
    path2: CadlagPath,
    model: ModelSpec,
    stream: EventStream,
    tol: float = 1e-10,
) -> MaxSolutionReport:
    """Plug ``Y = X1 v X2`` into the right side of the SDE and compare.

    The right side is rebuilt from scratch: ``Y_0 + int b_eff(Y_s) ds +
    sum g(Y_{s-}, mark)`` with the drift integral taken by quadrature along
    ``Y``. Returns the sup deviation over ledger times (left limits and
    post-jump values).
    """
    check_same_noise(path1, path2)
    _check_stream(path1, stream)
    drift = model.effective_drift
    y_pre = np.maximum(path1.pre, path2.pre)
    y_post = np.maximum(path1.post, path2.post)
    ends = np.concatenate([path1.times, [path1.valid_until]])
    starts = path1.seg_t
    n = len(path1)
    rhs = max(path1.x0, path2.x0)
    worst = 0.0
    for i in range(n + 1):
        length = float(ends[i] - starts[i])
        u1, u2 = float(path1.seg_x[i]), float(path2.seg_x[i])
        upper, u = (path2, u2) if u2 > u1 else (path1, u1)
        if length > 0 and not drift.is_zero_at(u):
            rhs += _drift_integral(drift, u, 0.0, length, upper.substep_scale)
        y_left = float(y_pre[i]) if i < n else max(path1.terminal, path2.terminal)
        worst = max(worst, abs(y_left - rhs))
        if i == n:
            break
        kernel = model.kernel(path1.sources[i])
        rhs += float(kernel.displacement(y_left, path1.marks[i]))
        worst = max(worst, abs(float(y_post[i]) - rhs))
    worst = float(worst) if math.isfinite(worst) else math.inf
    return MaxSolutionReport(worst <= tol, worst, n)
