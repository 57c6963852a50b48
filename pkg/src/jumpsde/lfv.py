"""Single-particle Lambda-Fleming-Viot model in one space dimension.

An event has mark ``z = (theta, v, y, zeta, w)``: centre ``y``, radius ``w``,
impact ``zeta``, a relocation offset ``v`` uniform on [-1, 1] and
``theta ~ Bernoulli(zeta)``. A particle at ``x`` with ``|x - y| < w`` is
moved to ``y + w v`` when ``theta = 1``; otherwise nothing happens.

The driving intensity per unit time is::

    ((1 - zeta) delta_0(dtheta) + zeta delta_1(dtheta)) U[-1,1](dv) dy nu1(dzeta) nu2(dw)

and the truncation level ``k`` keeps ``|y| <= k`` and ``w`` in
``[2**-k, 2**k]``. ``nu1`` is taken independent of ``w`` and given by
atoms; ``nu2`` is a list of atoms plus power-law density pieces
``c * w**(-1 - alpha)`` on ``[lo, hi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidInput
from .point_process import IntensityRegion, mark_dtype
from .sde_core import (
    SUBSTEPS,
    Drift,
    JumpKernel,
    ModelSpec,
    ZERO_DRIFT,
    check_monotone,
)

MARK_DTYPE = mark_dtype("theta", "v", "y", "zeta", "w")


@dataclass(frozen=True)
class PowerPiece:
    """Density ``coef * w**(-1 - alpha)`` on ``[lo, hi]``."""

    alpha: float
    lo: float = 0.0
    hi: float = 1.0
    coef: float = 1.0

    def moment(self, p: float, a: float, b: float) -> float:
        """``int_a^b w**p coef w**(-1-alpha) dw`` over the overlap with [lo, hi]."""
        a, b = max(a, self.lo), min(b, self.hi)
        if not b > a:
            return 0.0
        return self.coef * _power_integral(p - self.alpha, a, b)


def _power_integral(q, a, b):
    """``int_a^b w**(q - 1) dw`` for 0 <= a < b <= inf."""
    if q == 0.0:
        if a == 0.0 or math.isinf(b):
            return math.inf
        return math.log(b / a)
    if q > 0:
        if math.isinf(b):
            return math.inf
        return (b**q - a**q) / q
    if a == 0.0:
        return math.inf
    tail = 0.0 if math.isinf(b) else b**q
    return (a**q - tail) / -q


@dataclass(frozen=True)
class RadiusLaw:
    """Radius measure ``nu2`` and impact law ``nu1``.

    ``atoms`` are ``(w, mass)`` pairs, ``pieces`` power-law densities and
    ``zeta_atoms`` the ``(zeta, mass)`` pairs of ``nu1``.
    """

    atoms: tuple = ()
    pieces: tuple = ()
    zeta_atoms: tuple = ((1.0, 1.0),)
    name: str = "custom"

    def __post_init__(self):
        for w, m in self.atoms:
            if not (w > 0 and m >= 0 and math.isfinite(w) and math.isfinite(m)):
                raise InvalidInput(f"bad radius atom ({w}, {m})")
        for z, m in self.zeta_atoms:
            if not (0.0 <= z <= 1.0 and m >= 0 and math.isfinite(m)):
                raise InvalidInput(f"bad impact atom ({z}, {m})")
        for p in self.pieces:
            if not (0 <= p.lo < p.hi and p.coef >= 0):
                raise InvalidInput(f"bad power piece {p}")

    @property
    def zeta_mass(self) -> float:
        return math.fsum(m for _, m in self.zeta_atoms)

    @property
    def zeta_mean(self) -> float:
        """``int zeta nu1(dzeta)``."""
        return math.fsum(z * m for z, m in self.zeta_atoms)

    def density_moment(self, p: float, a: float, b: float) -> float:
        return math.fsum(piece.moment(p, a, b) for piece in self.pieces)

    def atom_moment(self, p, a, b, a_open=False, b_open=False) -> float:
        total = []
        for w, m in self.atoms:
            if (w > a or (not a_open and w == a)) and (w < b or (not b_open and w == b)):
                total.append(m * w**p)
        return math.fsum(total)

    def moment(self, p, a, b, a_open=False, b_open=False) -> float:
        """``int w**p nu2(dw)`` over the interval from ``a`` to ``b``."""
        return self.density_moment(p, a, b) + self.atom_moment(p, a, b, a_open, b_open)

    def mass(self, a: float, b: float) -> float:
        return self.moment(0.0, a, b)

    def support_top(self, a: float, b: float) -> float:
        """Largest radius carrying mass inside [a, b] (0 if none)."""
        top = 0.0
        for w, m in self.atoms:
            if m > 0 and a <= w <= b:
                top = max(top, w)
        for p in self.pieces:
            if p.coef > 0 and min(b, p.hi) > max(a, p.lo):
                top = max(top, min(b, p.hi))
        return top

    def sample_w(self, rng: np.random.Generator, n: int, a: float, b: float) -> np.ndarray:
        comps = []
        for w, m in self.atoms:
            if a <= w <= b and m > 0:
                comps.append(("atom", w, m))
        for p in self.pieces:
            lo, hi = max(a, p.lo), min(b, p.hi)
            mass = p.moment(0.0, lo, hi) if hi > lo else 0.0
            if mass > 0:
                comps.append(("power", p, mass, lo, hi))
        masses = np.array([c[2] for c in comps], dtype=np.float64)
        if n == 0:
            return np.zeros(0)
        which = rng.choice(len(comps), size=n, p=masses / masses.sum())
        u = rng.random(n)
        out = np.empty(n)
        for j, comp in enumerate(comps):
            sel = which == j
            if comp[0] == "atom":
                out[sel] = comp[1]
                continue
            _, piece, _, lo, hi = comp
            out[sel] = _power_inverse_cdf(u[sel], piece.alpha, lo, hi)
        return out

    def sample_zeta(self, rng: np.random.Generator, n: int) -> np.ndarray:
        zs = np.array([z for z, _ in self.zeta_atoms], dtype=np.float64)
        ms = np.array([m for _, m in self.zeta_atoms], dtype=np.float64)
        if len(zs) == 1:
            return np.full(n, zs[0])
        return zs[rng.choice(len(zs), size=n, p=ms / ms.sum())]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "atoms": [list(a) for a in self.atoms],
            "pieces": [
                {"alpha": p.alpha, "lo": p.lo, "hi": p.hi, "coef": p.coef} for p in self.pieces
            ],
            "zeta_atoms": [list(a) for a in self.zeta_atoms],
        }


def _power_inverse_cdf(u, alpha, lo, hi):
    if alpha == 0.0:
        return lo * np.exp(u * math.log(hi / lo))
    a, b = lo ** (-alpha), hi ** (-alpha)
    return (a - u * (a - b)) ** (-1.0 / alpha)


def atom_law(w: float = 1.0, zeta: float = 0.5, mass: float = 1.0) -> RadiusLaw:
    return RadiusLaw(atoms=((float(w), float(mass)),), zeta_atoms=((float(zeta), 1.0),), name="atom")


def power_law(alpha: float = 1.5, zeta: float = 1.0, lo: float = 0.0, hi: float = 1.0) -> RadiusLaw:
    """``nu2(dw) = w**(-1 - alpha) dw`` on (lo, hi], ``nu1 = delta_zeta``."""
    return RadiusLaw(
        pieces=(PowerPiece(float(alpha), float(lo), float(hi)),),
        zeta_atoms=((float(zeta), 1.0),),
        name="power",
    )


@dataclass(frozen=True)
class TruncationLevel:
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidInput(f"truncation level must be an integer >= 1, got {self.k}")

    @property
    def y_range(self):
        return (-float(self.k), float(self.k))

    @property
    def w_range(self):
        return (2.0 ** -self.k, 2.0**self.k)

    def contains(self, marks):
        """Boolean mask of marks inside this level."""
        lo, hi = self.w_range
        return (np.abs(marks["y"]) <= self.k) & (marks["w"] >= lo) & (marks["w"] <= hi)


def _level(k) -> TruncationLevel:
    return k if isinstance(k, TruncationLevel) else TruncationLevel(int(k))


def lfv_g0(x, z):
    """Displacement ``1{|x - y| < w} theta (y + w v - x)``."""
    if abs(x - z["y"]) < z["w"]:
        return float(z["theta"] * (z["y"] + z["w"] * z["v"] - x))
    return 0.0


def lfv_jump_map(x, z):
    """``x + g0(x, z)`` written as ``(1 - theta) x + theta (y + w v)`` inside the ball."""
    if abs(x - z["y"]) < z["w"] and z["theta"] == 1.0:
        return float(z["y"] + z["w"] * z["v"])
    return x


def lfv_batch_jump_map(x, marks):
    y, w = marks["y"], marks["w"]
    inside = (np.abs(x - y) < w) & (marks["theta"] == 1.0)
    return np.where(inside, y + w * marks["v"], x)


def boundary_inequalities(marks) -> np.ndarray:
    """Both ball-edge inequalities that make ``x + g0`` non-decreasing."""
    theta, v, y, w = marks["theta"], marks["v"], marks["y"], marks["w"]
    right = (1 - theta) * (y + w) + theta * (y + w * v) <= y + w
    left = (1 - theta) * (y - w) + theta * (y - w * v) >= y - w
    return right & left


def lfv_region(k, law: RadiusLaw) -> IntensityRegion:
    """Finite-mass restriction of the driving measure to level ``k``."""
    level = _level(k)
    kk = level.k
    wlo, whi = level.w_range
    w_mass = law.mass(wlo, whi)
    rate = 2.0 * kk * law.zeta_mass * w_mass
    if not (math.isfinite(rate) and rate > 0):
        raise InvalidInput(f"level {kk} region has mass {rate}; need finite and positive")

    def sampler(rng, n):
        marks = np.zeros(n, dtype=MARK_DTYPE)
        if n == 0:
            return marks
        marks["w"] = law.sample_w(rng, n, wlo, whi)
        marks["zeta"] = law.sample_zeta(rng, n)
        marks["theta"] = (rng.random(n) < marks["zeta"]).astype(np.float64)
        marks["y"] = rng.uniform(-kk, kk, n)
        marks["v"] = rng.uniform(-1.0, 1.0, n)
        return marks

    return IntensityRegion(rate, sampler, {"family": "lfv", "k": kk, "law": law.name})


def _law_arrays(k, law):
    level = _level(k)
    wlo, whi = level.w_range
    aw = np.array([w for w, m in law.atoms if wlo <= w <= whi], dtype=np.float64)
    am = np.array([m for w, m in law.atoms if wlo <= w <= whi], dtype=np.float64)
    pieces = [p for p in law.pieces if min(whi, p.hi) > max(wlo, p.lo)]
    pc = np.array([p.coef for p in pieces], dtype=np.float64)
    pa = np.array([p.alpha for p in pieces], dtype=np.float64)
    plo = np.array([max(wlo, p.lo) for p in pieces], dtype=np.float64)
    phi = np.array([min(whi, p.hi) for p in pieces], dtype=np.float64)
    return float(level.k), law.zeta_mean, aw, am, pc, pa, plo, phi


def _compensator_py(x, k, zmean, aw, am, pc, pa, plo, phi):
    # int over nu2 of F(w) = 0.5*(min(k-x, w)^2 - min(k+x, w)^2) * 1{w > |x| - k}
    if zmean == 0.0:
        return 0.0
    A = k - x
    B = k + x
    cut = abs(x) - k
    total = 0.0
    for i in range(aw.shape[0]):
        w = aw[i]
        if w > cut:
            t1 = A * A if A < w else w * w
            t2 = B * B if B < w else w * w
            total += am[i] * 0.5 * (t1 - t2)
    for j in range(pc.shape[0]):
        lo = plo[j]
        hi = phi[j]
        pts = np.empty(5)
        pts[0] = lo
        npts = 1
        for bp in (A, B, cut):
            if lo < bp < hi:
                pts[npts] = bp
                npts += 1
        pts[npts] = hi
        npts += 1
        pts[:npts].sort()
        for s in range(npts - 1):
            a = pts[s]
            b = pts[s + 1]
            if not b > a:
                continue
            mid = 0.5 * (a + b)
            if mid <= cut:
                continue
            const = 0.0
            quad = 0.0
            if A < mid:
                const += A * A
            else:
                quad += 1.0
            if B < mid:
                const -= B * B
            else:
                quad -= 1.0
            q0 = -pa[j]
            q2 = 2.0 - pa[j]
            m0 = 0.0
            m2 = 0.0
            if const != 0.0:
                m0 = _power_integral_nb(q0, a, b)
            if quad != 0.0:
                m2 = _power_integral_nb(q2, a, b)
            total += pc[j] * 0.5 * (const * m0 + quad * m2)
    return zmean * total


def _power_integral_py(q, a, b):
    if q == 0.0:
        return math.log(b / a)
    return (b**q - a**q) / q


_power_integral_nb = numba.njit(cache=True)(_power_integral_py)
_compensator_nb = numba.njit(cache=True)(_compensator_py)


@numba.njit(cache=True)
def _rk4_compensated(x, dt, n, k, zmean, aw, am, pc, pa, plo, phi):
    # flow of dx/dt = -c(x), same arithmetic as sde_core.rk4
    h = dt / n
    half = 0.5 * h
    for _ in range(n):
        k1 = -_compensator_nb(x, k, zmean, aw, am, pc, pa, plo, phi)
        k2 = -_compensator_nb(x + half * k1, k, zmean, aw, am, pc, pa, plo, phi)
        k3 = -_compensator_nb(x + half * k2, k, zmean, aw, am, pc, pa, plo, phi)
        k4 = -_compensator_nb(x + h * k3, k, zmean, aw, am, pc, pa, plo, phi)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def interior_radius(k, law: RadiusLaw) -> float:
    """States with ``|x| <= r`` see whole balls inside [-k, k]; negative if none."""
    level = _level(k)
    return level.k - law.support_top(*level.w_range)


def lfv_compensator_drift(x: float, k, law: RadiusLaw) -> tuple[float, bool]:
    """Compensator ``c(x)`` of the level-``k`` jump integral and an interior flag.

    ``c(x) = int 1{|x - y| < w} theta (y + w v - x)`` against the driving
    intensity; the ``v`` term integrates to zero and the ``y`` term vanishes
    whenever the ball around ``x`` lies inside [-k, k].
    """
    args = _law_arrays(k, law)
    value = float(_compensator_nb(float(x), *args))
    if not math.isfinite(value):
        raise InvalidInput(f"compensator is not finite at x={x}")
    return value, abs(x) <= interior_radius(k, law)


class LFVCompensator:
    """Callable compensator with a compiled flow for the merged drift."""

    def __init__(self, k, law: RadiusLaw):
        self.level = _level(k)
        self.law = law
        self.args = _law_arrays(self.level, law)
        self.radius = interior_radius(self.level, law)

    def __call__(self, x):
        return float(_compensator_nb(float(x), *self.args))

    def merged_with(self, b):
        if b.affine == (0.0, 0.0):
            return LFVDrift(self)
        return None


class LFVDrift(Drift):
    """Effective drift ``-c(x)``; zero on the interior, RK4 outside it."""

    def __init__(self, compensator: LFVCompensator):
        self.compensator = compensator
        super().__init__(lambda x: -compensator(x), label=f"lfv-compensator-k{compensator.level.k}")

    def is_zero_at(self, x):
        return abs(x) <= self.compensator.radius

    def flow(self, x, dt, substep_scale=1.0):
        if dt == 0 or self.is_zero_at(x):
            return x
        n = math.ceil(max(1.0, dt) * SUBSTEPS / substep_scale)
        return float(_rk4_compensated(float(x), float(dt), n, *self.compensator.args))


def lfv_kernel(k, law: RadiusLaw) -> JumpKernel:
    return JumpKernel(
        lfv_g0,
        compensator=LFVCompensator(k, law),
        jump_map=lfv_jump_map,
        batch_jump_map=lfv_batch_jump_map,
        label="lfv-g0",
    )


def monotonicity_grid(marks, n_grid: int = 1000) -> np.ndarray:
    """Per-mark grids spanning ``[y - 2w, y + 2w]``."""
    s = np.linspace(-2.0, 2.0, n_grid)
    return marks["y"][:, None] + marks["w"][:, None] * s[None, :]


def lfv_model_spec(k, law: RadiusLaw, check_marks: int = 1000, check_seed: int = 0) -> ModelSpec:
    """Assemble the level-``k`` model: zero drift, compensated kernel ``g0``."""
    from .point_process import StreamRole, derive_seed

    level = _level(k)
    region = lfv_region(level, law)
    kernel = lfv_kernel(level, law)
    marks = region.mark_sampler(derive_seed(check_seed, 0, StreamRole.AUXILIARY).generator(), check_marks)
    report = check_monotone(kernel, marks, monotonicity_grid(marks, 200))
    kernel = kernel.with_flag(report.status)
    r = interior_radius(level, law)
    interior = (-r, r) if r >= 0 else (math.inf, -math.inf)
    return ModelSpec(
        ZERO_DRIFT,
        kernel,
        region,
        label=f"lfv-{law.name}-k{level.k}",
        interior=interior,
    )


@dataclass
class IntegrabilityReport:
    """Each flag is True (finite), False (divergent) or None (indeterminate)."""

    c31: bool | None
    c32: bool | None
    c33: bool | None
    values: dict = field(default_factory=dict)

    def to_dict(self):
        return {"c31": self.c31, "c32": self.c32, "c33": self.c33, "values": self.values}


SHELLS = 64
RATIO_DIVERGENT = 1.0 - 1e-9


def _ladder_sum(shells, exact_extra=0.0):
    """Sum dyadic-shell contributions, extrapolating a geometric tail.

    Divergence is declared when the last shells stop shrinking (ratio of
    successive shells >= 1 - 1e-9), i.e. truncated integrals keep growing
    at least linearly along the ladder. Otherwise the tail beyond the last
    shell is bounded by ``s_K r / (1 - r)`` with ``r`` the largest of the
    last eight ratios. Unsettled ratios (spread > 1e-6) are indeterminate.
    """
    shells = np.asarray(shells, dtype=np.float64)
    if not np.all(np.isfinite(shells)):
        return False, math.inf
    partial = math.fsum(shells.tolist()) + exact_extra
    tail = shells[-9:]
    if np.all(tail == 0):
        return True, partial
    if np.any(tail == 0):
        return None, partial
    ratios = tail[1:] / tail[:-1]
    r = float(ratios.max())
    if r >= RATIO_DIVERGENT:
        return False, math.inf
    if float(ratios.max() - ratios.min()) > 1e-6:
        return None, partial
    return True, partial + float(tail[-1]) * r / (1.0 - r)


def check_integrability(law: RadiusLaw, d: int = 1) -> IntegrabilityReport:
    """Finite or divergent status of the three radius-moment conditions.

    ``c31``: ``int_{(1,inf)} zeta w^d``; ``c32``: ``int_{[0,1]} zeta w^2``
    (``w^(2+d)`` for d >= 2); ``c33``: ``int_{(0,inf)} zeta w^d``. Each is
    a product of ``int zeta nu1`` and a radius moment evaluated shell by
    shell on the dyadic ladder.
    """
    zmean = law.zeta_mean
    if zmean == 0.0:
        return IntegrabilityReport(True, True, True, {"c31": 0.0, "c32": 0.0, "c33": 0.0})
    p_small = 2.0 if d == 1 else 2.0 + d
    p_large = float(d)

    up = [law.density_moment(p_large, 2.0**j, 2.0 ** (j + 1)) for j in range(SHELLS)]
    down_small = [law.density_moment(p_small, 2.0 ** -(j + 1), 2.0**-j) for j in range(SHELLS)]
    down_d = [law.density_moment(p_large, 2.0 ** -(j + 1), 2.0**-j) for j in range(SHELLS)]

    ok31, v31 = _ladder_sum(up, law.atom_moment(p_large, 1.0, math.inf, a_open=True))
    ok32, v32 = _ladder_sum(down_small, law.atom_moment(p_small, 0.0, 1.0))
    ok_low, v_low = _ladder_sum(down_d, law.atom_moment(p_large, 0.0, 1.0, a_open=True))
    ok_high, v_high = _ladder_sum(up, law.atom_moment(p_large, 1.0, math.inf, a_open=True))
    if ok_low is False or ok_high is False:
        ok33, v33 = False, math.inf
    elif ok_low is None or ok_high is None:
        ok33, v33 = None, v_low + v_high
    else:
        ok33, v33 = True, v_low + v_high

    def scaled(v):
        return v * zmean if math.isfinite(v) else math.inf

    return IntegrabilityReport(
        ok31, ok32, ok33, {"c31": scaled(v31), "c32": scaled(v32), "c33": scaled(v33)}
    )
