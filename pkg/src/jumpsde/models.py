"""Reference model families and their construction from config mappings."""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInput
from .lfv import RadiusLaw, atom_law, lfv_kernel, lfv_model_spec, power_law
from .point_process import EventStream, IntensityRegion, Source, mark_dtype
from .sde_core import AffineDrift, Drift, JumpKernel, ModelSpec, ZERO_DRIFT, additive_kernel

U_DTYPE = mark_dtype("u")


def mark_region(rate: float, dist: str = "normal", a: float = 0.0, b: float = 1.0) -> IntensityRegion:
    """Scalar marks ``u``: normal(a, b), uniform(a, b) or a constant ``a``."""
    if dist not in ("normal", "uniform", "constant"):
        raise InvalidInput(f"unknown mark distribution {dist!r}")

    def sampler(rng, n):
        marks = np.zeros(n, dtype=U_DTYPE)
        if dist == "normal":
            marks["u"] = rng.normal(a, b, n)
        elif dist == "uniform":
            marks["u"] = rng.uniform(a, b, n)
        else:
            marks["u"] = a
        return marks

    return IntensityRegion(float(rate), sampler, {"family": "marks", "dist": dist, "a": a, "b": b})


def mark_mean(dist, a, b):
    return a if dist in ("normal", "constant") else 0.5 * (a + b)


def additive_model(
    rate: float = 2.0,
    dist: str = "normal",
    a: float = 0.0,
    b: float = 1.0,
    drift=ZERO_DRIFT,
    compensated: bool = False,
) -> ModelSpec:
    """``g(x, u) = u`` driven by one Poisson measure with scalar marks.

    The compensated variant subtracts ``rate * E[u]`` from the drift.
    """
    region = mark_region(rate, dist, a, b)
    if compensated:
        comp = AffineDrift(rate * mark_mean(dist, a, b), 0.0)
        return ModelSpec(drift, additive_kernel(compensator=comp), region, label="additive-compensated")
    return ModelSpec(
        drift,
        None,
        IntensityRegion.empty(U_DTYPE),
        kernel1=additive_kernel(),
        region1=region,
        label="additive",
    )


def scripted_model(events, T: float, drift=ZERO_DRIFT) -> ModelSpec:
    """Additive kernel on a fixed list of ``(time, u)`` uncompensated jumps."""
    stream = EventStream.from_events(
        T, [(float(t), float(u), Source.UNCOMPENSATED1) for t, u in events], U_DTYPE
    )
    return ModelSpec(
        drift,
        None,
        None,
        kernel1=additive_kernel(),
        label="scripted",
        fixed_stream=stream,
    )


def reflection_kernel() -> JumpKernel:
    """``g(x, u) = -2x``: the jump map ``x -> -x`` is decreasing."""
    return JumpKernel(lambda x, u: -2.0 * x, label="reflection")


def polynomial_drift(coeffs) -> Drift:
    coeffs = [float(c) for c in coeffs]
    if len(coeffs) <= 2:
        coeffs = coeffs + [0.0] * (2 - len(coeffs))
        return AffineDrift(coeffs[0], coeffs[1])

    def b(x):
        acc = 0.0
        for c in reversed(coeffs):
            acc = acc * x + c
        return acc

    return Drift(b, label="poly" + repr(coeffs))


def drift_from_config(cfg) -> Drift:
    if cfg is None:
        return ZERO_DRIFT
    if isinstance(cfg, dict):
        if "coeffs" in cfg:
            return polynomial_drift(cfg["coeffs"])
        return AffineDrift(cfg.get("alpha", 0.0), cfg.get("beta", 0.0))
    return polynomial_drift(cfg)


def law_from_config(cfg) -> RadiusLaw:
    cfg = dict(cfg or {})
    family = cfg.get("family", "atom")
    if family == "atom":
        atoms = cfg.get("atoms")
        if atoms:
            return RadiusLaw(
                atoms=tuple((float(w), float(m)) for w, m in atoms),
                zeta_atoms=((float(cfg.get("zeta", 0.5)), 1.0),),
                name="atom",
            )
        return atom_law(cfg.get("w", 1.0), cfg.get("zeta", 0.5), cfg.get("mass", 1.0))
    if family == "power":
        return power_law(
            cfg.get("alpha", 1.5), cfg.get("zeta", 1.0), cfg.get("lo", 0.0), cfg.get("hi", 1.0)
        )
    raise InvalidInput(f"unknown law family {family!r}")


MODEL_FAMILIES = ("lfv", "additive", "scripted", "reflection")


def model_from_config(cfg, k: int, T: float) -> ModelSpec:
    cfg = dict(cfg or {})
    family = cfg.get("family", "lfv")
    if family == "lfv":
        return lfv_model_spec(k, law_from_config(cfg.get("law")))
    if family == "additive":
        return additive_model(
            cfg.get("rate", 2.0),
            cfg.get("dist", "normal"),
            cfg.get("a", 0.0),
            cfg.get("b", 1.0),
            drift_from_config(cfg.get("drift")),
            bool(cfg.get("compensated", False)),
        )
    if family == "scripted":
        events = cfg.get("events")
        if not events:
            raise InvalidInput("scripted model needs a non-empty 'events' list")
        return scripted_model(events, T, drift_from_config(cfg.get("drift")))
    raise InvalidInput(f"unknown model family {family!r} (have {', '.join(MODEL_FAMILIES)})")


def kernel_from_config(cfg, k: int):
    """Kernel and mark sampler used by the monotonicity check."""
    cfg = dict(cfg or {})
    family = cfg.get("family", "lfv")
    if family == "lfv":
        law = law_from_config(cfg.get("law"))
        from .lfv import lfv_region

        return lfv_kernel(k, law), lfv_region(k, law)
    if family == "additive":
        return additive_kernel(), mark_region(1.0, cfg.get("dist", "normal"), cfg.get("a", 0.0), cfg.get("b", 1.0))
    if family == "reflection":
        return reflection_kernel(), mark_region(1.0, "normal", 0.0, 1.0)
    raise InvalidInput(f"no kernel for family {family!r}")


def finite(x, name):
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInput(f"{name} must be finite")
    return x
