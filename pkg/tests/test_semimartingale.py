import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpsde.errors import InvalidInput
from jumpsde.experiments import couple_paths
from jumpsde.lfv import atom_law, lfv_model_spec, power_law
from jumpsde.models import U_DTYPE, additive_model, mark_region, reflection_kernel, scripted_model
from jumpsde.point_process import EventStream, Source
from jumpsde.sde_core import ZERO_DRIFT, AffineDrift, ModelSpec, integrate
from jumpsde.semimartingale import (
    PathDifference,
    continuous_qv,
    local_time_integral,
    max_identity_residual,
    sample_levels,
    tanaka_residual,
    tanaka_sweep,
    verify_max_is_solution,
)


def scripted_path(events, x0=0.0, T=1.0, drift=ZERO_DRIFT):
    model = scripted_model(events, T, drift)
    return integrate(model, model.sample_noise(T, 0, 0), x0, T)


def brute_tanaka(x0, jumps, a):
    """Term-by-term evaluation in exact rational arithmetic."""
    x0, a = Fraction(x0), Fraction(a)
    x = x0
    stieltjes = down = up = Fraction(0)
    for u in jumps:
        new = x + Fraction(u)
        if x > a:
            stieltjes += new - x
            down += max(a - new, 0)
        else:
            up += max(new - a, 0)
        x = new
    lhs = max(x - a, 0) - max(x0 - a, 0)
    return lhs, stieltjes, down, up, lhs - stieltjes - down - up


def test_single_jump_example():
    path = scripted_path([(0.5, 1.0)])
    r = tanaka_residual(path, 0.3)
    assert r.lhs == pytest.approx(0.7, abs=1e-15)
    assert r.stieltjes_term == 0.0 and r.down_corrections == 0.0
    assert r.up_corrections == pytest.approx(0.7, abs=1e-15)
    assert abs(r.residual) <= 1e-15


def test_constant_path_all_zero():
    model = ModelSpec(ZERO_DRIFT, None, None)
    path = integrate(model, EventStream.empty(1.0, U_DTYPE), 0.4, 1.0)
    for a in (-1.0, 0.2, 0.7):
        r = tanaka_residual(path, a)
        assert (r.lhs, r.stieltjes_term, r.down_corrections, r.up_corrections, r.residual) == (0, 0, 0, 0, 0)


def test_level_on_ledger_rejected():
    path = scripted_path([(0.5, 1.0)])
    with pytest.raises(InvalidInput):
        tanaka_residual(path, 1.0)
    with pytest.raises(InvalidInput):
        tanaka_residual(path, 0.0)


dyadic = st.integers(-64, 64).map(lambda n: n / 16)


@settings(max_examples=80, deadline=None)
@given(
    x0=dyadic,
    jumps=st.lists(dyadic, min_size=5, max_size=5),
    a=st.floats(-6, 6),
)
def test_brute_force_five_jumps(x0, jumps, a):
    times = [0.1 * (i + 1) for i in range(len(jumps))]
    path = scripted_path(list(zip(times, jumps)), x0=x0)
    if a in set(path.pre.tolist()) | set(path.post.tolist()) | {x0}:
        return
    r = tanaka_residual(path, a)
    lhs, s, d, u, res = brute_tanaka(x0, jumps, a)
    assert res == 0
    assert r.down_corrections >= 0 and r.up_corrections >= 0
    for got, want in ((r.lhs, lhs), (r.stieltjes_term, s), (r.down_corrections, d), (r.up_corrections, u)):
        assert abs(got - float(want)) <= 1e-12
    assert abs(r.residual) <= 1e-12


def test_engine_paths_hundred_levels():
    model = additive_model(20.0, "normal")
    rng = np.random.default_rng(1)
    for i in range(50):
        path = integrate(model, model.sample_noise(1.0, 3, i), 0.0, 1.0)
        levels = sample_levels(path, 100, rng)
        assert max(abs(r.residual) for r in tanaka_sweep(path, levels)) <= 1e-12


def test_affine_drift_against_riemann_sum():
    drift = AffineDrift(0.5, -1.0)
    path = scripted_path([(0.3, 1.0), (0.6, -2.0)], x0=0.2, drift=drift)
    a = 0.1
    # the stieltjes term has a jump part and a drift part; check the drift part numerically
    n = 200_000
    ts = (np.arange(n) + 0.5) / n
    xs = np.array([path.value_at(float(t)) for t in ts[::100]])
    dense = np.repeat(xs, 100)
    drift_part = float(np.sum(np.where(dense > a, 0.5 - dense, 0.0)) / n)
    jump_part = sum(
        post - pre for pre, post in zip(path.pre.tolist(), path.post.tolist()) if pre > a
    )
    r = tanaka_residual(path, a)
    assert r.stieltjes_term == pytest.approx(drift_part + jump_part, abs=5e-3)
    assert abs(r.residual) <= 1e-10


def test_nonlinear_drift_residual():
    model = additive_model(10.0, "normal", drift=lambda x: -x**3)
    rng = np.random.default_rng(2)
    for i in range(5):
        path = integrate(model, model.sample_noise(1.0, 8, i), 1.0, 1.0)
        levels = sample_levels(path, 50, rng)
        assert max(abs(r.residual) for r in tanaka_sweep(path, levels)) <= 1e-10


def test_sample_levels_range():
    path = scripted_path([(0.5, 1.0), (0.7, -2.0)])
    levels = sample_levels(path, 1000, np.random.default_rng(0))
    assert levels.min() >= -3.0 and levels.max() <= 2.0
    assert not np.isin(levels, [0.0, 1.0, -1.0]).any()


def test_continuous_qv():
    path = scripted_path([(0.5, 1.0)])
    assert continuous_qv(path) == 0.0
    model = lfv_model_spec(2, atom_law())
    p1, p2 = couple_paths(model, 0.0, 0.3, 1.0, 4)
    assert continuous_qv(PathDifference(p1, p2)) == 0.0
    empty = integrate(ModelSpec(ZERO_DRIFT, None, None), EventStream.empty(1.0, U_DTYPE), 0.0, 1.0)
    assert continuous_qv(empty) == 0.0
    with pytest.raises(InvalidInput):
        continuous_qv([0.0, 1.0])


def test_local_time_integral_examples():
    path = scripted_path([(0.1 * (i + 1), u) for i, u in enumerate([1.0, -0.5, 2.0, -1.5, 0.25])])
    for g in (lambda a: 1.0, lambda a: 0.0, lambda a: a * a):
        rep = local_time_integral(path, g)
        assert rep.rhs == 0.0
        assert abs(rep.residual_quadrature) <= 1e-10 and rep.agree
    with pytest.raises(InvalidInput):
        local_time_integral(path, lambda a: math.inf)


def test_local_time_integral_with_drift():
    model = additive_model(5.0, "normal", drift=AffineDrift(0.0, -1.0))
    path = integrate(model, model.sample_noise(1.0, 2, 0), 1.0, 1.0)
    rep = local_time_integral(path, lambda a: math.cos(a))
    assert rep.agree


def test_max_identity_equal_paths():
    model = lfv_model_spec(2, atom_law())
    p1, p2 = couple_paths(model, 0.0, 0.0, 1.0, 1)
    rep = max_identity_residual(p1, p2)
    assert rep.residual == 0.0 and rep.corrections_zero


def test_max_identity_additive_translation():
    model = additive_model(5.0, "normal")
    p1, p2 = couple_paths(model, 0.0, 1.0, 1.0, 3)
    assert np.all(p2.post - p1.post == 1.0)
    rep = max_identity_residual(p1, p2)
    assert rep.residual == 0.0 and rep.corrections_zero


def test_max_identity_mismatched_streams_rejected():
    model = additive_model(5.0, "normal")
    p1 = integrate(model, model.sample_noise(1.0, 1, 0), 0.0, 1.0)
    p2 = integrate(model, model.sample_noise(1.0, 2, 0), 0.0, 1.0)
    with pytest.raises(InvalidInput):
        max_identity_residual(p1, p2)
    with pytest.raises(InvalidInput):
        verify_max_is_solution(p1, p2, model, model.sample_noise(1.0, 1, 0))


def reflection_model():
    return ModelSpec(ZERO_DRIFT, None, None, kernel1=reflection_kernel(), region1=mark_region(3.0), label="reflect")


def test_non_monotone_kernel_breaks_identity():
    model = reflection_model()
    stream = model.sample_noise(1.0, 5, 0)
    assert len(stream) > 0
    p1 = integrate(model, stream, 0.2, 1.0)
    p2 = integrate(model, stream, 1.0, 1.0)
    rep = max_identity_residual(p1, p2)
    assert not rep.corrections_zero
    # the identity omits the correction sums, so it fails here
    assert rep.residual > 0
    assert not verify_max_is_solution(p1, p2, model, stream).ok


def brute_max_identity(x1, x2, jumps_map):
    """Exact evaluation for pure-jump pairs: sup |X1 v X2 - X1 - (X_0)^+ - int 1{X- > 0} dX|."""
    x1, x2 = Fraction(x1), Fraction(x2)
    acc = max(x2 - x1, 0)
    worst = abs(max(x1, x2) - x1 - acc)
    for f in jumps_map:
        n1, n2 = f(x1), f(x2)
        if x2 - x1 > 0:
            acc += (n2 - n1) - (x2 - x1)
        x1, x2 = n1, n2
        worst = max(worst, abs(max(x1, x2) - x1 - acc))
    return worst


@settings(max_examples=40, deadline=None)
@given(
    x1=dyadic,
    gap=st.integers(0, 32).map(lambda n: n / 16),
    marks=st.lists(st.tuples(dyadic, st.integers(1, 16).map(lambda n: n / 16), st.sampled_from([0.0, 1.0])), min_size=1, max_size=6),
)
def test_max_identity_brute_force_lfv_style(x1, gap, marks):
    # ball jump maps with dyadic y, w and v = 0: x -> y inside |x - y| < w
    events = []
    maps = []
    for i, (y, w, theta) in enumerate(marks):
        events.append((0.1 * (i + 1), {"theta": theta, "v": 0.0, "y": y, "zeta": 0.5, "w": w}, Source.COMPENSATED0))
        maps.append(lambda x, y=y, w=w, th=theta: Fraction(y) if (abs(x - Fraction(y)) < Fraction(w) and th == 1.0) else x)
    law = atom_law()
    model = lfv_model_spec(8, law)
    from jumpsde.lfv import MARK_DTYPE

    stream = EventStream.from_events(1.0, events, MARK_DTYPE)
    p1 = integrate(model, stream, x1, 1.0)
    p2 = integrate(model, stream, x1 + gap, 1.0)
    rep = max_identity_residual(p1, p2)
    assert rep.corrections_zero
    assert brute_max_identity(x1, x1 + gap, maps) == 0
    assert rep.residual == 0.0


@pytest.mark.parametrize("law,k", [(atom_law(), 2), (power_law(1.5, 0.5), 3)], ids=["atom", "power"])
def test_ek_max_identity_sweep(law, k):
    model = lfv_model_spec(k, law)
    for i in range(100):
        p1, p2 = couple_paths(model, 0.0, 0.1, 1.0, 17, i)
        rep = max_identity_residual(p1, p2)
        assert rep.corrections_zero and rep.residual <= 1e-12
        res = verify_max_is_solution(p1, p2, model, model.sample_noise(1.0, 17, i))
        assert res.ok and res.deviation <= 1e-10


def test_verify_max_examples():
    model = additive_model(4.0, "normal", drift=AffineDrift(0.0, -1.0))
    stream = model.sample_noise(1.0, 6, 0)
    p = integrate(model, stream, 0.5, 1.0)
    same = verify_max_is_solution(p, p, model, stream)
    assert same.ok and same.deviation <= 1e-12
    q = integrate(model, stream, 1.5, 1.0)
    assert np.all(q.post >= p.post)
    assert verify_max_is_solution(p, q, model, stream).ok


def test_verify_max_rejects_foreign_stream():
    model = additive_model(4.0, "normal")
    stream = model.sample_noise(1.0, 6, 0)
    p = integrate(model, stream, 0.5, 1.0)
    with pytest.raises(InvalidInput):
        verify_max_is_solution(p, p, model, model.sample_noise(1.0, 7, 0))


def test_report_serialization():
    path = scripted_path([(0.5, 1.0)])
    d = tanaka_residual(path, 0.3).to_dict()
    assert set(d) == {"level", "lhs", "stieltjes_term", "down_corrections", "up_corrections", "residual"}
    model = additive_model(2.0)
    p1, p2 = couple_paths(model, 0.0, 1.0, 1.0, 0)
    assert "corrections_zero" in max_identity_residual(p1, p2).to_dict()
