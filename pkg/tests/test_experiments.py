import math

import numpy as np
import pytest

from jumpsde.errors import InvalidInput
from jumpsde.experiments import (
    KS_C99,
    SchemeVariant,
    compare_paths,
    couple_paths,
    direct,
    filtered,
    ks_statistic,
    ks_threshold,
    pathwise_uniqueness_probe,
    run_replicates,
    truncation_ladder_run,
    weak_uniqueness_check,
    worker_count,
)
from jumpsde.lfv import TruncationLevel, atom_law, lfv_model_spec, lfv_region, power_law
from jumpsde.models import additive_model, polynomial_drift, scripted_model
from jumpsde.point_process import StreamRole, derive_seed, filter_stream, sample_stream
from jumpsde.sde_core import AffineDrift, integrate


def test_couple_equal_starts_identical():
    model = lfv_model_spec(2, atom_law())
    p1, p2 = couple_paths(model, 0.3, 0.3, 1.0, 5)
    rep = compare_paths(p1, p2)
    assert rep.sup_distance == 0.0 and rep.terminal_gap == 0.0 and rep.order_violations == 0


def test_couple_additive_translation():
    model = additive_model(6.0, "normal")
    p1, p2 = couple_paths(model, 0.0, 1.0, 2.0, 8)
    assert np.allclose(p2.post - p1.post, 1.0, rtol=0, atol=1e-12)
    rep = compare_paths(p1, p2)
    assert rep.sup_distance == pytest.approx(1.0, abs=1e-12) and rep.order_violations == 0
    # dyadic marks keep the translation exact
    exact = scripted_model([(0.1 * (i + 1), u) for i, u in enumerate([0.5, -2.25, 1.125, 3.0])], 1.0)
    q1, q2 = couple_paths(exact, 0.0, 1.0, 1.0, 0)
    assert np.all(q2.pre - q1.pre == 1.0) and np.all(q2.post - q1.post == 1.0)


def test_couple_ek_ordered_no_violations():
    model = lfv_model_spec(3, power_law(1.5, 0.5))
    for i in range(200):
        p1, p2 = couple_paths(model, 0.0, 0.1, 1.0, 9, i)
        assert compare_paths(p1, p2).order_violations == 0


def test_couple_deterministic():
    model = lfv_model_spec(2, atom_law())
    a = couple_paths(model, 0.0, 0.5, 1.0, 3, 7)
    b = couple_paths(model, 0.0, 0.5, 1.0, 3, 7)
    for p, q in zip(a, b):
        assert p.post.tobytes() == q.post.tobytes()


def test_compare_paths_rejects_different_ledgers():
    model = additive_model(6.0)
    p1 = integrate(model, model.sample_noise(1.0, 1, 0), 0.0, 1.0)
    p2 = integrate(model, model.sample_noise(1.0, 2, 0), 0.0, 1.0)
    with pytest.raises(InvalidInput):
        compare_paths(p1, p2)


def test_probe_examples():
    ek = lfv_model_spec(4, power_law(1.5, 0.5))
    assert pathwise_uniqueness_probe(ek, 0.0, 1.0, 1, SchemeVariant()).sup_distance == 0.0
    for i in range(50):
        rep = pathwise_uniqueness_probe(ek, 0.0, 1.0, 1, SchemeVariant(0.5), replicate_id=i)
        assert rep.sup_distance <= 1e-10
    decay = additive_model(5.0, "normal", drift=AffineDrift(0.0, -1.0))
    cubic = additive_model(5.0, "normal", drift=polynomial_drift([0.0, -1.0, 0.0, -1.0]))
    for model in (decay, cubic):
        for i in range(50):
            rep = pathwise_uniqueness_probe(model, 1.0, 1.0, 2, SchemeVariant(0.5), replicate_id=i)
            assert rep.sup_distance <= 1e-8
            rep = pathwise_uniqueness_probe(model, 1.0, 1.0, 2, SchemeVariant(1.0, "reverse"), replicate_id=i)
            assert rep.sup_distance == 0.0


def test_ks_statistic_oracle():
    from scipy import stats

    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(0.2, 1, size=400)
    assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
    # ties across samples
    a, b = np.array([0, 0, 1, 2.0]), np.array([0, 1, 1, 3.0])
    assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
    assert ks_threshold(100, 100) == pytest.approx(KS_C99 * math.sqrt(0.02))


def test_weak_uniqueness_rejects_small_n():
    model = additive_model()
    with pytest.raises(InvalidInput):
        weak_uniqueness_check(model, model, 1.0, 99, (0, 1))


def test_weak_uniqueness_null_rate():
    # identical law, independent seed banks: the 99% test rejects rarely
    model = additive_model(3.0, "normal")
    rejections = sum(
        weak_uniqueness_check(model, model, 1.0, 500, (2 * r, 2 * r + 1)).exceeds for r in range(40)
    )
    assert rejections <= 2


def test_weak_uniqueness_projective_and_control():
    law = atom_law()
    model = lfv_model_spec(1, law)
    rep_b = filtered(model, lfv_region(2, law), TruncationLevel(1).contains)
    same = weak_uniqueness_check(direct(model), rep_b, 1.0, 2000, (3, 4))
    assert not same.exceeds
    assert same.config["n"] == 2000 and same.config["seeds"] == [3, 4]
    control = weak_uniqueness_check(direct(model), direct(lfv_model_spec(1, power_law(1.5, 1.0))), 1.0, 2000, (5, 6))
    assert control.exceeds


def test_filtered_representation_subset_of_master():
    law = power_law(1.5, 1.0)
    model = lfv_model_spec(2, law)
    rep = filtered(model, lfv_region(4, law), TruncationLevel(2).contains)
    s = rep.stream(1.0, 7, 3)
    master = sample_stream(lfv_region(4, law), 1.0, derive_seed(7, 3, StreamRole.NOISE0))
    assert s.keys() <= master.keys()
    assert s == filter_stream(master, TruncationLevel(2).contains)


def test_ladder_atom_law_zero_gaps():
    rep = truncation_ladder_run(atom_law(), 2, 5, 0.5, 0.0, 200, 1)
    for row in rep.rows:
        if row.k >= 3:
            assert row.replicates == 0 or row.mean_gap == 0.0
    assert rep.nesting_violations == 0


def test_ladder_zeta_zero_all_zero():
    rep = truncation_ladder_run(power_law(1.5, 0.0), 2, 5, 0.5, 0.0, 50, 1)
    assert all(r.mean_gap == 0.0 for r in rep.rows)
    assert all(r.replicates == 50 and r.invalidated == 0 for r in rep.rows)


def test_ladder_power_law_small():
    rep = truncation_ladder_run(power_law(1.5, 1.0), 2, 6, 0.25, 0.0, 200, 3)
    assert [r.k for r in rep.rows] == [2, 3, 4, 5]
    assert all(r.mean_gap > 0 and math.isfinite(r.std_error) for r in rep.rows)
    assert rep.nesting_violations == 0
    assert rep.means()[0] > rep.means()[-1]
    d = rep.to_dict()
    assert d["config"]["master_seed"] == 3 and d["config"]["law"]["name"] == "power"


def test_ladder_rejects_bad_levels():
    with pytest.raises(InvalidInput):
        truncation_ladder_run(power_law(), 3, 3, 1.0, 0.0, 10, 0)
    with pytest.raises(InvalidInput):
        truncation_ladder_run(power_law(), 0, 3, 1.0, 0.0, 10, 0)
    with pytest.raises(InvalidInput, match="level 13"):
        truncation_ladder_run(power_law(), 2, 20, 1.0, 0.0, 10, 0)


def test_threads_do_not_change_results(monkeypatch):
    law = power_law(1.5, 1.0)
    one = truncation_ladder_run(law, 2, 4, 0.25, 0.0, 40, 11, threads=1)
    four = truncation_ladder_run(law, 2, 4, 0.25, 0.0, 40, 11, threads=4)
    assert one.to_dict() == four.to_dict()
    monkeypatch.setenv("JUMPSDE_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("JUMPSDE_THREADS", "junk")
    assert worker_count() == 1
    assert run_replicates(lambda i: i * i, 5, threads=3) == [0, 1, 4, 9, 16]
