from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvarcp.harness import (ExperimentSpec, Replication, ace, ae, get_model, match_locations,
                            model_catalog, replication_seed, run_experiment, run_replication,
                            summarise, format_report)
from tvarcp.tvar import JUMP, KINK, SpecError

from conftest import cached_experiment


# -- catalog -------------------------------------------------------------------------------------

def test_catalog_has_nine_models():
    cat = model_catalog()
    assert sorted(cat) == list(range(1, 10))
    for mid, m in cat.items():
        x = m.simulate(0, 512)
        assert x.shape == (512,) and np.all(np.isfinite(x))


def test_model1_left_curve_at_zero():
    seg = get_model(1).spec().segments[0]
    assert float(seg.phi_at(np.array([0.0]))[0, 0]) == pytest.approx(0.9)


def test_model6_break_fractions():
    m = get_model(6)
    assert m.taus() == (1024, 1536)
    assert m.fractions == (0.5, 0.75)


def test_model8_breaks():
    assert get_model(8).taus() == (840, 1644)


def test_model4_noise_clamped_at_midpoint():
    phi, sig = get_model(4).build(2048)
    assert sig[1023] == pytest.approx(1e-8)  # t = 1024
    assert sig[0] == pytest.approx(10 * abs(1 / 2048 - 0.5))


def test_model5_cosine_segment():
    phi, _ = get_model(5).build(2048)
    u = 2000 / 2048
    assert phi[1999, 0] == pytest.approx(-1.6 * math.cos(math.pi * u) - 0.8)
    u = 10 / 2048
    assert phi[9, 0] == pytest.approx(25.6 * u ** 2 - 12.8 * u + 0.8)


def test_model7_continuous_and_stable():
    spec = get_model(7).spec()
    assert spec.types == (KINK, KINK)
    T = spec.T
    for k, tau in enumerate(spec.taus):
        u = np.array([tau / T])
        a = spec.segments[k].phi_at(u)[0, 0]
        b = spec.segments[k + 1].phi_at(u)[0, 0]
        assert a == pytest.approx(b, abs=1e-12)
    edges = [0, *spec.taus, T]
    for k, seg in enumerate(spec.segments):
        u = np.arange(edges[k] + 1, edges[k + 1] + 1) / T
        assert np.max(np.abs(seg.phi_at(u)[0])) < 1


def test_model9_switches_to_ma():
    m = get_model(9)
    x = np.concatenate([m.simulate(s) for s in range(20)])
    # after the break X is MA(1): autocorrelation at lag 2 vanishes
    tails = np.stack([m.simulate(s)[1300:] for s in range(40)])
    r2 = np.mean(tails[:, 2:] * tails[:, :-2]) / np.mean(tails ** 2)
    heads = np.stack([m.simulate(s)[200:1100] for s in range(40)])
    h2 = np.mean(heads[:, 2:] * heads[:, :-2]) / np.mean(heads ** 2)
    assert abs(r2) < 0.05 and h2 > 0.4
    assert x.size == 20 * 2048


def test_unknown_model():
    with pytest.raises(SpecError):
        get_model(10)
    with pytest.raises(ValueError):
        ExperimentSpec(model=1, replications=0)


# -- metrics ------------------------------------------------------------------------------------

def test_ace_examples():
    lv = (0.80, 0.90, 0.95)
    assert ace(dict(zip(lv, lv))) == pytest.approx(0.0, abs=1e-15)
    assert ace(dict(zip(lv, (0.75, 0.85, 0.90)))) == pytest.approx(0.05)
    # coverage errors 0.077, 0.033, 0.011 (coverage below nominal)
    c = {a: a - e for a, e in zip(lv, (0.077, 0.033, 0.011))}
    assert ace(c) == pytest.approx(0.040, abs=5e-4)
    with pytest.raises(KeyError):
        ace({0.8: 0.8, 0.9: 0.9})


def test_ae_examples():
    assert ae(1.0) == 0
    assert ae(0.895) == pytest.approx(0.105)
    assert ae(0.0) == 1
    with pytest.raises(ValueError):
        ae(1.2)


@given(st.floats(0, 1))
def test_ae_bounds(p):
    assert 0 <= ae(p) <= 1


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_ace_bounds(cs):
    v = ace(dict(zip((0.80, 0.90, 0.95), cs)))
    assert 0 <= v <= 0.95


# -- matching and conditional statistics ---------------------------------------------------------

def test_match_locations():
    assert match_locations([1530, 1030], [1024, 1536], 256) == [1030, 1530]
    assert match_locations([1024, 1900], [1024, 1536], 256) == [1024, None]


def _fake(rep, taus, ivs=()):
    return Replication(rep, len(taus), tuple(taus), (JUMP,) * len(taus), ivs, 100, 100)


def test_summary_conditional_on_correct_count():
    spec = ExperimentSpec(model=8, replications=4)
    lv = spec.levels
    iv = tuple((a, 830, 850) for a in lv)
    reps = [_fake(0, [840, 1644], (iv, iv)), _fake(1, [850, 1640], (iv, iv)),
            _fake(2, [400, 840, 1644]), _fake(3, [])]
    rep = summarise(spec, reps)
    assert rep.p_correct == 0.5 and rep.ae == 0.5
    assert rep.mean_m == pytest.approx(1.75)
    loc = rep.locations[0]
    assert loc.n == 2 and loc.mean == 845
    assert all(loc.coverage[a] == 1.0 for a in lv)
    assert rep.locations[1].coverage[0.8] == 0.0  # 830..850 misses 1644
    for l in rep.locations:
        for a, e in l.ce.items():
            assert 0 <= e <= a


def test_summary_order_independent():
    spec = ExperimentSpec(model=8, replications=3)
    reps = [_fake(0, [840, 1644]), _fake(1, [838, 1650]), _fake(2, [840])]
    a = summarise(spec, reps)
    b = summarise(spec, reps[::-1])
    assert a.to_dict() == b.to_dict()


def test_failures_recorded_not_fatal():
    spec = ExperimentSpec(model=8, replications=2)
    reps = [_fake(0, [840, 1644]), Replication(1, -1, (), (), (), error="FitError: x")]
    rep = summarise(spec, reps)
    assert rep.failures == 1 and rep.p_correct == 1.0


# -- determinism --------------------------------------------------------------------------------

def test_replication_seeds_independent():
    a = replication_seed(7, 3).generate_state(4)
    b = replication_seed(7, 3).generate_state(4)
    c = replication_seed(7, 4).generate_state(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_replication_deterministic():
    spec = ExperimentSpec(model=8, replications=1, seed=5, T=1024, intervals=False)
    assert run_replication(spec, 0) == run_replication(spec, 0)


def test_experiment_deterministic_across_workers():
    spec = ExperimentSpec(model=8, replications=3, seed=2, T=1024, bootstrap_b=100)
    a = run_experiment(spec, 1)
    b = run_experiment(spec, 2)
    assert a.to_dict() == b.to_dict()
    text = format_report(a)
    assert text.startswith("Model 8")


# -- Monte-Carlo examples -------------------------------------------------------------------------

@pytest.mark.slow
def test_model3_mean_count():
    rep = cached_experiment(ExperimentSpec(model=3, replications=100, intervals=False))
    assert rep.mean_m <= 0.15


@pytest.mark.slow
def test_model8_counts_and_location():
    rep = cached_experiment(ExperimentSpec(model=8, replications=100, intervals=False))
    assert 1.95 <= rep.mean_m <= 2.05
    loc = rep.locations[0]
    assert abs(loc.mean - 840) <= 6 and loc.sd <= 10
