import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from phononpair.detection import ClickRecord, ClickRecords, DetectorSpec, Photons, hbt_detect, sample_photons
from phononpair.emission import (
    EmissionProfile,
    decaying_times,
    heating_times,
    rise_integral,
    sample_counts,
    uniform_times,
)


@pytest.mark.parametrize("stats_,var", [("thermal", lambda m: m + m * m), ("poisson", lambda m: m)])
def test_count_statistics(stats_, var):
    rng = np.random.default_rng(1)
    x = sample_counts(0.7, stats_, rng, 400_000)
    assert x.mean() == pytest.approx(0.7, rel=0.01)
    assert x.var() == pytest.approx(var(0.7), rel=0.02)


def test_count_statistics_edge_cases():
    rng = np.random.default_rng(0)
    assert not sample_counts(0.0, "thermal", rng, 10).any()
    with pytest.raises(ValueError):
        sample_counts(1.0, "laser", rng, 10)


@given(st.floats(1e-9, 1e-6), st.floats(1e-8, 1e-6), st.floats(1e-7, 1e-5))
def test_rise_integral_matches_quadrature(tau, t_s, t_l):
    ref, _ = quad(lambda t: (1 - np.exp(-t / t_s)) * np.exp(-t / t_l), 0.0, tau, epsabs=0, epsrel=1e-12)
    assert float(rise_integral(tau, t_s, t_l)) == pytest.approx(ref, rel=1e-8, abs=1e-30)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-9, 1e-7), st.floats(1e8, 1e10))
def test_arrival_times_inside_window(seed, dur, kappa):
    rng = np.random.default_rng(seed)
    for t in (
        uniform_times(rng, 500, dur, kappa),
        decaying_times(rng, 500, dur, 3e7, kappa),
        heating_times(rng, 500, dur, 0.22e-6, 1.46e-6, kappa),
    ):
        assert t.size == 500
        assert np.all((t >= 0) & (t < dur))


def test_decaying_times_mean():
    rng = np.random.default_rng(2)
    dur, rate = 47e-9, 5e7
    t = decaying_times(rng, 400_000, dur, rate)
    num, _ = quad(lambda x: x * rate * np.exp(-rate * x), 0, dur)
    assert t.mean() == pytest.approx(num / (1 - np.exp(-rate * dur)), rel=0.005)


def test_heating_times_mean():
    rng = np.random.default_rng(3)
    dur, t_s, t_l = 47e-9, 0.22e-6, 1.46e-6
    dens = lambda x: (1 - np.exp(-x / t_s)) * np.exp(-x / t_l)  # noqa: E731
    mean = quad(lambda x: x * dens(x), 0, dur)[0] / quad(dens, 0, dur)[0]
    assert heating_times(rng, 400_000, dur, t_s, t_l).mean() == pytest.approx(mean, rel=0.005)


def test_emission_profile_validation():
    with pytest.raises(ValueError):
        EmissionProfile(pulse=1, duration=1e-8, stokes=-1.0)
    with pytest.raises(ValueError):
        EmissionProfile(pulse=1, duration=1e-8, pair=3.0)
    with pytest.raises(ValueError):
        EmissionProfile(pulse=1, duration=0.0)
    p = EmissionProfile(pulse=2, duration=1e-8, pair=0.2, heating=0.1)
    assert p.pair_probability == pytest.approx(0.1)
    assert p.total == pytest.approx(0.3)


def test_pair_branch_gives_zero_or_two_photons():
    rng = np.random.default_rng(4)
    ph = sample_photons(EmissionProfile(pulse=1, duration=3e-8, pair=0.5), rng, 100_000)
    c = ph.counts(1)
    assert set(np.unique(c)) <= {0, 2}
    assert (c == 2).mean() == pytest.approx(0.25, abs=0.005)


def test_detection_efficiency_and_darks():
    rng = np.random.default_rng(5)
    n = 200_000
    ph = Photons(n, {1: 3e-8})
    ph.add(np.arange(n), 1, np.full(n, 1e-8))
    spec = DetectorSpec(efficiency=0.3, dark_rate=0.01)
    rec = hbt_detect(ph, spec, rng)
    a, b = rec.counts(1, 0).sum(), rec.counts(1, 1).sum()
    assert a / n == pytest.approx(0.15 + 0.01, rel=0.02)
    assert b / n == pytest.approx(0.15 + 0.01, rel=0.02)
    assert rec.emitted == {1: n}
    # dark-count arrival times are uniform over the window
    assert np.all((rec.time >= 0) & (rec.time < 3e-8))


def test_threshold_merges_repeated_clicks():
    rng = np.random.default_rng(6)
    n = 1000
    ph = Photons(n, {1: 3e-8, 2: 4e-8})
    ph.add(np.repeat(np.arange(n), 6), 1, rng.uniform(0, 3e-8, 6 * n))
    rec = hbt_detect(ph, DetectorSpec(efficiency=1.0, dark_rate=0.0, threshold=True), rng)
    assert rec.counts(1, 0).max() == 1 and rec.counts(1, 1).max() == 1
    counting = hbt_detect(ph, DetectorSpec(efficiency=1.0, dark_rate=0.0), np.random.default_rng(6))
    assert counting.counts(1).sum() == 6 * n


events = st.lists(
    st.tuples(st.integers(0, 19), st.integers(0, 1), st.integers(1, 2), st.floats(0.0, 3e-8)),
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(events)
def test_records_text_round_trip(rows):
    durations = {1: 3.6e-8, 2: 4.7e-8}
    if rows:
        tr, de, pu, ti = map(np.array, zip(*rows))
    else:
        tr = de = pu = ti = np.zeros(0)
    rec = ClickRecords(20, durations, tr, de, pu, ti, {1: 7, 2: 3})._sorted()
    buf = io.StringIO()
    rec.write(buf)
    buf.seek(0)
    back = ClickRecords.read(buf)
    assert back.n_trials == 20
    assert back.emitted == {1: 7, 2: 3}
    assert back.durations == pytest.approx(durations)
    for p in (1, 2):
        for d in (0, 1):
            assert np.array_equal(back.counts(p, d), rec.counts(p, d))
    # times are written with femtosecond resolution
    assert np.allclose(back.time, rec.time, atol=1e-15)


def test_record_line_format():
    r = ClickRecord(3, (("A", 1, 1.5e-9), ("B", 2, 2e-9)))
    assert r.to_line() == "3;A,1,1.500000;B,2,2.000000"
    back = ClickRecord.from_line(r.to_line())
    assert back.trial_index == 3
    assert [(d, p) for d, p, _ in back.events] == [("A", 1), ("B", 2)]
    assert [t for *_, t in back.events] == pytest.approx([1.5e-9, 2e-9], rel=1e-12)
    with pytest.raises(ValueError):
        ClickRecords.read(io.StringIO("# n_trials=2\n0;C,1,1.0\n"))


def test_concatenate_offsets_trials():
    d = {1: 1e-8}
    a = ClickRecords(3, d, [0, 2], [0, 1], [1, 1], [0.0, 0.0], {1: 2})
    b = ClickRecords(2, d, [1], [0], [1], [0.0], {1: 1})
    c = ClickRecords.concatenate([a, b])
    assert c.n_trials == 5
    assert list(c.trial) == [0, 2, 4]
    assert c.emitted == {1: 3}


def test_window_mask():
    rec = ClickRecords(2, {1: 1e-8}, [0, 0, 1], [0, 1, 0], [1, 1, 1], [1e-9, 5e-9, 9e-9])
    assert list(rec.counts(1, window=4e-9)) == [1, 0]
    assert list(rec.counts(1)) == [2, 1]
