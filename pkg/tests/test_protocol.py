import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phononpair.detection import DetectorSpec
from phononpair.dynamics import DriveSpec, PhysicalParams
from phononpair.open_system import HeatingModel
from phononpair.protocol import (
    CHUNK_SIZE,
    ProtocolError,
    ProtocolSchedule,
    SequenceModel,
    chunk_sizes,
    convert,
    default_workers,
    run_delay,
    run_preparation,
    simulate_trial,
    simulate_trials,
)

P = PhysicalParams()
SCHED = ProtocolSchedule()
HEAT = HeatingModel(n_base=P.n_th, heat_per_energy=1e6)
QUIET = DetectorSpec(efficiency=0.5, dark_rate=0.0, filter_rejection=0.0)


@pytest.fixture(scope="module")
def model():
    return SequenceModel.build(P, SCHED, HEAT, QUIET)


def test_ringdown_conserves_photon_flux():
    res = run_preparation(P, SCHED, HEAT, QUIET, mode="master-equation")
    assert res.flux_emitted == pytest.approx(res.flux_drop, rel=0.01)
    assert math.isnan(run_preparation(P, SCHED, HEAT, QUIET).flux_emitted)


def test_pair_symmetry_of_joint_populations():
    J = run_preparation(P.model_copy(update={"n_th": 0.0}), SCHED, HEAT, QUIET).joint
    assert J[2, 0] == pytest.approx(J[0, 2], rel=0.02)


@pytest.mark.parametrize("delta_T", [30e-9, 100e-9, 300e-9])
def test_stored_pair_moment_decays_at_twice_gamma(delta_T):
    cold = P.model_copy(update={"n_th": 0.0})
    off = HeatingModel(enabled=False, n_base=0.0)
    p = run_delay(np.array([0.0, 0.0, 1.0]), cold, SCHED.with_delay(delta_T), off)
    n = np.arange(p.size)
    assert float(n * (n - 1) @ p) == pytest.approx(2 * math.exp(-2 * cold.gamma_m * delta_T), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8), st.floats(0.01, 0.99))
def test_conversion_modes_agree(weights, p_meas):
    w = np.asarray(weights)
    if w.sum() == 0:
        return
    p = w / w.sum()
    assert convert(p, p_meas, "master-equation") == pytest.approx(convert(p, p_meas), rel=1e-9, abs=1e-12)


def test_amplitude_and_master_equation_models_agree(model):
    me = SequenceModel.build(P, SCHED, HEAT, QUIET, mode="master-equation")
    for pulse in (1, 2):
        assert me.expected_g2(pulse) == pytest.approx(model.expected_g2(pulse), rel=0.05)
        assert me.mean_photons(pulse) == pytest.approx(model.mean_photons(pulse), rel=0.05)


def test_zero_drive_leaves_cold_mechanics_empty():
    cold = P.model_copy(update={"n_th": 0.0})
    off = HeatingModel(enabled=False, n_base=0.0)
    sched = SCHED.model_copy(update={"prep": DriveSpec(n_r=0.0, n_b=0.0, tau=36e-9)})
    m = SequenceModel.build(cold, sched, off, QUIET)
    assert m.joint[0, 0] == pytest.approx(1.0)
    assert m.mean_photons(1) == 0.0


def test_pulse_two_brightens_with_delay():
    means = [SequenceModel.build(P, SCHED.with_delay(d), HEAT, QUIET).mean_photons(2) for d in (30e-9, 100e-9, 300e-9)]
    assert means[0] < means[1] < means[2]


def test_sampled_g2_matches_model():
    det = DetectorSpec(efficiency=0.9, dark_rate=0.0, filter_rejection=0.0)
    m = SequenceModel.build(P, SCHED, HEAT, det)
    rec = simulate_trials(m, 400_000, 11, workers=1)
    for pulse in (1, 2):
        a, b = rec.counts(pulse, 0), rec.counts(pulse, 1)
        g2 = np.mean(a * b) / (a.mean() * b.mean())
        assert g2 == pytest.approx(m.expected_g2(pulse), rel=0.08)
        assert (a.mean() + b.mean()) / 0.9 == pytest.approx(m.mean_photons(pulse), rel=0.03)


def test_twofold_probabilities_sum_to_one(model):
    t = model.twofold_probabilities()
    assert sum(t.values()) == pytest.approx(1.0)
    assert all(v >= 0 for v in t.values())


def test_records_do_not_depend_on_workers(model):
    n = CHUNK_SIZE + 5000
    one = simulate_trials(model, n, 42, workers=1)
    three = simulate_trials(model, n, 42, workers=3)
    assert np.array_equal(one.trial, three.trial)
    assert np.array_equal(one.time, three.time)
    other = simulate_trials(model, n, 43, workers=1)
    assert not np.array_equal(one.trial, other.trial)


def test_single_trial_is_reproducible(model):
    a, b = simulate_trial(model, 2**64 - 1), simulate_trial(model, 2**64 - 1)
    assert a.records.n_trials == 1
    assert np.array_equal(a.records.time, b.records.time)
    assert a.clicks(1) == b.clicks(1)


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert sum(chunk_sizes(3 * CHUNK_SIZE + 1)) == 3 * CHUNK_SIZE + 1
    with pytest.raises(ValueError):
        simulate_trials(SequenceModel.build(P, SCHED, HEAT, QUIET), 0)


def test_schedule_validation():
    with pytest.raises(ValueError, match="n_b"):
        ProtocolSchedule(meas=DriveSpec(n_r=2.0, n_b=0.1, tau=47e-9))
    with pytest.raises(ValueError, match="tau_f"):
        ProtocolSchedule(tau_f=60e-9)
    with pytest.raises(ProtocolError, match="gamma_m"):
        SCHED.with_delay(2.0 / P.gamma_m).check(P)
    with pytest.raises(ProtocolError, match="kappa"):
        SCHED.with_delay(1.0 / P.kappa).check(P)
    SCHED.check(P)


def test_single_tone_schedules():
    assert SCHED.single_tone("red").prep.n_b == 0.0
    assert SCHED.single_tone("blue").prep.n_r == 0.0


def test_worker_environment_override(monkeypatch):
    monkeypatch.setenv("PHONONPAIR_WORKERS", "3")
    assert default_workers() == 3
    for bad in ("0", "-2", "many"):
        monkeypatch.setenv("PHONONPAIR_WORKERS", bad)
        with pytest.raises(ProtocolError):
            default_workers()
    monkeypatch.delenv("PHONONPAIR_WORKERS")
    assert 1 <= default_workers() <= 8
