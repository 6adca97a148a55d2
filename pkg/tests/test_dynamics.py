import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phononpair.dynamics import (
    DriveSpec,
    PerturbativeWarning,
    PhysicalParams,
    TruncationWarning,
    UnheraldableError,
    branch_probabilities,
    build_interaction,
    conditional_state,
    drive_for,
    evolve_pulse,
    herald_probability,
    perturbative_amplitudes,
    pulse_propagator,
    sfwm_term_weight,
)
from phononpair.fockspace import DimensionError, StateVector, dagger, is_hermitian, mode_operators
from phononpair.protocol import PREP_DRIVE

P = PhysicalParams()
VAC = StateVector.vacuum((5, 5))

drives = st.builds(
    DriveSpec,
    n_r=st.floats(0.0, 4.0),
    n_b=st.floats(0.0, 1.0),
    tau=st.floats(5e-9, 60e-9),
)


def test_preset_branch_weights():
    p_r, p_b = branch_probabilities(P, PREP_DRIVE)
    assert p_r == pytest.approx(0.2416, abs=5e-4)
    assert p_b == pytest.approx(0.12, abs=5e-4)
    assert p_r * p_b == pytest.approx(0.029, abs=5e-4)


@settings(max_examples=60, deadline=None)
@given(drives, st.sampled_from(["sequential", "simultaneous"]))
def test_propagator_is_unitary(drive, ordering):
    U = pulse_propagator(P, drive, (4, 4), ordering)
    assert np.allclose(U @ dagger(U), np.eye(16), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(drives)
def test_noon_symmetry_any_drive(drive):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        psi = evolve_pulse(VAC, P, drive)
    assert abs(abs(psi.amplitude(2, 0)) - abs(psi.amplitude(0, 2))) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(drives)
def test_tones_conserve_excitation_numbers(drive):
    # the red tone conserves n_a + n_m, the blue tone conserves n_a - n_m
    ops = mode_operators(5, 5)
    H_red = build_interaction(P, drive.model_copy(update={"n_b": 0.0}), (5, 5))
    H_blue = build_interaction(P, drive.model_copy(update={"n_r": 0.0}), (5, 5))
    total, diff = ops.num_a + ops.num_m, ops.num_a - ops.num_m
    H_red = H_red / max(1.0, np.abs(H_red).max())
    H_blue = H_blue / max(1.0, np.abs(H_blue).max())
    assert np.allclose(H_red @ total - total @ H_red, 0, atol=1e-12)
    assert np.allclose(H_blue @ diff - diff @ H_blue, 0, atol=1e-12)
    assert is_hermitian(H_red + H_blue)


@given(st.floats(0.01, 0.99), st.floats(1e-4, 0.05))
def test_drive_for_inverts_branch_probabilities(p_r, p_b):
    d = drive_for(P, p_r, p_b, 40e-9)
    assert branch_probabilities(P, d) == pytest.approx((p_r, p_b), rel=1e-10)


def test_drive_for_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        drive_for(P, 1.5, 0.01, 36e-9)


@pytest.mark.parametrize("p_r", [0.1, 0.5, 0.9])
def test_perturbative_amplitudes_match_exact(p_r):
    d = drive_for(P, p_r, 0.002, 36e-9)
    psi = evolve_pulse(VAC, P, d)
    approx = perturbative_amplitudes(P, d)
    assert abs(psi.amplitude(1, 1)) ** 2 == pytest.approx(abs(approx.A11) ** 2, rel=0.01)
    assert abs(psi.amplitude(2, 0)) ** 2 == pytest.approx(abs(approx.A20) ** 2, rel=0.01)
    assert approx.p_pre == pytest.approx(0.002 * p_r)


def test_perturbative_warning_at_strong_blue_drive():
    with pytest.warns(PerturbativeWarning):
        perturbative_amplitudes(P, drive_for(P, 0.3, 0.4, 36e-9))


def test_truncation_warning_flags_state():
    with pytest.warns(TruncationWarning):
        psi = evolve_pulse(StateVector.vacuum((3, 3)), P, DriveSpec(n_r=0.0, n_b=10.0, tau=36e-9))
    assert "leakage" in psi.flags


def test_unnormalized_initial_state_rejected():
    with pytest.raises(ValueError):
        evolve_pulse(StateVector((2, 2), np.ones(4)), P, PREP_DRIVE)


def test_sfwm_weights_scale_with_drive():
    weak = DriveSpec(n_r=0.1, n_b=0.1, tau=36e-9)
    strong = DriveSpec(n_r=0.4, n_b=0.4, tau=36e-9)
    w1 = [sfwm_term_weight(P, weak, k) for k in (1, 2)]
    w2 = [sfwm_term_weight(P, strong, k) for k in (1, 2)]
    # first order ~ G^2, second order ~ G^4
    assert w2[0] / w1[0] == pytest.approx(4.0, rel=0.05)
    assert w2[1] / w1[1] == pytest.approx(16.0, rel=0.1)
    with pytest.raises(ValueError):
        sfwm_term_weight(P, weak, 3)


def test_two_photon_herald_leaves_mechanics_empty():
    psi = evolve_pulse(VAC, P, drive_for(P, 0.5, 0.01, 36e-9))
    cond = conditional_state(psi, "two-photon")
    assert cond.norm == pytest.approx(1.0)
    grid = np.abs(cond.as_grid()) ** 2
    assert grid[2, 0] > 0.99
    # NOON: the herald probability equals the stored-pair probability
    stored = abs(psi.amplitude(0, 2)) ** 2
    assert herald_probability(psi, "two-photon") == pytest.approx(stored, rel=0.02)


def test_zero_photon_herald_enriches_stored_pair():
    psi = evolve_pulse(VAC, P, drive_for(P, 0.5, 0.01, 36e-9))
    cond = conditional_state(psi, "zero-photon")
    ratio = abs(cond.amplitude(0, 2)) ** 2 / abs(psi.amplitude(0, 2)) ** 2
    assert ratio == pytest.approx(1.0 / herald_probability(psi, "zero-photon"))
    assert ratio > 1.0


def test_herald_errors():
    with pytest.raises(UnheraldableError):
        conditional_state(VAC, "two-photon")
    with pytest.raises(ValueError):
        conditional_state(VAC, "one-photon")
    with pytest.raises(DimensionError):
        conditional_state(StateVector.vacuum((2, 3)), "two-photon")


def test_gaussian_pulse_equal_area():
    d = DriveSpec(n_r=1.0, tau=20e-9, shape="gaussian")
    assert d.tau_eff == pytest.approx(20e-9 * math.sqrt(math.pi / (2 * math.log(2))))


def test_unresolved_sideband_warns():
    with pytest.warns(UserWarning):
        PhysicalParams(kappa=2 * math.pi * 6e9)
