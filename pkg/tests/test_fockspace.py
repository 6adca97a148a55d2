import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from phononpair.fockspace import (
    DensityMatrix,
    DimensionError,
    ResourceError,
    StateVector,
    apply,
    basis_index,
    commutator,
    dagger,
    expm,
    identity,
    inner,
    is_hermitian,
    make_annihilation,
    make_creation,
    make_number,
    mode_operators,
    tensor,
    thermal_mechanics,
    thermal_populations,
)

dims_st = st.integers(2, 12)


@given(dims_st)
def test_commutator_is_identity_below_truncation(n):
    a, ad = make_annihilation(n), make_creation(n)
    c = commutator(a, ad)
    # the truncated commutator is 1 except on the top level, where it is -(n-1)
    expected = np.eye(n)
    expected[-1, -1] = -(n - 1)
    assert np.allclose(c, expected, atol=1e-12)


@given(dims_st)
def test_number_operator(n):
    assert np.allclose(make_creation(n) @ make_annihilation(n), make_number(n))
    assert is_hermitian(make_number(n))


def test_annihilation_rejects_small_dim():
    with pytest.raises(DimensionError):
        make_annihilation(1)


def test_tensor_resource_limit():
    with pytest.raises(ResourceError):
        tensor(identity(100), identity(100), max_dim=5000)


@given(st.integers(2, 6), st.integers(2, 6))
def test_basis_ordering_is_optical_major(n_a, n_m):
    ops = mode_operators(n_a, n_m)
    for j in range(n_a):
        for k in range(n_m):
            psi = StateVector.basis((n_a, n_m), j, k)
            i = basis_index(j, k, n_m)
            assert psi.amplitudes[i] == 1
            assert inner(psi, apply(ops.num_a, psi)).real == pytest.approx(j)
            assert inner(psi, apply(ops.num_m, psi)).real == pytest.approx(k)


def test_mode_operators_commute_across_modes():
    ops = mode_operators(4, 5)
    assert np.allclose(commutator(ops.a, ops.m), 0)
    assert np.allclose(commutator(ops.a, ops.md), 0)


matrices = st.builds(
    lambda n, seed, scale: scale * np.random.default_rng(seed).standard_normal((n, n, 2)) @ np.array([1, 1j]),
    st.integers(1, 10),
    st.integers(0, 2**32 - 1),
    st.sampled_from([1e-4, 0.1, 0.5, 1.0, 3.0, 20.0, 150.0]),
)


@settings(max_examples=150, deadline=None)
@given(matrices)
def test_expm_matches_scipy(A):
    ours, ref = expm(A), scipy.linalg.expm(A)
    assert np.allclose(ours, ref, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(ref).max()))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0.01, 30.0))
def test_expm_of_antihermitian_is_unitary(n, seed, scale):
    X = np.random.default_rng(seed).standard_normal((n, n)) + 1j * np.random.default_rng(seed + 1).standard_normal((n, n))
    H = scale * (X + dagger(X)) / 2
    U = expm(-1j * H)
    assert np.allclose(U @ dagger(U), np.eye(n), atol=1e-10)


def test_expm_zero_and_diagonal():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    d = np.array([0.1, -2.0, 5.0])
    assert np.allclose(expm(np.diag(d)), np.diag(np.exp(d)))


def test_expm_rejects_bad_input():
    with pytest.raises(DimensionError):
        expm(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        expm(np.array([[np.nan]]))


@given(st.floats(0.0, 5.0), st.integers(2, 30))
def test_thermal_populations(n_mean, dim):
    p = thermal_populations(n_mean, dim)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= 0)
    assert np.all(np.diff(p) <= 1e-15)


def test_thermal_mean_converges():
    p = thermal_populations(0.5, 60)
    assert np.arange(60) @ p == pytest.approx(0.5, rel=1e-9)


def test_density_partial_traces():
    rho = thermal_mechanics((3, 4), 0.2)
    assert rho.trace == pytest.approx(1.0)
    assert np.allclose(rho.reduced_optical(), np.diag([1, 0, 0]))
    assert np.allclose(np.diag(rho.reduced_mechanical()), thermal_populations(0.2, 4))
    assert rho.min_eigenvalue() >= -1e-15


def test_state_dimension_errors():
    with pytest.raises(DimensionError):
        StateVector((2, 2), np.ones(3))
    with pytest.raises(DimensionError):
        StateVector.basis((2, 2), 2, 0)
    with pytest.raises(DimensionError):
        DensityMatrix((2, 2), np.eye(3))
    with pytest.raises(DimensionError):
        apply(np.eye(3), StateVector.vacuum((2, 2)))
