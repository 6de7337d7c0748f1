import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cintl1.kernel import (
    DIAG_BOUND,
    KernelScales,
    MeasurementMatrix,
    build_matrix,
    check_diagonal_dominance,
    dd_prefactor,
    fit_constant,
    kernel,
    kernel_broadband,
    kernel_narrowband,
    m_modulus_broadband,
    matrix_entries,
)
from cintl1.scenario import BROADBAND, NARROWBAND, Scenario, derive_scales


@pytest.fixture(scope="module")
def ks(scales):
    return KernelScales.from_scales(scales, C=2.0)


@pytest.fixture(scope="module")
def ks_bb():
    return KernelScales.from_scales(derive_scales(Scenario(B_over_w0=0.1, Omega_rule="auto")))


def test_narrowband_entries_formula(ks):
    y = np.array([0.01, 800.0])
    z = np.array([0.03, 800.001])
    dc, dr = z - y
    expected = 2.0 * math.exp(-(dc**2) / (2 * ks.R**2) - (dr**2) / (2 * ks.R3**2))
    assert matrix_entries(y, z, ks) == pytest.approx(expected, rel=1e-12)


def test_diagonal_of_kernel_is_matrix_entry(ks, ks_bb):
    gen = np.random.default_rng(1)
    for k in (ks, ks_bb):
        y = np.column_stack([gen.uniform(-0.2, 0.2, 20), 800 + gen.uniform(-0.01, 0.01, 20)])
        z = np.column_stack([gen.uniform(-0.2, 0.2, 20), 800 + gen.uniform(-0.01, 0.01, 20)])
        np.testing.assert_allclose(kernel(y, z, z, k).real, matrix_entries(y, z, k), rtol=1e-10)


def test_regime_guards(ks, ks_bb):
    y = np.array([0.0, 800.0])
    with pytest.raises(ValueError):
        kernel_broadband(y, y, y, ks)
    with pytest.raises(ValueError):
        kernel_narrowband(y, y, y, ks_bb)


def test_broadband_cross_term_increases_modulus(ks_bb):
    y = np.array([0.0, 800.0])
    zbar = np.array([2 * ks_bb.R, 800.0])
    zt = np.array([ks_bb.Rt, 0.0])
    with_cross = m_modulus_broadband(y, zbar + zt / 2, zbar - zt / 2, ks_bb)
    no_offset = m_modulus_broadband(y, y + zt / 2, y - zt / 2, ks_bb)
    assert with_cross > no_offset


def test_three_d_phase_modulus(scales):
    k3 = KernelScales.from_scales(scales)
    y = np.array([0.0, 0.0, 800.0])
    z = np.array([0.021, 0.0, 800.0])
    zp = np.array([0.019, 0.0, 800.0])
    full = kernel(y, z, zp, k3)
    bare = kernel(y, z, zp, k3, with_phase=False)
    assert abs(full) == pytest.approx(abs(bare))
    assert abs(full.imag) > 0


def test_diagonal_dominance(ks, ks_bb):
    # [DERIVED] largest off-diagonal modulus from the frozen default scales
    rep = check_diagonal_dominance(ks)
    assert rep.passed
    assert rep.max_ratio == pytest.approx(0.0111089965354, rel=1e-9)
    assert rep.bound == pytest.approx(math.exp(-4.5))
    assert check_diagonal_dominance(ks, [[3 * ks.Rt, 0.0]]).max_ratio <= DIAG_BOUND * (1 + 1e-12)


def test_matrix_build_and_io(tmp_path, ks):
    cols = np.column_stack([np.linspace(-0.1, 0.1, 7), np.full(7, 800.0)])
    rows = cols[::2]
    M = build_matrix(cols, rows, ks)
    assert M.shape == (4, 7) and M.regime == NARROWBAND
    np.testing.assert_allclose(M.column(0)[0], 2.0)
    M.save(tmp_path / "m.bin")
    back = MeasurementMatrix.load(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.values, M.values)
    assert build_matrix(cols, rows, ks, regime=BROADBAND).regime == BROADBAND
    with pytest.raises(ValueError):
        (tmp_path / "bad.bin").write_bytes(b"nope")
        MeasurementMatrix.load(tmp_path / "bad.bin")


def test_tiny_entries_clamped(ks):
    cols = np.array([[0.0, 800.0], [10.0, 800.0]])
    M = build_matrix(cols, cols[:1], ks)
    assert M.values[0, 1] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(2, 20))
def test_fit_constant_recovers_scale(c, n):
    shape = np.linspace(0.1, 1.0, n)
    assert fit_constant(c * shape, shape) == pytest.approx(c, rel=1e-12)


def test_fit_constant_degenerate():
    with pytest.raises(ValueError):
        fit_constant([1.0, 2.0], [0.0, 0.0])


def test_dd_prefactor_formula(scales):
    s = Scenario(dim=3, Nr=81 * 81)
    d = derive_scales(s)
    expected = math.sqrt(2) * math.pi**1.5 * s.Nr**2 * d.X_e**2 * d.Omega_e / (144 * s.a**2 * s.L**2)
    assert dd_prefactor(s, d) == pytest.approx(expected)


def test_kernel_modulus_symmetric(ks, ks_bb):
    gen = np.random.default_rng(2)
    for k in (ks, ks_bb):
        y = np.array([0.0, 800.0])
        z = np.array([gen.uniform(-0.05, 0.05), 800 + gen.uniform(-1e-3, 1e-3)])
        zp = np.array([gen.uniform(-0.05, 0.05), 800 + gen.uniform(-1e-3, 1e-3)])
        assert abs(kernel(y, z, zp, k)) == pytest.approx(abs(kernel(y, zp, z, k)), rel=1e-12)


def test_broadband_near_translation_invariant(ks_bb, scenario):
    # [DERIVED] direct evaluation for |y| < D/10 against the centred column
    offs = np.linspace(-3, 3, 31) * ks_bb.R
    y0 = np.array([0.0, 800.0])
    ref = matrix_entries(y0, np.column_stack([offs, np.full(31, 800.0)]), ks_bb)
    for yc in (-scenario.D / 10 * 0.99, scenario.D / 10 * 0.99):
        y = np.array([yc, 800.0])
        col = matrix_entries(y, np.column_stack([yc + offs, np.full(31, 800.0)]), ks_bb)
        assert np.max(np.abs(col - ref)) / np.max(ref) < 0.1
