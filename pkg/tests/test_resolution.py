import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import erfc

from cintl1.imaging import Mesh, centered_axis
from cintl1.kernel import KernelScales, build_matrix
from cintl1.resolution import (
    CorrelationModel,
    SeparationSpec,
    TheoremReport,
    ball_members,
    balls_disjoint,
    bound_F,
    broadband_constant,
    centers_balls_overlap,
    closed_vs_discrete_check,
    column_correlations,
    correlation_closed_form,
    correlation_discrete,
    detect_peaks,
    effective_intensity,
    interaction_coefficient,
    nearest_source,
    peaks_to_csv,
    semimetric,
    theorem_checks,
)
from cintl1.scenario import BROADBAND, NARROWBAND


def test_decay_functions_frozen():
    # [DERIVED] direct evaluation of the two decay expressions
    assert bound_F(4, 4) == pytest.approx(math.exp(-1) / 64, rel=1e-12)
    assert bound_F(4, 4) == pytest.approx(5.7481e-3, rel=1e-4)
    assert bound_F(4, regime=BROADBAND) == pytest.approx((math.exp(-0.5) + math.exp(-4)) / 64, rel=1e-12)
    assert bound_F(4, regime=BROADBAND) == pytest.approx(0.0097632, rel=1e-4)
    assert bound_F(6, 3) == pytest.approx(math.exp(-(3 / 4) ** 2) / 108)


def test_decay_domain_errors():
    with pytest.raises(ValueError):
        bound_F(1.0, 2.0)
    with pytest.raises(ValueError):
        bound_F(2.0)
    with pytest.raises(ValueError):
        bound_F(4.0, 1.5, BROADBAND, theta=2.0)
    with pytest.raises(ValueError):
        bound_F(2.0, regime="x")
    assert SeparationSpec(4.0, 40.0, 1.0, 1.0).broadband_ok(10.0)


def test_broadband_constant():
    assert broadband_constant(1.0) == pytest.approx(3 * math.exp(-1) / (2 * erfc(math.sqrt(2))))
    assert broadband_constant(1.0) == pytest.approx(12.1278, rel=1e-4)
    with pytest.raises(ValueError):
        broadband_constant(0.0)


def test_narrowband_correlation_integral_oracle():
    # [DERIVED] normalised overlap of two Gaussians of width R over the line
    R, R3 = 0.7, 0.2
    cm = CorrelationModel(NARROWBAND, R, R3, 10.0, 100.0)
    g = lambda x, c: math.exp(-((x - c) ** 2) / (2 * R**2))
    dz = 0.9
    num = integrate.quad(lambda x: g(x, 0) * g(x, dz), -20, 20)[0]
    den = integrate.quad(lambda x: g(x, 0) ** 2, -20, 20)[0]
    val = correlation_closed_form(cm, np.array([0.0, 100.0]), np.array([dz, 100.0]))
    assert val == pytest.approx(num / den, rel=1e-10)


def test_closed_vs_discrete_fine_sampling(scales):
    ks = KernelScales.from_scales(scales)
    cols = np.column_stack([centered_axis(8 * ks.R, ks.R / 2), np.full(17, scales.L)])
    rows = Mesh((centered_axis(40 * ks.R, ks.R / 4), np.array([scales.L]))).points
    M = build_matrix(cols, rows, ks)
    rep = closed_vs_discrete_check(M, CorrelationModel.from_kernel(ks))
    assert rep.passed and rep.max_deviation < 1e-6
    G = column_correlations(M)
    assert np.allclose(np.diag(G), 1)
    assert correlation_discrete(M, 0, 1) == pytest.approx(G[0, 1])
    assert np.allclose(semimetric(G), 1 - G)
    with pytest.raises(ValueError):
        closed_vs_discrete_check(M.values, CorrelationModel.from_kernel(ks))


def test_nearest_source_tie_lowest_index():
    C = np.array([[0.5, 0.5, 0.1], [0.1, 0.2, 0.9]])
    np.testing.assert_array_equal(nearest_source(C), [0, 2])


def test_interaction_coefficient_callable():
    # two sources with correlation exp(-|d|): the worst point is the midpoint region
    f = lambda P, Q: np.exp(-np.abs(P[:, None, 0] - Q[None, :, 0]))
    Y = np.array([[0.0], [2.0]])
    Z = np.linspace(-1, 3, 401)[:, None]
    assert interaction_coefficient(f, Y, Z) == pytest.approx(math.exp(-1), rel=1e-9)
    with pytest.raises(ValueError):
        interaction_coefficient(f, np.zeros((0, 1)), Z)
    with pytest.raises(TypeError):
        interaction_coefficient(3, Y, Z)


def test_balls_and_effective_intensity():
    cm = CorrelationModel(NARROWBAND, 1.0, 1.0, 1.0, 1.0)
    P = np.column_stack([np.arange(-10, 11, dtype=float), np.zeros(21)])
    Y = P[[5, 15]]
    mem = ball_members(cm, Y, P, 0.5)
    assert balls_disjoint(mem)
    assert not centers_balls_overlap(cm, Y, 0.5)
    assert centers_balls_overlap(cm, P[[9, 11]], 0.5)
    u = np.zeros(21)
    u[[5, 15]] = [1.0, 2.0]
    ubar = effective_intensity(u, P, Y, 0.5, cm)
    np.testing.assert_allclose(ubar[[5, 15]], [1.0, 2.0])
    with pytest.raises(ValueError):
        effective_intensity(u, P, Y, 1.5, cm)
    with pytest.raises(ValueError):
        effective_intensity(u, P, P[[9, 10]], 0.5, cm)


def test_theorem_checks_exact_support():
    cm = CorrelationModel(NARROWBAND, 1.0, 1.0, 1.0, 1.0)
    P = np.column_stack([np.arange(-10, 11, dtype=float), np.zeros(21)])
    u = np.zeros(21)
    u[[4, 16]] = [1.0, 0.7]
    rep = theorem_checks(u, u, P, P[[4, 16]], 0.5, cm)
    assert rep.leakage == 0 and rep.holds and math.isinf(rep.ratio)
    assert rep.effective_error == pytest.approx(0.0, abs=1e-12)
    leaky = u.copy()
    leaky[10] = 0.3
    rep2 = theorem_checks(leaky, u, P, P[[4, 16]], 0.5, cm, eps=0.1)
    assert rep2.leakage == pytest.approx(0.3 / 2.0)
    assert rep2.cluster_term == pytest.approx(0.1 / 0.5 * 1.7 / 2.0)
    assert '"holds"' in rep2.to_json()
    assert isinstance(rep2, TheoremReport)


def test_broadband_closed_form_shape():
    cm = CorrelationModel(BROADBAND, 1.0, 0.1, 2.0, 100.0)
    z = np.array([0.0, 100.0])
    assert correlation_closed_form(cm, z, z) == pytest.approx(cm.C_bb)
    a = correlation_closed_form(cm, z, np.array([0.0, 100.1]))
    assert a == pytest.approx(cm.C_bb * math.exp(-2.0))


def test_detect_peaks_basic():
    v = np.array([0, 1, 0, 0.2, 0, 3, 3, 0, 2, 0], float)
    pk = detect_peaks(v, axes=[np.arange(10) * 0.5])
    pos = sorted(p.position[0] for p in pk)
    # 0.2 is below a third of the maximum; the plateau 3,3 reports its centroid
    assert pos == [0.5, 2.75, 4.0]
    assert detect_peaks(np.zeros(5)) == []
    with pytest.raises(ValueError):
        detect_peaks(v, threshold_frac=1.5)


def test_detect_peaks_two_d_diagonal_neighbours():
    a = np.zeros((5, 5))
    a[1, 1] = 1.0
    a[2, 2] = 0.9
    a[4, 4] = 0.8
    pk = detect_peaks(a)
    assert sorted(p.index for p in pk) == [(1.0, 1.0), (4.0, 4.0)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40))
def test_peaks_are_local_maxima(vals):
    v = np.asarray(vals)
    for p in detect_peaks(v):
        i = int(round(p.index[0]))
        assert v[i] >= v.max() * 0.33
        lo, hi = max(0, i - 1), min(len(v), i + 2)
        assert v[i] == v[lo:hi].max()


def test_peaks_csv(tmp_path):
    pk = detect_peaks(np.array([0.0, 1.0, 0.0]))
    peaks_to_csv(pk, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["p0,value", "1.0,1.0"]
