import math

import numpy as np
import pytest

from cintl1.forward import ArrayData, SourceSet, frequency_grid, receiver_positions, synthesize_data
from cintl1.imaging import (
    Mesh,
    build_mesh,
    centered_axis,
    cint,
    frequency_window,
    migrate,
    receiver_window,
    sample_image,
    sample_points,
    travel_times,
)


def _brute_cint(data, y, X, Omega):
    """Quadruple loop over receiver and frequency pairs, no truncation."""
    tau = np.linalg.norm(data.receivers - y, axis=1)
    w = data.freqs
    q = data.values * np.exp(-1j * np.outer(tau, w))
    total = 0.0 + 0.0j
    for r1 in range(q.shape[0]):
        for r2 in range(q.shape[0]):
            wr = math.exp(-np.sum((data.receivers[r1, :-1] - data.receivers[r2, :-1]) ** 2) / (2 * X**2))
            for j1 in range(q.shape[1]):
                for j2 in range(q.shape[1]):
                    wf = math.exp(-((w[j1] - w[j2]) ** 2) / (2 * Omega**2))
                    total += wr * wf * q[r1, j1] * np.conj(q[r2, j2])
    return total * data.d_omega**2


def _tiny_data():
    gen = np.random.default_rng(0)
    rec = np.column_stack([np.linspace(-1, 1, 4), np.zeros(4)])
    w = np.linspace(10.0, 12.0, 5)
    vals = gen.normal(size=(4, 5)) + 1j * gen.normal(size=(4, 5))
    return ArrayData(rec, w, vals)


def test_cint_matches_quadruple_sum():
    data = _tiny_data()
    y = np.array([[0.1, 5.0], [-0.3, 4.0]])
    img = cint(data, y, X=0.7, Omega=0.8, truncation=math.inf)
    for k in range(2):
        ref = _brute_cint(data, y[k], 0.7, 0.8)
        assert abs(ref.imag) < 1e-10 * abs(ref)
        assert img.values[k] == pytest.approx(ref.real, rel=1e-12)
    assert img.meta["imag_residue"] < 1e-10 * np.max(np.abs(img.values))


def test_truncated_windows_match_dense_when_wide():
    data = _tiny_data()
    y = np.array([[0.0, 5.0]])
    a = cint(data, y, 0.7, 0.8, truncation=math.inf).values
    b = cint(data, y, 0.7, 0.8, truncation=100.0).values
    assert a == pytest.approx(b, rel=1e-12)
    psi = receiver_window(data.receivers, 0.3, 1.0)
    assert psi.shape == (4, 4) and psi.nnz == 4
    phi = frequency_window(data.freqs, 0.5, 1.0)
    assert phi[0, -1] == 0 and phi[0, 1] == pytest.approx(math.exp(-0.5))


def test_migration_formula():
    data = _tiny_data()
    y = np.array([0.2, 3.0])
    tau = np.linalg.norm(data.receivers - y, axis=1)
    ref = np.sum(data.values * np.exp(-1j * np.outer(tau, data.freqs))) * data.d_omega / (2 * math.pi)
    assert migrate(data, y[None, :]).values[0] == pytest.approx(ref, rel=1e-12)


def test_homogeneous_images_peak_at_source(scenario, scales):
    src = SourceSet(np.array([[0.05, scenario.L]]), np.array([1.0 + 0j]))
    data = synthesize_data(src, None, scenario, scales, noise_level=0.0)
    mesh = build_mesh(scenario, scales)
    step = mesh.steps[0]
    mig = migrate(data, mesh).display()
    ci = cint(data, mesh, scales.X, scales.Omega).values
    assert abs(mesh.points[np.argmax(mig), 0] - 0.05) <= step / 2 + 1e-12
    assert abs(mesh.points[np.argmax(ci), 0] - 0.05) <= step / 2 + 1e-12
    # the truncated windows are not positive semidefinite, so small negative side lobes remain
    assert np.min(ci) > -1e-2 * np.max(ci)


def test_cint_rejects_bad_input():
    data = _tiny_data()
    with pytest.raises(ValueError):
        cint(data, np.zeros((0, 2)), 1.0, 1.0)
    with pytest.raises(ValueError):
        cint(data, np.zeros((1, 2)) + [0, 3], 0.0, 1.0)


def test_mesh_helpers(scenario, scales):
    ax = centered_axis(1.0, 0.25)
    np.testing.assert_allclose(ax, [-0.5, -0.25, 0, 0.25, 0.5])
    mesh = build_mesh(scenario, scales)
    assert mesh.shape == (97, 1)
    assert mesh.grid_shape() == (97,)
    idx = mesh.nearest_index([[0.0, scenario.L]])
    assert mesh.points[idx[0], 0] == pytest.approx(0.0)
    assert mesh.contains([[0.0, scenario.L]])[0]
    assert not mesh.contains([[5.0, scenario.L]])[0]
    pts = sample_points(mesh, 2 * mesh.steps[0])
    assert pts.shape == (49, 2)
    m3 = build_mesh(scenario, scales, h3=0.005)
    assert m3.shape[1] == 5


def test_sampling_nearest_and_exact(scenario, scales):
    src = SourceSet(np.array([[0.0, scenario.L]]), np.array([1.0 + 0j]))
    rec = receiver_positions(scenario)[::4]
    data = synthesize_data(src, None, scenario, scales, receivers=rec, noise_level=0.0)
    mesh = build_mesh(scenario, scales)
    img = cint(data, mesh, scales.X, scales.Omega)
    pts = sample_points(mesh, 2 * mesh.steps[0])
    near = sample_image(img, pts)
    exact = sample_image(img, pts, exact=True, data=data)
    np.testing.assert_allclose(near, exact, rtol=1e-10, atol=1e-12 * np.max(exact))
    with pytest.raises(ValueError):
        sample_image(img, [[9.0, scenario.L]])
    with pytest.raises(ValueError):
        sample_image(img, pts, exact=True)


def test_travel_times():
    t = travel_times(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0], [0.0, 1.0]]))
    np.testing.assert_allclose(t, [[5.0, 1.0]])


def test_image_csv(tmp_path):
    img = migrate(_tiny_data(), Mesh((np.array([0.0, 0.1]), np.array([3.0]))))
    img.to_csv(tmp_path / "i.csv", normalize=True)
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "x1,range,value" and len(lines) == 3
