import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from cintl1.bruteforce import MAX_COLUMNS, bpdn_bruteforce

from _instances import random_instance


def test_basis_pursuit_matches_linprog():
    rng = np.random.default_rng(3)
    for _ in range(10):
        M = rng.standard_normal((4, 9))
        u = np.zeros(9)
        u[[1, 5]] = [1.0, -2.0]
        d = M @ u
        # [DERIVED] min sum t s.t. -t <= u <= t, M u = d as a linear program
        c = np.concatenate([np.zeros(9), np.ones(9)])
        A_ub = np.block([[np.eye(9), -np.eye(9)], [-np.eye(9), -np.eye(9)]])
        lp = linprog(c, A_ub=A_ub, b_ub=np.zeros(18), A_eq=np.hstack([M, np.zeros((4, 9))]), b_eq=d,
                     bounds=[(None, None)] * 18, method="highs")
        o = bpdn_bruteforce(M, d, 0.0)
        assert o.objective == pytest.approx(lp.fun, rel=1e-8)


def test_nonneg_basis_pursuit_matches_linprog():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((4, 8))
    d = M @ np.array([0, 1.0, 0, 0, 0.5, 0, 0, 0])
    lp = linprog(np.ones(8), A_eq=M, b_eq=d, bounds=[(0, None)] * 8, method="highs")
    o = bpdn_bruteforce(M, d, 0.0, nonneg=True)
    assert o.objective == pytest.approx(lp.fun, rel=1e-8)
    assert np.all(o.u >= 0)


def test_small_denoising_against_grid_search():
    # one column: minimise |u| subject to |m u - d| <= delta has the closed form (|d| - delta)/|m|
    M = np.array([[2.0], [0.0]])
    d = np.array([3.0, 0.0])
    o = bpdn_bruteforce(M, d, 1.0)
    assert o.u[0] == pytest.approx(1.0)


def test_random_instances_kkt():
    rng = np.random.default_rng(5)
    for nonneg in (False, True):
        M, d, delta, _ = random_instance(rng, 5, 10, nonneg)
        o = bpdn_bruteforce(M, d, delta, nonneg=nonneg)
        assert np.linalg.norm(M @ o.u - d) <= delta * (1 + 1e-8)
        # no sparse feasible point with smaller objective on the oracle support size grid
        for S in itertools.combinations(range(10), 1):
            col = M[:, S[0]]
            t = np.linspace(-3, 3, 601)
            if nonneg:
                t = t[t >= 0]
            feas = np.linalg.norm(np.outer(col, t) - d[:, None], axis=0) <= delta
            if feas.any():
                assert np.min(np.abs(t[feas])) >= o.objective - 1e-2


def test_trivial_and_limits():
    M = np.eye(3)
    o = bpdn_bruteforce(M, np.array([0.1, 0, 0]), 0.5)
    assert o.objective == 0 and not o.u.any()
    with pytest.raises(ValueError):
        bpdn_bruteforce(np.ones((2, MAX_COLUMNS + 1)), np.ones(2), 0.1)
