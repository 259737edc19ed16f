import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from qsg.errors import DomainError
from qsg.hamiltonians import build_transverse_sk
from qsg.spin_operators import HermitianOperator, SpinSystem, single_site, zero
from qsg.trotter import (
    TrotterPlan,
    check_holder_trace,
    check_trace_product_bound,
    exact_exponential,
    hermitian_expm,
    partition_function_ratio_bound,
    random_hermitian,
    trotter_error_curve,
    trotter_product,
    trotter_trace_is_positive,
)


def herm(system, rng, unit=False):
    m = random_hermitian(system.dim, rng)
    if unit:
        m = m / np.max(np.abs(np.linalg.eigvalsh(m)))
    return HermitianOperator.from_matrix(system, m)


def test_hermitian_expm_matches_scipy():
    rng = np.random.default_rng(0)
    m = random_hermitian(4, rng)
    assert np.allclose(hermitian_expm(m, 0.3), expm(0.3 * m), atol=1e-12)


def test_commuting_and_zero_cases():
    s = SpinSystem(2)
    a = single_site(s, 1, "z") * 0.7
    b = single_site(s, 2, "z") * -1.1
    for k in (1, 3, 64):
        assert np.max(np.abs(trotter_product(TrotterPlan(k, a, b)) - exact_exponential(a, b))) <= 1e-10
    assert np.allclose(trotter_product(TrotterPlan(5, a, zero(s))), hermitian_expm(a.entries), atol=1e-12)
    rows, slope = trotter_error_curve(a, zero(s), [1])
    assert rows[0][0] == 1 and rows[0][1] <= 1e-12 and slope is None


def test_single_site_example():
    s = SpinSystem(1)
    a, b = single_site(s, 1, "z"), single_site(s, 1, "x")
    rows, _ = trotter_error_curve(a, b, [100, 200])
    e100, e200 = rows[0][1], rows[1][1]
    assert e100 <= 2e-2
    assert 1.8 <= e100 / e200 <= 2.2


@pytest.mark.parametrize("seed", range(5))
def test_first_order_convergence(seed):
    rng = np.random.default_rng(seed)
    s = SpinSystem(2)
    a, b = herm(s, rng, True), herm(s, rng, True)
    ks = [10, 20, 50, 100, 200, 500]
    rows, slope = trotter_error_curve(a, b, ks)
    errs = [e for _, e in rows]
    assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:]))
    assert abs(slope + 1) <= 0.15
    ek = [k * e for k, e in rows]
    assert max(ek) <= 2 * min(ek)


def test_plan_validation():
    s = SpinSystem(1)
    a = single_site(s, 1, "x")
    with pytest.raises(DomainError):
        TrotterPlan(0, a, a)
    with pytest.raises(DomainError):
        TrotterPlan(2**20 + 1, a, a)
    with pytest.raises(DomainError):
        trotter_error_curve(a, a, [5, 5])


def test_trace_product_examples():
    s = SpinSystem(2)
    rng = np.random.default_rng(1)
    h = herm(s, rng)
    ident = HermitianOperator(s, np.eye(4))
    c = check_trace_product_bound(ident, h, [0.25, 0.25, 0.5])
    assert c.holds and math.isclose(c.lhs, c.rhs, rel_tol=1e-12)
    assert math.isclose(c.rhs, np.trace(expm(h.entries)).real, rel_tol=1e-12)
    assert check_trace_product_bound(herm(s, rng), h, [1.0]).holds
    with pytest.raises(DomainError):
        check_trace_product_bound(ident, h, [0.5, 0.6])
    with pytest.raises(DomainError):
        check_trace_product_bound(ident, h, [1.5, -0.5])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), parts=st.integers(1, 6))
def test_trace_product_bound_random(seed, n, parts):
    rng = np.random.default_rng(seed)
    s = SpinSystem(n)
    a = rng.dirichlet(np.ones(parts))
    a = a / a.sum()
    assert check_trace_product_bound(herm(s, rng), herm(s, rng), a).holds


def test_holder_examples():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((4, 4))
    p = g @ g.T + np.eye(4)
    for k2 in (2, 4, 6):
        c = check_holder_trace([p] * k2)
        assert c.holds and abs(c.lhs - c.rhs) <= 1e-10 * c.rhs
    c = check_holder_trace([p, np.zeros((4, 4))])
    assert c.lhs == 0 and c.rhs == 0 and c.holds
    with pytest.raises(DomainError):
        check_holder_trace([p, p, p])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 3), dim=st.sampled_from([2, 4, 8]))
def test_holder_random(seed, k, dim):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            for _ in range(2 * k)]
    assert check_holder_trace(mats).holds


def test_ratio_bound_examples():
    ham = build_transverse_sk(SpinSystem(3), 1.0)
    xi = np.random.default_rng(3).standard_normal(ham.n_terms)
    xi[0] = 0.0
    c = partition_function_ratio_bound(ham, 0.9, xi, ham.indices[0])
    assert math.isclose(c.ratio, 1.0, rel_tol=1e-12) and c.bound == 1.0 and c.holds


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), beta=st.floats(0.1, 3.0))
def test_ratio_bound_both_signs(seed, n, beta):
    rng = np.random.default_rng(seed)
    ham = build_transverse_sk(SpinSystem(n), 1.0)
    xi = rng.standard_normal(ham.n_terms)
    i = int(rng.integers(ham.n_terms))
    c1 = partition_function_ratio_bound(ham, beta, xi, ham.indices[i])
    xi[i] = -xi[i]
    c2 = partition_function_ratio_bound(ham, beta, xi, ham.indices[i])
    assert c1.holds and c2.holds
    assert c1.bound == c2.bound


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 200))
def test_trotter_trace_positive(seed, k):
    rng = np.random.default_rng(seed)
    s = SpinSystem(2)
    assert trotter_trace_is_positive(herm(s, rng), herm(s, rng), k)
