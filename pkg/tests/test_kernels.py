"""Recurrence kernels: loop-oracle agreement, backend bit-parity, adjoint
versus finite differences."""

import numpy as np
import pytest

from oracles import central_difference, grad_rel_err, linear_recurrence_loop

from pointscan import kernels
from pointscan.errors import ShapeError

RNG = np.random.default_rng(11)


def rand_case(b, l, m, dtype):
    a = RNG.uniform(0.1, 0.99, (b, l, m)).astype(dtype)
    u = RNG.uniform(-2, 2, (b, l, m)).astype(dtype)
    return a, u


def test_forward_matches_python_loop():
    a, u = rand_case(3, 17, 5, np.float64)
    h = kernels.linrec_fwd(a, u)
    for b in range(3):
        want = linear_recurrence_loop(a[b], u[b])
        np.testing.assert_allclose(h[b], want, rtol=1e-14, atol=1e-14)


def test_backends_agree_bitwise():
    backends = kernels.available_backends()
    if "native" not in backends:
        pytest.skip("compiled backend not built")
    for dtype in (np.float32, np.float64):
        a, u = rand_case(2, 65, 12, dtype)
        h_py = kernels.linrec_fwd(a, u, impl=backends["python"])
        h_nat = kernels.linrec_fwd(a, u, impl=backends["native"])
        assert h_py.dtype == h_nat.dtype == dtype
        assert np.array_equal(h_py, h_nat)
        g = RNG.uniform(-1, 1, a.shape).astype(dtype)
        ga_py, gu_py = kernels.linrec_bwd(a, h_py, g, impl=backends["python"])
        ga_nat, gu_nat = kernels.linrec_bwd(a, h_nat, g, impl=backends["native"])
        assert np.array_equal(ga_py, ga_nat)
        assert np.array_equal(gu_py, gu_nat)


@pytest.mark.parametrize("l", [1, 2, 7])
def test_adjoint_matches_finite_differences(l):
    a, u = rand_case(2, l, 3, np.float64)
    w = RNG.uniform(-1, 1, a.shape)

    def scalar_fn(a_, u_):
        return float((kernels.linrec_fwd(a_, u_) * w).sum())

    h = kernels.linrec_fwd(a, u)
    ga, gu = kernels.linrec_bwd(a, h, w.copy())
    arrays = [a, u]
    for which, grad in ((0, ga), (1, gu)):
        flat = grad.reshape(-1)
        for i in range(flat.size):
            fd = central_difference(scalar_fn, arrays, which, i)
            assert grad_rel_err(float(flat[i]), fd) < 1e-4


def test_first_step_multiplier_gets_zero_gradient():
    a, u = rand_case(1, 4, 2, np.float64)
    h = kernels.linrec_fwd(a, u)
    ga, _ = kernels.linrec_bwd(a, h, np.ones_like(a))
    assert np.all(ga[:, 0] == 0.0)


def test_shape_and_dtype_validation():
    a = np.ones((2, 3, 4))
    with pytest.raises(ShapeError):
        kernels.linrec_fwd(a, np.ones((2, 3, 5)))
    with pytest.raises(ShapeError):
        kernels.linrec_fwd(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        kernels.linrec_fwd(a.astype(np.float32), a)
    with pytest.raises(ShapeError):
        kernels.linrec_fwd(a.astype(np.int64), a.astype(np.int64))
