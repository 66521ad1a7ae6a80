"""Numerics core: op values against naive oracles, gradients against finite
differences, tape structure, and dtype/error contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_grad_check, matmul_triple_loop

from pointscan.errors import ContractError, DomainError, PermutationError, ShapeError
from pointscan import tensor as T
from pointscan.tensor import Tape, tensor


RNG = np.random.default_rng(20240817)


def rand(shape, lo=-2.0, hi=2.0):
    return RNG.uniform(lo, hi, size=shape)


# ---------------------------------------------------------------------------
# Values


def test_matmul_matches_triple_loop():
    for n, k, m in [(1, 1, 1), (2, 3, 4), (5, 7, 3)]:
        a, b = rand((n, k)), rand((k, m))
        got = T.matmul(tensor(a), tensor(b)).data
        want = matmul_triple_loop(a, b)
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-13)


def test_matmul_batched_matches_per_slice_loops():
    a, b = rand((3, 4, 5)), rand((5, 2))
    got = T.matmul(tensor(a), tensor(b)).data
    for i in range(3):
        np.testing.assert_allclose(got[i], matmul_triple_loop(a[i], b), rtol=1e-13)


def test_softplus_large_inputs_finite_and_linear():
    x = tensor(np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0]))
    y = T.softplus(x)
    assert np.isfinite(y.data).all()
    np.testing.assert_allclose(y.data[3:], x.data[3:], rtol=1e-12)
    assert y.data[0] == 0.0
    np.testing.assert_allclose(y.data[2], np.log(2.0), rtol=1e-12)


def test_silu_and_sigmoid_extremes_finite():
    x = tensor(np.array([-800.0, 800.0]), requires_grad=True)
    y = T.reduce_sum(T.silu(x))
    y.backward()
    assert np.isfinite(y.data).all() and np.isfinite(x.grad).all()


def test_elementwise_dispatch_matches_direct_calls():
    x = tensor(rand((4, 3)))
    np.testing.assert_array_equal(T.elementwise("exp", x).data, T.exp(x).data)
    with pytest.raises(ContractError):
        T.elementwise("tanh", x)


def test_repeat_interleave_places_copies_adjacent():
    x = tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    y = T.repeat_interleave(x, 3, axis=1)
    np.testing.assert_array_equal(y.data, [[1, 1, 1, 2, 2, 2], [3, 3, 3, 4, 4, 4]])


def test_log_softmax_shift_invariant_and_normalized():
    x = rand((5, 7))
    a = T.log_softmax(tensor(x)).data
    b = T.log_softmax(tensor(x + 123.456)).data
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(np.exp(a).sum(axis=-1), 1.0, rtol=1e-12)


def test_rms_norm_unit_scale_output():
    x = rand((6, 8))
    w = np.ones(8)
    y = T.rms_norm(tensor(x), tensor(w)).data
    want = x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + 1e-6)
    np.testing.assert_allclose(y, want, rtol=1e-12)


# ---------------------------------------------------------------------------
# Gradients vs finite differences (float64, h = 1e-5, inputs in [-2, 2])


def assert_fd(make_loss, *arrays):
    worst = fd_grad_check(make_loss, list(arrays))
    assert worst < 1e-4, f"max rel grad error {worst:.3e}"


def test_grad_matmul():
    assert_fd(lambda a, b: T.reduce_sum(T.mul(a @ b, a @ b)), rand((3, 4)), rand((4, 2)))


def test_grad_matmul_batched():
    assert_fd(lambda a, b: T.reduce_sum(T.silu(a @ b)), rand((2, 3, 4)), rand((4, 3)))


def test_grad_add_mul_broadcast():
    assert_fd(lambda a, b: T.reduce_sum(T.mul(T.add(a, b), a)), rand((3, 1, 4)), rand((2, 4)))


def test_grad_unary_chain():
    assert_fd(
        lambda x: T.reduce_sum(T.exp(T.neg(T.softplus(x)))),
        rand((5, 3)),
    )


def test_grad_silu_reciprocal():
    x = rand((4, 4), lo=0.5, hi=2.0)
    assert_fd(lambda t: T.reduce_sum(T.silu(T.reciprocal(t))), x)


def test_grad_reductions():
    assert_fd(lambda x: T.reduce_sum(T.mul(T.reduce_mean(x, axis=0, keepdims=True), x)), rand((4, 3)))
    assert_fd(lambda x: T.reduce_sum(T.exp(T.reduce_max(x, axis=1))), rand((5, 6)))


def test_grad_shape_ops():
    def loss(x):
        y = T.reshape(x, (6, 2))
        y = T.flip(y, axis=0)
        y = T.concat([y, y], axis=1)
        y = T.slice_axis(y, 1, 1, 3)
        return T.reduce_sum(T.mul(y, y))

    assert_fd(loss, rand((3, 4)))


def test_grad_row_indexing():
    perm = RNG.permutation(6)
    idx = RNG.integers(0, 6, size=9)

    def loss(x):
        y = T.gather_rows(x, perm)
        y = T.scatter_rows(y, perm)
        z = T.index_rows(y, idx)
        return T.reduce_sum(T.mul(z, z))

    assert_fd(loss, rand((6, 3)))


def test_grad_repeat_interleave():
    assert_fd(lambda x: T.reduce_sum(T.silu(T.repeat_interleave(x, 4, axis=1))), rand((3, 2)))


def test_grad_rms_norm():
    assert_fd(lambda x, w: T.reduce_sum(T.silu(T.rms_norm(x, w))), rand((4, 6)), rand((6,)))


def test_grad_log_softmax_nll():
    labels = RNG.integers(0, 5, size=7)

    def loss(x):
        lp = T.log_softmax(x)
        picked = T.index_rows(T.reshape(lp, (7 * 5, 1)), np.arange(7) * 5 + labels)
        return T.neg(T.reduce_mean(picked))

    assert_fd(loss, rand((7, 5)))


def test_grad_accumulates_over_reused_tensor():
    def loss(x):
        y = T.add(T.mul(x, x), T.exp(x))
        return T.reduce_sum(T.mul(y, x))

    assert_fd(loss, rand((3, 3)))


# ---------------------------------------------------------------------------
# Error contracts


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.matmul(tensor(rand((2, 3))), tensor(rand((4, 2))))


def test_reciprocal_of_zero_raises():
    with pytest.raises(DomainError):
        T.reciprocal(tensor(np.array([1.0, 0.0])))


def test_backward_requires_scalar():
    x = tensor(rand((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        T.mul(x, x).backward()


def test_gather_rejects_non_permutations():
    x = tensor(rand((4, 2)))
    for bad in ([0, 1, 2], [0, 1, 2, 2], [0, 1, 2, 4], [-1, 0, 1, 2]):
        with pytest.raises(PermutationError):
            T.gather_rows(x, np.asarray(bad))
    with pytest.raises(PermutationError):
        T.scatter_rows(x, np.asarray([0, 0, 1, 2]))


def test_int_input_casts_to_default_float():
    x = tensor([1, 2, 3])
    assert x.dtype == np.float32


# ---------------------------------------------------------------------------
# Tape structure and determinism


def build_small_graph():
    x = tensor(rand((3, 3)), requires_grad=True)
    w = tensor(rand((3, 3)), requires_grad=True)
    h = T.silu(x @ w)
    y = T.add(h, T.mul(h, x))
    return x, w, T.reduce_sum(y)


def test_tape_orders_parents_before_consumers_and_visits_once():
    _, _, loss = build_small_graph()
    tape = Tape.trace(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes)
    for node in tape.nodes:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]


def test_tape_excludes_constant_subgraphs():
    x = tensor(rand((2, 2)), requires_grad=True)
    c = T.exp(tensor(rand((2, 2))))
    loss = T.reduce_sum(T.mul(x, c))
    tape = Tape.trace(loss)
    assert all(n.requires_grad for n in tape.nodes)
    assert not c.requires_grad


def test_bitwise_determinism_values_and_grads():
    def run():
        rng = np.random.default_rng(7)
        x = tensor(rng.uniform(-2, 2, (8, 5)), requires_grad=True)
        w = tensor(rng.uniform(-2, 2, (5, 5)), requires_grad=True)
        loss = T.reduce_sum(T.silu(T.rms_norm(x @ w, tensor(np.ones(5)))))
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_deep_chain_backward_no_recursion_limit():
    x = tensor(np.full((2,), 0.01), requires_grad=True)
    y = x
    for _ in range(5000):
        y = T.add(y, T.mul(x, tensor(np.full((2,), 1e-4))))
    T.reduce_sum(y).backward()
    np.testing.assert_allclose(x.grad, np.full((2,), 1.0 + 5000 * 1e-4), rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2 ** 31 - 1))
def test_gather_scatter_roundtrip_property(n, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    x = rng.uniform(-2, 2, (n, 3))
    out = T.scatter_rows(T.gather_rows(tensor(x), perm), perm)
    assert np.array_equal(out.data, x.astype(np.float64))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_matmul_property_against_loop(n, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, (n, m))
    b = rng.uniform(-2, 2, (m, n))
    np.testing.assert_allclose(
        T.matmul(tensor(a), tensor(b)).data, matmul_triple_loop(a, b), rtol=1e-12, atol=1e-12
    )
