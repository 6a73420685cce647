"""Autodiff core: forward examples, gradient checks, graph contracts."""

import numpy as np
import numpy.testing as npt
import pytest

import moefuse.numkit as nk
from checks import central_diff, rel_err


def test_matmul_identity():
    a = nk.leaf([[1.0, 0.0], [0.0, 1.0]])
    b = nk.leaf([[3.0, 4.0], [5.0, 6.0]])
    npt.assert_array_equal(nk.matmul(a, b).value, [[3.0, 4.0], [5.0, 6.0]])


def test_matmul_by_hand():
    a = nk.leaf([[1.0, 2.0]])
    b = nk.leaf([[3.0], [4.0]])
    npt.assert_array_equal(nk.matmul(a, b).value, [[11.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(7)
    av = rng.normal(size=(3, 4))
    bv = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += av[i, k] * bv[k, j]
    out = nk.matmul(nk.leaf(av), nk.leaf(bv))
    assert np.max(np.abs(out.value - expected)) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nk.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nk.matmul(nk.leaf(np.zeros((2, 3))), nk.leaf(np.zeros((2, 3))))


def test_relu_forward():
    out = nk.relu(nk.leaf([-1.0, 0.0, 2.0]))
    npt.assert_array_equal(out.value, [0.0, 0.0, 2.0])


def test_relu_all_negative_blocks_gradient():
    x = nk.leaf([[-1.0, -2.0], [-0.5, -3.0]])
    y = nk.sum_all(nk.relu(x))
    nk.backward(y)
    npt.assert_array_equal(y.value, 0.0)
    npt.assert_array_equal(x.grad, np.zeros((2, 2)))


def test_masked_softmax_symmetric_row():
    out = nk.masked_softmax(nk.leaf([[5.0, 5.0]]), [[True, True]])
    npt.assert_allclose(out.value, [[0.5, 0.5]], rtol=0, atol=1e-15)


def test_masked_softmax_by_hand():
    # masked middle entry behaves like a -inf logit
    out = nk.masked_softmax(nk.leaf([[10.0, 123.0, 3.0]]), [[True, False, True]])
    e7 = np.exp(-7.0)
    npt.assert_allclose(out.value, [[1 / (1 + e7), 0.0, e7 / (1 + e7)]], rtol=1e-12)
    assert out.value[0, 1] == 0.0


def test_masked_softmax_rows_normalized_nonnegative():
    rng = np.random.default_rng(3)
    logits = nk.leaf(rng.normal(size=(20, 7)) * 5)
    mask = rng.random((20, 7)) < 0.5
    mask[:, 0] = True  # ensure every row selects something
    out = nk.masked_softmax(logits, mask)
    assert np.all(out.value >= 0)
    npt.assert_allclose(out.value.sum(axis=1), np.ones(20), rtol=0, atol=1e-9)


def test_masked_softmax_masked_entries_exactly_zero_in_value_and_grad():
    rng = np.random.default_rng(4)
    logits = nk.leaf(rng.normal(size=(6, 5)))
    mask = rng.random((6, 5)) < 0.6
    mask[:, 2] = True
    out = nk.masked_softmax(logits, mask)
    loss = nk.sum_all(nk.relu(out))
    nk.backward(loss)
    assert np.all(out.value[~mask] == 0.0)
    assert np.all(logits.grad[~mask] == 0.0)


def test_masked_softmax_degenerate_row_raises():
    with pytest.raises(nk.MaskError):
        nk.masked_softmax(nk.leaf([[1.0, 2.0], [3.0, 4.0]]), [[True, True], [False, False]])


def test_backward_of_sum_is_ones():
    x = nk.leaf(np.arange(12.0).reshape(3, 4))
    nk.backward(nk.sum_all(x))
    npt.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_accumulates_across_calls():
    x = nk.leaf([[1.0, -2.0], [3.0, 4.0]])
    y = nk.sum_all(nk.relu(x))
    nk.backward(y)
    once = x.grad.copy()
    nk.backward(y)
    npt.assert_array_equal(x.grad, 2 * once)


def test_backward_requires_scalar_root():
    x = nk.leaf(np.ones((2, 2)))
    with pytest.raises(nk.ContractError):
        nk.backward(nk.relu(x))


def test_backward_diamond_graph_sums_paths():
    # y = sum(x + x): both paths must contribute, giving grad 2
    x = nk.leaf([1.0, 2.0])
    nk.backward(nk.sum_all(nk.add(x, x)))
    npt.assert_array_equal(x.grad, [2.0, 2.0])


def test_grad_relu_affine_composite_matches_finite_differences():
    rng = np.random.default_rng(11)
    xv = rng.normal(size=(4, 3))
    wv = rng.normal(size=(3, 5))
    # keep pre-activations away from the ReLU kink
    assert np.min(np.abs(xv @ wv)) > 1e-3

    x, w = nk.leaf(xv), nk.leaf(wv)

    def run():
        return nk.sum_all(nk.relu(nk.matmul(x, w)))

    nk.backward(run())
    for node, arr in ((x, xv), (w, wv)):
        fd = central_diff(lambda: run().value, node.value)
        assert rel_err(node.grad, fd) < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_all_plumbing_ops(seed):
    """One composite touching add, add_bias, scale, concat, reshape, mean_pool."""
    rng = np.random.default_rng(seed)
    leaves = {
        "a": nk.leaf(rng.normal(size=(2, 3))),
        "b": nk.leaf(rng.normal(size=(2, 3))),
        "bias": nk.leaf(rng.normal(size=(3,))),
        "c": nk.leaf(rng.normal(size=(2, 3))),
    }

    def run():
        s = nk.add(leaves["a"], leaves["b"])
        s = nk.add_bias(s, leaves["bias"])
        cat = nk.concat([s, leaves["c"]], axis=1)  # (2, 6)
        r = nk.reshape(cat, (2, 3, 2))
        pooled = nk.mean_pool(r, axis=1)  # (2, 2)
        return nk.sum_all(nk.scale(pooled, 1.7))

    nk.backward(run())
    for name, node in leaves.items():
        fd = central_diff(lambda: run().value, node.value)
        assert rel_err(node.grad, fd) < 1e-4, name


def test_grad_masked_softmax_matches_finite_differences():
    rng = np.random.default_rng(21)
    logits = nk.leaf(rng.normal(size=(3, 6)))
    mask = rng.random((3, 6)) < 0.7
    mask[:, 0] = True
    # a plain sum over softmax rows has zero gradient; weight entries instead
    w = nk.leaf(rng.normal(size=(3, 6)))

    def run():
        out = nk.masked_softmax(logits, mask)
        prod = nk.matmul(nk.reshape(out, (1, 18)), nk.reshape(w, (18, 1)))
        return nk.sum_all(prod)

    nk.backward(run())
    fd = central_diff(lambda: run().value, logits.value)
    assert rel_err(logits.grad, fd) < 1e-4


def test_grad_cross_entropy_matches_finite_differences():
    rng = np.random.default_rng(31)
    logits = nk.leaf(rng.normal(size=(5, 2)))
    labels = np.array([0, 1, 1, 0, 1])

    def run(weights=None):
        return nk.cross_entropy_with_logits(logits, labels, class_weights=weights)

    for weights in (None, (1.0, 9.0)):
        logits.zero_grad()
        nk.backward(run(weights))
        fd = central_diff(lambda: run(weights).value, logits.value)
        assert rel_err(logits.grad, fd) < 1e-4


def test_cross_entropy_known_value():
    # symmetric logits -> loss is exactly log(2)
    logits = nk.leaf(np.zeros((4, 2)))
    loss = nk.cross_entropy_with_logits(logits, [0, 1, 0, 1])
    npt.assert_allclose(loss.value, np.log(2.0), rtol=1e-15)


def test_reshape_roundtrip_is_identity():
    rng = np.random.default_rng(5)
    xv = rng.normal(size=(2, 3, 4))
    x = nk.leaf(xv)
    back = nk.reshape(nk.reshape(x, (6, 4)), (2, 3, 4))
    npt.assert_array_equal(back.value, xv)


def test_forward_ops_deterministic():
    rng = np.random.default_rng(6)
    av, bv = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    mask = rng.random((4, 4)) < 0.5
    mask[:, 1] = True

    def run():
        out = nk.masked_softmax(nk.matmul(nk.leaf(av), nk.leaf(bv)), mask)
        return nk.mean_pool(nk.relu(out), axis=0).value

    first = run()
    assert all(np.array_equal(first, run()) for _ in range(3))


def test_add_shape_mismatch():
    with pytest.raises(nk.ShapeError):
        nk.add(nk.leaf(np.zeros((2, 2))), nk.leaf(np.zeros((2, 3))))


def test_add_bias_shape_mismatch():
    with pytest.raises(nk.ShapeError):
        nk.add_bias(nk.leaf(np.zeros((2, 4))), nk.leaf(np.zeros(3)))
