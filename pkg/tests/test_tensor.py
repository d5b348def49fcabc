import numpy as np
import pytest

from helpers import check_gradients, fd_gradient, rel_err
from tgn.tensor import (
    NonFiniteError,
    ShapeError,
    SparseBinaryMatrix,
    Tape,
    TapeError,
    Tensor,
    add,
    block_diag,
    backward,
    concat_cols,
    concat_rows,
    elementwise,
    layer_norm,
    matmul,
    mean_all,
    mul,
    relu,
    sigmoid,
    softplus,
    spmm,
    sum_all,
    take_rows,
    tanh,
)


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def param(rng, r, c):
    return Tensor(rng.normal(size=(r, c)), requires_grad=True)


# --- matmul ---------------------------------------------------------------


def test_matmul_hand_worked():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(matmul(a, b).numpy(), [[19.0, 22.0], [43.0, 50.0]])


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 2), (5, 1, 7), (6, 6, 6)])
def test_matmul_matches_triple_loop(shape):
    rng = np.random.default_rng(sum(shape))
    n, k, m = shape
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).numpy() - naive_matmul(a, b))) < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient():
    rng = np.random.default_rng(0)
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    assert check_gradients(lambda: sum_all(mul(matmul(a, b), matmul(a, b))), [a, b]) < 1e-6


def test_tensor_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        Tensor([[np.nan]])
    with pytest.raises(NonFiniteError):
        Tensor([[np.inf, 1.0]])


# --- sparse ---------------------------------------------------------------


def test_spmm_hand_worked():
    m = SparseBinaryMatrix.from_dense([[1, 1], [0, 1]])
    x = Tensor([[1.0, 0.0], [2.0, 3.0]])
    np.testing.assert_array_equal(spmm(m, x).numpy(), [[3.0, 3.0], [2.0, 3.0]])


def test_spmm_empty_matrix_gives_zeros():
    m = SparseBinaryMatrix.empty(4, 3)
    out = spmm(m, Tensor(np.ones((3, 5))))
    assert out.shape == (4, 5)
    assert not out.numpy().any()


@pytest.mark.parametrize("seed", range(5))
def test_spmm_matches_dense(seed):
    rng = np.random.default_rng(seed)
    dense = (rng.random((7, 5)) < 0.4).astype(float)
    m = SparseBinaryMatrix.from_dense(dense)
    x = rng.normal(size=(5, 3))
    assert np.max(np.abs(spmm(m, Tensor(x)).numpy() - dense @ x)) < 1e-12
    y = rng.normal(size=(7, 3))
    assert np.max(np.abs(spmm(m, Tensor(y), transpose=True).numpy() - dense.T @ y)) < 1e-12


def test_spmm_mean_divides_by_row_count():
    dense = np.array([[1, 1, 0], [0, 0, 0], [1, 1, 1]], dtype=float)
    x = np.arange(6.0).reshape(3, 2)
    got = spmm(SparseBinaryMatrix.from_dense(dense), Tensor(x), mean=True).numpy()
    expect = dense @ x / np.maximum(dense.sum(1), 1)[:, None]
    assert np.max(np.abs(got - expect)) < 1e-12


def test_spmm_gradient():
    rng = np.random.default_rng(3)
    m = SparseBinaryMatrix.from_dense((rng.random((4, 5)) < 0.5).astype(float))
    x = param(rng, 5, 3)
    w = Tensor(rng.normal(size=(4, 3)))
    for kw in ({}, {"mean": True}):
        assert check_gradients(lambda: sum_all(mul(spmm(m, x, **kw), w)), [x]) < 1e-6
    w2 = Tensor(rng.normal(size=(5, 3)))
    y = param(rng, 4, 3)
    assert check_gradients(lambda: sum_all(mul(spmm(m, y, transpose=True), w2)), [y]) < 1e-6


def test_sparse_validation():
    with pytest.raises(ValueError):
        SparseBinaryMatrix.from_pairs(2, 2, [(0, 0), (0, 0)])
    with pytest.raises(ValueError):
        SparseBinaryMatrix.from_pairs(2, 2, [(2, 0)])


def test_transpose_and_block_diag():
    a = SparseBinaryMatrix.from_pairs(2, 3, [(0, 2), (1, 0), (1, 1)])
    assert a.T.shape == (3, 2)
    np.testing.assert_array_equal(a.T.to_dense(), a.to_dense().T)
    b = SparseBinaryMatrix.from_pairs(1, 1, [(0, 0)])
    d = block_diag([a, b]).to_dense()
    assert d.shape == (3, 4)
    np.testing.assert_array_equal(d[:2, :3], a.to_dense())
    assert d[2, 3] == 1 and d[:2, 3].sum() == 0 and d[2, :3].sum() == 0


# --- elementwise ----------------------------------------------------------


def test_relu_and_sigmoid_values():
    x = Tensor([[-2.0, 0.0, 3.0]])
    np.testing.assert_array_equal(relu(x).numpy(), [[0.0, 0.0, 3.0]])
    assert sigmoid(Tensor([[0.0]])).item() == 0.5
    big = sigmoid(Tensor([[-800.0, 800.0]])).numpy()
    assert big[0, 0] >= 0.0 and big[0, 1] == 1.0


def test_tanh_and_softplus_gradients():
    rng = np.random.default_rng(1)
    x = param(rng, 3, 4)
    assert check_gradients(lambda: sum_all(tanh(x)), [x]) < 1e-6
    assert check_gradients(lambda: sum_all(softplus(x)), [x]) < 1e-6
    assert check_gradients(lambda: sum_all(sigmoid(x)), [x]) < 1e-6


def test_elementwise_dispatch():
    a, b = Tensor([[1.0, -2.0]]), Tensor([[3.0, 4.0]])
    np.testing.assert_array_equal(elementwise("add", a, b).numpy(), [[4.0, 2.0]])
    np.testing.assert_array_equal(elementwise("mul", a, b).numpy(), [[3.0, -8.0]])
    with pytest.raises(ValueError):
        elementwise("cube", a)
    with pytest.raises(ShapeError):
        add(a, Tensor([[1.0, 2.0, 3.0]]))


def test_concat_cols_order_and_gradient():
    rng = np.random.default_rng(2)
    a, b, c = param(rng, 3, 1), param(rng, 3, 2), param(rng, 3, 3)
    out = concat_cols([a, b, c]).numpy()
    np.testing.assert_array_equal(out[:, :1], a.data)
    np.testing.assert_array_equal(out[:, 1:3], b.data)
    np.testing.assert_array_equal(out[:, 3:], c.data)
    w = Tensor(rng.normal(size=(3, 6)))
    assert check_gradients(lambda: sum_all(mul(concat_cols([a, b, c]), w)), [a, b, c]) < 1e-6
    with pytest.raises(ShapeError):
        concat_cols([a, param(rng, 2, 1)])


def test_concat_rows_take_rows_layer_norm_gradients():
    rng = np.random.default_rng(4)
    a, b = param(rng, 2, 3), param(rng, 1, 3)
    w = Tensor(rng.normal(size=(4, 3)))
    assert check_gradients(lambda: sum_all(mul(take_rows(concat_rows([a, b]), [2, 0, 0, 1]), w)), [a, b]) < 1e-6
    x = param(rng, 3, 5)
    w2 = Tensor(rng.normal(size=(3, 5)))
    assert check_gradients(lambda: sum_all(mul(layer_norm(x), w2)), [x]) < 1e-5
    assert abs(mean_all(x).item() - x.data.mean()) < 1e-15


# --- backward -------------------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    g = backward(tape, loss)
    np.testing.assert_array_equal(g[x.id].data, np.ones((2, 3)))


def test_backward_of_square_is_two_x():
    x = Tensor([[1.0, -2.0, 0.5]], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(mul(x, x))
    np.testing.assert_array_equal(backward(tape, loss)[x.id].data, 2 * x.data)


def test_backward_errors():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(ShapeError):
        backward(tape, y)
    other = sum_all(mul(x, x))  # no tape active
    with pytest.raises(TapeError):
        backward(tape, other)


def test_backward_linearity():
    rng = np.random.default_rng(5)
    x = param(rng, 2, 3)
    w1, w2 = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))

    def grad(fn):
        with Tape() as tape:
            loss = fn()
        return backward(tape, loss, wrt=[x])[x.id].data

    g1 = grad(lambda: sum_all(tanh(mul(x, w1))))
    g2 = grad(lambda: sum_all(sigmoid(mul(x, w2))))
    g12 = grad(lambda: add(sum_all(tanh(mul(x, w1))), sum_all(sigmoid(mul(x, w2)))))
    assert rel_err(g12, g1 + g2) < 1e-12


def test_backward_is_deterministic():
    rng = np.random.default_rng(6)
    x = param(rng, 4, 4)

    def grad():
        with Tape() as tape:
            loss = sum_all(tanh(matmul(x, x)))
        return backward(tape, loss)[x.id].data

    np.testing.assert_array_equal(grad(), grad())


def test_wrt_returns_zeros_for_unused():
    x = Tensor([[1.0]], requires_grad=True)
    unused = Tensor([[2.0, 3.0]], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(mul(x, x))
    g = backward(tape, loss, wrt=[x, unused])
    assert g[unused.id].shape == (1, 2) and not g[unused.id].data.any()


def test_fd_helper_on_quadratic():
    a = np.array([[1.0, 2.0]])
    (g,) = fd_gradient(lambda: float((a**2).sum()), [a])
    assert np.allclose(g, 2 * a, atol=1e-8)
