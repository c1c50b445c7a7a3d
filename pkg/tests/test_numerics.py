import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitcm import numerics as nx
from hitcm.errors import ConfigError, ContractError, ShapeError
from hitcm.numerics import Tape, Tensor


def grad_of(f, *xs):
    ts = [Tensor(np.array(x, dtype=float), requires_grad=True) for x in xs]
    with Tape() as tape:
        y = f(*ts)
    tape.backward(y)
    return [t.grad for t in ts]


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    b = Tensor([[1.5, -2.0], [3.0, 4.25]])
    np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_hand_value():
    assert nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def _loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_loop_oracle(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, _loop_matmul(a, b), atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_matmul_oracle_property(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(m, k)), r.normal(size=(k, n))
    np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, _loop_matmul(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_broadcast(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, a @ b)


# -- softmax -------------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_array_equal(nx.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    big = nx.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] == pytest.approx(0.0)
    np.testing.assert_allclose(nx.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(xs, c):
    x = np.array(xs)
    p = nx.softmax(Tensor(x)).data
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(nx.softmax(Tensor(x + c)).data, p, atol=1e-9)


def test_softmax_mask_and_fully_masked_row():
    p = nx.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
    assert p[0, 1] == 0.0 and p.sum() == pytest.approx(1.0)
    with pytest.raises(ContractError):
        nx.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


# -- elementwise -----------------------------------------------------------------

def test_elementwise_examples():
    assert nx.elementwise("tanh", Tensor([0.0])).data[0] == 0.0
    assert nx.elementwise("mul", Tensor([1.0, 2, 3]), Tensor([4.0, 5, 6])).data.tolist() == [4, 10, 18]
    (g,) = grad_of(lambda x: nx.tsum(nx.tanh(x)), [1.0])
    assert g[0] == pytest.approx(1 - math.tanh(1) ** 2)
    assert g[0] == pytest.approx(0.41997, abs=1e-5)
    assert nx.elementwise("relu", Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert nx.elementwise("scale", Tensor([1.0, 2.0]), 3.0).data.tolist() == [3.0, 6.0]
    assert nx.elementwise("add", Tensor([1.0]), Tensor([2.0])).data.tolist() == [3.0]


def test_elementwise_shape_error():
    with pytest.raises(ShapeError):
        nx.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ValueError):
        nx.elementwise("sqrt", Tensor([1.0]))


# -- layer norm ------------------------------------------------------------------

def test_layer_norm_examples():
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(nx.layer_norm(Tensor(np.full(4, 7.0)), g, b).data, np.zeros(4))
    out = nx.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**31 - 1))
def test_layer_norm_moments(d, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(3, d))
    out = nx.layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
    # var(out) is s^2 / (s^2 + eps), which only approaches 1 when s^2 >> eps
    s2 = x.var(axis=-1)
    np.testing.assert_allclose(out.var(axis=-1), s2 / (s2 + 1e-5), rtol=1e-9)


# -- dropout ---------------------------------------------------------------------------

def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=50))
    assert nx.dropout(x, 0.7, False, None) is x
    np.testing.assert_array_equal(nx.dropout(x, 0.0, True, rng).data, x.data)


def test_dropout_statistics():
    n, p = 10**5, 0.5
    out = nx.dropout(Tensor(np.ones(n)), p, True, np.random.default_rng(0)).data
    sigma = math.sqrt(p / (1 - p) / n)
    assert abs(out.mean() - 1.0) < 3 * sigma
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_bad_p_and_determinism():
    with pytest.raises(ConfigError):
        nx.dropout(Tensor([1.0]), 1.0, True, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        nx.dropout(Tensor([1.0]), -0.1, False, None)
    a = nx.dropout(Tensor(np.ones(1000)), 0.3, True, np.random.default_rng(9)).data
    b = nx.dropout(Tensor(np.ones(1000)), 0.3, True, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


# -- cross entropy -------------------------------------------------------------------

def test_cross_entropy_examples():
    assert float(nx.cross_entropy(Tensor(np.zeros((2, 5))), [1, 3]).data) == pytest.approx(math.log(5))
    assert float(nx.cross_entropy(Tensor([[10.0, -10.0]]), [0]).data) == pytest.approx(0.0, abs=1e-8)
    (g,) = grad_of(lambda z: nx.cross_entropy(z, [0]), [[0.0, 0.0]])
    np.testing.assert_allclose(g, [[-0.5, 0.5]])


def test_cross_entropy_bad_target():
    with pytest.raises(IndexError):
        nx.cross_entropy(Tensor(np.zeros((1, 3))), [3])


def test_cross_entropy_weights_ignore_rows():
    z = Tensor([[1.0, 2.0], [5.0, -1.0]])
    full = float(nx.cross_entropy(Tensor(z.data[:1]), [1]).data)
    masked = float(nx.cross_entropy(z, [1, -1], weights=[1.0, 0.0]).data)
    assert masked == pytest.approx(full, abs=1e-15)


# -- backward / tape -------------------------------------------------------------------

def test_backward_examples():
    (g,) = grad_of(lambda x: nx.tsum(nx.square(x)), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(g, [2.0, 4.0, 6.0])
    (g,) = grad_of(lambda x: nx.tsum(x + x), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(g, [2.0, 2.0, 2.0])


def test_backward_non_scalar_and_replay():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
        s = nx.tsum(y)
    with pytest.raises(ContractError):
        tape.backward(y)
    tape.backward(s)
    with pytest.raises(ContractError):
        tape.backward(s)


def test_no_tape_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    y = nx.tsum(x * 3.0)
    with pytest.raises(ContractError):
        nx.backward(y)


def test_intermediate_gradients_available():
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        h = x * 3.0
        loss = nx.tsum(nx.square(h))
    tape.backward(loss)
    np.testing.assert_allclose(h.grad, 2 * h.data)
    np.testing.assert_allclose(x.grad, 6 * h.data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_forward_is_caught():
    with pytest.raises(FloatingPointError):
        nx.exp(Tensor([1000.0]))


# -- finite differences for every differentiable op ----------------------------------

def _ops(r):
    w = Tensor(r.normal(size=(4, 3)))
    g, b = Tensor(r.normal(size=3)), Tensor(r.normal(size=3))
    other = Tensor(r.normal(size=(2, 3)))
    mask = np.array([[True, False, True], [True, True, False]])
    return {
        "add": lambda x: nx.tsum(nx.square(x + other)),
        "sub": lambda x: nx.tsum(nx.square(1.0 - x)),
        "mul": lambda x: nx.tsum(x * other * x),
        "scale": lambda x: nx.tsum(nx.square(nx.scale(x, -0.7))),
        "tanh": lambda x: nx.tsum(nx.tanh(x)),
        "relu": lambda x: nx.tsum(nx.square(nx.relu(x + 0.05))),
        "exp": lambda x: nx.tsum(nx.exp(x)),
        "matmul": lambda x: nx.tsum(nx.tanh(x @ nx.transpose(w))),
        "softmax": lambda x: nx.tsum(nx.softmax(x) * other),
        "softmax_masked": lambda x: nx.tsum(nx.softmax(x, mask=mask) * other),
        "layer_norm": lambda x: nx.tsum(nx.layer_norm(x, g, b) * other),
        "reshape_transpose": lambda x: nx.tsum(nx.transpose(nx.reshape(x, (3, 2))) * other),
        "index": lambda x: nx.tsum(nx.square(nx.index(x, (slice(None), slice(0, 2))))),
        "concat": lambda x: nx.tsum(nx.square(nx.concat([x, other], axis=0))),
        "mean": lambda x: nx.tmean(nx.square(x)),
        "sum_axis": lambda x: nx.tsum(nx.square(nx.tsum(x, axis=0))),
        "cross_entropy": lambda x: nx.cross_entropy(x, [2, 0]),
        "take": lambda x: nx.tsum(nx.square(nx.take(x, np.array([[0, 1], [1, 1]])))),
        "truediv": lambda x: nx.tsum(nx.square(x / 4.0)),
        "neg": lambda x: nx.tsum(nx.square(-x)),
    }


@pytest.mark.parametrize("name", sorted(_ops(np.random.default_rng(0))))
def test_finite_difference_every_op(name):
    r = np.random.default_rng(5)
    f = _ops(r)[name]
    x = Tensor(r.normal(size=(2, 3)))
    assert nx.finite_diff_check(f, x, 1e-5) < 1e-4


def test_finite_diff_examples():
    x = Tensor(np.random.default_rng(1).normal(size=6))
    assert nx.finite_diff_check(lambda t: nx.tsum(t), x) < 1e-9
    assert nx.finite_diff_check(lambda t: nx.tsum(nx.tanh(t)), Tensor([0.3, -0.7]), 1e-5) < 1e-6


def test_finite_diff_catches_wrong_adjoint(monkeypatch):
    real = nx.tanh

    def broken(x):
        out = real(x)
        # swap in a wrong adjoint: d tanh = tanh instead of 1 - tanh^2
        tape = nx._active_tape()
        if tape is not None and tape.nodes and tape.nodes[-1][0] is out:
            _, parents, _ = tape.nodes[-1]
            tape.nodes[-1] = (out, parents, lambda g: (g * out.data,))
        return out

    monkeypatch.setattr(nx, "tanh", broken)
    err = nx.finite_diff_check(lambda t: nx.tsum(nx.tanh(t)), Tensor([0.3, -0.7, 1.1]))
    assert err > 0.1


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        nx.finite_diff_check(lambda t: nx.tsum(t), Tensor([1.0]), 0.0)


# -- Adam ---------------------------------------------------------------------------------

def test_adam_first_step():
    p = Tensor([1.0], requires_grad=True)
    st_ = nx.AdamState.for_params([p], lr=0.001)
    nx.adam_step([p], [np.array([0.5])], st_)
    assert p.data[0] == pytest.approx(0.999, abs=1e-9)
    assert st_.t == 1


def test_adam_zero_grad_is_noop_and_t_increases():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = nx.AdamState.for_params([p])
    before = p.data.copy()
    for t in range(1, 6):
        nx.adam_step([p], [np.zeros(2)], st_)
        assert st_.t == t
    np.testing.assert_array_equal(p.data, before)


def test_adam_converges_quadratic():
    x = Tensor([0.0], requires_grad=True)
    opt = nx.Adam([x], lr=0.01)
    for _ in range(5000):
        with Tape() as tape:
            loss = nx.tsum(nx.square(x - 3.0))
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
    assert abs(x.data[0] - 3.0) < 0.01


def test_adam_update_magnitude_approaches_lr():
    p = Tensor([0.0], requires_grad=True)
    st_ = nx.AdamState.for_params([p], lr=0.001)
    prev = 0.0
    for _ in range(3000):
        nx.adam_step([p], [np.array([0.3])], st_)
        step = prev - p.data[0]
        prev = p.data[0]
    assert step == pytest.approx(0.001, rel=1e-3)


def test_adam_shape_mismatch():
    p = Tensor(np.ones(3), requires_grad=True)
    st_ = nx.AdamState.for_params([p])
    with pytest.raises(ContractError):
        nx.adam_step([p], [np.ones(2)], st_)


def test_frozen_parameters_skipped():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([1.0], requires_grad=False)
    opt = nx.Adam([a, b])
    assert opt.params == [a]
