import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import finite_difference_check
from actoreg.core import (
    AdamState,
    ContractError,
    DimensionError,
    Graph,
    NumericError,
    Rng,
    Tensor,
    adam_step,
    affine,
    backward,
    check_finite,
    concat,
    cosine_lr,
    exp,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    precision,
    relu,
    rng_normal,
    softmax_cross_entropy,
    softmax_expectation,
    square,
    standardize,
    tanh,
    tsum,
    var,
)


def p64(a):
    with precision(np.float64):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ----------------------------------------------------------------- forward ops


def test_relu_example():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[3.0], [4.0]]


def test_mean_example():
    assert float(mean(Tensor([1.0, 2.0, 3.0])).data) == 2.0


def test_var_is_biased():
    assert float(var(Tensor([1.0, 2.0, 3.0, 4.0])).data) == pytest.approx(1.25)


def test_float32_default():
    assert Tensor([1, 2]).data.dtype == np.float32


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_log_domain_error():
    with pytest.raises(NumericError):
        log(Tensor([1.0, 0.0]))


def test_exp_overflow_error():
    with pytest.raises(NumericError):
        exp(Tensor([1000.0]))


def test_scalar_broadcast():
    out = Tensor([1.0, 2.0]) * 3.0
    assert out.data.tolist() == [3.0, 6.0]


def test_numpy_left_operand_stays_tensor():
    out = np.float32(2.0) * Tensor([1.0, 2.0], requires_grad=True)
    assert isinstance(out, Tensor)
    out = np.ones(2, np.float32) - Tensor([1.0, 2.0])
    assert isinstance(out, Tensor) and out.data.tolist() == [0.0, -1.0]


# ----------------------------------------------------------------- backward


def test_backward_sum_of_squares():
    theta = Tensor([1.0, -2.0], requires_grad=True)
    (g,) = backward(tsum(square(theta)), [theta])
    assert g.tolist() == [2.0, -4.0]


def test_backward_constant_loss_gives_zero():
    theta = Tensor([1.0, -2.0], requires_grad=True)
    other = Tensor([3.0], requires_grad=True)
    (g,) = backward(tsum(other * 2.0), [theta])
    assert g.tolist() == [0.0, 0.0]


def test_backward_nonscalar_loss():
    theta = Tensor([1.0, -2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(theta * 2.0, [theta])


def test_graph_visits_each_node_once():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * x
    z = tsum(y + y)  # diamond: y used twice
    g = Graph(z)
    assert len({id(n) for n in g.nodes}) == len(g.nodes)
    (gx,) = backward(z, [x])
    assert gx.tolist() == [4.0, 8.0]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


def test_two_layer_mlp_finite_differences():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        x = Tensor(rng.uniform(-1, 1, (5, 3)))
        w1, b1 = p64(rng.uniform(-1, 1, (3, 4))), p64(rng.uniform(-1, 1, 4))
        w2, b2 = p64(rng.uniform(-1, 1, (4, 2))), p64(rng.uniform(-1, 1, 2))

    def loss():
        return mean(square(tanh(linear(relu(linear(x, w1, b1)), w2, b2))))

    assert finite_difference_check(loss, [w1, b1, w2, b2], h=1e-3) <= 1.0


OPS = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "sub": lambda a, b: a - b,
    "tanh": lambda a, b: tanh(a) * b,
    "exp": lambda a, b: exp(tanh(a)) + b,  # bounded so chains stay in FD-friendly range
    "log": lambda a, b: log(square(a) + 1.5) * b,
    "var": lambda a, b: var(a, axis=1, keepdims=True) * b,
    "standardize": lambda a, b: standardize(a + b, axis=1),
    "log_softmax": lambda a, b: log_softmax(a * b, axis=1),
    "concat": lambda a, b: concat([a, b], axis=1)[:, :3] * b,
}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(sorted(OPS)), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_random_compositions_match_finite_differences(ops, seed):
    rng = np.random.default_rng(seed)
    a = p64(rng.uniform(-1, 1, (3, 3)))
    b = p64(rng.uniform(-1, 1, (3, 3)))

    def loss():
        h = a
        for name in ops:
            h = OPS[name](h, b)
        return tsum(h * h)

    assert finite_difference_check(loss, [a, b]) <= 1.0


def test_fused_ops_match_finite_differences():
    rng = np.random.default_rng(1)
    x = p64(rng.uniform(-1, 1, (4, 5)))
    g = p64(rng.uniform(0.5, 1.5, 5))
    b = p64(rng.uniform(-1, 1, 5))
    target = rng.dirichlet(np.ones(5), size=4)
    centers = np.linspace(-1, 1, 5)

    def loss():
        y = affine(standardize(x, axis=1), g, b)
        return softmax_cross_entropy(y, target) + tsum(square(softmax_expectation(y, centers)))

    assert finite_difference_check(loss, [x, g, b]) <= 1.0


def test_softmax_cross_entropy_matches_composition():
    rng = np.random.default_rng(2)
    logits = Tensor(rng.normal(size=(6, 4)))
    target = rng.dirichlet(np.ones(4), size=6).astype(np.float32)
    ref = -(tsum(log_softmax(logits, axis=1) * target, axis=1).mean())
    assert float(softmax_cross_entropy(logits, target).data) == pytest.approx(float(ref.data), rel=1e-6)


def test_linear_relu_fusion_matches_unfused():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    fused = tsum(square(linear(x, w, b, activation="relu")))
    plain = tsum(square(relu(linear(x, w, b))))
    assert np.array_equal(fused.data, plain.data)
    for g1, g2 in zip(backward(fused, [x, w, b]), backward(plain, [x, w, b])):
        np.testing.assert_allclose(g1, g2, rtol=1e-6)


def test_check_finite_names_op():
    x = Tensor([1.0, -1.0], requires_grad=True)
    loss = tsum(x / Tensor([0.0, 1.0]))
    with pytest.raises(NumericError, match="div"):
        check_finite(loss, "test")


# ----------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_params():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = AdamState.create([p], lr=0.1)
    adam_step([p], [np.zeros(2, np.float32)], state)
    assert p.data.tolist() == [1.0, 2.0]
    assert state.t == 1


def test_adam_first_step_is_minus_lr_sign():
    p = Tensor([0.0], requires_grad=True)
    state = AdamState.create([p], lr=0.1)
    adam_step([p], [np.ones(1, np.float32)], state)
    assert float(p.data[0]) == pytest.approx(-0.1, rel=1e-6)


def test_adam_matches_textbook_formula():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=3), requires_grad=True)
    ref = p.data.astype(np.float64).copy()
    m = np.zeros(3)
    v = np.zeros(3)
    state = AdamState.create([p], lr=1e-2)
    for t in range(1, 6):
        g = rng.normal(size=3).astype(np.float32)
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g.astype(np.float64) ** 2
        ref -= 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-5)


def test_adam_nan_gradient():
    p = Tensor([0.0], requires_grad=True, name="w")
    with pytest.raises(NumericError, match="w"):
        adam_step([p], [np.array([np.nan], np.float32)], AdamState.create([p]))


def test_adam_shape_mismatch():
    p = Tensor([0.0, 1.0], requires_grad=True)
    with pytest.raises(ContractError):
        adam_step([p], [np.zeros(3, np.float32)], AdamState.create([p]))


def test_adam_is_deterministic():
    def run():
        rng = Rng(7, "adam")
        p = Tensor(rng.normal(4), requires_grad=True)
        state = AdamState.create([p], lr=1e-2)
        for _ in range(100):
            (g,) = backward(tsum(square(p - 1.0)), [p])
            adam_step([p], [g], state)
        return p.data.tobytes()

    assert run() == run()


def test_cosine_lr_endpoints():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0)
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)


# ----------------------------------------------------------------- rng


def test_rng_stream_advances_and_replays():
    rng = Rng(7)
    a, b = rng_normal(rng, (4,)), rng_normal(rng, (4,))
    assert not np.array_equal(a.data, b.data)
    assert np.array_equal(rng_normal(Rng(7), (4,)).data, a.data)


def test_rng_streams_are_independent():
    assert not np.array_equal(Rng(7, "a").normal(8), Rng(7, "b").normal(8))
    assert np.array_equal(Rng(7, "a").child("x").normal(8), Rng(7, "a").child("x").normal(8))


def test_rng_normal_moments():
    x = rng_normal(Rng(123), (100_000,)).data.astype(np.float64)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.02


def test_rng_state_roundtrip():
    rng = Rng(3)
    state = rng.get_state()
    a = rng.normal(5)
    rng.set_state(state)
    assert np.array_equal(rng.normal(5), a)
