import numpy as np
import pytest

from actoreg.core import ConfigError, Rng, Tensor, backward, tsum
from actoreg.regularizers import (
    NormParams,
    RegularizerConfig,
    SpectralState,
    add_gradient_noise,
    dropout_forward,
    elastic_net_penalty,
    gradient_noise_scale,
    inject_noise,
    norm_forward,
    power_iterate,
    spectral_normalize,
)


# ----------------------------------------------------------------- config


def test_default_config_is_identity():
    cfg = RegularizerConfig()
    assert cfg.is_identity
    assert cfg.weight_decay_mode == "L2"


@pytest.mark.parametrize("alpha,mode", [(0.0, "L2"), (0.5, "EN"), (1.0, "L1"), (0.3, None)])
def test_weight_decay_modes(alpha, mode):
    assert RegularizerConfig(weight_decay=0.1, weight_decay_alpha=alpha).weight_decay_mode == mode


@pytest.mark.parametrize("field,value", [
    ("weight_decay", -0.1), ("weight_decay_alpha", 1.5), ("dropout_rate", 1.0),
    ("norm_kind", "batch"), ("input_noise", -1.0), ("gradient_noise", -0.1),
])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError, match=f"regularizer.{field}"):
        RegularizerConfig(**{field: value})


# ----------------------------------------------------------------- elastic net


def test_elastic_net_l2_value_and_gradient():
    w = Tensor([[1.0, -2.0], [0.5, 0.0]], requires_grad=True)
    pen = elastic_net_penalty([w], omega=0.1, alpha=0.0)
    assert float(pen.data) == pytest.approx(0.1 * (1 + 4 + 0.25))
    (g,) = backward(pen, [w])
    np.testing.assert_allclose(g, 0.1 * 2 * w.data, rtol=1e-6)


def test_elastic_net_l1_value_and_gradient():
    w = Tensor([[1.0, -2.0], [0.5, 0.0]], requires_grad=True)
    pen = elastic_net_penalty([w], omega=0.01, alpha=1.0)
    assert float(pen.data) == pytest.approx(0.01 * 3.5)
    (g,) = backward(pen, [w])
    np.testing.assert_allclose(g, 0.01 * np.sign(w.data), rtol=1e-6)


def test_elastic_net_mixed_over_several_matrices():
    rng = np.random.default_rng(0)
    ws = [Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(4, 2)), requires_grad=True)]
    omega, alpha = 1e-3, 0.5
    expected = sum(omega * (alpha * np.abs(w.data).sum() + (1 - alpha) * (w.data ** 2).sum()) for w in ws)
    pen = elastic_net_penalty(ws, omega, alpha)
    assert float(pen.data) == pytest.approx(expected, rel=1e-5)
    for w, g in zip(ws, backward(pen, ws)):
        np.testing.assert_allclose(g, omega * (alpha * np.sign(w.data) + 2 * (1 - alpha) * w.data), rtol=1e-5)


def test_elastic_net_zero_omega_is_zero():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    assert float(elastic_net_penalty([w], 0.0, 0.5).data) == 0.0


# ----------------------------------------------------------------- dropout


def test_dropout_eval_is_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert dropout_forward(x, 0.5, Rng(0), mode="eval") is x


def test_dropout_given_mask():
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    out = dropout_forward(x, 0.5, None, "train", mask=np.array([[1, 0, 1, 0]]))
    assert out.data.tolist() == [[2.0, 0.0, 6.0, 0.0]]


@pytest.mark.parametrize("rate", [0.1, 0.2, 0.3, 0.5, 0.75, 0.9])
def test_inverted_dropout_expectation(rate):
    # 1e5 masks over an 8-unit input; survivors are scaled so the mean is preserved
    x = Tensor(np.full((100_000, 8), 2.0))
    out = dropout_forward(x, rate, Rng(1, "dropout"), "train").data.astype(np.float64)
    assert abs(out.mean() / 2.0 - 1.0) < 0.02
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 2.0 / (1 - rate), rtol=1e-6)


def test_dropout_gradient_uses_mask():
    x = Tensor(np.ones((1, 4)), requires_grad=True)
    out = dropout_forward(x, 0.5, None, "train", mask=np.array([[1, 0, 0, 1]]))
    (g,) = backward(tsum(out), [x])
    assert g.tolist() == [[2.0, 0.0, 0.0, 2.0]]


# ----------------------------------------------------------------- norms


def test_layer_norm_moments():
    x = Tensor(np.random.default_rng(0).normal(3.0, 5.0, size=(64, 32)))
    y = norm_forward(x, "layer").data.astype(np.float64)
    assert np.all(np.abs(y.mean(axis=1)) < 1e-5)
    assert np.all(np.abs(y.var(axis=1) - 1.0) < 1e-3)


def test_group_norm_moments_per_group():
    x = Tensor(np.random.default_rng(1).normal(size=(16, 32)))
    y = norm_forward(x, "group", NormParams(Tensor(np.ones(32)), Tensor(np.zeros(32)), groups=8)).data
    groups = y.reshape(16, 8, 4).astype(np.float64)
    assert np.all(np.abs(groups.mean(axis=2)) < 1e-5)
    assert np.all(np.abs(groups.var(axis=2) - 1.0) < 1e-2)


def test_group_norm_requires_divisible_width():
    with pytest.raises(ConfigError):
        norm_forward(Tensor(np.ones((2, 10))), "group", NormParams(Tensor(np.ones(10)), Tensor(np.zeros(10)), 8))


def test_feature_norm_train_and_eval():
    rng = np.random.default_rng(2)
    params = NormParams(Tensor(np.ones(4)), Tensor(np.zeros(4)),
                        running_mean=np.zeros(4, np.float32), running_var=np.ones(4, np.float32))
    x = Tensor(rng.normal(2.0, 3.0, size=(256, 4)))
    y = norm_forward(x, "feature", params, mode="train").data.astype(np.float64)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-5)
    np.testing.assert_allclose(params.running_mean, 0.01 * x.data.mean(axis=0), rtol=1e-5)
    # eval uses running statistics, not the batch
    y_eval = norm_forward(x, "feature", params, mode="eval").data
    expected = (x.data - params.running_mean) / np.sqrt(params.running_var + 1e-5)
    np.testing.assert_allclose(y_eval, expected, rtol=1e-5)


def test_norm_affine_parameters_apply():
    x = Tensor(np.random.default_rng(3).normal(size=(8, 4)))
    gain, bias = Tensor(np.full(4, 2.0)), Tensor(np.full(4, 0.5))
    y = norm_forward(x, "layer", NormParams(gain, bias)).data
    np.testing.assert_allclose(y, 2.0 * norm_forward(x, "layer").data + 0.5, rtol=1e-5)


# ----------------------------------------------------------------- spectral norm


def test_spectral_sigma_matches_svd():
    rng = np.random.default_rng(4)
    for trial in range(100):
        r, c = rng.integers(1, 17, size=2)
        w = rng.normal(size=(r, c)).astype(np.float32)
        state = SpectralState.init((r, c), Rng(trial, "sn"))
        sigma = power_iterate(w, state, n_iter=200)
        true = np.linalg.svd(w.astype(np.float64), compute_uv=False)[0]
        assert abs(sigma - true) / true < 1e-3


def test_spectral_normalize_unit_top_singular_value():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(8, 6)), requires_grad=True)
    state = SpectralState.init((8, 6), Rng(0, "sn"))
    for _ in range(50):
        out = spectral_normalize(w, state)
    assert np.linalg.svd(out.data, compute_uv=False)[0] == pytest.approx(1.0, rel=1e-3)


def test_spectral_frozen_does_not_advance_vectors():
    w = Tensor(np.random.default_rng(6).normal(size=(4, 4)))
    state = SpectralState.init((4, 4), Rng(0, "sn"))
    u = state.u.copy()
    spectral_normalize(w, state, update=False)
    assert np.array_equal(state.u, u)


def test_spectral_zero_matrix_is_finite():
    out = spectral_normalize(Tensor(np.zeros((3, 3))), SpectralState.init((3, 3), Rng(0)))
    assert np.all(np.isfinite(out.data))


# ----------------------------------------------------------------- noise


def test_inject_noise_zero_is_identity():
    y = np.arange(3.0)
    assert inject_noise(y, 0.0, Rng(0)) is y


def test_inject_noise_adds_scaled_normal():
    y = np.zeros(100_000, np.float32)
    out = inject_noise(y, 0.3, Rng(0, "noise"))
    assert abs(out.std() - 0.3) < 0.005
    replay = inject_noise(y, 0.3, Rng(0, "noise"))
    assert np.array_equal(out, replay)


def test_inject_noise_on_tensor_keeps_gradient():
    y = Tensor([1.0, 2.0], requires_grad=True)
    out = inject_noise(y, 0.1, Rng(0))
    (g,) = backward(tsum(out), [y])
    assert g.tolist() == [1.0, 1.0]


def test_gradient_noise_schedule():
    assert gradient_noise_scale(0.1, 0) == 0.1
    assert gradient_noise_scale(0.1, 99) == pytest.approx(0.1 / 100 ** 0.55)
    assert gradient_noise_scale(0.1, 99) == pytest.approx(0.007943, abs=1e-6)


def test_gradient_noise_zero_scale_is_identity():
    grads = [np.ones(3, np.float32)]
    assert add_gradient_noise(grads, 0.0, Rng(0)) is grads
    noisy = add_gradient_noise(grads, 0.5, Rng(0))
    assert not np.array_equal(noisy[0], grads[0])
