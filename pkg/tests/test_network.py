import numpy as np
import pytest

from pclandscape.errors import ShapeError
from pclandscape.network import (
    ArchSpec,
    Batch,
    Params,
    bp_gradient,
    forward,
    grad_norm_inf,
    init_near_point,
    mse_loss,
    sgd_step,
    zeros_params,
)


def fd_gradient(f, params, rel_h=1e-5):
    theta = params.flatten()
    out = np.zeros_like(theta)
    for i in range(theta.size):
        h = rel_h * (1.0 + abs(theta[i]))
        plus, minus = theta.copy(), theta.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (f(params.with_flat(plus)) - f(params.with_flat(minus))) / (2 * h)
    return out


def random_net(widths, activation, seed, sigma=0.5, bias=False):
    arch = ArchSpec(widths=widths, activation=activation, bias=bias)
    params = init_near_point(arch, zeros_params(arch), sigma, seed)
    return arch, params


def test_archspec_validation():
    with pytest.raises(ShapeError):
        ArchSpec(widths=(3,))
    with pytest.raises(ShapeError):
        ArchSpec(widths=(3, 0, 2))
    with pytest.raises(ValueError):
        ArchSpec(widths=(3, 2), activation="sigmoid")
    arch = ArchSpec(widths=(4, 3, 2))
    assert arch.n_layers == 2 and arch.n_hidden == 1
    assert arch.d_x == 4 and arch.d_y == 2
    assert arch.n_params == 3 * 4 + 2 * 3


def test_params_flatten_round_trip():
    arch, params = random_net((3, 4, 2), "linear", seed=0)
    flat = params.flatten()
    assert flat.size == arch.n_params
    back = params.with_flat(flat)
    for a, b in zip(params.weights, back.weights):
        assert np.array_equal(a, b)


def test_params_shape_chain_validation():
    with pytest.raises(ShapeError):
        Params(weights=[np.ones((3, 2)), np.ones((2, 4))])


def test_batch_requires_matching_sample_counts():
    with pytest.raises(ShapeError):
        Batch(x=np.ones((2, 3)), y=np.ones((2, 4)))


def test_init_sigma_zero_returns_center():
    arch = ArchSpec(widths=(2, 3, 2))
    center = init_near_point(arch, zeros_params(arch), 1.0, seed=7)
    again = init_near_point(arch, center, 0.0, seed=99)
    for a, b in zip(center.weights, again.weights):
        assert np.array_equal(a, b)


def test_init_statistics_match_sigma():
    arch = ArchSpec(widths=(64, 128, 64))
    params = init_near_point(arch, zeros_params(arch), 5e-3, seed=1)
    entries = params.flatten()
    assert entries.size >= 10_000
    assert abs(entries.mean()) < 3 * 5e-3 / np.sqrt(entries.size)
    assert abs(entries.std() - 5e-3) / 5e-3 < 0.10


def test_init_deterministic_per_seed():
    arch = ArchSpec(widths=(3, 5, 2))
    a = init_near_point(arch, zeros_params(arch), 0.3, seed=42)
    b = init_near_point(arch, zeros_params(arch), 0.3, seed=42)
    assert np.array_equal(a.flatten(), b.flatten())
    c = init_near_point(arch, zeros_params(arch), 0.3, seed=43)
    assert not np.array_equal(a.flatten(), c.flatten())


def test_init_shape_mismatch():
    arch = ArchSpec(widths=(3, 5, 2))
    wrong = zeros_params(ArchSpec(widths=(3, 4, 2)))
    with pytest.raises(ShapeError):
        init_near_point(arch, wrong, 0.1, seed=0)


def test_forward_identity_weights():
    arch = ArchSpec(widths=(3, 3, 3))
    params = Params(weights=[np.eye(3), np.eye(3)])
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(forward(params, arch, x), x)


def test_forward_scalar_chain():
    arch = ArchSpec(widths=(1, 1, 1))
    params = Params(weights=[np.array([[2.0]]), np.array([[3.0]])])
    assert forward(params, arch, np.array([[1.0]]))[0, 0] == 6.0


@pytest.mark.parametrize("activation", ["linear", "tanh", "relu"])
def test_forward_zero_weights_gives_zero(activation):
    arch = ArchSpec(widths=(3, 4, 2), activation=activation)
    params = zeros_params(arch)
    out = forward(params, arch, np.ones((3, 5)))
    assert np.array_equal(out, np.zeros((2, 5)))


def test_forward_linear_equals_weight_product():
    arch, params = random_net((3, 5, 4, 2), "linear", seed=2)
    x = np.random.default_rng(0).normal(size=(3, 6))
    prod = params.weights[2] @ params.weights[1] @ params.weights[0]
    assert np.max(np.abs(forward(params, arch, x) - prod @ x)) < 1e-12


def test_mse_loss_cases():
    arch = ArchSpec(widths=(2, 3, 2))
    params = zeros_params(arch)
    batch = Batch(x=np.ones((2, 1)), y=np.array([[1.0], [1.0]]))
    assert mse_loss(params, arch, batch) == 1.0  # 0.5 * ||y||^2

    chain = ArchSpec(widths=(1, 1, 1))
    p = Params(weights=[np.array([[1.0]]), np.array([[1.0]])])
    b = Batch(x=np.array([[1.0]]), y=np.array([[3.0]]))
    assert mse_loss(p, chain, b) == 2.0  # 0.5 * (3 - 1)^2

    # perfect fit
    b2 = Batch(x=np.array([[1.0]]), y=np.array([[1.0]]))
    assert mse_loss(p, chain, b2) == 0.0


def test_bp_gradient_zero_cases():
    # perfect fit -> zero gradient
    chain = ArchSpec(widths=(1, 1, 1))
    p = Params(weights=[np.array([[1.0]]), np.array([[1.0]])])
    b = Batch(x=np.array([[1.0]]), y=np.array([[1.0]]))
    g = bp_gradient(p, chain, b)
    assert grad_norm_inf(g) == 0.0
    # origin of any net with a hidden layer is critical
    arch = ArchSpec(widths=(3, 4, 2))
    g0 = bp_gradient(zeros_params(arch), arch,
                     Batch(x=np.ones((3, 4)), y=np.ones((2, 4))))
    assert grad_norm_inf(g0) == 0.0


@pytest.mark.parametrize("activation", ["linear", "tanh", "relu"])
def test_bp_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(10)
    arch, params = random_net((2, 3, 3, 2), activation, seed=11)
    batch = Batch(x=rng.normal(size=(2, 4)), y=rng.normal(size=(2, 4)))
    grads = bp_gradient(params, arch, batch)
    fd = fd_gradient(lambda p: mse_loss(p, arch, batch), params)
    denom = max(np.max(np.abs(fd)), 1e-12)
    assert np.max(np.abs(grads.flatten() - fd)) / denom < 1e-5


def test_bp_gradient_with_bias_matches_finite_differences():
    rng = np.random.default_rng(12)
    arch, params = random_net((2, 3, 2), "tanh", seed=13, bias=True)
    batch = Batch(x=rng.normal(size=(2, 5)), y=rng.normal(size=(2, 5)))
    grads = bp_gradient(params, arch, batch)
    fd = fd_gradient(lambda p: mse_loss(p, arch, batch), params)
    denom = max(np.max(np.abs(fd)), 1e-12)
    assert np.max(np.abs(grads.flatten() - fd)) / denom < 1e-5


def test_masked_loss_and_gradient_ignore_hidden_entries():
    rng = np.random.default_rng(14)
    arch, params = random_net((3, 4, 3), "linear", seed=15)
    batch = Batch(x=rng.normal(size=(3, 5)), y=rng.normal(size=(3, 5)))
    mask = rng.random((3, 5)) > 0.4
    loss_m = mse_loss(params, arch, batch, mask=mask)
    grads = bp_gradient(params, arch, batch, mask=mask)
    fd = fd_gradient(lambda p: mse_loss(p, arch, batch, mask=mask), params)
    denom = max(np.max(np.abs(fd)), 1e-12)
    assert np.max(np.abs(grads.flatten() - fd)) / denom < 1e-5
    # fully observed mask reproduces the plain loss
    assert mse_loss(params, arch, batch, mask=np.ones((3, 5), dtype=bool)) == \
        mse_loss(params, arch, batch)
    assert loss_m <= mse_loss(params, arch, batch) + 1e-12


def test_sgd_step():
    arch = ArchSpec(widths=(1, 1))
    p = Params(weights=[np.array([[1.0]])])
    g = Params(weights=[np.array([[2.0]])])
    assert sgd_step(p, g, 0.1).weights[0][0, 0] == pytest.approx(0.8)
    assert sgd_step(p, g, 0.0).weights[0][0, 0] == 1.0
    zero = Params(weights=[np.zeros((1, 1))])
    assert sgd_step(p, zero, 0.5).weights[0][0, 0] == 1.0
    with pytest.raises(ShapeError):
        sgd_step(p, Params(weights=[np.zeros((2, 2))]), 0.1)
