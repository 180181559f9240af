import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ganticket import numcore as nc
from ganticket.errors import ContractError, DimensionError, NonFiniteError

import oracles


# ------------------------------------------------------------ forward ops

def test_matmul_hand_example():
    out = nc.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_relu_definition():
    np.testing.assert_array_equal(nc.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])


def test_l1_norm_definition():
    assert nc.l1_norm([1.0, -2.0, 3.0]).item() == 6.0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
        nc.add(np.ones((2, 3)), np.ones(4))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_tape_recorded_only_when_needed():
    a = nc.Tensor([1.0, 2.0])
    assert nc.mul(a, 2.0).is_leaf
    b = nc.Tensor([1.0, 2.0], requires_grad=True)
    assert not nc.mul(b, 2.0).is_leaf
    with nc.no_grad():
        assert nc.mul(b, 2.0).is_leaf


def test_stable_sigmoid_and_softplus_extremes():
    x = np.array([-800.0, 0.0, 800.0])
    np.testing.assert_allclose(nc.sigmoid(x).data, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(nc.softplus(x).data, [0.0, np.log(2.0), 800.0])


# --------------------------------------------------------------- backward

def test_square_gradient():
    x = nc.Tensor(3.0, requires_grad=True)
    nc.backward(nc.mul(x, x))
    assert x.grad == 6.0


def test_independent_leaf_gets_zero_gradient():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    y = nc.Tensor([3.0, 4.0], requires_grad=True)
    nc.backward(nc.sum(nc.square(x)))
    np.testing.assert_array_equal(y.grad if y.grad is not None else np.zeros(2), 0.0)


def test_backward_rejects_non_scalar():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        nc.backward(nc.mul(x, 2.0))


def test_graph_is_consumed():
    x = nc.Tensor(2.0, requires_grad=True)
    loss = nc.square(x)
    nc.backward(loss)
    with pytest.raises(ContractError):
        nc.backward(loss)


def test_shared_subexpression_visited_once():
    x = nc.Tensor(1.5, requires_grad=True)
    y = nc.mul(x, x)
    nc.backward(nc.add(y, y))  # d/dx 2x^2 = 4x
    assert x.grad == pytest.approx(6.0, abs=0)


def test_broadcast_gradient_sums_back():
    a = nc.Tensor(np.ones((3, 4)), requires_grad=True)
    b = nc.Tensor(np.ones(4), requires_grad=True)
    nc.backward(nc.sum(nc.mul(a, b)))
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, 3.0)


@pytest.mark.parametrize("name", sorted(oracles.primitive_cases()))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_matches_finite_differences(name, seed):
    assert oracles.check_case(oracles.primitive_cases()[name], seed) <= oracles.GRAD_RTOL


@pytest.mark.parametrize("seed", [0, 1])
def test_three_layer_gan_loss_matches_finite_differences(seed):
    assert oracles.gan_loss_case(seed, norm_d=bool(seed)) <= oracles.GRAD_RTOL


def test_scaled_norm_batch_of_one_uses_variance_floor():
    x = nc.Tensor(np.array([[3.0, -1.0]]), requires_grad=True)
    out, (mu, var) = nc.scaled_norm(x, np.ones(2), np.zeros(2))
    np.testing.assert_array_equal(var, 0.0)
    np.testing.assert_array_equal(out.data, 0.0)
    nc.backward(nc.sum(out))
    assert np.all(np.isfinite(x.grad))


# ------------------------------------------------------------------- Adam

def test_adam_first_step_with_unit_gradient():
    p = {"w": np.zeros(5)}
    state = nc.AdamState(lr=1e-3)
    nc.adam_step(p, {"w": np.ones(5)}, state)
    np.testing.assert_allclose(p["w"], -1e-3 / (1 + 1e-8), rtol=0, atol=1e-18)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.arange(4.0)}
    nc.adam_step(p, {"w": np.zeros(4)}, nc.AdamState())
    np.testing.assert_array_equal(p["w"], np.arange(4.0))


def test_adam_matches_reference_on_quadratic():
    target = np.array([1.0, -2.0, 0.5, 3.0])
    grad = lambda w: 2 * (w - target)  # noqa: E731
    p0 = np.array([0.3, 0.1, -0.7, 2.0])
    ref = oracles.reference_adam(p0, grad, 10, lr=0.05)
    p = {"w": p0.copy()}
    state = nc.AdamState(lr=0.05)
    for k in range(10):
        nc.adam_step(p, {"w": grad(p["w"])}, state)
        np.testing.assert_allclose(p["w"], ref[k], rtol=0, atol=1e-12)


def test_adam_masked_positions_frozen_and_moments_zero():
    rng = np.random.default_rng(0)
    mask = (rng.random((6, 5)) > 0.4).astype(float)
    w0 = rng.standard_normal((6, 5)) * mask
    p = {"w": w0.copy(), "b": np.zeros(5)}
    state = nc.AdamState(lr=0.1)
    for _ in range(25):
        nc.adam_step(p, {"w": rng.standard_normal((6, 5)), "b": rng.standard_normal(5)}, state, {"w": mask})
    frozen = mask == 0
    assert p["w"][frozen].tobytes() == w0[frozen].tobytes()
    assert np.all(state.m["w"][frozen] == 0) and np.all(state.v["w"][frozen] == 0)
    assert state.step == 25


def test_adam_masked_matches_reference():
    rng = np.random.default_rng(1)
    mask = (rng.random(8) > 0.5).astype(float)
    p0 = rng.standard_normal(8)
    grads = [rng.standard_normal(8) for _ in range(7)]
    it = iter(grads)
    ref = oracles.reference_adam(p0, lambda _w: next(it), 7, mask=mask)
    p = {"w": p0.copy()}
    state = nc.AdamState()
    for g in grads:
        nc.adam_step(p, {"w": g}, state, {"w": mask})
    np.testing.assert_allclose(p["w"], ref[-1], rtol=0, atol=1e-12)


def test_adam_non_finite_gradient_names_parameter():
    p = {"fc0.weight": np.zeros(3), "fc0.bias": np.zeros(1)}
    with pytest.raises(NonFiniteError, match="fc0.weight"):
        nc.adam_step(p, {"fc0.bias": np.zeros(1), "fc0.weight": np.array([0.0, np.nan, 1.0])}, nc.AdamState())
    assert np.all(p["fc0.bias"] == 0)


def test_adam_shape_checks():
    with pytest.raises(DimensionError):
        nc.adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, nc.AdamState())
    with pytest.raises(DimensionError):
        nc.adam_step({"w": np.zeros(3)}, {"w": np.zeros(3)}, nc.AdamState(), {"w": np.ones(2)})


def test_adam_moment_dicts_stay_congruent():
    p = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    state = nc.AdamState()
    nc.adam_step(p, {k: np.ones_like(v) for k, v in p.items()}, state)
    assert {k: v.shape for k, v in state.m.items()} == {"a": (2, 3), "b": (4,)}


@settings(max_examples=40, deadline=None)
@given(
    mask=hnp.arrays(np.float64, (4, 3), elements=st.sampled_from([0.0, 1.0])),
    steps=st.integers(1, 12),
    seed=st.integers(0, 2**31 - 1),
)
def test_property_masked_update_bit_identical(mask, steps, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((4, 3))
    w[mask == 0] = rng.standard_normal(int((mask == 0).sum()))  # frozen values need not be zero
    before = w.copy()
    p = {"w": w}
    state = nc.AdamState(lr=0.01)
    for _ in range(steps):
        nc.adam_step(p, {"w": rng.standard_normal((4, 3)) * 10}, state, {"w": mask})
    assert p["w"][mask == 0].tobytes() == before[mask == 0].tobytes()


@settings(max_examples=30, deadline=None)
@given(
    a=hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=4),
                 elements=st.floats(-10, 10)),
)
def test_property_sum_gradient_is_ones(a):
    x = nc.Tensor(a.copy(), requires_grad=True)
    nc.backward(nc.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones_like(a))
