"""Q-map network: forward oracle, TD arithmetic, Huber, gradient checks."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csar.qnet import (
    Action,
    LayoutMismatchError,
    apply_sgd,
    backward,
    default_layout,
    forward,
    huber_grad,
    huber_loss,
    init_params,
    load_params,
    save_params,
    select_action,
    td_error,
    td_target,
    toy_layout,
)


def naive_forward(layout, params, state):
    """Direct convolution arithmetic, independent of the im2col path."""
    x = np.asarray(state, dtype=float)
    for spec, (wsl, bsl) in zip(layout.layers, layout.slices()):
        w = params[wsl].reshape(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
        b = params[bsl]
        pad = spec.kernel // 2
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        out = np.zeros((spec.out_channels, layout.height, layout.width))
        for o in range(spec.out_channels):
            for y in range(layout.height):
                for xx in range(layout.width):
                    acc = b[o]
                    for c in range(spec.in_channels):
                        for dy in range(spec.kernel):
                            for dx in range(spec.kernel):
                                acc += w[o, c, dy, dx] * padded[c, y + dy, xx + dx]
                    out[o, y, xx] = acc
        x = np.maximum(out, 0.0) if spec.relu else out
    return x[0]


def random_state(layout, rng):
    return rng.uniform(0.0, 1.0, (layout.in_channels, layout.height, layout.width))


class TestInitParams:
    def test_same_seed_identical(self):
        layout = default_layout()
        assert np.array_equal(init_params(layout, 7), init_params(layout, 7))

    def test_different_seeds_differ(self):
        layout = default_layout()
        assert np.any(init_params(layout, 1) != init_params(layout, 2))

    def test_biases_exactly_zero(self):
        layout = default_layout()
        params = init_params(layout, 3)
        for _, bsl in layout.slices():
            assert np.array_equal(params[bsl], np.zeros(bsl.stop - bsl.start))

    def test_weights_within_fan_in_scale(self):
        layout = default_layout()
        params = init_params(layout, 11)
        for spec, (wsl, _) in zip(layout.layers, layout.slices()):
            s = np.sqrt(1.0 / (spec.in_channels * spec.kernel**2))
            assert np.all(np.abs(params[wsl]) <= s)


class TestForward:
    def test_zero_params_zero_qmap(self):
        layout = toy_layout()
        state = random_state(layout, np.random.default_rng(0))
        qmap = forward(layout, np.zeros(layout.param_count), state)
        assert np.array_equal(qmap, np.zeros((8, 8)))

    def test_pure(self):
        layout = toy_layout()
        rng = np.random.default_rng(1)
        params = init_params(layout, 5)
        state = random_state(layout, rng)
        assert np.array_equal(forward(layout, params, state), forward(layout, params, state))

    def test_shape_mismatch_rejected(self):
        layout = toy_layout()
        with pytest.raises(LayoutMismatchError):
            forward(layout, init_params(layout, 0), np.zeros((2, 4, 4)))
        with pytest.raises(LayoutMismatchError):
            forward(layout, np.zeros(3), random_state(layout, np.random.default_rng(0)))

    def test_matches_naive_convolution_oracle(self):
        layout = toy_layout()
        rng = np.random.default_rng(42)
        params = init_params(layout, 42)
        state = random_state(layout, rng)
        assert np.allclose(forward(layout, params, state), naive_forward(layout, params, state), atol=1e-12)

    def test_interior_translation_equivariance(self):
        # one object, interior; shifting it by one cell shifts the
        # Q-map by one cell wherever the receptive field avoids the border
        layout = toy_layout()
        params = init_params(layout, 9)
        base = np.full((2, 8, 8), 0.1)
        shifted = base.copy()
        base[0, 3:5, 3:5] = 0.9
        base[1, 3:5, 3:5] = 0.05
        shifted[0, 4:6, 4:6] = 0.9
        shifted[1, 4:6, 4:6] = 0.05
        q1 = forward(layout, params, base)
        q2 = forward(layout, params, shifted)
        # receptive radius is 2 -> padding-free cells 2..4 of q1 match 3..5 of q2
        assert np.allclose(q1[2:5, 2:5], q2[3:6, 3:6], atol=1e-12)
        ay1, ax1 = np.unravel_index(np.argmax(q1[2:5, 2:5]), (3, 3))
        ay2, ax2 = np.unravel_index(np.argmax(q2[3:6, 3:6]), (3, 3))
        assert (ay1, ax1) == (ay2, ax2)


class TestSelectAction:
    def test_greedy_unique_max(self):
        q = np.zeros((8, 8))
        q[5, 3] = 2.0
        depth = np.full((8, 8), 0.05)
        a = select_action(q, depth, 0.0, np.random.default_rng(0))
        assert (a.x, a.y) == (3, 5)
        assert a.z == 0.05

    def test_greedy_tie_breaks_row_major(self):
        q = np.ones((4, 4))
        a = select_action(q, np.zeros((4, 4)), 0.0, np.random.default_rng(0))
        assert (a.x, a.y) == (0, 0)

    def test_explore_reproducible(self):
        q = np.zeros((6, 6))
        depth = np.zeros((6, 6))
        a1 = select_action(q, depth, 1.0, np.random.default_rng(123))
        a2 = select_action(q, depth, 1.0, np.random.default_rng(123))
        assert (a1.x, a1.y) == (a2.x, a2.y)

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            select_action(np.zeros((2, 2)), np.zeros((2, 2)), 1.5, np.random.default_rng(0))


class TestTdArithmetic:
    def test_target_with_bootstrap(self):
        assert td_target(2000.0, np.array([[10.0, 3.0]]), 0.5, done=False) == 2005.0

    def test_target_done_drops_bootstrap(self):
        assert td_target(0.0, np.array([[10.0]]), 0.5, done=True) == 0.0

    def test_target_zero_discount(self):
        assert td_target(1.0, np.array([[99.0]]), 0.0, done=False) == 1.0

    @pytest.mark.parametrize(
        ("q", "target", "expected"),
        [(5.0, 3.0, 2.0), (3.0, 3.0, 0.0), (0.0, 2005.0, -2005.0)],
    )
    def test_td_error(self, q, target, expected):
        assert td_error(q, target) == expected

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_td_error_of_self_is_zero(self, q):
        assert td_error(q, q) == 0.0


class TestHuber:
    @pytest.mark.parametrize(
        ("xi", "expected"),
        [(0.0, 0.0), (0.5, 0.125), (-0.5, 0.125), (1.0, 0.5), (-1.0, 0.5), (2.0, 1.5), (-2.0, 1.5)],
    )
    def test_values(self, xi, expected):
        assert huber_loss(xi) == expected

    @pytest.mark.parametrize(
        ("xi", "expected"),
        [(0.0, 0.0), (0.5, 0.5), (-0.5, -0.5), (1.0, 1.0), (-1.0, -1.0), (2.0, 1.0), (-2.0, -1.0)],
    )
    def test_derivative_clipping(self, xi, expected):
        assert huber_grad(xi) == expected

    @given(st.floats(min_value=-50, max_value=50))
    def test_derivative_magnitude_at_most_one(self, xi):
        assert abs(huber_grad(xi)) <= 1.0

    def test_continuous_at_unit_error(self):
        eps = 1e-9
        assert abs(huber_loss(1.0 - eps) - huber_loss(1.0 + eps)) < 1e-8


def finite_difference_grad(layout, params, state, action, target, step=1e-4):
    """Central differences of huber(forward(...)[cell] - target)."""
    grad = np.empty_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += step
        hi = huber_loss(forward(layout, bumped, state)[action.y, action.x] - target)
        bumped[i] -= 2 * step
        lo = huber_loss(forward(layout, bumped, state)[action.y, action.x] - target)
        grad[i] = (hi - lo) / (2 * step)
    return grad


def grad_agreement(analytic, numeric, rel_tol=1e-4, zero_tol=1e-8):
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    agree = np.abs(analytic - numeric) <= rel_tol * denom
    agree |= denom < zero_tol
    return float(np.mean(agree))


class TestBackward:
    def test_zero_td_error_gives_zero_gradient(self):
        layout = toy_layout()
        params = init_params(layout, 1)
        state = random_state(layout, np.random.default_rng(1))
        grad = backward(layout, params, state, Action(2, 3, 0.0), 0.0)
        assert np.array_equal(grad, np.zeros_like(params))

    def test_clipped_region_saturates(self):
        layout = toy_layout()
        params = init_params(layout, 2)
        state = random_state(layout, np.random.default_rng(2))
        a = Action(4, 4, 0.0)
        g5 = backward(layout, params, state, a, 5.0)
        g100 = backward(layout, params, state, a, 100.0)
        assert np.array_equal(g5, g100)

    def test_out_of_bounds_action_rejected(self):
        layout = toy_layout()
        with pytest.raises(ValueError):
            backward(layout, init_params(layout, 0), np.zeros((2, 8, 8)), Action(9, 0, 0.0), 1.0)

    def test_finite_difference_agreement(self):
        layout = toy_layout()
        rng = np.random.default_rng(2024)
        params = init_params(layout, 77)
        state = random_state(layout, rng)
        action = Action(3, 5, 0.0)
        q = forward(layout, params, state)[action.y, action.x]
        target = q - 0.3  # xi = 0.3, inside the smooth Huber band
        analytic = backward(layout, params, state, action, td_error(q, target))
        numeric = finite_difference_grad(layout, params, state, action, target)
        assert grad_agreement(analytic, numeric) >= 0.99

    def test_state_outside_receptive_field_does_not_matter(self):
        # receptive radius of the stack is 2 cells; poking the state
        # further away must leave the routed gradient untouched
        layout = default_layout()
        params = init_params(layout, 5)
        rng = np.random.default_rng(5)
        state = random_state(layout, rng)
        action = Action(8, 8, 0.0)
        base = backward(layout, params, state, action, 0.7)
        poked = state.copy()
        poked[:, 0, 0] = 0.99
        poked[:, 15, 15] = 0.01
        assert np.array_equal(base, backward(layout, params, poked, action, 0.7))


class TestApplySgd:
    def test_zero_grad_unchanged(self):
        p = np.array([1.0, 2.0])
        assert np.array_equal(apply_sgd(p, np.zeros(2), 0.1), p)

    def test_elementwise_arithmetic(self):
        out = apply_sgd(np.array([1.0, 1.0]), np.array([1.0, -1.0]), 0.0001)
        assert np.allclose(out, [0.9999, 1.0001], atol=1e-15)

    def test_zero_alpha_unchanged(self):
        p = np.array([3.0, -4.0])
        assert np.array_equal(apply_sgd(p, np.array([5.0, 5.0]), 0.0), p)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(LayoutMismatchError):
            apply_sgd(np.zeros(3), np.zeros(4), 0.1)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        layout = default_layout()
        params = init_params(layout, 99)
        path = tmp_path / "agent0.params"
        save_params(path, params, layout)
        loaded, loaded_layout = load_params(path)
        assert loaded_layout == layout
        assert np.array_equal(loaded, params)
        assert loaded.tobytes() == params.tobytes()
