"""Multiplier recursion, parameter gradients, and the finite-difference check."""

import gc
import weakref

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import stepseg.regularizer
from stepseg.adjoint import (
    AdjointState,
    GradientBundle,
    backward,
    gradcheck,
    gradient,
    objective_value,
    terminal_multiplier,
)
from stepseg.losses import softmax_xent_matrix
from stepseg.network import (
    NetworkParams,
    SelectionSet,
    forward,
    select_matrix,
)
from stepseg.tensor_ops import activate_deriv, conv2d_adjoint_input

from oracles import central_fd, inner


def small_instance(seed, bands=2, width=3, num_classes=2, steps=2, ksize=3,
                   height=6, width_px=5, n_labels=6, scale=0.4,
                   activation="tanh", h=1.0):
    rng = np.random.default_rng(seed)
    params = NetworkParams(
        lift=scale * rng.standard_normal((width, bands, 1, 1)),
        layers=tuple(scale * rng.standard_normal((width, width, ksize, ksize))
                     for _ in range(steps)),
        project=scale * rng.standard_normal((num_classes, width, 1, 1)),
        h=h,
        activation=activation,
    )
    data = rng.standard_normal((bands, height, width_px))
    flat = rng.permutation(height * width_px)[:n_labels]
    q = SelectionSet(rows=flat // width_px, cols=flat % width_px,
                     classes=rng.integers(0, num_classes, size=n_labels))
    return params, data, q


def bundle_stacks(bundle):
    return [bundle.lift, *bundle.layers, bundle.project]


class TestTerminalMultiplier:
    def test_empty_selection_zero_alpha(self):
        params, data, _ = small_instance(0)
        trace = forward(params, data)
        empty = SelectionSet(rows=[], cols=[], classes=[])
        terminal = terminal_multiplier(trace, empty, alpha=0.0)
        assert terminal.loss == 0.0
        np.testing.assert_array_equal(terminal.output_cotangent,
                                      np.zeros_like(trace.output))
        np.testing.assert_array_equal(terminal.multiplier,
                                      np.zeros_like(trace.states[-1]))

    def test_loss_cotangent_lives_on_labeled_pixels_only(self):
        params, data, _ = small_instance(1)
        trace = forward(params, data)
        q = SelectionSet(rows=[2], cols=[3], classes=[1])
        terminal = terminal_multiplier(trace, q, alpha=0.0)
        support = np.any(terminal.output_cotangent != 0.0, axis=0)
        assert support[2, 3]
        assert support.sum() == 1
        _, grad = softmax_xent_matrix(trace.output[:, 2:3, 3], np.array([1]))
        np.testing.assert_allclose(terminal.output_cotangent[:, 2, 3],
                                   grad[:, 0], rtol=0, atol=1e-15)

    def test_multiplier_is_project_transpose_of_cotangent(self):
        params, data, q = small_instance(2)
        trace = forward(params, data)
        terminal = terminal_multiplier(trace, q, alpha=0.7)
        # project is 1x1, so p_n is a plain channel mix by project^T.
        want = np.einsum("kc,khw->chw", params.project[:, :, 0, 0],
                         terminal.output_cotangent)
        np.testing.assert_allclose(terminal.multiplier, want,
                                   rtol=0, atol=1e-12)

    def test_alpha_zero_matches_reg_free_cotangent(self):
        params, data, q = small_instance(3)
        trace = forward(params, data)
        a = terminal_multiplier(trace, q, alpha=0.0)
        b = terminal_multiplier(trace, q, alpha=0.0, reg="none")
        np.testing.assert_array_equal(a.output_cotangent, b.output_cotangent)

    def test_reg_value_reported_even_when_alpha_zero(self):
        params, data, q = small_instance(4)
        trace = forward(params, data)
        terminal = terminal_multiplier(trace, q, alpha=0.0)
        value, _ = stepseg.regularizer.evaluate("quadratic", trace.output)
        assert terminal.reg_value == value

    def test_bad_alpha_rejected(self):
        params, data, q = small_instance(5)
        trace = forward(params, data)
        for alpha in (-1.0, float("nan"), float("inf")):
            with pytest.raises(ValueError, match="alpha"):
                terminal_multiplier(trace, q, alpha=alpha)


class TestBackward:
    def test_zero_terminal_gives_zero_gradients(self):
        params, data, _ = small_instance(6)
        trace = forward(params, data)
        terminal = AdjointState(
            multiplier=np.zeros_like(trace.states[-1]),
            output_cotangent=np.zeros_like(trace.output),
            loss=0.0, reg_value=0.0, alpha=0.0)
        bundle = backward(trace, params, terminal)
        for stack in bundle_stacks(bundle):
            np.testing.assert_array_equal(stack, np.zeros_like(stack))

    def test_multipliers_constant_when_layers_are_zero(self):
        # With K_j = 0 and tanh, f'(0) = 1 but K^T annihilates the update,
        # so every multiplier equals p_n.
        params, data, q = small_instance(7)
        params = NetworkParams(lift=params.lift,
                               layers=tuple(np.zeros_like(k)
                                            for k in params.layers),
                               project=params.project)
        trace = forward(params, data)
        terminal = terminal_multiplier(trace, q, alpha=0.2)
        seen = {}
        backward(trace, params, terminal,
                 multiplier_hook=lambda j, p: seen.__setitem__(j, p.copy()))
        for j in range(len(params.layers) + 1):
            np.testing.assert_array_equal(seen[j], terminal.multiplier)

    def test_hook_sees_descending_steps_once_each(self):
        params, data, q = small_instance(8, steps=3)
        trace = forward(params, data)
        calls = []
        backward(trace, params, terminal_multiplier(trace, q, alpha=0.1),
                 multiplier_hook=lambda j, p: calls.append(j))
        assert calls == [3, 2, 1, 0]

    def test_recursion_is_reproducible_from_hooked_multipliers(self):
        # p_{j-1} must equal p_j - h * K_j^T(f'(z_j) * p_j) bitwise, and
        # p_n must equal project^T applied to the output cotangent. This is
        # the stationarity of the underlying Lagrangian in each state.
        params, data, q = small_instance(9, steps=4)
        trace = forward(params, data)
        terminal = terminal_multiplier(trace, q, alpha=0.5)
        seen = {}
        backward(trace, params, terminal,
                 multiplier_hook=lambda j, p: seen.__setitem__(j, p.copy()))
        np.testing.assert_array_equal(
            seen[4], conv2d_adjoint_input(terminal.output_cotangent,
                                          params.project))
        for j in range(4, 0, -1):
            weighted = activate_deriv(trace.preacts[j - 1],
                                      params.activation) * seen[j]
            stepped = seen[j] - params.h * conv2d_adjoint_input(
                weighted, params.layers[j - 1])
            np.testing.assert_array_equal(seen[j - 1], stepped)

    def test_backward_keeps_constant_multiplier_storage(self):
        # Only the working multiplier pair may stay alive; earlier ones
        # must be collectable as soon as the sweep moves past them.
        params, data, q = small_instance(10, steps=6)
        trace = forward(params, data)
        refs = []
        backward(trace, params, terminal_multiplier(trace, q, alpha=0.3),
                 multiplier_hook=lambda j, p: refs.append(weakref.ref(p)))
        gc.collect()
        alive = sum(1 for r in refs if r() is not None)
        assert alive <= 2

    def test_state_count_mismatch_rejected(self):
        params, data, q = small_instance(11, steps=2)
        trace = forward(params, data)
        longer = NetworkParams(lift=params.lift,
                               layers=params.layers + params.layers,
                               project=params.project)
        with pytest.raises(ValueError, match="states"):
            backward(trace, longer, terminal_multiplier(trace, q, alpha=0.0))

    def test_alpha_enters_through_terminal_arrays_only(self):
        # Feeding backward the same terminal arrays with a different alpha
        # scalar must give bitwise-identical parameter gradients: the
        # regularizer touches the recursion through the last state alone.
        params, data, q = small_instance(12)
        trace = forward(params, data)
        terminal = terminal_multiplier(trace, q, alpha=0.25)
        relabeled = AdjointState(multiplier=terminal.multiplier,
                                 output_cotangent=terminal.output_cotangent,
                                 loss=terminal.loss,
                                 reg_value=terminal.reg_value,
                                 alpha=123.0)
        a = backward(trace, params, terminal)
        b = backward(trace, params, relabeled)
        for ga, gb in zip(bundle_stacks(a), bundle_stacks(b)):
            np.testing.assert_array_equal(ga, gb)


class TestGradientAgainstFiniteDifferences:
    def objective_fn(self, params, data, q, alpha):
        def with_lift(lift):
            p = NetworkParams(lift=lift, layers=params.layers,
                              project=params.project, h=params.h,
                              activation=params.activation)
            return objective_value(p, data, q, alpha)

        def with_layer(j):
            def fn(k):
                layers = list(params.layers)
                layers[j] = k
                p = NetworkParams(lift=params.lift, layers=tuple(layers),
                                  project=params.project, h=params.h,
                                  activation=params.activation)
                return objective_value(p, data, q, alpha)
            return fn

        def with_project(project):
            p = NetworkParams(lift=params.lift, layers=params.layers,
                              project=project, h=params.h,
                              activation=params.activation)
            return objective_value(p, data, q, alpha)

        return with_lift, with_layer, with_project

    def assert_full_fd_match(self, params, data, q, alpha, step, tol):
        bundle = gradient(params, data, q, alpha)
        with_lift, with_layer, with_project = self.objective_fn(
            params, data, q, alpha)
        checks = [(bundle.lift, central_fd(with_lift, params.lift, step))]
        for j, k in enumerate(params.layers):
            checks.append((bundle.layers[j], central_fd(with_layer(j), k, step)))
        checks.append((bundle.project,
                       central_fd(with_project, params.project, step)))
        for analytic, fd in checks:
            err = np.abs(analytic - fd) / (np.abs(fd) + 1e-12)
            assert np.max(err) < tol

    def test_full_fd_tanh_with_regularizer(self):
        params, data, q = small_instance(13, width=2, steps=2, height=5,
                                         width_px=4)
        self.assert_full_fd_match(params, data, q, alpha=0.37,
                                  step=1e-6, tol=1e-6)

    def test_full_fd_tanh_loss_only(self):
        params, data, q = small_instance(14, width=2, steps=2, height=5,
                                         width_px=4)
        self.assert_full_fd_match(params, data, q, alpha=0.0,
                                  step=1e-6, tol=1e-6)

    def test_full_fd_regularizer_only(self):
        params, data, _ = small_instance(15, width=2, steps=2, height=5,
                                         width_px=4)
        empty = SelectionSet(rows=[], cols=[], classes=[])
        self.assert_full_fd_match(params, data, empty, alpha=1.0,
                                  step=1e-6, tol=1e-6)

    def test_full_fd_relu_away_from_kink(self):
        params, data, q = small_instance(16, width=2, steps=2, height=5,
                                         width_px=4, activation="relu")
        trace = forward(params, data)
        margin = min(float(np.min(np.abs(z))) for z in trace.preacts)
        assert margin > 1e-4, "fixture drifted onto the relu kink"
        self.assert_full_fd_match(params, data, q, alpha=0.2,
                                  step=1e-7, tol=1e-5)

    def test_objective_matches_bundle_decomposition(self):
        params, data, q = small_instance(17)
        for alpha in (0.0, 0.6, 4.0):
            bundle = gradient(params, data, q, alpha)
            direct = objective_value(params, data, q, alpha)
            assert abs(bundle.objective - direct) < 1e-12
            assert abs(bundle.objective
                       - (bundle.loss + alpha * bundle.regularizer)) < 1e-12


class TestAlphaAffinity:
    def test_gradient_is_affine_in_alpha(self):
        params, data, q = small_instance(18)
        g0 = gradient(params, data, q, 0.0)
        g1 = gradient(params, data, q, 1.0)
        for alpha in (0.25, 3.7, 10.0):
            ga = gradient(params, data, q, alpha)
            for got, base, unit in zip(bundle_stacks(ga), bundle_stacks(g0),
                                       bundle_stacks(g1)):
                want = base + alpha * (unit - base)
                scale = np.max(np.abs(want)) + 1e-12
                assert np.max(np.abs(got - want)) / scale < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.floats(min_value=0.0, max_value=50.0, allow_nan=False))
    def test_affinity_property(self, alpha):
        params, data, q = small_instance(19, width=2, steps=1,
                                         height=4, width_px=4)
        g0 = gradient(params, data, q, 0.0)
        g1 = gradient(params, data, q, 1.0)
        ga = gradient(params, data, q, alpha)
        for got, base, unit in zip(bundle_stacks(ga), bundle_stacks(g0),
                                   bundle_stacks(g1)):
            want = base + alpha * (unit - base)
            scale = np.max(np.abs(want)) + 1e-12
            assert np.max(np.abs(got - want)) / scale < 1e-9


class TestGradcheck:
    def test_passes_on_correct_gradients(self):
        params, data, q = small_instance(20)
        for alpha in (0.0, 0.5):
            assert gradcheck(params, data, q, alpha, seed=3) < 1e-6

    def test_full_coordinate_sweep(self):
        params, data, q = small_instance(21, width=2, steps=1,
                                         height=4, width_px=4)
        assert gradcheck(params, data, q, 0.5, num_coords=None) < 1e-6

    def test_does_not_mutate_params(self):
        params, data, q = small_instance(22)
        lift_before = params.lift.copy()
        layer_before = params.layers[0].copy()
        gradcheck(params, data, q, 0.5, seed=1)
        np.testing.assert_array_equal(params.lift, lift_before)
        np.testing.assert_array_equal(params.layers[0], layer_before)

    def test_is_deterministic_for_fixed_seed(self):
        params, data, q = small_instance(23)
        assert gradcheck(params, data, q, 0.5, seed=9) == \
            gradcheck(params, data, q, 0.5, seed=9)

    def test_detects_a_wrong_regularizer_gradient(self, monkeypatch):
        # Sanity check on the checker itself: corrupt one ingredient and
        # the reported error must blow past the acceptance threshold.
        params, data, q = small_instance(24)
        true_grad = stepseg.regularizer.smoother_grad
        monkeypatch.setattr(stepseg.regularizer, "smoother_grad",
                            lambda y: 2.0 * true_grad(y))
        assert gradcheck(params, data, q, alpha=0.5, seed=5) > 1e-2

    def test_threshold_separation(self):
        # The criterion threshold sits well above what correct code
        # produces; assert an order-of-magnitude cushion.
        params, data, q = small_instance(25)
        assert gradcheck(params, data, q, 0.5, seed=7) < 1e-7
