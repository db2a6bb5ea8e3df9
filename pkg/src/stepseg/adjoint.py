"""Gradient of the training objective by a backward multiplier recursion.

For one labeled scene the objective is

    J = loss(selected output, classes) + alpha * R(output),  output = P y_n

with states y_j defined by the forward recursion y_j = y_{j-1} - h f(K_j y_{j-1}).
The multiplier p_j is dJ/dy_j. It starts from the output cotangent

    g_out = scatter(per-pixel loss gradients) + alpha * grad R(output)
    p_n   = P^T g_out

and runs backward, yielding each kernel gradient on the fly:

    grad K_j = -h * adjoint_weights(f'(K_j y_{j-1}) * p_j, y_{j-1})
    p_{j-1}  = p_j - h * K_j^T (f'(K_j y_{j-1}) * p_j)
    grad P   = adjoint_weights(g_out, y_n)
    grad L   = adjoint_weights(p_0, data)

Only the current multiplier pair is alive at any point in the sweep;
alpha enters the recursion solely through the terminal cotangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import regularizer
from .losses import softmax_xent_matrix
from .network import (
    ForwardTrace,
    NetworkParams,
    SelectionSet,
    forward,
    scatter_into,
    select_matrix,
)
from .tensor_ops import activate_deriv, conv2d_adjoint_input, conv2d_adjoint_weights


@dataclass(frozen=True)
class AdjointState:
    """Terminal multiplier plus what backward needs to finish the job.

    multiplier is p_n (width channels); output_cotangent is dJ/d(output)
    (num_classes channels), kept for the project-kernel gradient. The
    scalars loss, reg_value (unscaled R), and alpha ride along so the
    gradient bundle can report objective components.
    """

    multiplier: np.ndarray
    output_cotangent: np.ndarray
    loss: float
    reg_value: float
    alpha: float


@dataclass(frozen=True)
class GradientBundle:
    """Parameter gradients mirroring NetworkParams, plus objective parts."""

    lift: np.ndarray
    layers: tuple[np.ndarray, ...]
    project: np.ndarray
    loss: float
    regularizer: float
    alpha: float

    @property
    def objective(self) -> float:
        return self.loss + self.alpha * self.regularizer


def terminal_multiplier(trace: ForwardTrace, q: SelectionSet, alpha: float,
                        reg: str = "quadratic") -> AdjointState:
    """Build p_n from the loss gradients at labeled pixels plus alpha * grad R."""
    if not (math.isfinite(alpha) and alpha >= 0.0):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    g_out = np.zeros_like(trace.output)
    if len(q):
        loss, loss_grad = softmax_xent_matrix(select_matrix(trace.output, q),
                                              q.classes)
        scatter_into(g_out, q, loss_grad)
    else:
        loss = 0.0
    reg_value, reg_grad = regularizer.evaluate(reg, trace.output)
    if alpha != 0.0:
        g_out += alpha * reg_grad
    p_n = conv2d_adjoint_input(g_out, trace.params.project)
    return AdjointState(multiplier=p_n, output_cotangent=g_out,
                        loss=loss, reg_value=reg_value, alpha=alpha)


def backward(trace: ForwardTrace, params: NetworkParams, terminal: AdjointState,
             multiplier_hook: Optional[Callable[[int, np.ndarray], None]] = None,
             ) -> GradientBundle:
    """Run the multiplier recursion, collecting all parameter gradients.

    multiplier_hook, if given, is called as hook(j, p_j) for j = n down
    to 0; backward itself never retains more than the working pair.
    """
    n = len(params.layers)
    if len(trace.states) != n + 1:
        raise ValueError(f"trace has {len(trace.states)} states, "
                         f"params expect {n + 1}")
    h = params.h
    act = params.activation
    project_grad = conv2d_adjoint_weights(terminal.output_cotangent,
                                          trace.states[n], 1, 1)
    p = terminal.multiplier
    if multiplier_hook is not None:
        multiplier_hook(n, p)
    layer_grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for j in range(n, 0, -1):
        k = params.layers[j - 1]
        y_prev = trace.states[j - 1]
        weighted = activate_deriv(trace.preacts[j - 1], act) * p
        layer_grads[j - 1] = -h * conv2d_adjoint_weights(
            weighted, y_prev, k.shape[2], k.shape[3])
        p = p - h * conv2d_adjoint_input(weighted, k)
        if multiplier_hook is not None:
            multiplier_hook(j - 1, p)
    lift_grad = conv2d_adjoint_weights(p, trace.data, 1, 1)
    return GradientBundle(lift=lift_grad, layers=tuple(layer_grads),
                          project=project_grad, loss=terminal.loss,
                          regularizer=terminal.reg_value, alpha=terminal.alpha)


def gradient(params: NetworkParams, data: np.ndarray, q: SelectionSet,
             alpha: float, reg: str = "quadratic") -> GradientBundle:
    """forward, terminal_multiplier, backward in one call."""
    trace = forward(params, data)
    return backward(trace, params, terminal_multiplier(trace, q, alpha, reg))


def objective_value(params: NetworkParams, data: np.ndarray, q: SelectionSet,
                    alpha: float, reg: str = "quadratic") -> float:
    """The scalar J = loss + alpha * R, with no gradient work."""
    trace = forward(params, data)
    if len(q):
        loss, _ = softmax_xent_matrix(select_matrix(trace.output, q), q.classes)
    else:
        loss = 0.0
    reg_value, _ = regularizer.evaluate(reg, trace.output)
    return loss + alpha * reg_value


def gradcheck(params: NetworkParams, data: np.ndarray, q: SelectionSet,
              alpha: float, reg: str = "quadratic", fd_step: float = 1e-5,
              num_coords: Optional[int] = 60, seed: int = 0) -> float:
    """Max relative error of the adjoint gradient against central differences.

    Compares |adjoint - fd| / (|fd| + 1e-12) over a seeded sample of
    num_coords parameter coordinates (all coordinates if None).
    """
    bundle = gradient(params, data, q, alpha, reg)
    analytic = ([bundle.lift.reshape(-1)]
                + [g.reshape(-1) for g in bundle.layers]
                + [bundle.project.reshape(-1)])
    work = NetworkParams(lift=params.lift.copy(),
                         layers=tuple(k.copy() for k in params.layers),
                         project=params.project.copy(),
                         h=params.h, activation=params.activation)
    flats = ([work.lift.reshape(-1)]
             + [k.reshape(-1) for k in work.layers]
             + [work.project.reshape(-1)])
    sizes = [f.shape[0] for f in flats]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if num_coords is None or num_coords >= total:
        coords = np.arange(total)
    else:
        coords = np.random.default_rng(seed).choice(total, size=num_coords,
                                                    replace=False)
    max_err = 0.0
    for coord in coords:
        stack = int(np.searchsorted(offsets, coord, side="right")) - 1
        i = int(coord - offsets[stack])
        flat = flats[stack]
        orig = flat[i]
        flat[i] = orig + fd_step
        f_plus = objective_value(work, data, q, alpha, reg)
        flat[i] = orig - fd_step
        f_minus = objective_value(work, data, q, alpha, reg)
        flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * fd_step)
        err = abs(float(analytic[stack][i]) - fd) / (abs(fd) + 1e-12)
        max_err = max(max_err, err)
    return max_err
