"""Exact derivatives of the network.

The time derivative of the outputs is carried forward alongside the
activations (the input is a scalar, so one tangent per point suffices):

    dz = da_prev @ W,    da = (1 - tanh(z)**2) * dz

Parameter gradients come from a reverse sweep through both the primal and
the tangent recurrences. Primal and tangent rows are stacked into a single
``(2n, width)`` array per layer so that every layer costs one matmul each
way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .esd_model import EsdParameters, rhs_array
from .mlp import MlpNetwork, flatten, forward, tanh_activation, unflatten

LOSS_NAMES = ("eq1", "eq2", "eq3", "eq4", "initial")


class TangentOutput(NamedTuple):
    value: np.ndarray
    tangent: np.ndarray


@dataclass(frozen=True)
class LossSpec:
    """A linear combination of the five loss components.

    ``coefficients`` weights (eq1, eq2, eq3, eq4, initial) in that order.
    """

    params: EsdParameters
    initial_state: tuple[float, float, float, float]
    t_initial: float = 0.0
    coefficients: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)

    @classmethod
    def total(cls, params, initial_state, t_initial=0.0, alpha=10.0, beta=1.0) -> "LossSpec":
        return cls(params, tuple(initial_state), t_initial, (alpha, alpha, alpha, alpha, beta))

    @classmethod
    def single(cls, name: str, params, initial_state, t_initial=0.0) -> "LossSpec":
        coeffs = [0.0] * 5
        coeffs[LOSS_NAMES.index(name)] = 1.0
        return cls(params, tuple(initial_state), t_initial, tuple(coeffs))

    def scaled(self, c: float) -> "LossSpec":
        return LossSpec(self.params, self.initial_state, self.t_initial,
                        tuple(c * k for k in self.coefficients))


def _times(batch) -> np.ndarray:
    times = np.asarray(getattr(batch, "times", batch), dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise ValueError("empty collocation batch")
    return times


def _tape(net: MlpNetwork, t: np.ndarray):
    """Forward pass keeping what the reverse sweep needs.

    Returns ``(inputs, acts, slopes, dzs, out, dout)`` where ``inputs[v]`` is
    the stacked ``[a; da]`` fed to layer ``v`` and ``slopes`` holds ``1 - a**2``.
    """
    n = t.shape[0]
    h = np.empty((2 * n, 1))
    np.multiply(net.input_scale, t, out=h[:n, 0])
    h[:n] += net.input_shift
    h[n:] = net.input_scale
    inputs, acts, slopes, dzs = [h], [], [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ w
        z = pre[:n]
        z += b
        if i == last:
            return inputs, acts, slopes, dzs, z, pre[n:]
        dz = pre[n:]
        h = np.empty_like(pre)
        a = tanh_activation(z, out=h[:n])
        s = np.multiply(a, a)
        np.subtract(1.0, s, out=s)
        np.multiply(s, dz, out=h[n:])
        inputs.append(h)
        acts.append(a)
        slopes.append(s)
        dzs.append(dz)


def forward_with_tangent(net: MlpNetwork, t) -> TangentOutput:
    """Outputs and their exact time derivatives at ``t`` (scalar or 1-D)."""
    t_arr = np.asarray(t, dtype=np.float64)
    value = forward(net, t_arr)
    n = t_arr.size
    h = net.input_scale * t_arr.reshape(-1, 1) + net.input_shift
    da = np.full((n, 1), net.input_scale)
    last = len(net.weights) - 1
    for i, w in enumerate(net.weights):
        dz = da @ w
        if i == last:
            da = dz
            break
        h = tanh_activation(h @ w + net.biases[i])
        da = (1.0 - h * h) * dz
    if t_arr.ndim == 0:
        return TangentOutput(value, da[0])
    return TangentOutput(value, da)


def _backward(net: MlpNetwork, tape, g_out: np.ndarray, g_dout: np.ndarray) -> np.ndarray:
    """Reverse sweep; returns the gradient in ``flatten`` order."""
    inputs, acts, slopes, dzs, _, _ = tape
    n = g_out.shape[0]
    n_layers = len(net.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    g_pre = np.concatenate([g_out, g_dout], axis=0)
    for i in range(n_layers - 1, -1, -1):
        grads_w[i] = inputs[i].T @ g_pre
        grads_b[i] = g_pre[:n].sum(axis=0)
        if i == 0:
            break
        g_h = g_pre @ net.weights[i].T
        g_a, g_da = g_h[:n], g_h[n:]
        a, s, dz = acts[i - 1], slopes[i - 1], dzs[i - 1]
        # d(da)/da = -2 a dz through the slope 1 - a**2
        tmp = np.multiply(a, dz)
        tmp *= g_da
        tmp *= -2.0
        g_a += tmp
        g_a *= s
        g_da *= s
        g_pre = g_h
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def _rhs_vjp(params: EsdParameters, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``g @ J`` row by row, J being the Jacobian of the right-hand side at ``x``."""
    p = params
    x1, x3 = x[:, 0], x[:, 2]
    g1, g2, g3, g4 = g[:, 0], g[:, 1], g[:, 2], g[:, 3]
    out = np.empty_like(x)
    out[:, 0] = (g1 * p.a1 * (1.0 - 2.0 * x1 / p.M)
                 + g2 * p.z3 * (p.N - 2.0 * x1 + x3)
                 + g3 * p.s1 * p.s2 * x3
                 + g4 * p.d1)
    out[:, 1] = -g1 * p.a2 - g2 * p.z1
    out[:, 2] = -g1 * p.a2 + g2 * (p.z3 * x1 - p.z2) + g3 * p.s1 * (p.s2 * x1 - p.s3)
    out[:, 3] = -g1 * p.d3 - g4 * p.d2
    return out


def loss_parts(net: MlpNetwork, batch, spec: LossSpec) -> np.ndarray:
    """The five loss components (eq1..eq4, initial) without gradients."""
    t = _times(batch)
    value, tangent = forward_with_tangent(net, t)
    resid = tangent - rhs_array(spec.params, value)
    y0 = forward(net, float(spec.t_initial))
    parts = np.empty(5)
    parts[:4] = np.mean(resid * resid, axis=0)
    parts[4] = np.sum((y0 - np.asarray(spec.initial_state)) ** 2)
    return parts


def loss_value(net: MlpNetwork, batch, spec: LossSpec) -> float:
    return float(np.dot(np.asarray(spec.coefficients), loss_parts(net, batch, spec)))


def _chunk_terms(net, t, spec, coeffs, n_total, with_initial):
    """Residual sums of squares over ``t`` and this block's share of the gradient."""
    n = t.shape[0]
    tape = _tape(net, np.append(t, float(spec.t_initial)) if with_initial else t)
    out, dout = tape[4], tape[5]
    y, dy = out[:n], dout[:n]
    resid = dy - rhs_array(spec.params, y)
    sums = np.sum(resid * resid, axis=0)

    g_res = resid * ((2.0 / n_total) * coeffs[:4])
    g_out = np.zeros_like(out)
    g_dout = np.zeros_like(dout)
    g_dout[:n] = g_res
    g_out[:n] = -_rhs_vjp(spec.params, y, g_res)
    dev0 = None
    if with_initial:
        dev0 = out[n] - np.asarray(spec.initial_state, dtype=np.float64)
        g_out[n] = 2.0 * coeffs[4] * dev0
    return sums, dev0, _backward(net, tape, g_out, g_dout)


def loss_and_parts_gradient(net: MlpNetwork, batch, spec: LossSpec, chunk_size: int | None = None,
                            map_fn=map):
    """Return ``(loss, parts, grad)`` for the combination described by ``spec``.

    With ``chunk_size`` the batch is cut into consecutive blocks of that many
    points and their contributions are added in block order. ``map_fn`` may
    evaluate the blocks concurrently (``executor.map``); the result depends on
    the block partition only, never on how the blocks were scheduled.
    """
    t = _times(batch)
    n = t.shape[0]
    size = n if chunk_size is None else int(chunk_size)
    if size < 1:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    coeffs = np.asarray(spec.coefficients, dtype=np.float64)
    blocks = [(t[s:s + size], s == 0) for s in range(0, n, size)]
    results = list(map_fn(lambda b: _chunk_terms(net, b[0], spec, coeffs, n, b[1]), blocks))

    sums, dev0, grad = results[0]
    for more, _, g in results[1:]:
        sums = sums + more
        grad = grad + g
    parts = np.empty(5)
    parts[:4] = sums / n
    parts[4] = np.sum(dev0 * dev0)
    loss = float(np.dot(coeffs, parts))
    return loss, parts, grad


def loss_gradient(net: MlpNetwork, batch, spec: LossSpec):
    """Loss value and its exact gradient with respect to every parameter."""
    loss, _, grad = loss_and_parts_gradient(net, batch, spec)
    return loss, grad


def finite_diff_gradient(net: MlpNetwork, batch, spec: LossSpec, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one parameter at a time. Test oracle only."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    p = flatten(net)
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        up = loss_value(unflatten(net, p), batch, spec)
        p[i] = orig - h
        down = loss_value(unflatten(net, p), batch, spec)
        p[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def finite_diff_tangent(net: MlpNetwork, t, h: float = 1e-5):
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    t = np.asarray(t, dtype=np.float64)
    return (forward(net, t + h) - forward(net, t - h)) / (2.0 * h)
