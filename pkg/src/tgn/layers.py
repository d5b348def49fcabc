"""Trainable function families: MLP messages, LSTM updates, init and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import (
    DTYPE,
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat_cols,
    layer_norm,
    matmul,
    mul,
    relu,
    sigmoid,
    tanh,
)

_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "linear": None}


@dataclass
class MLPParams:
    weights: list[Tensor]
    biases: list[Tensor]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("MLP needs one bias per weight and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (1, w.cols):
                raise ShapeError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].cols != w.rows:
                raise ShapeError(f"layer {i}: input {w.rows} does not chain from {self.weights[i - 1].cols}")
        for tag in (self.hidden_activation, self.output_activation):
            if tag not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].rows

    @property
    def out_dim(self) -> int:
        return self.weights[-1].cols

    def named(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out


def mlp_forward(p: MLPParams, x: Tensor) -> Tensor:
    if x.cols != p.in_dim:
        raise ShapeError(f"MLP expects {p.in_dim} input columns, got {x.cols}")
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        x = add_bias(matmul(x, w), b)
        act = _ACTIVATIONS[p.output_activation if i == last else p.hidden_activation]
        if act is not None:
            x = act(x)
    return x


@dataclass
class LSTMCellParams:
    """Gate weights act on the concatenation [h | input]."""

    w_input: Tensor
    w_forget: Tensor
    w_cell: Tensor
    w_output: Tensor
    b_input: Tensor
    b_forget: Tensor
    b_cell: Tensor
    b_output: Tensor
    layer_norm: bool = False

    def __post_init__(self):
        n = self.w_input.cols
        rows = self.w_input.rows
        for w in (self.w_forget, self.w_cell, self.w_output):
            if w.shape != (rows, n):
                raise ShapeError("all LSTM gate weights must share one shape")
        for b in (self.b_input, self.b_forget, self.b_cell, self.b_output):
            if b.shape != (1, n):
                raise ShapeError("LSTM gate biases must be 1 x hidden_dim")
        if rows < n:
            raise ShapeError("gate weights must cover hidden_dim + input_dim rows")

    @property
    def hidden_dim(self) -> int:
        return self.w_input.cols

    @property
    def input_dim(self) -> int:
        return self.w_input.rows - self.w_input.cols

    def named(self) -> dict[str, Tensor]:
        return {
            "w_input": self.w_input,
            "w_forget": self.w_forget,
            "w_cell": self.w_cell,
            "w_output": self.w_output,
            "b_input": self.b_input,
            "b_forget": self.b_forget,
            "b_cell": self.b_cell,
            "b_output": self.b_output,
        }


def lstm_step(p: LSTMCellParams, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns the new output h and the new cell state c."""
    n = p.hidden_dim
    if h.shape != c.shape or h.cols != n or x.rows != h.rows or x.cols != p.input_dim:
        raise ShapeError(
            f"lstm_step: input {x.shape}, h {h.shape}, c {c.shape} "
            f"do not fit a cell with input {p.input_dim}, hidden {n}"
        )
    z = concat_cols([h, x]) if x.cols else h

    def gate(w, b):
        pre = add_bias(matmul(z, w), b)
        return layer_norm(pre) if p.layer_norm else pre

    i = sigmoid(gate(p.w_input, p.b_input))
    f = sigmoid(gate(p.w_forget, p.b_forget))
    g = tanh(gate(p.w_cell, p.b_cell))
    o = sigmoid(gate(p.w_output, p.b_output))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(layer_norm(c_new) if p.layer_norm else c_new))
    return h_new, c_new


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros((1, n), dtype=DTYPE), requires_grad=True)


def init_mlp(rng: np.random.Generator, dims: Sequence[int], hidden_activation="relu", output_activation="linear") -> MLPParams:
    if len(dims) < 2 or min(dims) <= 0:
        raise ValueError(f"MLP dims must be positive and at least two, got {dims}")
    weights = [xavier_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    biases = [_zeros(b) for b in dims[1:]]
    return MLPParams(weights, biases, hidden_activation, output_activation)


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int, layer_norm: bool = False) -> LSTMCellParams:
    if hidden_dim <= 0 or input_dim < 0:
        raise ValueError("LSTM dims must be positive")
    rows = hidden_dim + input_dim
    ws = [xavier_uniform(rng, rows, hidden_dim) for _ in range(4)]
    b_forget = Tensor(np.ones((1, hidden_dim)), requires_grad=True)
    return LSTMCellParams(ws[0], ws[1], ws[2], ws[3], _zeros(hidden_dim), b_forget, _zeros(hidden_dim), _zeros(hidden_dim), layer_norm)


@dataclass
class OptimizerState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: OptimizerState, params: Mapping[str, Tensor], grads: Mapping[str, Tensor | np.ndarray]
) -> tuple[dict[str, Tensor], OptimizerState]:
    """Adam with bias correction.

    Parameter tensors get fresh arrays, so earlier snapshots of ``.data`` stay
    valid. Returns the same tensor objects and the advanced state.
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    state.step = t
    return dict(params), state


@dataclass
class TGNParams:
    """Message MLPs keyed by message name and LSTM cells keyed by updated type."""

    messages: dict[str, MLPParams]
    updates: dict[str, LSTMCellParams]

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self.messages.items():
            out.update({f"msg/{name}/{k}": v for k, v in p.named().items()})
        for name, p in self.updates.items():
            out.update({f"upd/{name}/{k}": v for k, v in p.named().items()})
        return out


def init_params(plan, seed, mlp_layers: int = 3, layer_norm: bool = False) -> TGNParams:
    """Fresh parameters for a compiled plan.

    Each message MLP maps n_from -> n_to through ``mlp_layers`` layers whose
    hidden width is n_to. ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mlp_layers < 1:
        raise ValueError("an MLP needs at least one layer")
    messages = {}
    for name, (n_from, n_to) in plan.message_dims.items():
        messages[name] = init_mlp(rng, [n_from] + [n_to] * mlp_layers)
    updates = {}
    for t in plan.updated_types:
        d, n = plan.lstm_dims(t)
        updates[t] = init_lstm(rng, d, n, layer_norm)
    return TGNParams(messages, updates)
