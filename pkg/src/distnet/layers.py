"""Parameterized layers and the Adam optimizer.

Layers are plain containers of Tensor parameters plus a forward method;
they are only mutated by the optimizer inside a single training thread.
Initialization is fan-in-scaled uniform (variance 1/fan_in) with zero
biases, deterministic for a given numpy Generator.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .tensor import Tensor

CHECKPOINT_FORMAT = "distnet-checkpoint-v1"


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "selu":
        return tt.selu(x)
    if activation == "identity":
        return x
    raise ConfigError(f"unknown activation {activation!r}")


class ConvLayer:
    """k x k convolution (stride 1) with bias and selu activation."""

    def __init__(self, kernels: Tensor, bias: Tensor, padding: str = "same",
                 activation: str = "selu"):
        k = kernels.shape[0]
        if padding == "same" and k % 2 == 0:
            raise ConfigError(f"same padding needs an odd kernel, got k={k}")
        self.kernels = kernels
        self.bias = bias
        self.padding = padding
        self.activation = activation

    @classmethod
    def init(cls, rng, k: int, c_in: int, c_out: int, padding: str = "same") -> "ConvLayer":
        kernels = fan_in_uniform(rng, (k, k, c_in, c_out), fan_in=k * k * c_in)
        return cls(kernels, tt.zeros((c_out,), requires_grad=True), padding)

    @property
    def c_in(self) -> int:
        return self.kernels.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernels.shape[3]

    def forward(self, x: Tensor) -> Tensor:
        return _activate(tt.conv2d(x, self.kernels, self.bias, self.padding),
                         self.activation)

    def parameters(self):
        return [("kernels", self.kernels), ("bias", self.bias)]


def conv_stack_forward(x: Tensor, layers: list[ConvLayer]) -> Tensor:
    """Chain of conv layers; validates the channel hand-off."""
    c = x.shape[2]
    for i, layer in enumerate(layers):
        if layer.c_in != c:
            raise ConfigError(
                f"conv layer {i} expects {layer.c_in} channels, got {c}"
            )
        x = layer.forward(x)
        c = layer.c_out
    return x


class GRUCell:
    """Gated recurrent unit: update/reset gates plus candidate state."""

    def __init__(self, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h):
        self.w_z, self.w_r, self.w_h = w_z, w_r, w_h
        self.u_z, self.u_r, self.u_h = u_z, u_r, u_h
        self.b_z, self.b_r, self.b_h = b_z, b_r, b_h
        d_in, d_h = w_z.shape
        for w in (w_r, w_h):
            if w.shape != (d_in, d_h):
                raise ConfigError("GRU input weights disagree on shape")
        for u in (u_z, u_r, u_h):
            if u.shape != (d_h, d_h):
                raise ConfigError("GRU recurrent weights disagree on shape")
        for b in (b_z, b_r, b_h):
            if b.shape != (d_h,):
                raise ConfigError("GRU bias shape mismatch")

    @classmethod
    def init(cls, rng, input_dim: int, hidden: int) -> "GRUCell":
        def w():
            return fan_in_uniform(rng, (input_dim, hidden), fan_in=input_dim)

        def u():
            return fan_in_uniform(rng, (hidden, hidden), fan_in=hidden)

        def b():
            return tt.zeros((hidden,), requires_grad=True)

        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b())

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_z.shape[1]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape != (self.input_dim,) or h.shape != (self.hidden,):
            raise DimensionError(
                f"gru_step: x {x.shape} / h {h.shape} do not match cell "
                f"({self.input_dim}, {self.hidden})"
            )
        z = tt.sigmoid(x @ self.w_z + h @ self.u_z + self.b_z)
        r = tt.sigmoid(x @ self.w_r + h @ self.u_r + self.b_r)
        h_cand = tt.tanh(x @ self.w_h + tt.mul(r, h) @ self.u_h + self.b_h)
        return tt.mul(1.0 - z, h) + tt.mul(z, h_cand)

    def unroll(self, inputs: Tensor, h0: Tensor | None = None) -> Tensor:
        """(T, input_dim) -> (T, hidden); keeps every hidden state."""
        if inputs.data.ndim != 2 or inputs.shape[0] < 1:
            raise ContractError(f"gru_unroll needs (T >= 1, input_dim), got {inputs.shape}")
        h = h0 if h0 is not None else tt.zeros((self.hidden,))
        states = []
        for t in range(inputs.shape[0]):
            h = self.step(_row(inputs, t), h)
            states.append(h)
        return tt.stack_rows(states)

    def parameters(self):
        return [("w_z", self.w_z), ("w_r", self.w_r), ("w_h", self.w_h),
                ("u_z", self.u_z), ("u_r", self.u_r), ("u_h", self.u_h),
                ("b_z", self.b_z), ("b_r", self.b_r), ("b_h", self.b_h)]


def _row(mat: Tensor, i: int) -> Tensor:
    """Differentiable row extraction from a (T, d) matrix."""
    t, d = mat.shape

    def grad_fn(g):
        full = np.zeros((t, d))
        full[i] = g
        return (full,)

    return tt._make("row", mat.data[i].copy(), (mat,), grad_fn)


class DenseLayer:
    """Affine map with optional selu; also usable along the time axis."""

    def __init__(self, weight: Tensor, bias: Tensor, activation: str = "selu"):
        if weight.shape[1] != bias.shape[0]:
            raise ConfigError(
                f"dense bias length {bias.shape[0]} != output dim {weight.shape[1]}"
            )
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, activation: str = "selu") -> "DenseLayer":
        return cls(fan_in_uniform(rng, (d_in, d_out), fan_in=d_in),
                   tt.zeros((d_out,), requires_grad=True), activation)

    def forward(self, x: Tensor) -> Tensor:
        return _activate(x @ self.weight + self.bias, self.activation)

    def forward_time(self, e: Tensor) -> Tensor:
        """Map the time axis of (T, d) to (out, d), features untouched.

        The bias is per output time step, broadcast across features via an
        explicit rank-1 product (keeps the no-implicit-broadcast rule).
        """
        t_in, t_out = self.weight.shape
        if e.shape[0] != t_in:
            raise DimensionError(
                f"time-axis dense expects {t_in} input steps, got {e.shape[0]}"
            )
        mixed = tt.transpose(self.weight) @ e
        ones_row = tt.ones((1, e.shape[1]))
        bias_mat = tt.reshape(self.bias, (t_out, 1)) @ ones_row
        return _activate(mixed + bias_mat, self.activation)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Embedding:
    """Learned lookup table for categorical ids."""

    def __init__(self, table: Tensor):
        self.table = table

    @classmethod
    def init(cls, rng, vocab: int, dim: int) -> "Embedding":
        return cls(fan_in_uniform(rng, (vocab, dim), fan_in=dim))

    @property
    def vocab(self) -> int:
        return self.table.shape[0]

    def lookup(self, ids) -> Tensor:
        return tt.embed_rows(self.table, ids)

    def parameters(self):
        return [("table", self.table)]


class Adam:
    """Adam with bias correction over a named parameter list."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self) -> None:
        """One update from the gradients accumulated on the parameters."""
        self.step_count += 1
        t = self.step_count
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** t)
            v_hat = self.v[i] / (1 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


def save_checkpoint(path, params: dict[str, Tensor | np.ndarray], meta: dict) -> None:
    """JSON checkpoint with hex-encoded float64 payloads (bit-exact)."""
    body = {}
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data if isinstance(p, Tensor) else p,
                                   dtype="<f8")
        body[name] = {"shape": list(arr.shape), "data": arr.tobytes().hex()}
    doc = {"format": CHECKPOINT_FORMAT, "meta": meta, "params": body}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(
            f"checkpoint version mismatch: {doc.get('format')!r} != {CHECKPOINT_FORMAT!r}"
        )
    params = {}
    for name, entry in doc["params"].items():
        arr = np.frombuffer(bytes.fromhex(entry["data"]), dtype="<f8")
        params[name] = arr.reshape(entry["shape"]).copy()
    return params, doc["meta"]
