"""Layer specifications and their torch implementations.

Feature maps use the (batch, channels, height, width) layout throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import torch
import torch.nn as nn
import torch.nn.functional as F

LAYER_KINDS = (
    "conv2d",
    "maxpool2d",
    "upsample2d_nearest",
    "dense",
    "lstm_cell",
    "batchnorm",
    "residual_block",
    "sigmoid",
    "relu",
    "crop_rows",
)

_REQUIRED = {
    "conv2d": ("in_channels", "out_channels", "kernel"),
    "maxpool2d": ("factor",),
    "upsample2d_nearest": ("factor",),
    "dense": ("in_features", "units"),
    "lstm_cell": ("in_features", "units"),
    "batchnorm": ("channels",),
    "residual_block": ("channels", "kernel"),
    "sigmoid": (),
    "relu": (),
    "crop_rows": ("rows",),
}


class ShapeError(ValueError):
    """Input tensor shape incompatible with a layer."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    options: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.options]
        if missing:
            raise ValueError(f"{self.kind} requires {missing}")
        for name, value in self.options.items():
            if name == "rows":
                if int(value) < 0:
                    raise ValueError("crop_rows needs rows >= 0")
            elif int(value) < 1:
                raise ValueError(f"{self.kind}.{name} must be >= 1, got {value}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "options": dict(sorted(self.options.items()))}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LayerSpec":
        return cls(d["kind"], {k: int(v) for k, v in d["options"].items()})

    # convenience constructors
    @classmethod
    def conv2d(cls, in_channels: int, out_channels: int, kernel: int = 3) -> "LayerSpec":
        return cls("conv2d", {"in_channels": in_channels, "out_channels": out_channels, "kernel": kernel})

    @classmethod
    def maxpool2d(cls, factor: int = 2) -> "LayerSpec":
        return cls("maxpool2d", {"factor": factor})

    @classmethod
    def upsample2d_nearest(cls, factor: int = 2) -> "LayerSpec":
        return cls("upsample2d_nearest", {"factor": factor})

    @classmethod
    def dense(cls, in_features: int, units: int) -> "LayerSpec":
        return cls("dense", {"in_features": in_features, "units": units})

    @classmethod
    def lstm_cell(cls, in_features: int, units: int) -> "LayerSpec":
        return cls("lstm_cell", {"in_features": in_features, "units": units})

    @classmethod
    def batchnorm(cls, channels: int) -> "LayerSpec":
        return cls("batchnorm", {"channels": channels})

    @classmethod
    def residual_block(cls, channels: int, kernel: int = 3) -> "LayerSpec":
        return cls("residual_block", {"channels": channels, "kernel": kernel})

    @classmethod
    def sigmoid(cls) -> "LayerSpec":
        return cls("sigmoid")

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls("relu")

    @classmethod
    def crop_rows(cls, rows: int = 1) -> "LayerSpec":
        return cls("crop_rows", {"rows": rows})


def glorot_uniform_(t: torch.Tensor, fan_in: int, fan_out: int, generator: torch.Generator) -> torch.Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        t.uniform_(-limit, limit, generator=generator)
    return t


def _check_rank(x: torch.Tensor, rank: int, kind: str) -> None:
    if x.dim() != rank:
        raise ShapeError(f"{kind} expects a rank-{rank} tensor, got shape {tuple(x.shape)}")


class Conv2d(nn.Module):
    """Stride-1 convolution with zero 'same' padding."""

    def __init__(self, spec: LayerSpec, generator: torch.Generator, dtype=torch.float64):
        super().__init__()
        o = spec.options
        self.spec = spec
        k = o["kernel"]
        if k % 2 == 0:
            raise ValueError("'same' padding needs an odd kernel")
        self.weight = nn.Parameter(torch.empty(o["out_channels"], o["in_channels"], k, k, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(o["out_channels"], dtype=dtype))
        glorot_uniform_(self.weight, o["in_channels"] * k * k, o["out_channels"] * k * k, generator)

    def forward(self, x):
        _check_rank(x, 4, "conv2d")
        if x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"conv2d expects {self.weight.shape[1]} channels, got {x.shape[1]}")
        return F.conv2d(x, self.weight, self.bias, padding=self.weight.shape[-1] // 2)


class MaxPool2d(nn.Module):
    # ceil rounding: odd extents keep their last partial window (75 -> 38)
    def __init__(self, spec: LayerSpec, generator=None, dtype=None):
        super().__init__()
        self.spec = spec
        self.factor = spec.options["factor"]

    def forward(self, x):
        _check_rank(x, 4, "maxpool2d")
        return F.max_pool2d(x, self.factor, self.factor, ceil_mode=True)


class UpsampleNearest(nn.Module):
    def __init__(self, spec: LayerSpec, generator=None, dtype=None):
        super().__init__()
        self.spec = spec
        self.factor = spec.options["factor"]

    def forward(self, x):
        _check_rank(x, 4, "upsample2d_nearest")
        return x.repeat_interleave(self.factor, dim=2).repeat_interleave(self.factor, dim=3)


class Dense(nn.Module):
    """Fully connected layer; inputs are flattened past the batch axis."""

    def __init__(self, spec: LayerSpec, generator: torch.Generator, dtype=torch.float64):
        super().__init__()
        o = spec.options
        self.spec = spec
        self.weight = nn.Parameter(torch.empty(o["units"], o["in_features"], dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(o["units"], dtype=dtype))
        glorot_uniform_(self.weight, o["in_features"], o["units"], generator)

    def forward(self, x):
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"dense expects {self.weight.shape[1]} features, got {x.shape[1]}")
        return F.linear(x, self.weight, self.bias)


class LstmCell(nn.Module):
    """Standard LSTM cell with gate order (input, forget, candidate, output).

    ``forward`` takes ``(x, (h, c))`` and returns ``(h', c')``. The forget
    gate bias starts at 1.
    """

    def __init__(self, spec: LayerSpec, generator: torch.Generator, dtype=torch.float64):
        super().__init__()
        o = spec.options
        self.spec = spec
        n, d = o["units"], o["in_features"]
        self.units = n
        self.weight_ih = nn.Parameter(torch.empty(4 * n, d, dtype=dtype))
        self.weight_hh = nn.Parameter(torch.empty(4 * n, n, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(4 * n, dtype=dtype))
        glorot_uniform_(self.weight_ih, d, 4 * n, generator)
        glorot_uniform_(self.weight_hh, n, 4 * n, generator)
        with torch.no_grad():
            self.bias[n:2 * n] = 1.0

    def zero_state(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.zeros(batch, self.units, dtype=self.weight_ih.dtype)
        return z, z.clone()

    def input_projection(self, x: torch.Tensor) -> torch.Tensor:
        """x @ W_ih^T + b; exposed so a whole unroll can be projected in one matmul."""
        if x.shape[-1] != self.weight_ih.shape[1]:
            raise ShapeError(f"lstm_cell expects {self.weight_ih.shape[1]} features, got {x.shape[-1]}")
        return F.linear(x, self.weight_ih, self.bias)

    def step_projected(self, gx, state):
        h, c = state
        gates = gx + F.linear(h, self.weight_hh)
        i, f, g, o = gates.chunk(4, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new

    def forward(self, x, state=None):
        _check_rank(x, 2, "lstm_cell")
        if state is None:
            state = self.zero_state(x.shape[0])
        return self.step_projected(self.input_projection(x), state)


class BatchNorm2d(nn.Module):
    """Per-channel batch normalization with running statistics for eval mode."""

    def __init__(self, spec: LayerSpec, generator=None, dtype=torch.float64, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        c = spec.options["channels"]
        self.spec = spec
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(c, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(c, dtype=dtype))
        self.register_buffer("running_mean", torch.zeros(c, dtype=dtype))
        self.register_buffer("running_var", torch.ones(c, dtype=dtype))

    def forward(self, x):
        _check_rank(x, 4, "batchnorm")
        if x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"batchnorm expects {self.weight.shape[0]} channels, got {x.shape[1]}")
        return F.batch_norm(
            x, self.running_mean, self.running_var, self.weight, self.bias,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class ResidualBlock(nn.Module):
    """conv -> bn -> relu -> conv -> bn, identity skip, relu."""

    def __init__(self, spec: LayerSpec, generator: torch.Generator, dtype=torch.float64):
        super().__init__()
        c, k = spec.options["channels"], spec.options["kernel"]
        self.spec = spec
        self.conv1 = Conv2d(LayerSpec.conv2d(c, c, k), generator, dtype)
        self.bn1 = BatchNorm2d(LayerSpec.batchnorm(c), dtype=dtype)
        self.conv2 = Conv2d(LayerSpec.conv2d(c, c, k), generator, dtype)
        self.bn2 = BatchNorm2d(LayerSpec.batchnorm(c), dtype=dtype)

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + x)


class Sigmoid(nn.Module):
    def __init__(self, spec: LayerSpec, generator=None, dtype=None):
        super().__init__()
        self.spec = spec

    def forward(self, x):
        return torch.sigmoid(x)


class ReLU(nn.Module):
    def __init__(self, spec: LayerSpec, generator=None, dtype=None):
        super().__init__()
        self.spec = spec

    def forward(self, x):
        return torch.relu(x)


class CropRows(nn.Module):
    """Remove ``rows`` rows from both the top and the bottom of each map."""

    def __init__(self, spec: LayerSpec, generator=None, dtype=None):
        super().__init__()
        self.spec = spec
        self.rows = spec.options["rows"]

    def forward(self, x):
        _check_rank(x, 4, "crop_rows")
        r = self.rows
        if x.shape[2] <= 2 * r:
            raise ShapeError(f"cannot crop {r} rows from each side of height {x.shape[2]}")
        return x[:, :, r:x.shape[2] - r] if r else x


_CLASSES = {
    "conv2d": Conv2d,
    "maxpool2d": MaxPool2d,
    "upsample2d_nearest": UpsampleNearest,
    "dense": Dense,
    "lstm_cell": LstmCell,
    "batchnorm": BatchNorm2d,
    "residual_block": ResidualBlock,
    "sigmoid": Sigmoid,
    "relu": ReLU,
    "crop_rows": CropRows,
}


def build_layer(spec: LayerSpec, generator: torch.Generator | None = None, dtype=torch.float64) -> nn.Module:
    """Instantiate ``spec`` with seeded Glorot-uniform weights and zero biases."""
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    return _CLASSES[spec.kind](spec, generator, dtype)


def build_stack(specs, generator: torch.Generator | None = None, dtype=torch.float64) -> nn.Sequential:
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    return nn.Sequential(*[build_layer(s, generator, dtype) for s in specs])


def forward(layer: nn.Module, x):
    """Apply ``layer`` to ``x``; lstm_cell takes ``(x, (h, c))``."""
    if isinstance(layer, LstmCell) and isinstance(x, tuple):
        return layer(x[0], x[1])
    return layer(x)


def backward(layer: nn.Module, x, upstream):
    """Gradients of ``<upstream, forward(layer, x)>``.

    Returns ``(input_gradient, parameter_gradients)`` where the parameter
    gradients are keyed by parameter name. For lstm_cell both ``x`` and
    ``upstream`` are structured like the forward input/output.
    """
    is_cell = isinstance(layer, LstmCell) and isinstance(x, tuple)
    if is_cell:
        inputs = [x[0], x[1][0], x[1][1]]
    else:
        inputs = [x]
    inputs = [t.detach().requires_grad_(True) for t in inputs]
    with torch.enable_grad():
        out = layer(inputs[0], (inputs[1], inputs[2])) if is_cell else layer(inputs[0])
        outs = list(out) if is_cell else [out]
        ups = list(upstream) if is_cell else [upstream]
        for o, u in zip(outs, ups):
            if o.shape != u.shape:
                raise ShapeError(f"upstream gradient shape {tuple(u.shape)} != output shape {tuple(o.shape)}")
        names, params = zip(*layer.named_parameters()) if any(True for _ in layer.parameters()) else ((), ())
        grads = torch.autograd.grad(outs, inputs + list(params), grad_outputs=ups, allow_unused=True)
    in_grads = [torch.zeros_like(t) if g is None else g for t, g in zip(inputs, grads[:len(inputs)])]
    param_grads = {n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads[len(inputs):])}
    input_grad = (in_grads[0], (in_grads[1], in_grads[2])) if is_cell else in_grads[0]
    return input_grad, param_grads
