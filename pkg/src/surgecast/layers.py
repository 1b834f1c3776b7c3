"""Neural layer building blocks: ConvLSTM cell, pixel shuffle, initializers.

The ConvLSTM cell convolves a single channel-wise concatenation of the
input field and the previous hidden field per gate, with "same" padding so
spatial extents are preserved:

    i = sigmoid(W_i * [x, h] + b_i)         f = sigmoid(W_f * [x, h] + b_f)
    c_cand = tanh(W_c * [x, h] + b_c)       c = f (*) c_prev + i (*) c_cand
    o = sigmoid(W_o * [x, h] + b_o)         h = o (*) tanh(c)

There are no separate input/recurrent kernels and no peephole terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

GATE_NAMES = ("i", "f", "c", "o")


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform draw in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ConvLSTMParams:
    """Per-gate convolution kernels [C_hidden, C_in + C_hidden, kH, kW] and
    bias vectors of length C_hidden."""

    w_i: Tensor
    w_f: Tensor
    w_c: Tensor
    w_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    def __post_init__(self):
        kshape = self.w_i.shape
        bshape = self.b_i.shape
        for w, b in zip(self.kernels(), self.biases()):
            if w.shape != kshape:
                raise ShapeError(f"gate kernels differ: {kshape} vs {w.shape}")
            if b.shape != bshape:
                raise ShapeError(f"gate biases differ: {bshape} vs {b.shape}")
        if len(kshape) != 4:
            raise ShapeError(f"gate kernels must be 4-D, got {kshape}")
        c_hidden, c_total, kh, kw = kshape
        if bshape != (c_hidden,):
            raise ShapeError(f"gate bias {bshape} does not match kernel {kshape}")
        if c_total <= c_hidden:
            raise ShapeError(f"gate kernel {kshape} leaves no input channels")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"same-padded ConvLSTM needs odd kernel extents, got {kh}x{kw}")

    @property
    def hidden_channels(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_channels(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]

    @property
    def kernel_hw(self) -> tuple[int, int]:
        return self.w_i.shape[2], self.w_i.shape[3]

    def kernels(self):
        return (self.w_i, self.w_f, self.w_c, self.w_o)

    def biases(self):
        return (self.b_i, self.b_f, self.b_c, self.b_o)

    @classmethod
    def init(cls, c_in: int, c_hidden: int, kernel: int, rng: np.random.Generator,
             requires_grad: bool = True) -> "ConvLSTMParams":
        """Seeded init: kernels uniform in +-1/sqrt(fan_in), biases zero."""
        c_total = c_in + c_hidden
        fan_in = c_total * kernel * kernel
        kernels = [
            Tensor(uniform_init(rng, (c_hidden, c_total, kernel, kernel), fan_in),
                   requires_grad=requires_grad)
            for _ in GATE_NAMES
        ]
        biases = [Tensor(np.zeros(c_hidden), requires_grad=requires_grad) for _ in GATE_NAMES]
        return cls(*kernels, *biases)


@dataclass
class ConvLSTMState:
    """Hidden field h and cell field c, both [N, C_hidden, H, W]."""

    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"hidden {self.h.shape} and cell {self.c.shape} shapes differ")

    @classmethod
    def zeros(cls, n: int, c_hidden: int, h: int, w: int) -> "ConvLSTMState":
        return cls(Tensor(np.zeros((n, c_hidden, h, w))), Tensor(np.zeros((n, c_hidden, h, w))))


def convlstm_step(x: Tensor, state: ConvLSTMState, params: ConvLSTMParams) -> ConvLSTMState:
    """One gated update of (h, c) from the input field x [N, C_in, H, W]."""
    if x.ndim != 4:
        raise ShapeError(f"convlstm_step: input must be 4-D, got {x.shape}")
    if x.shape[1] != params.input_channels:
        raise ShapeError(
            f"convlstm_step: input has {x.shape[1]} channels, "
            f"parameters expect {params.input_channels}"
        )
    if state.h.shape != (x.shape[0], params.hidden_channels, x.shape[2], x.shape[3]):
        raise ShapeError(
            f"convlstm_step: state {state.h.shape} incompatible with input {x.shape}"
        )
    kh, kw = params.kernel_hw
    pad = (kh // 2, kw // 2)
    c = params.hidden_channels

    # all four gate convolutions share one im2col pass over [x, h]
    xh = ad.concat_channels(x, state.h)
    pre = ad.conv2d(xh, ad.concat_parts(params.kernels(), axis=0),
                    ad.concat_parts(params.biases(), axis=0), padding=pad)
    gate_i = ad.sigmoid(ad.slice_channels(pre, 0, c))
    gate_f = ad.sigmoid(ad.slice_channels(pre, c, 2 * c))
    c_cand = ad.tanh(ad.slice_channels(pre, 2 * c, 3 * c))
    gate_o = ad.sigmoid(ad.slice_channels(pre, 3 * c, 4 * c))
    c_new = ad.add(ad.mul(gate_f, state.c), ad.mul(gate_i, c_cand))
    h_new = ad.mul(gate_o, ad.tanh(c_new))
    return ConvLSTMState(h_new, c_new)


def convlstm_gates(x: Tensor, state: ConvLSTMState, params: ConvLSTMParams):
    """The three sigmoid gate fields (i, f, o) for one step; used by the
    gate-range checks."""
    kh, kw = params.kernel_hw
    pad = (kh // 2, kw // 2)
    xh = ad.concat_channels(x, state.h)
    return tuple(
        ad.sigmoid(ad.conv2d(xh, w, b, padding=pad))
        for w, b in ((params.w_i, params.b_i), (params.w_f, params.b_f), (params.w_o, params.b_o))
    )


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------

def _shuffle_array(x: np.ndarray, r: int) -> np.ndarray:
    n, c_r2, h, w = x.shape
    c = c_r2 // (r * r)
    return (
        x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    )


def _unshuffle_array(x: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    return (
        x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange [N, C*r^2, H, W] to [N, C, H*r, W*r].

    out[n, c, h*r + a, w*r + b] = x[n, c*r^2 + a*r + b, h, w]; a pure
    bijection, so the gradient is the inverse rearrangement.
    """
    r = int(r)
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle: input must be 4-D, got {x.shape}")
    if r < 1:
        raise ConfigError(f"pixel_shuffle: upscale factor must be >= 1, got {r}")
    if x.shape[1] % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2={r * r}")

    def grad_fn(g):
        ad._accumulate(x, _unshuffle_array(g, r))

    return ad._make(_shuffle_array(x.data, r), (x,), grad_fn)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of pixel_shuffle: [N, C, H*r, W*r] to [N, C*r^2, H, W]."""
    r = int(r)
    if x.ndim != 4:
        raise ShapeError(f"pixel_unshuffle: input must be 4-D, got {x.shape}")
    if r < 1:
        raise ConfigError(f"pixel_unshuffle: upscale factor must be >= 1, got {r}")
    if x.shape[2] % r != 0 or x.shape[3] % r != 0:
        raise ShapeError(
            f"pixel_unshuffle: spatial extents {x.shape[2:]} not divisible by r={r}"
        )

    def grad_fn(g):
        ad._accumulate(x, _shuffle_array(g, r))

    return ad._make(_unshuffle_array(x.data, r), (x,), grad_fn)


# ---------------------------------------------------------------------------
# layer descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One row of the network description: kind, activation and size data.

    Used to lay out the architecture as a list and to walk expected shapes;
    carries no weights.
    """

    kind: str  # dense | conv | convlstm | pixel_shuffle | reshape | input | output
    activation: str = "none"  # sigmoid | tanh | relu | none
    out_features: int | None = None
    channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    upscale: int | None = None

    def __post_init__(self):
        kinds = {"dense", "conv", "convlstm", "pixel_shuffle", "reshape", "input", "output"}
        if self.kind not in kinds:
            raise ConfigError(f"unknown layer kind '{self.kind}'")
        if self.activation not in {"sigmoid", "tanh", "relu", "none"}:
            raise ConfigError(f"unknown activation '{self.activation}'")
        if self.kind == "pixel_shuffle" and (self.upscale is None or self.upscale < 1):
            raise ConfigError("pixel_shuffle layer needs an upscale factor >= 1")

    def check_input_channels(self, channels: int):
        if self.kind == "pixel_shuffle" and channels % (self.upscale**2) != 0:
            raise ConfigError(
                f"pixel_shuffle with r={self.upscale} needs channels divisible by "
                f"{self.upscale**2}, got {channels}"
            )
