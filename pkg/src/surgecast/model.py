"""The convolutional recurrent surge network.

Per time step: the four storm features pass through a tanh dense chain up
to one value per save point, are reshaped onto the coastal grid and
concatenated channel-wise with the previous predicted surge field, run
through a strided ReLU conv encoder into latent space, one ConvLSTM update,
a pixel-shuffle decode back to the grid, and a linear dense head. The head
output is treated as a time derivative: the step prediction is

    surge_t = u_{t-1} + dt * increment_t

and surge_t becomes the carried field u_t for the next step. Both the
ConvLSTM state and u start at zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError, VersionError
from .layers import ConvLSTMParams, ConvLSTMState, LayerSpec, convlstm_step, pixel_shuffle, uniform_init

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Sizes and meta-parameters of the network.

    The encoder applies one stride-2 convolution per entry of
    ``encoder_channels``, so the upscale factor must equal
    2 ** len(encoder_channels) and the last encoder width must equal
    upscale**2 (the decoder emits a single channel).
    """

    n_features: int = 4
    grid_h: int = 120
    grid_w: int = 40
    n_steps: int = 125
    dense_widths: tuple[int, ...] = (40, 400, 4800)
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    encoder_kernel: int = 4
    encoder_stride: int = 2
    encoder_padding: int = 1
    convlstm_kernel: int = 5
    upscale: int = 8
    dt: float = 1.0

    def __post_init__(self):
        if self.n_features < 1 or self.grid_h < 1 or self.grid_w < 1 or self.n_steps < 1:
            raise ConfigError("n_features, grid_h, grid_w and n_steps must be positive")
        if not self.dense_widths or self.dense_widths[-1] != self.n_sp:
            raise ConfigError(
                f"last dense width must equal grid_h*grid_w={self.n_sp}, "
                f"got {self.dense_widths}"
            )
        if not self.encoder_channels:
            raise ConfigError("need at least one encoder convolution")
        if self.upscale != 2 ** len(self.encoder_channels):
            raise ConfigError(
                f"upscale {self.upscale} must equal 2**n_encoder_layers="
                f"{2 ** len(self.encoder_channels)}"
            )
        if self.encoder_channels[-1] != self.upscale**2:
            raise ConfigError(
                f"latent channels {self.encoder_channels[-1]} must equal "
                f"upscale^2={self.upscale**2} for a single decoded channel"
            )
        if self.grid_h % self.upscale or self.grid_w % self.upscale:
            raise ConfigError(
                f"grid {self.grid_h}x{self.grid_w} must be divisible by upscale {self.upscale}"
            )
        if self.convlstm_kernel % 2 == 0:
            raise ConfigError(f"ConvLSTM kernel must be odd, got {self.convlstm_kernel}")
        # walk the encoder to confirm stride-2 halving works out exactly
        h, w = self.grid_h, self.grid_w
        for i in range(len(self.encoder_channels)):
            h2, w2 = ad.conv_output_shape(
                (h, w),
                (self.encoder_kernel, self.encoder_kernel),
                (self.encoder_stride, self.encoder_stride),
                (self.encoder_padding, self.encoder_padding),
            )
            if (h2, w2) != (h // 2, w // 2):
                raise ConfigError(
                    f"encoder layer {i} maps {h}x{w} to {h2}x{w2}, expected exact halving"
                )
            h, w = h2, w2

    @property
    def n_sp(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def latent_channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def latent_hw(self) -> tuple[int, int]:
        n = len(self.encoder_channels)
        return self.grid_h >> n, self.grid_w >> n

    @classmethod
    def paper_scale(cls, dt: float = 1.0) -> "ArchitectureConfig":
        """The full-size architecture: 120x40 grid, 125 steps."""
        return cls(dt=dt)

    @classmethod
    def desk_scale(cls, grid_h: int = 24, grid_w: int = 8, n_steps: int = 40,
                   dt: float = 1.0) -> "ArchitectureConfig":
        """Small benchmark architecture: one encoder halving, 4 latent channels."""
        return cls(
            grid_h=grid_h,
            grid_w=grid_w,
            n_steps=n_steps,
            dense_widths=(40, 400, grid_h * grid_w),
            encoder_channels=(4,),
            convlstm_kernel=3,
            upscale=2,
            dt=dt,
        )

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "n_steps": self.n_steps,
            "dense_widths": list(self.dense_widths),
            "encoder_channels": list(self.encoder_channels),
            "encoder_kernel": self.encoder_kernel,
            "encoder_stride": self.encoder_stride,
            "encoder_padding": self.encoder_padding,
            "convlstm_kernel": self.convlstm_kernel,
            "upscale": self.upscale,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        try:
            return cls(
                n_features=int(d["n_features"]),
                grid_h=int(d["grid_h"]),
                grid_w=int(d["grid_w"]),
                n_steps=int(d["n_steps"]),
                dense_widths=tuple(int(v) for v in d["dense_widths"]),
                encoder_channels=tuple(int(v) for v in d["encoder_channels"]),
                encoder_kernel=int(d["encoder_kernel"]),
                encoder_stride=int(d["encoder_stride"]),
                encoder_padding=int(d["encoder_padding"]),
                convlstm_kernel=int(d["convlstm_kernel"]),
                upscale=int(d["upscale"]),
                dt=float(d["dt"]),
            )
        except KeyError as e:
            raise ConfigError(f"architecture description is missing field {e}") from e

    def layer_stack(self) -> list[LayerSpec]:
        """The network as an ordered layer description (one entry per
        architecture-table row)."""
        rows = [LayerSpec(kind="input")]
        for width in self.dense_widths:
            rows.append(LayerSpec(kind="dense", activation="tanh", out_features=width))
        rows.append(LayerSpec(kind="reshape"))
        for ch in self.encoder_channels:
            rows.append(
                LayerSpec(kind="conv", activation="relu", channels=ch,
                          kernel=self.encoder_kernel, stride=self.encoder_stride,
                          padding=self.encoder_padding)
            )
        rows.append(LayerSpec(kind="convlstm", channels=self.latent_channels,
                              kernel=self.convlstm_kernel, stride=1,
                              padding=self.convlstm_kernel // 2))
        rows.append(LayerSpec(kind="pixel_shuffle", upscale=self.upscale))
        rows.append(LayerSpec(kind="reshape"))
        rows.append(LayerSpec(kind="dense", out_features=self.n_sp))
        rows.append(LayerSpec(kind="output"))
        return rows


@dataclass
class ModelParams:
    """All trainable weights, tied to the architecture they were built for."""

    config: ArchitectureConfig
    dense: list[tuple[Tensor, Tensor]]
    encoder: list[tuple[Tensor, Tensor]]
    convlstm: ConvLSTMParams
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, config: ArchitectureConfig, seed: int = 0,
             requires_grad: bool = True) -> "ModelParams":
        """Seeded initialization; weights uniform +-1/sqrt(fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        dense = []
        d_in = config.n_features
        for width in config.dense_widths:
            w = Tensor(uniform_init(rng, (d_in, width), d_in), requires_grad=requires_grad)
            b = Tensor(np.zeros(width), requires_grad=requires_grad)
            dense.append((w, b))
            d_in = width
        encoder = []
        c_in = 2  # projected-features channel plus carried-surge channel
        k = config.encoder_kernel
        for c_out in config.encoder_channels:
            kern = Tensor(uniform_init(rng, (c_out, c_in, k, k), c_in * k * k),
                          requires_grad=requires_grad)
            b = Tensor(np.zeros(c_out), requires_grad=requires_grad)
            encoder.append((kern, b))
            c_in = c_out
        lstm = ConvLSTMParams.init(config.latent_channels, config.latent_channels,
                                   config.convlstm_kernel, rng, requires_grad=requires_grad)
        head_w = Tensor(uniform_init(rng, (config.n_sp, config.n_sp), config.n_sp),
                        requires_grad=requires_grad)
        head_b = Tensor(np.zeros(config.n_sp), requires_grad=requires_grad)
        return cls(config, dense, encoder, lstm, head_w, head_b)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.dense):
            out.append((f"dense{i}.weight", w))
            out.append((f"dense{i}.bias", b))
        for i, (kern, b) in enumerate(self.encoder):
            out.append((f"encoder{i}.kernel", kern))
            out.append((f"encoder{i}.bias", b))
        for gate, w in zip(("i", "f", "c", "o"), self.convlstm.kernels()):
            out.append((f"convlstm.w_{gate}", w))
        for gate, b in zip(("i", "f", "c", "o"), self.convlstm.biases()):
            out.append((f"convlstm.b_{gate}", b))
        out.append(("head.weight", self.head_w))
        out.append(("head.bias", self.head_b))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_values(self, values: dict[str, np.ndarray]):
        for name, t in self.named_parameters():
            t.data = np.array(values[name], dtype=np.float64)


def expected_param_shapes(config: ArchitectureConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    d_in = config.n_features
    for i, width in enumerate(config.dense_widths):
        shapes[f"dense{i}.weight"] = (d_in, width)
        shapes[f"dense{i}.bias"] = (width,)
        d_in = width
    c_in = 2
    k = config.encoder_kernel
    for i, c_out in enumerate(config.encoder_channels):
        shapes[f"encoder{i}.kernel"] = (c_out, c_in, k, k)
        shapes[f"encoder{i}.bias"] = (c_out,)
        c_in = c_out
    c = config.latent_channels
    kk = config.convlstm_kernel
    for gate in ("i", "f", "c", "o"):
        shapes[f"convlstm.w_{gate}"] = (c, 2 * c, kk, kk)
        shapes[f"convlstm.b_{gate}"] = (c,)
    shapes["head.weight"] = (config.n_sp, config.n_sp)
    shapes["head.bias"] = (config.n_sp,)
    return shapes


@dataclass
class ModelState:
    """Recurrent carry: the ConvLSTM state plus the previous surge field u."""

    convlstm: ConvLSTMState
    u: Tensor  # [N, 1, grid_h, grid_w]

    @classmethod
    def zeros(cls, config: ArchitectureConfig, n: int) -> "ModelState":
        lh, lw = config.latent_hw
        return cls(
            convlstm=ConvLSTMState.zeros(n, config.latent_channels, lh, lw),
            u=Tensor(np.zeros((n, 1, config.grid_h, config.grid_w))),
        )


def forward_step(inputs_t, state: ModelState, params: ModelParams,
                 trace: list | None = None):
    """One recurrent step: [N, n_features] storm inputs to [N, n_sp] surge.

    Returns (surge_t, new_state). Appends (layer label, shape) rows to
    ``trace`` when given.
    """
    cfg = params.config
    x = inputs_t if isinstance(inputs_t, Tensor) else Tensor(inputs_t)
    if x.ndim != 2 or x.shape[1] != cfg.n_features:
        raise ShapeError(
            f"forward_step: inputs must be [N, {cfg.n_features}], got {x.shape}"
        )
    n = x.shape[0]
    if state.u.shape != (n, 1, cfg.grid_h, cfg.grid_w):
        raise ShapeError(f"forward_step: carried field {state.u.shape} does not match config")

    def note(label, shape):
        if trace is not None:
            trace.append((label, tuple(int(s) for s in shape)))

    z = ad.reshape(x, (n, 1, cfg.n_features))
    note("Input", z.shape)
    for w, b in params.dense:
        z = ad.tanh(ad.dense(z, w, b))
        note("Dense", z.shape)
    z = ad.reshape(z, (n, 1, cfg.grid_h, cfg.grid_w))
    note("Reshape", z.shape)

    z = ad.concat_channels(z, state.u)
    for kern, b in params.encoder:
        z = ad.relu(
            ad.conv2d(z, kern, b,
                      stride=(cfg.encoder_stride, cfg.encoder_stride),
                      padding=(cfg.encoder_padding, cfg.encoder_padding))
        )
        note("Convolutional", z.shape)

    lstm_state = convlstm_step(z, state.convlstm, params.convlstm)
    note("ConvLSTM", lstm_state.h.shape)

    decoded = pixel_shuffle(lstm_state.h, cfg.upscale)
    note("Pixel Shuffle", decoded.shape)
    flat = ad.reshape(decoded, (n, 1, cfg.n_sp))
    note("Reshape", flat.shape)
    increment = ad.dense(flat, params.head_w, params.head_b)
    note("Dense", increment.shape)

    # forward-Euler residual: new surge = carried surge + dt * increment
    u_flat = ad.reshape(state.u, (n, 1, cfg.n_sp))
    surge3 = ad.add(u_flat, ad.scale(increment, cfg.dt))
    note("Output", surge3.shape)

    new_state = ModelState(
        convlstm=lstm_state,
        u=ad.reshape(surge3, (n, 1, cfg.grid_h, cfg.grid_w)),
    )
    return ad.reshape(surge3, (n, cfg.n_sp)), new_state


def forward_sequence(inputs, params: ModelParams) -> Tensor:
    """Fold forward_step over a [N, T, n_features] input sequence.

    Returns the stacked [N, T, n_sp] surge predictions; fully differentiable
    through all T steps.
    """
    cfg = params.config
    data = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != cfg.n_features:
        raise ShapeError(
            f"forward_sequence: inputs must be [N, T, {cfg.n_features}], got {data.shape}"
        )
    if data.shape[1] != cfg.n_steps:
        raise ShapeError(
            f"forward_sequence: got {data.shape[1]} steps, config expects {cfg.n_steps}"
        )
    n = data.shape[0]
    state = ModelState.zeros(cfg, n)
    steps = []
    for t in range(cfg.n_steps):
        surge_t, state = forward_step(Tensor(data[:, t]), state, params)
        steps.append(surge_t)
    return ad.stack_steps(steps)


def trace_shapes(config: ArchitectureConfig, batch: int = 100) -> list[tuple[str, tuple[int, ...]]]:
    """Run one forward step and report every layer's output shape.

    Parameters are freshly initialized without gradient tracking, so this is
    cheap enough to run at full scale.
    """
    params = ModelParams.init(config, seed=0, requires_grad=False)
    state = ModelState.zeros(config, batch)
    trace: list[tuple[str, tuple[int, ...]]] = []
    forward_step(np.zeros((batch, config.n_features)), state, params, trace=trace)
    return trace


# ---------------------------------------------------------------------------
# parameter files
# ---------------------------------------------------------------------------

def save_params(params: ModelParams, path, preprocess: dict | None = None):
    """Write parameters and their architecture to a self-describing JSON file.

    Floats are serialized with shortest round-trip text, so load is
    bit-exact. ``preprocess`` is an optional opaque section for the data
    preparation (input statistics, label scale) the weights were trained
    with.
    """
    doc = {
        "format_version": PARAMS_FORMAT_VERSION,
        "kind": "surgecast-model",
        "architecture": params.config.to_dict(),
        "parameters": [
            {"name": name, "shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.named_parameters()
        ],
    }
    if preprocess is not None:
        doc["preprocess"] = preprocess
    with open(path, "w") as f:
        json.dump(doc, f)


def load_preprocess(path) -> dict | None:
    """The preprocess section of a parameter file, if one was stored."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"model file {path} is not valid JSON: {e}") from e
    return doc.get("preprocess")


def load_params(path, expected_config: ArchitectureConfig | None = None) -> ModelParams:
    """Read a parameter file written by save_params.

    Raises VersionError on an unknown format version, ConfigError when the
    stored architecture disagrees with ``expected_config``, and DataError /
    ShapeError on malformed content. Nothing is partially loaded.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"model file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise DataError(f"model file {path} has no format_version field")
    if doc["format_version"] != PARAMS_FORMAT_VERSION:
        raise VersionError(
            f"model file {path} has format version {doc['format_version']}, "
            f"this build reads version {PARAMS_FORMAT_VERSION}"
        )
    if "architecture" not in doc or "parameters" not in doc:
        raise DataError(f"model file {path} is missing architecture or parameters")
    config = ArchitectureConfig.from_dict(doc["architecture"])
    if expected_config is not None and config != expected_config:
        raise ConfigError(f"model file {path} was built for a different architecture")

    expected = expected_param_shapes(config)
    loaded: dict[str, np.ndarray] = {}
    for entry in doc["parameters"]:
        name = entry.get("name")
        if name not in expected:
            raise DataError(f"model file {path} has unexpected parameter '{name}'")
        shape = tuple(int(s) for s in entry["shape"])
        if shape != expected[name]:
            raise ShapeError(
                f"model file {path}: parameter '{name}' has shape {shape}, "
                f"architecture requires {expected[name]}"
            )
        arr = np.asarray(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise DataError(
                f"model file {path}: parameter '{name}' holds {arr.size} values "
                f"for shape {shape}"
            )
        loaded[name] = arr.reshape(shape)
    missing = set(expected) - set(loaded)
    if missing:
        raise DataError(f"model file {path} is missing parameters: {sorted(missing)}")

    params = ModelParams.init(config, seed=0, requires_grad=True)
    params.load_values(loaded)
    return params
