"""Finite-difference verification of every differentiable building block.

Each check builds a scalar probe loss (a fixed random weighting of the
operation's output), differentiates it through the tape, and compares
against central differences. The reported error is
max|analytic - numeric| / max(max|numeric|, max|analytic|, floor) per
argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import ConvLSTMParams, ConvLSTMState, convlstm_step, pixel_shuffle
from .model import ArchitectureConfig, ModelParams, forward_sequence
from .training import l2_loss

DEFAULT_H = 1e-5
PRIMITIVE_RTOL = 1e-4
MODEL_RTOL = 1e-3
_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"[{status}] {self.name}: max rel error {self.max_rel_error:.3e} " \
               f"(tolerance {self.tolerance:.0e})"


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), _FLOOR)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push entries out of (-margin, margin); keeps ReLU kinks away from the
    finite-difference stencil."""
    return np.where(np.abs(x) < margin, np.where(x >= 0, margin, -margin), x)


def _probe(arguments: list[Tensor], build, h: float) -> float:
    """Worst relative error of d(build)/d(arg) over all arguments.

    ``build`` maps the argument tensors to a scalar Tensor.
    """
    loss = build(arguments)
    grads = ad.backward(loss, arguments)
    worst = 0.0
    for i, arg in enumerate(arguments):
        def f(t: Tensor, i=i) -> Tensor:
            trial = list(arguments)
            trial[i] = t
            return build(trial)

        numeric = ad.finite_difference_gradient(f, arg, h)
        worst = max(worst, _rel_error(grads[id(arg)].data, numeric.data))
    return worst


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_all(ad.mul(out, Tensor(weights)))


def check_primitives(n_seeds: int = 10, h: float = DEFAULT_H,
                     rtol: float = PRIMITIVE_RTOL) -> list[CheckResult]:
    """Gradient checks for dense, conv2d, the activations, pixel shuffle and
    the ConvLSTM step, each over ``n_seeds`` seeded random inputs."""
    results = []

    def run(name, single_seed_check):
        worst = 0.0
        for seed in range(n_seeds):
            worst = max(worst, single_seed_check(np.random.default_rng(seed)))
        results.append(CheckResult(name, worst, rtol))

    def activation_check(fn):
        def check(rng):
            x = Tensor(_away_from_zero(rng.uniform(-2, 2, size=(3, 5))), requires_grad=True)
            w = rng.uniform(-1, 1, size=(3, 5))
            return _probe([x], lambda args: _weighted_sum(fn(args[0]), w), h)

        return check

    run("sigmoid", activation_check(ad.sigmoid))
    run("tanh", activation_check(ad.tanh))
    run("relu", activation_check(ad.relu))

    def mul_check(rng):
        a = Tensor(rng.uniform(-2, 2, size=(4, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, size=(4, 3)), requires_grad=True)
        w = rng.uniform(-1, 1, size=(4, 3))
        return _probe([a, b], lambda args: _weighted_sum(ad.mul(args[0], args[1]), w), h)

    run("hadamard", mul_check)

    def dense_check(rng):
        x = Tensor(rng.uniform(-2, 2, size=(3, 4)), requires_grad=True)
        wgt = Tensor(rng.uniform(-1, 1, size=(4, 5)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, size=(5,)), requires_grad=True)
        w = rng.uniform(-1, 1, size=(3, 5))
        return _probe(
            [x, wgt, b], lambda args: _weighted_sum(ad.dense(args[0], args[1], args[2]), w), h
        )

    run("dense", dense_check)

    def conv_check(rng):
        x = Tensor(rng.uniform(-2, 2, size=(2, 3, 6, 5)), requires_grad=True)
        k = Tensor(rng.uniform(-1, 1, size=(4, 3, 3, 2)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, size=(4,)), requires_grad=True)
        out_shape = (2, 4) + ad.conv_output_shape((6, 5), (3, 2), (2, 1), (1, 1))
        w = rng.uniform(-1, 1, size=out_shape)
        return _probe(
            [x, k, b],
            lambda args: _weighted_sum(
                ad.conv2d(args[0], args[1], args[2], stride=(2, 1), padding=(1, 1)), w
            ),
            h,
        )

    run("conv2d", conv_check)

    def shuffle_check(rng):
        x = Tensor(rng.uniform(-2, 2, size=(2, 8, 3, 2)), requires_grad=True)
        w = rng.uniform(-1, 1, size=(2, 2, 6, 4))
        return _probe([x], lambda args: _weighted_sum(pixel_shuffle(args[0], 2), w), h)

    run("pixel_shuffle", shuffle_check)

    def convlstm_check(rng):
        # 1x1x2x2 instance: gradients w.r.t. x, h, c and all eight parameters
        x = Tensor(rng.uniform(-1, 1, size=(1, 1, 2, 2)), requires_grad=True)
        hprev = Tensor(rng.uniform(-1, 1, size=(1, 1, 2, 2)), requires_grad=True)
        cprev = Tensor(rng.uniform(-1, 1, size=(1, 1, 2, 2)), requires_grad=True)
        params = ConvLSTMParams.init(1, 1, 3, rng)
        wh = rng.uniform(-1, 1, size=(1, 1, 2, 2))
        wc = rng.uniform(-1, 1, size=(1, 1, 2, 2))
        args = [x, hprev, cprev, *params.kernels(), *params.biases()]

        def build(a):
            p = ConvLSTMParams(*a[3:7], *a[7:11])
            state = convlstm_step(a[0], ConvLSTMState(a[1], a[2]), p)
            return ad.add(_weighted_sum(state.h, wh), _weighted_sum(state.c, wc))

        return _probe(args, build, h)

    run("convlstm_step", convlstm_check)
    return results


def gradcheck_architecture() -> ArchitectureConfig:
    """The small full-network instance used for end-to-end checking:
    8x8 grid, one encoder halving (upscale 2), three steps."""
    return ArchitectureConfig(
        grid_h=8,
        grid_w=8,
        n_steps=3,
        dense_widths=(8, 16, 64),
        encoder_channels=(4,),
        convlstm_kernel=3,
        upscale=2,
    )


def check_full_model(seed: int = 0, n_entries: int = 20, h: float = DEFAULT_H,
                     rtol: float = MODEL_RTOL) -> CheckResult:
    """Compare analytic and central-difference loss gradients for randomly
    chosen parameter entries of the small full network."""
    cfg = gradcheck_architecture()
    rng = np.random.default_rng(seed)
    params = ModelParams.init(cfg, seed=seed)
    inputs = rng.uniform(-1, 1, size=(1, cfg.n_steps, cfg.n_features))
    labels = rng.uniform(-0.5, 0.5, size=(1, cfg.n_steps, cfg.n_sp))

    def loss_value() -> float:
        return l2_loss(forward_sequence(inputs, params), labels).item()

    loss = l2_loss(forward_sequence(inputs, params), labels)
    for p in params.parameters():
        p.grad = None
    loss.backward()

    named = params.named_parameters()
    worst = 0.0
    for _ in range(n_entries):
        name, tensor = named[int(rng.integers(len(named)))]
        flat_index = int(rng.integers(tensor.size))
        idx = np.unravel_index(flat_index, tensor.shape)
        analytic = tensor.grad[idx] if tensor.grad is not None else 0.0
        original = tensor.data[idx]
        tensor.data[idx] = original + h
        up = loss_value()
        tensor.data[idx] = original - h
        down = loss_value()
        tensor.data[idx] = original
        numeric = (up - down) / (2 * h)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), _FLOOR)
        worst = max(worst, err)
    return CheckResult("full_model", worst, rtol)


def run_all(n_seeds: int = 10, seed: int = 0) -> list[CheckResult]:
    results = check_primitives(n_seeds=n_seeds)
    results.append(check_full_model(seed=seed))
    return results
