"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a gradient rule on the value it
produces; ``Tensor.backward`` replays those records once each, in reverse
topological order, accumulating gradients additively into ``.grad``. Values
are immutable once created, so independent graphs can live on independent
threads.

Convolution follows the machine-learning convention (cross-correlation, no
kernel flip) with zero padding. The taped ``conv2d`` runs an im2col/GEMM
path; ``conv2d_reference`` is the direct-loop reference it is checked
against.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "relu",
    "elementwise",
    "sqrt",
    "sum_all",
    "mean_all",
    "reshape",
    "concat_channels",
    "concat_parts",
    "slice_channels",
    "stack_steps",
    "dense",
    "conv2d",
    "conv2d_reference",
    "conv_output_shape",
    "backward",
    "finite_difference_gradient",
]


class Tensor:
    """N-dimensional float64 array plus the tape record that produced it.

    Leaf tensors (inputs, parameters) have no parents. Non-leaf tensors
    carry the parent references and the gradient rule recorded by the
    operation that created them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors are limited to order 4, got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-replay the tape from this scalar, filling ``.grad`` fields."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # small arithmetic conveniences; same strict-shape semantics as the
    # module-level functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Record one taped operation. Gradient rules are kept only when some
    parent can receive a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, root first, every node exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def grad_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _check_same_shape("mul", a, b)

    def grad_fn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))

    def grad_fn(g):
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), grad_fn)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def grad_fn(g):
        _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def grad_fn(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), grad_fn)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None, c: float | None = None) -> Tensor:
    """Dispatch an elementwise op by name: add/sub/mul/scale/sigmoid/tanh/relu."""
    if op in _UNARY:
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"elementwise '{op}' needs two tensors")
        return _BINARY[op](a, b)
    if op == "scale":
        if c is None:
            raise ContractError("elementwise 'scale' needs the constant c")
        return scale(a, c)
    raise ContractError(f"unknown elementwise op '{op}'")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def grad_fn(g):
        _accumulate(a, g * 0.5 / y)

    return _make(y, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions and rearrangements
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def grad_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum()), (a,), grad_fn)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def grad_fn(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(np.asarray(a.data.mean()), (a,), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")

    def grad_fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [N, C, H, W] tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels needs 4-D tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]

    def grad_fn(g):
        _accumulate(a, g[:, :ca])
        _accumulate(b, g[:, ca:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), grad_fn)


def concat_parts(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate equally-ranked tensors along ``axis``; gradients slice
    back to the parts."""
    if not parts:
        raise ContractError("concat_parts needs at least one tensor")
    parents = tuple(parts)
    bounds = [0]
    for p in parents:
        bounds.append(bounds[-1] + p.shape[axis])

    def grad_fn(g):
        key: list = [slice(None)] * g.ndim
        for p, lo, hi in zip(parents, bounds[:-1], bounds[1:]):
            key[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(key)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parents, grad_fn)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    """View of channels [lo, hi) of a [N, C, ...] tensor."""
    if x.ndim < 2 or not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"slice_channels: range [{lo}, {hi}) invalid for {x.shape}")

    def grad_fn(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[:, lo:hi] += g

    return _make(x.data[:, lo:hi], (x,), grad_fn)


def stack_steps(steps: Sequence[Tensor]) -> Tensor:
    """Stack per-step tensors [N, ...] into one [N, T, ...] tensor."""
    if not steps:
        raise ContractError("stack_steps needs at least one tensor")
    first = steps[0].shape
    for s in steps:
        if s.shape != first:
            raise ShapeError(f"stack_steps: shapes {first} and {s.shape} differ")
    parents = tuple(steps)

    def grad_fn(g):
        for t, s in enumerate(parents):
            _accumulate(s, g[:, t])

    return _make(np.stack([s.data for s in steps], axis=1), parents, grad_fn)


# ---------------------------------------------------------------------------
# dense and convolution
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: out[..., j] = sum_i x[..., i] w[i, j] + b[j]."""
    if weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"dense: weight must be 2-D and bias 1-D, got {weight.shape}, {bias.shape}")
    d_in, d_out = weight.shape
    if x.ndim < 1 or x.shape[-1] != d_in:
        raise ShapeError(f"dense: input width {x.shape} does not match weight {weight.shape}")
    if bias.shape[0] != d_out:
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")

    # collapse leading axes so the product runs as a single 2-D GEMM
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, d_in)
    y = (x2 @ weight.data + bias.data).reshape(*lead, d_out)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g).reshape(-1, d_out)
        _accumulate(x, (g2 @ weight.data.T).reshape(x.shape))
        _accumulate(weight, x2.T @ g2)
        _accumulate(bias, g2.sum(axis=0))

    return _make(y, (x, weight, bias), grad_fn)


def conv_output_shape(in_hw, kernel_hw, stride, padding) -> tuple[int, int]:
    h = (in_hw[0] + 2 * padding[0] - kernel_hw[0]) // stride[0] + 1
    w = (in_hw[1] + 2 * padding[1] - kernel_hw[1]) // stride[1] + 1
    return h, w


def _check_conv_shapes(x_shape, k_shape, b_shape, stride, padding):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise ShapeError(f"conv2d: input {x_shape} and kernel {k_shape} must be 4-D")
    n, c_in, h, w = x_shape
    c_out, kc_in, kh, kw = k_shape
    if c_in != kc_in:
        raise ShapeError(f"conv2d: input channels {x_shape} vs kernel {k_shape}")
    if b_shape != (c_out,):
        raise ShapeError(f"conv2d: bias {b_shape} does not match kernel {k_shape}")
    if h + 2 * padding[0] < kh or w + 2 * padding[1] < kw:
        raise ShapeError(
            f"conv2d: kernel {k_shape} larger than padded input {x_shape} "
            f"with padding {tuple(padding)}"
        )


def _pad_input(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if not (ph or pw):
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, :, ph : ph + h, pw : pw + w] = x
    return xp


_PATCH_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _patch_index(c, hp, wp, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    """Flat gather indices [C*kh*kw, oh*ow] into one padded sample, cached
    per convolution signature."""
    key = (c, hp, wp, kh, kw, sh, sw, oh, ow)
    idx = _PATCH_INDEX_CACHE.get(key)
    if idx is None:
        ci = np.arange(c)[:, None, None, None, None]
        ki = np.arange(kh)[None, :, None, None, None]
        kj = np.arange(kw)[None, None, :, None, None]
        oi = np.arange(oh)[None, None, None, :, None]
        oj = np.arange(ow)[None, None, None, None, :]
        idx = ((ci * hp + ki + oi * sh) * wp + kj + oj * sw).reshape(c * kh * kw, oh * ow)
        idx = np.ascontiguousarray(idx)
        _PATCH_INDEX_CACHE[key] = idx
    return idx


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Patch matrix [N, C*kh*kw, oh*ow] from a padded input [N, C, Hp, Wp]."""
    n, c, hp, wp = xp.shape
    idx = _patch_index(c, hp, wp, kh, kw, sh, sw, oh, ow)
    cols = xp.reshape(n, c * hp * wp).take(idx.reshape(-1), axis=1)
    return cols.reshape(n, idx.shape[0], idx.shape[1])


def _col2im(cols: np.ndarray, padded_shape, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back onto the padded grid."""
    n, c, hp, wp = padded_shape
    idx = _patch_index(c, hp, wp, kh, kw, sh, sw, oh, ow).reshape(-1)
    size = c * hp * wp
    out = np.empty((n, size), dtype=np.float64)
    flat = cols.reshape(n, -1)
    for b in range(n):
        out[b] = np.bincount(idx, weights=flat[b], minlength=size)
    return out.reshape(padded_shape)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """Zero-padded cross-correlation of [N, C_in, H, W] with [C_out, C_in, kH, kW]."""
    stride = (int(stride[0]), int(stride[1]))
    padding = (int(padding[0]), int(padding[1]))
    _check_conv_shapes(x.shape, kernel.shape, bias.shape, stride, padding)
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = conv_output_shape((h, w), (kh, kw), stride, padding)

    xp = _pad_input(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)  # [N, C_in*kh*kw, oh*ow]
    k2d = kernel.data.reshape(c_out, c_in * kh * kw)
    y = (k2d @ cols).reshape(n, c_out, oh, ow) + bias.data.reshape(1, c_out, 1, 1)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g).reshape(n, c_out, oh * ow)
        # kernel: sum over batch and output pixels of g (x) patches
        gk = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
        _accumulate(kernel, gk.reshape(kernel.shape))
        _accumulate(bias, g.sum(axis=(0, 2, 3)))
        # input: scatter k^T g back through the patch map
        gcols = np.matmul(k2d.T, g2)
        gx = _col2im(gcols, xp.shape, kh, kw, sh, sw, oh, ow)
        if ph or pw:
            gx = gx[:, :, ph : ph + h, pw : pw + w]
        _accumulate(x, gx)

    return _make(y, (x, kernel, bias), grad_fn)


def conv2d_reference(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Direct-loop cross-correlation on raw arrays; the oracle for conv2d."""
    stride = (int(stride[0]), int(stride[1]))
    padding = (int(padding[0]), int(padding[1]))
    _check_conv_shapes(x.shape, kernel.shape, bias.shape, stride, padding)
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = conv_output_shape((h, w), (kh, kw), stride, padding)

    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.empty((n, c_out, oh, ow), dtype=np.float64)
    for b in range(n):
        for co in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[b, co, i, j] = np.sum(patch * kernel[co]) + bias[co]
    return out


# ---------------------------------------------------------------------------
# gradient extraction and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(loss: Tensor, params: Iterable[Tensor]) -> dict[int, Tensor]:
    """Differentiate a scalar loss with respect to ``params``.

    Returns a map from ``id(param)`` to a gradient tensor of the same shape.
    Parameters the loss does not depend on get zero gradients. Existing
    ``.grad`` fields on the parameters are replaced, not accumulated into.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    out: dict[int, Tensor] = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        out[id(p)] = Tensor(g)
    return out


def finite_difference_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function at ``x``."""
    if h <= 0:
        raise ContractError(f"finite difference step must be positive, got {h}")
    base = np.array(x.data, dtype=np.float64)
    grad = np.empty_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar_value(f(Tensor(base)))
        flat[i] = orig - h
        fm = _scalar_value(f(Tensor(base)))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad)


def _scalar_value(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)
