"""Dense tensors with reverse-mode gradients, backed by numpy arrays.

Every operation is a pure function of its inputs and builds a node in a
computation graph; calling ``backward()`` on a scalar result accumulates
gradients into every reachable tensor with ``requires_grad=True``.

Shape discipline is strict: there is no implicit broadcasting. Operations
that support a leading batch dimension say so explicitly; everything else
requires exactly matching shapes and raises ``DimensionError`` otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, DimensionError, ZeroNormError

# Norms below this are treated as zero vectors (an error, not a default):
# a silently substituted direction would hide representation collapse.
COSINE_NORM_GUARD = 1e-12

_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Array value plus optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(
                f"tensor {self.name or '<unnamed>'} contains non-finite values"
            )

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root."""
        if self.data.shape != ():
            raise DimensionError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Operator sugar; the named functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, float(other), 0.0)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return affine(self, -1.0, 0.0)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(op: str, a: Tensor, b: Tensor, lhs: str = "lhs", rhs: str = "rhs"):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: {lhs} shape {a.data.shape} does not match {rhs} shape {b.data.shape}"
        )


# ---------------------------------------------------------------------------
# Elementwise and reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def affine(a: Tensor, scale: float, shift: float) -> Tensor:
    """Elementwise scale * a + shift with python-scalar coefficients."""
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g * scale)

    data = a.data * scale
    if shift != 0.0:
        data = data + np.asarray(shift, dtype=a.data.dtype)
    return _result(data, (a,), backward)


def add_n(tensors) -> Tensor:
    """Sum of same-shaped tensors as a single graph node."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DegenerateInputError("add_n: empty input list")
    for t in ts[1:]:
        _check_same_shape("add_n", ts[0], t, "first", "later operand")

    def backward(g):
        for t in ts:
            _accum(t, g)

    total = ts[0].data.copy()
    for t in ts[1:]:
        total += t.data
    return _result(total, tuple(ts), backward)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, np.full_like(a.data, g))

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    interior = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accum(a, g * interior)

    return _result(np.clip(a.data, lo, hi), (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _result(np.maximum(a.data, 0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # Stable in both tails: exp of a non-positive argument only.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    y = y.astype(x.dtype, copy=False)

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _result(y, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis of a 1-D or 2-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"softmax: expected 1-D or 2-D input, got shape {a.data.shape}")
    if a.data.shape[-1] < 1:
        raise DegenerateInputError("softmax: input length must be >= 1")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - inner))

    return _result(y, (a,), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    """Row ``index`` of a 2-D tensor as a 1-D view with scatter backward."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"take_row: expected 2-D input, got shape {a.data.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _result(a.data[index].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# Layers


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: weight (out, in), bias (out,); x is (in,) or (batch, in)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if weight.data.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-D, got shape {weight.data.shape}")
    if bias.data.ndim != 1 or bias.data.shape[0] != weight.data.shape[0]:
        raise DimensionError(
            f"linear: bias shape {bias.data.shape} does not match weight rows "
            f"{weight.data.shape[0]}"
        )
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != weight.data.shape[1]:
        raise DimensionError(
            f"linear: input shape {x.data.shape} does not match weight columns "
            f"{weight.data.shape[1]}"
        )
    y = x.data @ weight.data.T + bias.data

    def backward(g):
        _accum(x, g @ weight.data)
        if x.data.ndim == 1:
            _accum(weight, np.outer(g, x.data))
            _accum(bias, g)
        else:
            _accum(weight, g.T @ x.data)
            _accum(bias, g.sum(axis=0))

    return _result(y, (x, weight, bias), backward)


def _conv_geometry(t_in: int, k: int, stride: int, padding: str):
    if padding == "valid":
        if k > t_in:
            raise DegenerateInputError(
                f"conv1d: kernel width {k} exceeds input length {t_in} (valid padding)"
            )
        return (t_in - k) // stride + 1, 0, 0
    if padding == "same":
        t_out = -(-t_in // stride)
        pad_total = max((t_out - 1) * stride + k - t_in, 0)
        pad_left = pad_total // 2
        return t_out, pad_left, pad_total - pad_left
    raise DimensionError(f"conv1d: unknown padding {padding!r}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "valid") -> Tensor:
    """Temporal cross-correlation.

    x: (T, C_in) or (batch, T, C_in); kernels: (C_out, K, C_in); bias: (C_out,).
    Output: (T', C_out) or (batch, T', C_out).
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if kernels.data.ndim != 3:
        raise DimensionError(f"conv1d: kernels must be 3-D, got shape {kernels.data.shape}")
    c_out, k, c_in = kernels.data.shape
    if bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv1d: bias shape {bias.data.shape} does not match output channels {c_out}"
        )
    if x.data.ndim not in (2, 3) or x.data.shape[-1] != c_in:
        raise DimensionError(
            f"conv1d: input shape {x.data.shape} does not match kernel channels {c_in}"
        )
    if not isinstance(stride, int) or stride < 1:
        raise DimensionError(f"conv1d: stride must be a positive int, got {stride!r}")

    single = x.data.ndim == 2
    xb = x.data[None] if single else x.data
    b, t_in, _ = xb.shape
    if t_in < 1:
        raise DegenerateInputError("conv1d: input has no frames")
    t_out, pad_left, pad_right = _conv_geometry(t_in, k, stride, padding)
    if pad_left or pad_right:
        xp = np.pad(xb, ((0, 0), (pad_left, pad_right), (0, 0)))
    else:
        xp = xb
    starts = np.arange(t_out) * stride
    idx = starts[:, None] + np.arange(k)[None, :]
    cols = xp[:, idx, :].reshape(b, t_out, k * c_in)
    wmat = kernels.data.reshape(c_out, k * c_in)
    y = cols @ wmat.T + bias.data
    if single:
        y = y[0]

    def backward(g):
        g3 = g[None] if single else g
        _accum(bias, g3.sum(axis=(0, 1)))
        gm = g3.reshape(b * t_out, c_out)
        _accum(kernels, (gm.T @ cols.reshape(b * t_out, k * c_in)).reshape(c_out, k, c_in))
        dcols = (g3 @ wmat).reshape(b, t_out, k, c_in)
        dxp = np.zeros_like(xp)
        # Within one kernel offset the target frames are distinct, so a
        # fancy-indexed += per offset scatters exactly.
        for j in range(k):
            dxp[:, starts + j, :] += dcols[:, :, j, :]
        dx = dxp[:, pad_left:pad_left + t_in, :]
        _accum(x, dx[0] if single else dx)

    return _result(y, (x, kernels, bias), backward)


def max_pool_over_time(x: Tensor) -> Tensor:
    """Per-channel max over the time axis; x is (T, C) or (batch, T, C).

    Backward routes the gradient to the first maximal frame per channel.
    """
    x = _as_tensor(x)
    if x.data.ndim not in (2, 3):
        raise DimensionError(
            f"max_pool_over_time: expected (T, C) or (batch, T, C), got {x.data.shape}"
        )
    single = x.data.ndim == 2
    xb = x.data[None] if single else x.data
    b, t_in, c = xb.shape
    if t_in < 1:
        raise DegenerateInputError("max_pool_over_time: input has no frames")
    argmax = xb.argmax(axis=1)  # first occurrence on ties
    out = np.take_along_axis(xb, argmax[:, None, :], axis=1)[:, 0, :]
    if single:
        out = out[0]

    def backward(g):
        g2 = g[None] if single else g
        dx = np.zeros_like(xb)
        dx[np.arange(b)[:, None], argmax, np.arange(c)[None, :]] = g2
        _accum(x, dx[0] if single else dx)

    return _result(out, (x,), backward)


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """1 - cos(a, b) for 1-D vectors; value in [0, 2]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(
            f"cosine_distance: expected 1-D vectors, got {a.data.shape} and {b.data.shape}"
        )
    _check_same_shape("cosine_distance", a, b, "a", "b")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na < COSINE_NORM_GUARD:
        raise ZeroNormError(f"cosine_distance: operand a has norm {na:.3e} below guard")
    if nb < COSINE_NORM_GUARD:
        raise ZeroNormError(f"cosine_distance: operand b has norm {nb:.3e} below guard")
    dot = float(a.data @ b.data)
    dist = 1.0 - dot / (na * nb)

    def backward(g):
        _accum(a, g * (-(b.data / (na * nb)) + dot * a.data / (na ** 3 * nb)))
        _accum(b, g * (-(a.data / (na * nb)) + dot * b.data / (na * nb ** 3)))

    return _result(np.asarray(dist, dtype=a.data.dtype), (a, b), backward)
