"""Minimal reverse-mode automatic differentiation on numpy arrays.

Operations are ``Function`` subclasses with a ``forward`` and a ``backward``
rule. Calling ``Op.apply(...)`` while a :class:`Tape` is active records a node
on that tape; ``tape.backward(loss)`` replays the nodes in reverse order and
accumulates gradients into every leaf tensor with ``requires_grad=True``.
Outside a tape, operations run as plain numpy code with no bookkeeping, which
is what inference uses.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

REGISTRY: dict[str, type["Function"]] = {}

_active = threading.local()


class Tensor:
    """An n-d array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Node:
    __slots__ = ("fn", "ctx", "inputs", "outputs")

    def __init__(self, fn, ctx, inputs, outputs):
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs
        self.outputs = outputs


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations executed inside the block are
    appended in execution order, which is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_active, "tape", None)
        _active.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _active.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def current_tape() -> Tape | None:
    return getattr(_active, "tape", None)


class no_grad:
    """Suspend recording inside a tape block."""

    def __enter__(self):
        self._prev = getattr(_active, "tape", None)
        _active.tape = None

    def __exit__(self, *exc):
        _active.tape = self._prev


class Ctx:
    """Scratch space shared between a forward and its backward."""

    def save(self, **kw):
        self.__dict__.update(kw)


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward(ctx, *arrays, **kw)`` returning an array
    (or a tuple of arrays) and ``backward(ctx, *out_grads)`` returning one
    gradient per tensor input, ``None`` meaning zero.
    """

    name: str = ""

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.name:
            REGISTRY[cls.name] = cls

    @staticmethod
    def forward(ctx, *args, **kw):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, *grads):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kw):
        ref = next((t.dtype for t in inputs if isinstance(t, Tensor)), None)
        tensors = [as_tensor(t, dtype=ref) for t in inputs]
        ctx = Ctx()
        out = cls.forward(ctx, *[t.data for t in tensors], **kw)
        multi = isinstance(out, tuple)
        outs = tuple(Tensor(o) for o in out) if multi else (Tensor(out),)
        tape = current_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            for o in outs:
                o.requires_grad = True
            tape.nodes.append(Node(cls, ctx, tensors, outs))
        return outs if multi else outs[0]


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf that requires grad.

    Gradients are accumulated, so tensors consumed by several operations
    receive the sum of the per-use contributions. Leaf gradients add onto any
    existing ``.grad``; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced: set[int] = set()
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        for o in node.outputs:
            produced.add(id(o))
    for node in reversed(tape.nodes):
        out_grads = [grads.pop(id(o), None) for o in node.outputs]
        if all(g is None for g in out_grads):
            continue
        out_grads = [
            np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, out_grads)
        ]
        in_grads = node.fn.backward(node.ctx, *out_grads)
        if not isinstance(in_grads, tuple):
            in_grads = (in_grads,)
        if len(in_grads) != len(node.inputs):
            raise RuntimeError(
                f"{node.fn.__name__}.backward returned {len(in_grads)} grads for {len(node.inputs)} inputs"
            )
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise RuntimeError(
                    f"{node.fn.__name__}.backward: grad shape {g.shape} != input shape {t.shape}"
                )
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = t
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(t.data.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise and layout ops


class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(sa=a.shape, sb=b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.sa), _unbroadcast(g, ctx.sb)


class Sub(Function):
    name = "sub"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(sa=a.shape, sb=b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.sa), _unbroadcast(-g, ctx.sb)


class Mul(Function):
    name = "mul"

    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g * ctx.b, ctx.a.shape), _unbroadcast(g * ctx.a, ctx.b.shape)


class MatMul(Function):
    """Batched matrix product with numpy broadcasting of leading dims."""

    name = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        ctx.save(a=a, b=b)
        return a @ b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.a, ctx.b
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Reshape(Function):
    name = "reshape"

    @staticmethod
    def forward(ctx, x, shape):
        ctx.save(shape=x.shape)
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx.shape),)


class Transpose(Function):
    name = "transpose"

    @staticmethod
    def forward(ctx, x, axes=None):
        axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        ctx.save(axes=axes)
        return np.transpose(x, axes)

    @staticmethod
    def backward(ctx, g):
        return (np.transpose(g, np.argsort(ctx.axes)),)


class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        ctx.save(shape=x.shape, axis=axis, keepdims=keepdims)
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, g):
        if ctx.axis is not None and not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        return (np.broadcast_to(g, ctx.shape).copy(),)


class Mean(Function):
    name = "mean"

    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
        ctx.save(shape=x.shape, axis=axis, keepdims=keepdims, n=n)
        return np.asarray(x.mean(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, g):
        if ctx.axis is not None and not ctx.keepdims:
            g = np.expand_dims(g, ctx.axis)
        return (np.broadcast_to(g / ctx.n, ctx.shape).copy(),)


class Concat(Function):
    name = "concat"

    @staticmethod
    def forward(ctx, *xs, axis=0):
        ctx.save(sizes=[x.shape[axis] for x in xs], axis=axis)
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, g):
        cuts = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.split(g, cuts, axis=ctx.axis))


class Stack(Function):
    name = "stack"

    @staticmethod
    def forward(ctx, *xs, axis=0):
        ctx.save(axis=axis, n=len(xs))
        return np.stack(xs, axis=axis)

    @staticmethod
    def backward(ctx, g):
        return tuple(np.take(g, i, axis=ctx.axis) for i in range(ctx.n))


class Unstack(Function):
    """Split along ``axis`` into slices with that axis removed."""

    name = "unstack"

    @staticmethod
    def forward(ctx, x, axis=0):
        ctx.save(axis=axis, shape=x.shape)
        return tuple(np.take(x, i, axis=axis) for i in range(x.shape[axis]))

    @staticmethod
    def backward(ctx, *gs):
        return (np.stack(gs, axis=ctx.axis),)


# When set, ReLU appends its packed activation pattern here. Gradient checking
# uses it to spot central differences that straddle a kink.
_KINK_LOG: list[bytes] | None = None


class ReLU(Function):
    name = "relu"

    @staticmethod
    def forward(ctx, x):
        mask = x > 0
        ctx.save(mask=mask)
        if _KINK_LOG is not None:
            _KINK_LOG.append(np.packbits(mask).tobytes())
        return x * mask

    @staticmethod
    def backward(ctx, g):
        return (g * ctx.mask,)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, x):
        y = _sigmoid(x)
        ctx.save(y=y)
        return y

    @staticmethod
    def backward(ctx, g):
        return (g * ctx.y * (1.0 - ctx.y),)


class Tanh(Function):
    name = "tanh"

    @staticmethod
    def forward(ctx, x):
        y = np.tanh(x)
        ctx.save(y=y)
        return y

    @staticmethod
    def backward(ctx, g):
        return (g * (1.0 - ctx.y * ctx.y),)


class Softmax(Function):
    """Softmax along one axis."""

    name = "softmax"

    @staticmethod
    def forward(ctx, x, axis=-1):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
        ctx.save(s=s, axis=axis)
        return s

    @staticmethod
    def backward(ctx, g):
        s = ctx.s
        return (s * (g - (g * s).sum(axis=ctx.axis, keepdims=True)),)


class RowwiseSoftmax(Function):
    """Row softmax restricted to the support given by a {0,1} mask.

    Masked entries are excluded from the normalization (as if set to -inf)
    and come out exactly zero.
    """

    name = "rowwise_softmax"

    @staticmethod
    def forward(ctx, m, support_mask):
        if m.ndim != 2 or m.shape != support_mask.shape:
            raise ValueError(f"rowwise_softmax: matrix {m.shape} vs mask {support_mask.shape}")
        keep = support_mask > 0
        if not keep.any(axis=1).all():
            bad = int(np.flatnonzero(~keep.any(axis=1))[0])
            raise ValueError(f"rowwise_softmax: row {bad} has an all-zero mask, normalization undefined")
        shifted = np.where(keep, m, -np.inf)
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        e = np.where(keep, np.exp(shifted), 0.0).astype(m.dtype, copy=False)
        s = e / e.sum(axis=1, keepdims=True)
        ctx.save(s=s)
        return s

    @staticmethod
    def backward(ctx, g):
        s = ctx.s
        return s * (g - (g * s).sum(axis=1, keepdims=True)), None


class CrossEntropy(Function):
    """Mean softmax cross-entropy of ``logits[B, K]`` against integer labels."""

    name = "cross_entropy"

    @staticmethod
    def forward(ctx, logits, labels):
        labels = labels.astype(np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError(f"cross_entropy: labels must lie in 0..{logits.shape[1] - 1}")
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsum
        rows = np.arange(len(labels))
        ctx.save(p=np.exp(logp), labels=labels)
        return np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    @staticmethod
    def backward(ctx, g):
        grad = ctx.p.copy()
        rows = np.arange(len(ctx.labels))
        grad[rows, ctx.labels] -= 1.0
        return grad * (g / len(ctx.labels)), None


class MSE(Function):
    """Mean of squared differences over all entries."""

    name = "mse"

    @staticmethod
    def forward(ctx, a, b):
        if a.shape != b.shape:
            raise ValueError(f"mse: shapes differ {a.shape} vs {b.shape}")
        d = a - b
        ctx.save(d=d)
        return np.asarray((d * d).mean(), dtype=a.dtype)

    @staticmethod
    def backward(ctx, g):
        gd = g * 2.0 * ctx.d / ctx.d.size
        return gd, -gd


class Dropout(Function):
    """Inverted dropout with a caller-supplied keep mask."""

    name = "dropout"

    @staticmethod
    def forward(ctx, x, keep, p):
        scale = keep / (1.0 - p)
        ctx.save(scale=scale.astype(x.dtype, copy=False))
        return x * ctx.scale

    @staticmethod
    def backward(ctx, g):
        return g * ctx.scale, None


# convolutions


class Conv1d(Function):
    """Cross-correlation ``y[b,o,n] = sum_{c,j} xpad[b,c,n+j] * K[o,c,j] + bias[o]``."""

    name = "conv1d"

    @staticmethod
    def forward(ctx, x, kernel, bias, padding=0):
        if x.ndim != 3 or kernel.ndim != 3:
            raise ValueError(f"conv1d expects x[B,Cin,N] and kernel[Cout,Cin,k], got {x.shape} and {kernel.shape}")
        if x.shape[1] != kernel.shape[1]:
            raise ValueError(f"conv1d channel mismatch: x {x.shape} vs kernel {kernel.shape}")
        if bias.shape != (kernel.shape[0],):
            raise ValueError(f"conv1d bias {bias.shape} does not match kernel {kernel.shape}")
        k = kernel.shape[2]
        if padding < 0 or k < 1 or x.shape[2] + 2 * padding < k:
            raise ValueError(f"conv1d: invalid padding={padding} / k={k} for length {x.shape[2]}")
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
        cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B,Cin,N',k]
        ctx.save(cols=cols, kernel=kernel, padding=padding, n=x.shape[2], k=k)
        out = np.einsum("bcnk,ock->bon", cols, kernel, optimize=True)
        return out + bias[None, :, None]

    @staticmethod
    def backward(ctx, g):
        gk = np.einsum("bcnk,bon->ock", ctx.cols, g, optimize=True)
        gb = g.sum(axis=(0, 2))
        b, cin, _, k = ctx.cols.shape
        nout = g.shape[2]
        gxp = np.zeros((b, cin, ctx.n + 2 * ctx.padding), dtype=g.dtype)
        for j in range(k):
            gxp[:, :, j : j + nout] += np.einsum("bon,oc->bcn", g, ctx.kernel[:, :, j], optimize=True)
        p = ctx.padding
        gx = gxp[:, :, p : p + ctx.n] if p else gxp
        return gx, gk, gb


class ConvTranspose1d(Function):
    """Adjoint of ``conv1d`` (padding 0): ``y[b,o,n+j] += z[b,c,n] * K[c,o,j]``."""

    name = "conv_transpose1d"

    @staticmethod
    def forward(ctx, z, kernel, bias):
        if z.ndim != 3 or kernel.ndim != 3:
            raise ValueError(
                f"conv_transpose1d expects z[B,Cin,N] and kernel[Cin,Cout,k], got {z.shape} and {kernel.shape}"
            )
        if z.shape[1] != kernel.shape[0]:
            raise ValueError(f"conv_transpose1d channel mismatch: z {z.shape} vs kernel {kernel.shape}")
        if bias.shape != (kernel.shape[1],):
            raise ValueError(f"conv_transpose1d bias {bias.shape} does not match kernel {kernel.shape}")
        b, _, n = z.shape
        cout, k = kernel.shape[1], kernel.shape[2]
        out = np.zeros((b, cout, n + k - 1), dtype=np.result_type(z, kernel))
        for j in range(k):
            out[:, :, j : j + n] += np.einsum("bcn,co->bon", z, kernel[:, :, j], optimize=True)
        ctx.save(z=z, kernel=kernel)
        return out + bias[None, :, None]

    @staticmethod
    def backward(ctx, g):
        z, kernel = ctx.z, ctx.kernel
        n = z.shape[2]
        gz = np.zeros_like(z)
        gk = np.empty_like(kernel)
        for j in range(kernel.shape[2]):
            gj = g[:, :, j : j + n]
            gz += np.einsum("bon,co->bcn", gj, kernel[:, :, j], optimize=True)
            gk[:, :, j] = np.einsum("bcn,bon->co", z, gj, optimize=True)
        return gz, gk, g.sum(axis=(0, 2))


# normalization and recurrence


class BatchNormState:
    """Running statistics for one batch-norm layer (not trainable)."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


class BatchNorm1d(Function):
    name = "batchnorm1d"

    @staticmethod
    def forward(ctx, x, gamma, beta, state: BatchNormState, train: bool = True):
        if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ValueError(f"batchnorm1d: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
        if train:
            n = x.shape[0]
            if n < 2:
                raise ValueError("batchnorm1d in train mode needs a batch of at least 2")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            m = state.momentum
            state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
            unbiased = var * n / (n - 1)
            state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)
        else:
            mu = state.running_mean.astype(x.dtype)
            var = state.running_var.astype(x.dtype)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mu) * inv
        ctx.save(xhat=xhat, inv=inv, gamma=gamma, train=train)
        return gamma * xhat + beta

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gamma = ctx.xhat, ctx.inv, ctx.gamma
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gxhat = g * gamma
        if ctx.train:
            gx = inv * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta


class LSTMCell(Function):
    """One gated recurrence step, gate order (input, forget, candidate, output).

    ``w_ih[I, 4H]``, ``w_hh[H, 4H]``, ``bias[4H]``; returns ``(h, c)``.
    """

    name = "lstm_cell"

    @staticmethod
    def forward(ctx, x, h_prev, c_prev, w_ih, w_hh, bias):
        hdim = h_prev.shape[1]
        if (
            x.ndim != 2
            or w_ih.shape != (x.shape[1], 4 * hdim)
            or w_hh.shape != (hdim, 4 * hdim)
            or bias.shape != (4 * hdim,)
            or c_prev.shape != h_prev.shape
            or h_prev.shape[0] != x.shape[0]
        ):
            raise ValueError(
                f"lstm_cell shapes inconsistent: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}, "
                f"w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape}"
            )
        pre = x @ w_ih + h_prev @ w_hh + bias
        i = _sigmoid(pre[:, :hdim])
        f = _sigmoid(pre[:, hdim : 2 * hdim])
        gc = np.tanh(pre[:, 2 * hdim : 3 * hdim])
        o = _sigmoid(pre[:, 3 * hdim :])
        c = f * c_prev + i * gc
        tc = np.tanh(c)
        h = o * tc
        ctx.save(x=x, h_prev=h_prev, c_prev=c_prev, w_ih=w_ih, w_hh=w_hh, i=i, f=f, g=gc, o=o, tc=tc)
        return h, c

    @staticmethod
    def backward(ctx, gh, gc):
        i, f, g, o, tc = ctx.i, ctx.f, ctx.g, ctx.o, ctx.tc
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * ctx.c_prev
        dpre = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        gx = dpre @ ctx.w_ih.T
        ghp = dpre @ ctx.w_hh.T
        gcp = dc * f
        gwih = ctx.x.T @ dpre
        gwhh = ctx.h_prev.T @ dpre
        gb = dpre.sum(axis=0)
        return gx, ghp, gcp, gwih, gwhh, gb


# functional API


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def reshape(x, shape) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x, axes=None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def concat(xs: Sequence[Tensor], axis=0) -> Tensor:
    return Concat.apply(*xs, axis=axis)


def stack(xs: Sequence[Tensor], axis=0) -> Tensor:
    return Stack.apply(*xs, axis=axis)


def unstack(x, axis=0) -> tuple[Tensor, ...]:
    out = Unstack.apply(x, axis=axis)
    return out if isinstance(out, tuple) else (out,)


def relu(x) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x) -> Tensor:
    return Tanh.apply(x)


def softmax(x, axis=-1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def rowwise_softmax(m, support_mask) -> Tensor:
    return RowwiseSoftmax.apply(m, np.asarray(support_mask))


def cross_entropy(logits, labels) -> Tensor:
    return CrossEntropy.apply(logits, np.asarray(labels))


def mse(a, b) -> Tensor:
    return MSE.apply(a, b)


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    x = as_tensor(x)
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    return Dropout.apply(x, keep, p=p)


def conv1d(x, kernel, bias, padding: int = 0) -> Tensor:
    return Conv1d.apply(x, kernel, bias, padding=padding)


def conv_transpose1d(z, kernel, bias) -> Tensor:
    return ConvTranspose1d.apply(z, kernel, bias)


def batchnorm1d(x, gamma, beta, state: BatchNormState, train: bool = True) -> Tensor:
    return BatchNorm1d.apply(x, gamma, beta, state=state, train=train)


def lstm_cell(x_t, h_prev, c_prev, w_ih, w_hh, bias) -> tuple[Tensor, Tensor]:
    return LSTMCell.apply(x_t, h_prev, c_prev, w_ih, w_hh, bias)


def linear(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` with ``weight[in, out]``."""
    return add(matmul(x, weight), bias)


# verification oracle


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int


def _eval_with_pattern(f: Callable[[], Tensor]) -> tuple[float, list[bytes]]:
    global _KINK_LOG
    _KINK_LOG = []
    try:
        value = float(f().data)
        return value, _KINK_LOG
    finally:
        _KINK_LOG = None


def gradcheck(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
    entries: Sequence[np.ndarray | None] | None = None,
) -> GradcheckResult:
    """Compare tape gradients with central differences, entry by entry.

    Relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``. With
    ``skip_kinks`` an entry is left out when some ReLU changes its activation
    pattern between ``p + h`` and ``p - h``: the function is not
    differentiable on that interval, so the difference quotient says nothing
    about the gradient. ``entries`` optionally lists, per parameter, the
    flat indices to probe (``None`` keeps the default choice).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    first = float(f().data)
    if float(f().data) != first:
        raise ValueError("gradcheck needs a deterministic f (disable dropout and other stochastic layers)")
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    if entries is not None and len(entries) != len(params):
        raise ValueError("entries needs one index array (or None) per parameter")
    worst, checked, skipped = 0.0, 0, 0
    for i, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and entries[i] is not None:
            idx = np.asarray(entries[i], dtype=int)
        elif max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            fp, pattern_p = _eval_with_pattern(f)
            flat[k] = orig - h
            fm, pattern_m = _eval_with_pattern(f)
            flat[k] = orig
            if skip_kinks and pattern_p != pattern_m:
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * h)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
            checked += 1
    return GradcheckResult(worst, checked, skipped)


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` is a zero-argument closure computing a scalar from ``params``; it
    is evaluated under a fresh tape for the analytic gradient and repeatedly
    without one for the numeric estimate. ``max_entries`` caps how many
    entries per parameter are probed (chosen by ``rng``); ``None`` probes all.
    """
    return gradcheck(f, params, h, max_entries, rng).max_rel_error
