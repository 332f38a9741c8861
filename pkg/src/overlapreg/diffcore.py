"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Just enough machinery for point-wise MLPs, masked max-pooling, concatenation,
row softmax, and the training losses: no broadcasting beyond scalars and row
biases, no views, 64-bit floats throughout. Also home to the Adam update and
the binary checkpoint format.

A graph belongs to one thread for its forward/backward lifetime; independent
graphs may run in parallel, and everything here is deterministic given the
same graph construction order.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np


class Tensor:
    """Node in the compute graph: payload array, gradient slot, parent links."""

    __slots__ = ("data", "grad", "parents", "requires_grad", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def grad_or_zero(self) -> np.ndarray:
        """Gradient after backward(); nodes the root does not depend on get 0."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; floats are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return mul(self, constant(-1.0))


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _check_same_or_scalar(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and not (_scalar(a) or _scalar(b)):
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    """Collapse a broadcasted gradient back to a scalar operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    return np.sum(grad).reshape(shape) if np.prod(shape, dtype=int) == 1 else grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_scalar(a, b, "add")

    def bwd(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape))

    return Tensor(a.data + b.data, parents=(a, b), backward=bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_scalar(a, b, "sub")

    def bwd(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape))

    return Tensor(a.data - b.data, parents=(a, b), backward=bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_scalar(a, b, "mul")

    def bwd(g):
        return (_reduce_to(g * b.data, a.data.shape), _reduce_to(g * a.data, b.data.shape))

    return Tensor(a.data * b.data, parents=(a, b), backward=bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_scalar(a, b, "div")

    def bwd(g):
        ga = _reduce_to(g / b.data, a.data.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.data.shape)
        return (ga, gb)

    return Tensor(a.data / b.data, parents=(a, b), backward=bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return Tensor(a.data @ b.data, parents=(a, b), backward=bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (n, m) plus a row bias b (m,); the one sanctioned broadcast."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ValueError(f"add_bias: shapes {x.data.shape} vs {b.data.shape}")

    def bwd(g):
        return (g, g.sum(axis=0))

    return Tensor(x.data + b.data, parents=(x, b), backward=bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.data, 0.0), parents=(x,), backward=bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g):
        return (g / x.data,)

    return Tensor(np.log(x.data), parents=(x,), backward=bwd)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g):
        return (g * (0.5 / out),)

    return Tensor(out, parents=(x,), backward=bwd)


def absval(x: Tensor) -> Tensor:
    def bwd(g):
        return (g * np.sign(x.data),)

    return Tensor(np.abs(x.data), parents=(x,), backward=bwd)


def clip(x: Tensor, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient passes only where the input was not clamped."""
    passthrough = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        passthrough &= x.data >= lo
    if hi is not None:
        passthrough &= x.data <= hi

    def bwd(g):
        return (g * passthrough,)

    return Tensor(np.clip(x.data, lo, hi), parents=(x,), backward=bwd)


def concat_cols(*tensors: Tensor) -> Tensor:
    rows = {t.data.shape[0] for t in tensors}
    if len(rows) != 1 or any(t.data.ndim != 2 for t in tensors):
        raise ValueError(f"concat_cols: row counts differ: {[t.data.shape for t in tensors]}")
    widths = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    return Tensor(np.concatenate([t.data for t in tensors], axis=1), parents=tensors, backward=bwd)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[1]):
        raise ValueError(f"slice_cols: [{start}:{stop}] invalid for shape {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor(x.data[:, start:stop].copy(), parents=(x,), backward=bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, numerically shifted; rows of the output sum to 1."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, parents=(x,), backward=bwd)


def pointwise_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale every feature row of x (n, m) by the per-point factor s (n, 1)."""
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0], 1):
        raise ValueError(f"pointwise_scale: shapes {x.data.shape} vs {s.data.shape}")

    def bwd(g):
        gx = g * s.data if x.requires_grad else None
        gs = (g * x.data).sum(axis=1, keepdims=True) if s.requires_grad else None
        return (gx, gs)

    return Tensor(x.data * s.data, parents=(x, s), backward=bwd)


def max_rows(x: Tensor) -> Tensor:
    """Column-wise max over rows, (n, m) -> (1, m). Gradient lands on the argmax
    row of each channel; ties go to the lowest row index."""
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ValueError(f"max_rows: need a non-empty (n, m) input, got {x.data.shape}")
    arg = np.argmax(x.data, axis=0)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[arg, np.arange(x.data.shape[1])] = g[0]
        return (gx,)

    return Tensor(x.data[arg, np.arange(x.data.shape[1])][None, :], parents=(x,), backward=bwd)


def masked_maxpool(x: Tensor, mask: Tensor) -> Tensor:
    """Max over rows of the mask-scaled features; mask all-ones gives the plain max."""
    return max_rows(pointwise_scale(x, mask))


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Tile a (1, m) row vector to (n, m); backward sums over the copies."""
    if x.data.shape[0] != 1 or x.data.ndim != 2:
        raise ValueError(f"repeat_rows: need (1, m) input, got {x.data.shape}")

    def bwd(g):
        return (g.sum(axis=0, keepdims=True),)

    return Tensor(np.repeat(x.data, n, axis=0), parents=(x,), backward=bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        return (np.full_like(x.data, float(g)),)

    return Tensor(np.sum(x.data), parents=(x,), backward=bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)

    return Tensor(np.mean(x.data), parents=(x,), backward=bwd)


def detach(x: Tensor) -> Tensor:
    """Copy of x severed from the graph; gradients stop here."""
    return Tensor(x.data.copy(), requires_grad=False)


def backward(root: Tensor) -> None:
    """Reverse-mode pass from a scalar root: fills .grad on every reachable
    requires_grad node with d(root)/d(node). Each node is visited exactly once."""
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.data.shape}")
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# MLP parameters


@dataclass
class LinearLayer:
    weight: Tensor  # (in_dim, out_dim)
    bias: Tensor  # (out_dim,)
    relu: bool


class MlpParams:
    """Stack of linear layers with optional ReLU, applied point-wise (rows)."""

    def __init__(self, name: str, layers: list):
        self.name = name
        self.layers = layers

    @classmethod
    def create(cls, name: str, in_dim: int, widths: list, rng: np.random.Generator, final_relu: bool = True) -> "MlpParams":
        """Kaiming-uniform fan-in weights, zero biases."""
        layers = []
        last = in_dim
        for i, out_dim in enumerate(widths):
            bound = np.sqrt(6.0 / last)
            w = parameter(rng.uniform(-bound, bound, size=(last, out_dim)))
            b = parameter(np.zeros(out_dim))
            is_last = i == len(widths) - 1
            layers.append(LinearLayer(w, b, relu=final_relu or not is_last))
            last = out_dim
        return cls(name, layers)

    def forward(self, x: Tensor, start: int = 0, upto: int | None = None) -> Tensor:
        """Run layers [start:upto); defaults run the whole stack."""
        for layer in self.layers[start : upto if upto is not None else len(self.layers)]:
            x = add_bias(matmul(x, layer.weight), layer.bias)
            if layer.relu:
                x = relu(x)
        return x

    def named_tensors(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{self.name}.{i}.weight"] = layer.weight
            out[f"{self.name}.{i}.bias"] = layer.bias
        return out

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.data.shape[1]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def fresh(cls) -> "AdamState":
        return cls(step=0, m={}, v={})


def adam_step(values: dict, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One Adam update with bias correction. Pure: returns (new_values, new_state).

    Missing gradients are treated as zero (the parameter keeps its moments).
    """
    b1, b2 = betas
    t = state.step + 1
    new_values = {}
    new_m = {}
    new_v = {}
    for name in values:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(values[name])
        m = b1 * state.m.get(name, np.zeros_like(values[name])) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(values[name])) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_values[name] = values[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_values, AdamState(step=t, m=new_m, v=new_v)


class AdamOptimizer:
    """In-place wrapper around `adam_step` for a dict of parameter Tensors."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.fresh()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        values = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        new_values, self.state = adam_step(values, grads, self.state, self.lr, self.betas, self.eps)
        for k, p in self.params.items():
            p.data = new_values[k]


# ---------------------------------------------------------------------------
# Checkpoint file: magic OMRG, version, JSON metadata, named float64 arrays.

CHECKPOINT_MAGIC = b"OMRG"
CHECKPOINT_VERSION = 1


def _write_array(f, name: str, arr: np.ndarray):
    name_b = name.encode("utf-8")
    f.write(struct.pack("<I", len(name_b)))
    f.write(name_b)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(arr.tobytes(order="C"))


def _read_array(f):
    (name_len,) = struct.unpack("<I", f.read(4))
    name = f.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).astype(np.float64)
    return name, data


def save_checkpoint(path, params: dict, meta: dict, opt_state: AdamState | None = None) -> None:
    """Write named parameter arrays plus optional optimizer state; bit-exact
    round trip through `load_checkpoint`."""
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(meta_b)))
        f.write(meta_b)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            _write_array(f, name, params[name])
        if opt_state is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<Q", opt_state.step))
            f.write(struct.pack("<I", len(opt_state.m)))
            for name in sorted(opt_state.m):
                _write_array(f, "m." + name, opt_state.m[name])
                _write_array(f, "v." + name, opt_state.v[name])


def load_checkpoint(path):
    """Returns (params dict, meta dict, AdamState or None)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (n_params,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(n_params):
            name, arr = _read_array(f)
            params[name] = arr
        (has_opt,) = struct.unpack("<B", f.read(1))
        opt_state = None
        if has_opt:
            (step,) = struct.unpack("<Q", f.read(8))
            (n_state,) = struct.unpack("<I", f.read(4))
            m = {}
            v = {}
            for _ in range(n_state):
                name, arr = _read_array(f)
                m[name[2:]] = arr
                name, arr = _read_array(f)
                v[name[2:]] = arr
            opt_state = AdamState(step=step, m=m, v=v)
    return params, meta, opt_state
