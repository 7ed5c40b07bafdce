"""Minimal reverse-mode autodiff tape with the layers the mesh model needs.

Tensors wrap 64-bit numpy arrays (up to 3 axes). Ops record a backward closure
on the tensor they produce; `backward()` walks the recorded graph once in
reverse topological order. No implicit broadcasting beyond row-vector addition.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class GradientError(RuntimeError):
    """Non-finite gradients or malformed parameter/gradient pairing."""


# scatter matrices for gather-style backward passes, keyed by index-array
# identity; the arrays are retained so ids stay valid
_scatter_cache: dict = {}


def _transposed_scatter(indices: np.ndarray, n_rows: int):
    key = (id(indices), n_rows)
    hit = _scatter_cache.get(key)
    if hit is not None:
        return hit[1]
    flat = indices.ravel()
    m = sp.csr_matrix(
        (np.ones(flat.shape[0]), (np.arange(flat.shape[0]), flat)),
        shape=(flat.shape[0], n_rows),
    )
    mt = sp.csr_matrix(m.T)
    _scatter_cache[key] = (indices, mt)
    return mt


class Tensor:
    """Node in the recorded computation graph."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ValueError("tensors are limited to 3 axes")
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """Constant copy with no history; gradients never flow past it."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Seed d(loss)=1 and propagate through every recorded node exactly once."""
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# --- ops ----------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, (a, b))

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data, (a, b))

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    out._backward = _bw
    return out


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Row-broadcast addition: (N, C) + (C,). The only broadcasting op."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ValueError(f"add_rowvec shapes {x.shape} and {v.shape} incompatible")
    out = Tensor(x.data + v.data[None, :], (x, v))

    def _bw(g):
        _accumulate(x, g)
        _accumulate(v, g.sum(axis=0))

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data, (a, b))

    def _bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = _bw
    return out


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s, (x,))

    def _bw(g):
        _accumulate(x, g * s)

    out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} and {b.shape} incompatible")
    out = Tensor(a.data @ b.data, (a, b))

    def _bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = _bw
    return out


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows; backward scatter-adds gradients back (sum is conserved)."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(x.data[idx], (x,))

    def _bw(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            _accumulate(x, gx)

    out._backward = _bw
    return out


def scatter_rows(x: Tensor, indices, total_rows: int) -> Tensor:
    """Place rows of x at the given indices of a zero (total_rows, C) tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ValueError("scatter_rows needs one index per input row")
    data = np.zeros((total_rows, x.shape[1]))
    data[idx] = x.data
    out = Tensor(data, (x,))

    def _bw(g):
        _accumulate(x, g[idx])

    out._backward = _bw
    return out


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile a (C,) vector into (n, C); backward sums over rows."""
    if v.data.ndim != 1:
        raise ValueError("broadcast_rows expects a 1-d tensor")
    out = Tensor(np.tile(v.data[None, :], (n, 1)), (v,))

    def _bw(g):
        _accumulate(v, g.sum(axis=0))

    out._backward = _bw
    return out


def spiral_gather(x: Tensor, table: np.ndarray) -> Tensor:
    """Gather spiral neighborhoods: (V, C) with (V, S) table -> (V, S*C)."""
    table = np.asarray(table, dtype=np.int64)
    V, S = table.shape
    C = x.shape[1]
    out = Tensor(x.data[table.ravel()].reshape(V, S * C), (x,))

    def _bw(g):
        if x.requires_grad:
            mt = _transposed_scatter(table, x.shape[0])
            _accumulate(x, mt @ g.reshape(V * S, C))

    out._backward = _bw
    return out


_bary_cache: dict = {}


def _barycentric_matrices(corners: np.ndarray, weights: np.ndarray, n_coarse: int):
    key = (id(corners), id(weights), n_coarse)
    hit = _bary_cache.get(key)
    if hit is not None:
        return hit[2], hit[3]
    n_fine = corners.shape[0]
    rows = np.repeat(np.arange(n_fine), corners.shape[1])
    m = sp.csr_matrix(
        (weights.ravel(), (rows, corners.ravel())), shape=(n_fine, n_coarse)
    )
    mt = sp.csr_matrix(m.T)
    _bary_cache[key] = (corners, weights, m, mt)
    return m, mt


def barycentric_up(x: Tensor, corners: np.ndarray, weights: np.ndarray) -> Tensor:
    """Barycentric upsampling: fine row i = sum_k weights[i,k] * x[corners[i,k]]."""
    corners = np.asarray(corners, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    m, mt = _barycentric_matrices(corners, weights, x.shape[0])
    out = Tensor(m @ x.data, (x,))

    def _bw(g):
        if x.requires_grad:
            _accumulate(x, mt @ g)

    out._backward = _bw
    return out


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors))
    sizes = [t.shape[0] for t in tensors]

    def _bw(g):
        off = 0
        for t, n in zip(tensors, sizes):
            _accumulate(t, g[off:off + n])
            off += n

    out._backward = _bw
    return out


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors))
    sizes = [t.shape[1] for t in tensors]

    def _bw(g):
        off = 0
        for t, n in zip(tensors, sizes):
            _accumulate(t, g[:, off:off + n])
            off += n

    out._backward = _bw
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))

    def _bw(g):
        _accumulate(x, g.reshape(x.data.shape))

    out._backward = _bw
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, (x,))

    def _bw(g):
        _accumulate(x, g * (1.0 - y * y))

    out._backward = _bw
    return out


def elu(x: Tensor) -> Tensor:
    y = np.where(x.data > 0, x.data, np.expm1(np.minimum(x.data, 0.0)))
    out = Tensor(y, (x,))

    def _bw(g):
        _accumulate(x, g * np.where(x.data > 0, 1.0, y + 1.0))

    out._backward = _bw
    return out


def abs_(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data), (x,))

    def _bw(g):
        _accumulate(x, g * np.sign(x.data))

    out._backward = _bw
    return out


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, (x,))

    def _bw(g):
        _accumulate(x, 2.0 * g * x.data)

    out._backward = _bw
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), (x,))

    def _bw(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    out._backward = _bw
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean(), (x,))

    def _bw(g):
        _accumulate(x, np.full_like(x.data, float(g) / n))

    out._backward = _bw
    return out


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Mean L1 over all entries of a - b."""
    return mean_all(abs_(sub(a, b)))


# --- layers ---------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """y = x W + b with Glorot-uniform W and zero bias."""

    def __init__(self, rng, c_in: int, c_out: int, name: str):
        self.weight = parameter(glorot_uniform(rng, c_in, c_out, (c_in, c_out)), f"{name}/W")
        self.bias = parameter(np.zeros(c_out), f"{name}/b")

    def __call__(self, x: Tensor) -> Tensor:
        return add_rowvec(matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class SpiralConv:
    """Gather each vertex's spiral neighborhood and apply a shared linear map."""

    def __init__(self, rng, c_in: int, c_out: int, table: np.ndarray, name: str):
        table = np.asarray(table, dtype=np.int64)
        self.table = table
        s = table.shape[1]
        self.weight = parameter(
            glorot_uniform(rng, s * c_in, c_out, (s * c_in, c_out)), f"{name}/W"
        )
        self.bias = parameter(np.zeros(c_out), f"{name}/b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.table.shape[0]:
            raise ValueError(
                f"spiral conv expects {self.table.shape[0]} vertex rows, got {x.shape[0]}"
            )
        return add_rowvec(matmul(spiral_gather(x, self.table), self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


# --- optimizer -------------------------------------------------------------------

class AdamState:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise GradientError(f"non-finite gradient for parameter {p.name}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def lr_schedule(epoch: int, base_lr: float = 5e-3, decay: float = 0.9) -> float:
    """Learning rate after `epoch` full decays: base * decay^epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** epoch
