"""Dense tensors with reverse-mode automatic differentiation.

The graph is built define-by-run: every operation records its parents and a
closure that maps the upstream gradient to parent gradients. Calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients into every tensor that requires
them. The tape lives only as long as the output tensor.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

_debug_checks = False


def set_debug_checks(enabled):
    """Enable NaN/Inf guards after every forward operation (slow, for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled():
    return _debug_checks


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-accumulate gradients from this scalar into the graph.

        Raises ValueError if this tensor is not a scalar. Tensors that do not
        lie on a path to this output keep whatever gradient they already had
        (zeros after ``zero_grad``).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        return mul(self, other if isinstance(other, Tensor) else Tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def make_op(data, parents, backward_fn):
    """Wrap an op result, recording the tape only when a parent needs grads."""
    out = Tensor(data)
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def add(a, b):
    """Elementwise sum; ``b`` may be a 1-D per-channel bias for a 4-D ``a``."""
    bias_mode = b.ndim == 1 and a.ndim == 4 and b.shape[0] == a.shape[1]
    if not bias_mode and a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} are not "
                             "equal and b is not a per-channel bias")
    bdata = b.data.reshape(1, -1, 1, 1) if bias_mode else b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)) if bias_mode else g)

    return make_op(a.data + bdata, (a, b), backward)


def mul(a, b):
    """Elementwise product of same-shape tensors (or a scalar tensor)."""
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} mismatch")

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            a.accumulate_grad(ga if a.size > 1 else ga.sum().reshape(a.shape))
        if b.requires_grad:
            gb = g * a.data
            b.accumulate_grad(gb if b.size > 1 else gb.sum().reshape(b.shape))

    return make_op(a.data * b.data, (a, b), backward)


def concat_channels(a, b):
    """Concatenate two 4-D tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise DimensionError("concat_channels expects 4-D tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels: batch/spatial mismatch "
                             f"{a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return make_op(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def reduce_mean(a):
    """Arithmetic mean over all entries, as a scalar tensor."""
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return make_op(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)


def reduce_sum(a):
    """Sum over all entries, as a scalar tensor."""

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return make_op(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def grad_check(op, inputs, eps=1e-4, seed=0, sample=None):
    """Compare analytic gradients of ``op`` against central finite differences.

    ``op`` is a callable taking tensors and returning a tensor of any shape;
    its output is reduced with a fixed random projection so that a single
    backward pass yields all analytic gradients. Returns the maximum over all
    input entries of ``|analytic - fd| / max(1, |analytic|)``. Inputs are
    promoted to float64. ``sample`` limits the number of probed entries per
    input (None probes every entry).
    """
    rng = np.random.default_rng(seed)
    ts = []
    for x in inputs:
        arr = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        ts.append(Tensor(arr, requires_grad=True))
    out = op(*ts)
    proj = rng.standard_normal(out.data.shape)

    def eval_loss():
        shadows = [Tensor(t.data) for t in ts]
        return float((op(*shadows).data * proj).sum())

    loss = reduce_sum(mul(out, Tensor(proj)))
    for t in ts:
        t.zero_grad()
    loss.backward()

    max_err = 0.0
    for t in ts:
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        if sample is not None and flat.size > sample:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        else:
            idxs = np.arange(flat.size)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = eval_loss()
            flat[i] = orig - eps
            f_minus = eval_loss()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]))
            if err > max_err:
                max_err = err
    return max_err
