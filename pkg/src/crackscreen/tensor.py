"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient slot. Operations
record a dynamic tape (parent links + a backward closure); calling
``backward()`` on a scalar output walks the tape once in reverse
topological order, accumulates gradients into the leaves, and frees the
tape. Compute dtype is float32 by default; gradient-checking code runs
everything in float64.
"""

import numpy as np

__all__ = [
    "Tensor", "elementwise", "reduce", "concat", "matmul",
    "finite_diff_check", "last_backward_visits",
]

# instrumentation: number of node visits in the most recent backward pass
_LAST_BACKWARD_VISITS = 0


def last_backward_visits():
    return _LAST_BACKWARD_VISITS


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "retain_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.retain_grad = False
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._scalar_error()

    def _scalar_error(self):
        raise ValueError(f"expected a scalar tensor, got shape {self.shape}")

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- tape ----------------------------------------------------------------

    def backward(self):
        """Populate .grad on every reachable leaf; the output must be scalar.

        Grads accumulate across repeated backward calls unless zeroed.
        Each tape node is visited exactly once; the tape is freed afterwards.
        """
        global _LAST_BACKWARD_VISITS
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        visits = 0
        for node in reversed(order):
            g = grads.pop(id(node), None)
            visits += 1
            if g is None:
                node._parents = ()
                node._backward = None
                continue
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            if not node._parents:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
            elif node.retain_grad:
                node.grad = g if node.grad is None else node.grad + g
            node._parents = ()
            node._backward = None
        _LAST_BACKWARD_VISITS = visits

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return tsum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return tmean(self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return tmax(self, axes, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _as_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def make_node(data, parents, backward_fn):
    """Create a tape node. backward_fn(grad) yields (parent, parent_grad) pairs."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum grad over axes that were broadcast to match a parent of `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_binary(a, b):
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise primitives ----------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b)
    return make_node(a.data + b.data, (a, b), lambda g: (
        (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b)
    return make_node(a.data - b.data, (a, b), lambda g: (
        (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b)
    return make_node(a.data * b.data, (a, b), lambda g: (
        (a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape))))


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_binary(a, b)
    out = a.data / b.data
    return make_node(out, (a, b), lambda g: (
        (a, _unbroadcast(g / b.data, a.shape)),
        (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))))


def neg(a):
    return make_node(-a.data, (a,), lambda g: ((a, -g),))


def power(a, exponent):
    """Elementwise a**p for a scalar exponent."""
    p = float(exponent)
    if p != int(p) and np.any(a.data < 0):
        raise ValueError("fractional power of a negative base")
    out = a.data ** p
    if p == 0.0:
        backward = lambda g: ((a, np.zeros_like(a.data)),)
    else:
        backward = lambda g: ((a, g * p * a.data ** (p - 1.0)),)
    return make_node(out, (a,), backward)


def exp(a):
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: ((a, g * out),))


def log(a):
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive entry")
    return make_node(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def relu(a):
    from . import kernels
    out = np.maximum(a.data, 0)
    return make_node(out, (a,), lambda g: ((a, kernels.relu_backward(g, out)),))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: ((a, g * out * (1.0 - out)),))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div, "pow": power,
    "exp": exp, "log": log, "relu": relu, "sigmoid": sigmoid,
}


def elementwise(op_kind, a, b=None):
    """Dispatch an elementwise op by name; binary kinds require b."""
    if op_kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    fn = _ELEMENTWISE[op_kind]
    if op_kind in ("add", "sub", "mul", "div", "pow"):
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{op_kind} is unary")
    return fn(a)


# -- reductions ------------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def tsum(a, axes=None, keepdims=False):
    axes = _norm_axes(axes, a.data.ndim)
    _check_reduce(a, axes)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return make_node(out, (a,), backward)


def tmean(a, axes=None, keepdims=False):
    axes = _norm_axes(axes, a.data.ndim)
    _check_reduce(a, axes)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g / count, a.shape).astype(a.dtype)),)

    return make_node(out, (a,), backward)


def tmax(a, axes=None, keepdims=False):
    """Max over axes; backward routes to the argmax, ties to the lowest index."""
    axes = _norm_axes(axes, a.data.ndim)
    _check_reduce(a, axes)
    ndim = a.data.ndim
    kept = tuple(i for i in range(ndim) if i not in axes)
    moved = np.transpose(a.data, kept + axes)
    outer = moved.shape[:len(kept)]
    flat = moved.reshape(outer + (-1,))
    arg = np.argmax(flat, axis=-1)
    val = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if keepdims:
        out = val.reshape(tuple(1 if i in axes else a.shape[i] for i in range(ndim)))
    else:
        out = val

    def backward(g):
        gflat = g.reshape(outer)
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], gflat[..., None], axis=-1)
        dmoved = dflat.reshape(moved.shape)
        inv = np.argsort(kept + axes)
        return ((a, np.transpose(dmoved, inv)),)

    return make_node(out, (a,), backward)


def _check_reduce(a, axes):
    for ax in axes:
        if a.shape[ax] == 0:
            raise ValueError(f"reduction over empty axis {ax}")


_REDUCE = {"sum": tsum, "mean": tmean, "max": tmax}


def reduce(op_kind, a, axes=None, keepdims=False):
    """Dispatch a reduction by name (sum, mean, max)."""
    if op_kind not in _REDUCE:
        raise ValueError(f"unknown reduction {op_kind!r}")
    return _REDUCE[op_kind](a, axes, keepdims)


# -- shape / linear ops -----------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(old)),))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,),
                     lambda g: ((a, np.transpose(g, inv)),))


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))

    return make_node(data, tuple(tensors), backward)


def matmul(a, b):
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} @ {b.shape}")
    return make_node(a.data @ b.data, (a, b), lambda g: (
        (a, g @ b.data.T), (b, a.data.T @ g)))


# -- gradient checking -------------------------------------------------------------

def finite_diff_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f must be a pure scalar-valued function of one Tensor. Evaluation runs
    in float64 regardless of x's dtype.
    """
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise ValueError("function value is not finite")
    out.backward()
    analytic = xt.grad.reshape(-1).copy()
    flat = x0.reshape(-1)
    cd = np.empty_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = f(Tensor((flat + bump).reshape(x0.shape))).data.reshape(())
        lo = f(Tensor((flat - bump).reshape(x0.shape))).data.reshape(())
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("function value is not finite near x")
        cd[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(cd)), 1e-12)
    return float(np.max(np.abs(analytic - cd) / denom))
