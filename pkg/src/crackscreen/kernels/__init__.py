"""Kernel backend dispatch.

Two interchangeable backends provide the hot conv/pool kernels:

* ``fast``  - numba-jitted packing plus direct BLAS gemm (default)
* ``numpy`` - pure numpy fallback, no numba required

Selection: the ``CRACKSCREEN_KERNELS`` environment variable (``fast`` or
``numpy``), falling back to ``fast`` when importable. ``set_backend`` can
override at runtime (used by tests and the kernel benchmark).
"""

import os

from . import reference

_BACKENDS = {"numpy": reference}
_fast_import_error = None
try:
    from . import fast
    _BACKENDS["fast"] = fast
except ImportError as exc:  # numba or scipy missing
    _fast_import_error = exc

_env = os.environ.get("CRACKSCREEN_KERNELS", "").strip().lower()
if _env:
    if _env not in _BACKENDS:
        if _env == "fast":
            raise ImportError(
                f"CRACKSCREEN_KERNELS=fast but the fast backend failed to import: "
                f"{_fast_import_error}")
        raise ValueError(f"unknown kernel backend {_env!r} (choose fast or numpy)")
    _active_name = _env
else:
    _active_name = "fast" if "fast" in _BACKENDS else "numpy"

_active = _BACKENDS[_active_name]


def backend_name():
    return _active_name


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the active kernel backend; returns the previous name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r} (have {available_backends()})")
    prev = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return prev


def pack_input(x, pad):
    return _active.pack_input(x, pad)


def unpack_output(flat, B, H, W, pad=0):
    return _active.unpack_output(flat, B, H, W, pad)


def conv_forward(xflat, wmat, dims):
    return _active.conv_forward(xflat, wmat, dims)


def conv_backward_w(xflat, doutflat, dims, kshape):
    return _active.conv_backward_w(xflat, doutflat, dims, kshape)


def conv_backward_x(doutflat, wmat, dims, C):
    return _active.conv_backward_x(doutflat, wmat, dims, C)


def maxpool_forward(x, kernel, stride, pad):
    return _active.maxpool_forward(x, kernel, stride, pad)


def maxpool_backward(dout, idx, xshape):
    return _active.maxpool_backward(dout, idx, xshape)


def relu_backward(g, out):
    return _active.relu_backward(g, out)


def bn_stats(x):
    return _active.bn_stats(x)


def bn_scale_shift(x, scale, shift):
    return _active.bn_scale_shift(x, scale, shift)


def bn_backward_train(x, g, mean, ivar, gamma):
    return _active.bn_backward_train(x, g, mean, ivar, gamma)
