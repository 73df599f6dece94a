"""ctypes handles onto the BLAS gemm symbols shipped inside scipy.

The conv kernels need gemm with explicit lda/ldb/ldc and beta-accumulation,
which numpy's matmul does not expose. scipy.linalg.cython_blas publishes the
raw Fortran entry points through PyCapsules; we bind them once here.
"""

import ctypes

import scipy.linalg.cython_blas as _cython_blas

_get_pointer = ctypes.pythonapi.PyCapsule_GetPointer
_get_pointer.restype = ctypes.c_void_p
_get_pointer.argtypes = [ctypes.py_object, ctypes.c_char_p]

_get_name = ctypes.pythonapi.PyCapsule_GetName
_get_name.restype = ctypes.c_char_p
_get_name.argtypes = [ctypes.py_object]


def _bind(name, scalar_ct):
    capsule = _cython_blas.__pyx_capi__[name]
    ptr = _get_pointer(capsule, _get_name(capsule))
    proto = ctypes.CFUNCTYPE(
        None,
        ctypes.c_char_p, ctypes.c_char_p,                     # transa, transb
        ctypes.POINTER(ctypes.c_int), ctypes.POINTER(ctypes.c_int),
        ctypes.POINTER(ctypes.c_int),                         # m, n, k
        ctypes.POINTER(scalar_ct), ctypes.c_void_p,           # alpha, a
        ctypes.POINTER(ctypes.c_int),                         # lda
        ctypes.c_void_p, ctypes.POINTER(ctypes.c_int),        # b, ldb
        ctypes.POINTER(scalar_ct), ctypes.c_void_p,           # beta, c
        ctypes.POINTER(ctypes.c_int),                         # ldc
    )
    return proto(ptr)


_SGEMM = _bind("sgemm", ctypes.c_float)
_DGEMM = _bind("dgemm", ctypes.c_double)


def gemm(dtype_itemsize, transa, transb, m, n, k, alpha, a_ptr, lda,
         b_ptr, ldb, beta, c_ptr, ldc):
    """Fortran gemm: C(m,n) = alpha * op(A) @ op(B) + beta * C, column-major.

    Callers pass raw data pointers (array.ctypes.data plus any element
    offset already applied). dtype_itemsize selects sgemm (4) or dgemm (8).
    """
    ci = ctypes.c_int
    if dtype_itemsize == 4:
        _SGEMM(transa, transb, ctypes.byref(ci(m)), ctypes.byref(ci(n)),
               ctypes.byref(ci(k)), ctypes.byref(ctypes.c_float(alpha)),
               a_ptr, ctypes.byref(ci(lda)), b_ptr, ctypes.byref(ci(ldb)),
               ctypes.byref(ctypes.c_float(beta)), c_ptr, ctypes.byref(ci(ldc)))
    elif dtype_itemsize == 8:
        _DGEMM(transa, transb, ctypes.byref(ci(m)), ctypes.byref(ci(n)),
               ctypes.byref(ci(k)), ctypes.byref(ctypes.c_double(alpha)),
               a_ptr, ctypes.byref(ci(lda)), b_ptr, ctypes.byref(ci(ldb)),
               ctypes.byref(ctypes.c_double(beta)), c_ptr, ctypes.byref(ci(ldc)))
    else:
        raise ValueError(f"unsupported itemsize {dtype_itemsize}")
