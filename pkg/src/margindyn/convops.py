"""Dense tensor plumbing and convolution operators.

Tensors are plain ``numpy.ndarray`` objects in float64, row-major. All
operations are pure functions; nothing here mutates its inputs.

Index convention: ``conv_forward`` computes a cross-correlation,

    out[co, u] = sum_{ci, k} w[co, ci, k] * x_pad[ci, u * stride + k],

i.e. the kernel is NOT flipped. A flipped-kernel convolution realizes the
same family of linear operators (replace w by its spatial reflection), and
reflection leaves every operator norm unchanged, so norm estimates are
convention-independent. The adjoint and the explicit-matrix construction
below use this same convention throughout.

Spatial rank is limited to 1-D and 2-D. Padding is zero-padding, given per
spatial dimension; stride is uniform across spatial dimensions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OracleSizeError, ShapeError
from .validation import as_float_array

# Largest input size (elements) for which we will build the dense operator
# matrix of a convolution; beyond this only implicit apply/adjoint is used.
DEFAULT_ORACLE_CAP = 4096


@dataclass(frozen=True)
class ConvKernel:
    """A multi-channel convolution kernel with uniform stride and zero padding.

    weights: array of shape (C_out, C_in, Size_1[, Size_2]).
    stride: positive integer, shared by all spatial dimensions.
    padding: per-spatial-dimension non-negative zero-padding widths.
    """

    weights: np.ndarray
    stride: int = 1
    padding: tuple = field(default=None)

    def __post_init__(self):
        w = as_float_array(self.weights, "kernel weights")
        if w.ndim not in (3, 4):
            raise ShapeError(
                f"kernel must have shape (C_out, C_in, spatial...), 1-D or 2-D "
                f"spatial rank; got shape {w.shape}"
            )
        if min(w.shape) < 1:
            raise ShapeError(f"kernel dimensions must all be >= 1, got {w.shape}")
        if int(self.stride) < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        pad = self.padding
        if pad is None:
            pad = (0,) * (w.ndim - 2)
        elif np.isscalar(pad):
            pad = (int(pad),) * (w.ndim - 2)
        else:
            pad = tuple(int(p) for p in pad)
        if len(pad) != w.ndim - 2 or any(p < 0 for p in pad):
            raise ShapeError(f"padding {self.padding} incompatible with kernel {w.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stride", int(self.stride))
        object.__setattr__(self, "padding", pad)

    @property
    def c_out(self):
        return self.weights.shape[0]

    @property
    def c_in(self):
        return self.weights.shape[1]

    @property
    def spatial_size(self):
        return self.weights.shape[2:]

    def output_shape(self, input_shape):
        """Output (C_out, spatial...) for an input of shape (C_in, spatial...)."""
        input_shape = tuple(int(d) for d in input_shape)
        if len(input_shape) != len(self.spatial_size) + 1:
            raise ShapeError(
                f"input shape {input_shape} has wrong rank for kernel {self.weights.shape}"
            )
        if input_shape[0] != self.c_in:
            raise ShapeError(
                f"input has {input_shape[0]} channels, kernel expects {self.c_in}"
            )
        out_spatial = []
        for dim, size, pad in zip(input_shape[1:], self.spatial_size, self.padding):
            if dim < 1:
                raise ShapeError(f"spatial dimensions must be >= 1, got {input_shape}")
            out = (dim + 2 * pad - size) // self.stride + 1
            if out < 1:
                raise ShapeError(
                    f"kernel size {size} with padding {pad} does not fit input dim {dim}"
                )
            out_spatial.append(out)
        return (self.c_out, *out_spatial)


def _pad_input(x, padding):
    if all(p == 0 for p in padding):
        return x
    widths = [(0, 0)] + [(p, p) for p in padding]
    return np.pad(x, widths)


def conv_forward(kernel, x):
    """Apply the convolution operator to x of shape (C_in, spatial...)."""
    x = as_float_array(x, "conv input")
    out_shape = kernel.output_shape(x.shape)
    w, s = kernel.weights, kernel.stride
    xp = _pad_input(x, kernel.padding)
    out = np.zeros(out_shape)
    if w.ndim == 3:
        lo = out_shape[1]
        for k in range(w.shape[2]):
            sl = xp[:, k : k + s * (lo - 1) + 1 : s]
            out += np.tensordot(w[:, :, k], sl, axes=([1], [0]))
    else:
        ho, wo = out_shape[1], out_shape[2]
        for kh in range(w.shape[2]):
            for kw in range(w.shape[3]):
                sl = xp[:, kh : kh + s * (ho - 1) + 1 : s, kw : kw + s * (wo - 1) + 1 : s]
                out += np.tensordot(w[:, :, kh, kw], sl, axes=([1], [0]))
    return out


def conv_adjoint(kernel, y, input_shape):
    """Apply the transpose of the conv_forward operator to a cotangent y.

    y must have the shape conv_forward would produce for an input of
    input_shape; the result has shape input_shape.
    """
    y = as_float_array(y, "conv cotangent")
    input_shape = tuple(int(d) for d in input_shape)
    out_shape = kernel.output_shape(input_shape)
    if y.shape != out_shape:
        raise ShapeError(f"cotangent shape {y.shape} does not match operator output {out_shape}")
    w, s = kernel.weights, kernel.stride
    padded_shape = (input_shape[0],) + tuple(
        d + 2 * p for d, p in zip(input_shape[1:], kernel.padding)
    )
    xb = np.zeros(padded_shape)
    if w.ndim == 3:
        lo = out_shape[1]
        for k in range(w.shape[2]):
            xb[:, k : k + s * (lo - 1) + 1 : s] += np.tensordot(
                w[:, :, k], y, axes=([0], [0])
            )
    else:
        ho, wo = out_shape[1], out_shape[2]
        for kh in range(w.shape[2]):
            for kw in range(w.shape[3]):
                xb[
                    :, kh : kh + s * (ho - 1) + 1 : s, kw : kw + s * (wo - 1) + 1 : s
                ] += np.tensordot(w[:, :, kh, kw], y, axes=([0], [0]))
    # crop the zero padding back off
    if w.ndim == 3:
        p = kernel.padding[0]
        return np.ascontiguousarray(xb[:, p : p + input_shape[1]])
    ph, pw = kernel.padding
    return np.ascontiguousarray(xb[:, ph : ph + input_shape[1], pw : pw + input_shape[2]])


def conv_weight_grad(kernel, x, y):
    """Gradient of <y, conv_forward(w, x)> with respect to the kernel weights."""
    x = as_float_array(x, "conv input")
    y = as_float_array(y, "conv cotangent")
    out_shape = kernel.output_shape(x.shape)
    if y.shape != out_shape:
        raise ShapeError(f"cotangent shape {y.shape} does not match operator output {out_shape}")
    w, s = kernel.weights, kernel.stride
    xp = _pad_input(x, kernel.padding)
    grad = np.zeros_like(w)
    if w.ndim == 3:
        lo = out_shape[1]
        for k in range(w.shape[2]):
            sl = xp[:, k : k + s * (lo - 1) + 1 : s]
            grad[:, :, k] = np.tensordot(y, sl, axes=([1], [1]))
    else:
        ho, wo = out_shape[1], out_shape[2]
        for kh in range(w.shape[2]):
            for kw in range(w.shape[3]):
                sl = xp[:, kh : kh + s * (ho - 1) + 1 : s, kw : kw + s * (wo - 1) + 1 : s]
                grad[:, :, kh, kw] = np.tensordot(y, sl, axes=([1, 2], [1, 2]))
    return grad


def materialize_operator(kernel, input_shape, cap=DEFAULT_ORACLE_CAP):
    """Dense matrix M with M @ vec(x) == vec(conv_forward(kernel, x)).

    vec() is row-major flattening. Intended as a small-scale oracle; refuses
    inputs larger than cap elements.
    """
    input_shape = tuple(int(d) for d in input_shape)
    n = int(np.prod(input_shape))
    out_shape = kernel.output_shape(input_shape)
    m = int(np.prod(out_shape))
    if n > cap:
        raise OracleSizeError(f"input size {n} exceeds materialization cap {cap}")
    mat = np.zeros((m, n))
    basis = np.zeros(input_shape)
    flat = basis.reshape(-1)
    for j in range(n):
        flat[j] = 1.0
        mat[:, j] = conv_forward(kernel, basis).reshape(-1)
        flat[j] = 0.0
    return mat


def matvec(a, v):
    """Matrix-vector product with shape checking."""
    a = as_float_array(a, "matrix", ndim=2)
    v = as_float_array(v, "vector", ndim=1)
    if a.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by vector of length {v.shape[0]}")
    return a @ v


def matmul(a, b):
    """Matrix-matrix product with shape checking."""
    a = as_float_array(a, "left matrix", ndim=2)
    b = as_float_array(b, "right matrix", ndim=2)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b
