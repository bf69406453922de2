"""Operator-norm estimation and the network Lipschitz scale.

Two estimation routes are provided for convolution operators:

* l1-style closed-form upper bounds computed from kernel entry magnitudes
  (single-channel, multi-channel, and stride-aware variants), and
* power iteration on the operator/adjoint pair, which converges to the top
  singular value from below.

The network-level scale is the product of per-layer estimates over
weight-bearing layers, with batch-normalization folded into the preceding
kernel, declared activation/pool constants multiplied in when they differ
from one, and residual blocks combined path-wise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .convops import ConvKernel, conv_adjoint, conv_forward, materialize_operator
from .errors import DataError, EstimationError, NumericError, ShapeError
from .network import NetworkSpec
from .validation import as_float_array

DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-9
DEFAULT_SEED = 0x5EED


@dataclass
class NormEstimate:
    """One layer's operator-norm estimate and how it was obtained."""

    layer_id: str
    method: str
    value: float
    iterations_used: int = 0
    converged: bool = True
    # successive power-iteration estimates; empty for closed-form bounds
    history: list = field(default_factory=list)


def l1_bound_single_channel(kernel):
    """Upper bound for a single-channel kernel: the entrywise l1 norm."""
    if kernel.c_in != 1 or kernel.c_out != 1:
        raise EstimationError(
            "single-channel bound needs C_in = C_out = 1; use the multichannel variant"
        )
    return float(np.abs(kernel.weights).sum())


def l1_bound_multichannel(kernel):
    """Multichannel bound sqrt(|w|_1 * max_slice_l1).

    |w|_1 sums absolute values over all entries; max_slice_l1 is the largest
    l1 norm over (out-channel, in-channel) spatial slices. Exact for stride 1
    and still an upper bound for larger strides, where subsampling output
    positions only drops terms.
    """
    w = kernel.weights
    total = np.abs(w).sum()
    slice_l1 = np.abs(w).reshape(w.shape[0], w.shape[1], -1).sum(axis=2).max()
    return float(math.sqrt(total * slice_l1))


def l1_bound_stride(kernel):
    """Stride-aware bound sqrt(D * |w|_1 * |w|_inf) with D = prod ceil(Size_i / S)."""
    w = kernel.weights
    d = 1
    for size in kernel.spatial_size:
        d *= -(-size // kernel.stride)
    total = np.abs(w).sum()
    peak = np.abs(w).max()
    return float(math.sqrt(d * total * peak))


def l1_bound_dense(weights):
    """Dense-matrix analogue of the multichannel bound.

    A dense map is the one-pixel, 1x1-kernel case: every (out, in) slice is a
    single entry, so the bound reduces to sqrt(sum|W| * max|W|).
    """
    w = as_float_array(weights, "dense weights", ndim=2)
    return float(math.sqrt(np.abs(w).sum() * np.abs(w).max()))


def power_iteration(
    op_apply,
    op_adjoint,
    input_shape,
    max_iters=DEFAULT_MAX_ITERS,
    tol=DEFAULT_TOL,
    seed=DEFAULT_SEED,
    layer_id="operator",
):
    """Estimate the top singular value of the operator given apply/adjoint access.

    Iterates v <- normalize(adjoint(apply(v))) from a seeded random unit
    vector and reports sigma = |apply(v)| for the final iterate. The sigma
    sequence is a Rayleigh-quotient square root and is non-decreasing, so the
    estimate approaches the true norm from below. Convergence is declared
    when successive estimates change by less than tol relatively.
    """
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")
    if tol <= 0:
        raise DataError(f"tol must be > 0, got {tol}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(tuple(int(d) for d in input_shape))
    v /= np.linalg.norm(v)

    history = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        av = np.asarray(op_apply(v))
        if not np.all(np.isfinite(av)):
            raise NumericError("power iteration produced non-finite values in apply")
        sigma = float(np.linalg.norm(av))
        history.append(sigma)
        if sigma == 0.0:
            converged = True
            break
        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol * history[-1]:
            converged = True
            break
        u = np.asarray(op_adjoint(av))
        if not np.all(np.isfinite(u)):
            raise NumericError("power iteration produced non-finite values in adjoint")
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # adjoint(apply(v)) = 0 implies |apply(v)|^2 = <v, adjoint(apply(v))> = 0
            converged = True
            history[-1] = 0.0
            break
        v = u / nu
    return NormEstimate(
        layer_id=layer_id,
        method="power_iteration",
        value=history[-1],
        iterations_used=iterations,
        converged=converged,
        history=history,
    )


def conv_power_norm(kernel, input_shape, **kwargs):
    """Power iteration specialized to a convolution operator on a given input shape."""
    shape = (kernel.c_in, *tuple(int(d) for d in input_shape))

    def apply(v):
        return conv_forward(kernel, v)

    def adjoint(y):
        return conv_adjoint(kernel, y, shape)

    return power_iteration(apply, adjoint, shape, **kwargs)


def matrix_power_norm(matrix, **kwargs):
    """Power iteration on a dense matrix."""
    m = as_float_array(matrix, "matrix", ndim=2)
    return power_iteration(
        lambda v: m @ v, lambda y: m.T @ y, (m.shape[1],), **kwargs
    )


def exact_operator_norm(kernel, input_shape, cap=None):
    """Top singular value of the materialized conv operator (small inputs only)."""
    kwargs = {} if cap is None else {"cap": cap}
    mat = materialize_operator(kernel, (kernel.c_in, *input_shape), **kwargs)
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def bn_rescale_factor(bn):
    """Per-channel rescale factors |scale_c| / sqrt(var_c + eps) and their max.

    Folding these into the preceding kernel's output-channel slices (the
    default mode) gives a tighter composed norm than multiplying the
    unscaled kernel's estimate by the max factor; both are supported by
    network_lipschitz via bn_mode.
    """
    if bn.kind != "batchnorm":
        raise EstimationError(f"expected a batchnorm layer, got {bn.kind}")
    denom = bn.var + bn.eps
    if np.any(denom <= 0):
        raise NumericError("batchnorm variance + eps must be positive")
    r = np.abs(bn.scale) / np.sqrt(denom)
    return r, float(r.max())


def fold_batchnorm_into_weights(layer, bn):
    """Rescale a conv kernel or dense matrix by the per-channel BN factors."""
    r, _ = bn_rescale_factor(bn)
    if layer.kind == "conv":
        if bn.channels != layer.kernel.c_out:
            raise ShapeError(
                f"batchnorm has {bn.channels} channels, conv produces {layer.kernel.c_out}"
            )
        shape = (-1,) + (1,) * (layer.kernel.weights.ndim - 1)
        return ConvKernel(
            layer.kernel.weights * r.reshape(shape),
            stride=layer.kernel.stride,
            padding=layer.kernel.padding,
        )
    if layer.kind == "dense":
        if bn.channels != layer.weights.shape[0]:
            raise ShapeError(
                f"batchnorm has {bn.channels} channels, dense produces {layer.weights.shape[0]}"
            )
        return layer.weights * r[:, None]
    raise EstimationError(f"cannot fold batchnorm into layer kind {layer.kind}")


def residual_block_bound(shortcut_norm, main_norms, l_sigma_in=1.0):
    """Combine per-path norms of a two-path block: shortcut + L_in * prod(main).

    The activation after the merge rescales every path identically and is
    absorbed by normalization, so only the inner activation constant enters.
    """
    main_norms = [float(v) for v in main_norms]
    if not main_norms:
        raise DataError("residual block needs a non-empty mainstream path")
    if float(shortcut_norm) < 0 or any(v < 0 for v in main_norms) or float(l_sigma_in) < 0:
        raise DataError("path norms and Lipschitz constants must be non-negative")
    prod = 1.0
    for v in main_norms:
        prod *= v
    return float(shortcut_norm) + float(l_sigma_in) * prod


def _conv_l1_value(kernel):
    """Tightest applicable closed-form bound for a conv kernel."""
    b_multi = l1_bound_multichannel(kernel)
    b_stride = l1_bound_stride(kernel)
    if b_multi <= b_stride:
        return b_multi, "l1_multichannel"
    return b_stride, "l1_stride"


def _estimate_weight_layer(layer, bn, in_shape, method, power_kwargs):
    """Estimate one conv/dense layer's norm (BN folded in) and the output shape."""
    if layer.kind == "conv":
        kernel = fold_batchnorm_into_weights(layer, bn) if bn is not None else layer.kernel
        if layer.input_shape is not None:
            spatial = layer.input_shape
        elif in_shape is not None and len(in_shape) == len(kernel.spatial_size) + 1:
            if in_shape[0] != kernel.c_in:
                raise ShapeError(
                    f"layer '{layer.name}': expected {kernel.c_in} input channels, "
                    f"got shape {in_shape}"
                )
            spatial = in_shape[1:]
        else:
            spatial = None
        if method == "power":
            if spatial is None:
                raise EstimationError(
                    f"layer '{layer.name}': power iteration needs the conv input shape; "
                    "set input_shape on the layer or the network"
                )
            est = conv_power_norm(kernel, spatial, layer_id=layer.name, **power_kwargs)
        else:
            value, tag = _conv_l1_value(kernel)
            est = NormEstimate(layer_id=layer.name, method=tag, value=value)
        out_shape = kernel.output_shape((kernel.c_in, *spatial)) if spatial is not None else None
        return est, out_shape

    if layer.kind == "dense":
        weights = fold_batchnorm_into_weights(layer, bn) if bn is not None else layer.weights
        if in_shape is not None:
            flat = int(np.prod(in_shape))
            if flat != weights.shape[1]:
                raise ShapeError(
                    f"layer '{layer.name}': dense expects {weights.shape[1]} inputs, "
                    f"upstream provides {flat}"
                )
        if method == "power":
            est = matrix_power_norm(weights, layer_id=layer.name, **power_kwargs)
        else:
            est = NormEstimate(
                layer_id=layer.name, method="l1_dense", value=l1_bound_dense(weights)
            )
        return est, (weights.shape[0],)

    raise EstimationError(f"unsupported weight layer kind {layer.kind}")


def _walk(layers, in_shape, method, bn_mode, power_kwargs, estimates):
    """Product of norms over a layer list; returns (product, output shape)."""
    product = 1.0
    i = 0
    layers = list(layers)
    while i < len(layers):
        layer = layers[i]
        if layer.kind in ("dense", "conv"):
            bn = None
            if (
                bn_mode == "rescale"
                and i + 1 < len(layers)
                and layers[i + 1].kind == "batchnorm"
            ):
                bn = layers[i + 1]
            est, in_shape = _estimate_weight_layer(layer, bn, in_shape, method, power_kwargs)
            estimates.append(est)
            product *= est.value
            i += 2 if bn is not None else 1
        elif layer.kind == "batchnorm":
            # not folded (first layer, or scalar mode): contributes max_c r_c
            _, rmax = bn_rescale_factor(layer)
            estimates.append(NormEstimate(layer_id=layer.name, method="bn_scalar", value=rmax))
            product *= rmax
            i += 1
        elif layer.kind in ("activation", "pool"):
            if layer.lipschitz != 1.0:
                estimates.append(
                    NormEstimate(layer_id=layer.name, method="declared", value=layer.lipschitz)
                )
                product *= layer.lipschitz
            if layer.kind == "pool" and layer.output_shape is not None and in_shape is not None:
                in_shape = (in_shape[0], *layer.output_shape)
            i += 1
        elif layer.kind == "residual-block":
            # an empty shortcut list is the identity path, norm 1
            sub = []
            shortcut_prod, _ = _walk(layer.shortcut, in_shape, method, bn_mode, power_kwargs, sub)
            main_sub = []
            _, main_shape = _walk(layer.main, in_shape, method, bn_mode, power_kwargs, main_sub)
            main_norms = [e.value for e in main_sub]
            sub.extend(main_sub)
            estimates.extend(sub)
            value = residual_block_bound(shortcut_prod, main_norms, layer.inner_lipschitz)
            estimates.append(NormEstimate(layer_id=layer.name, method="residual", value=value))
            product *= value
            in_shape = main_shape
            i += 1
        else:
            raise EstimationError(f"layer '{getattr(layer, 'name', '?')}' has unsupported kind")
    return product, in_shape


def network_lipschitz(net, method="power", bn_mode="rescale", **power_kwargs):
    """Product-of-layer-norms Lipschitz scale for a network.

    method 'l1' uses the closed-form kernel bounds (tighter of the two conv
    variants per layer); 'power' runs power iteration per operator. Biases
    do not enter: they shift activations without affecting the Lipschitz
    semi-norm. Returns (scale, per-layer estimate list).
    """
    if not isinstance(net, NetworkSpec):
        raise EstimationError("network_lipschitz expects a NetworkSpec")
    if method not in ("l1", "power"):
        raise DataError(f"method must be 'l1' or 'power', got {method!r}")
    if bn_mode not in ("rescale", "scalar"):
        raise DataError(f"bn_mode must be 'rescale' or 'scalar', got {bn_mode!r}")
    estimates = []
    product, _ = _walk(net.layers, net.input_shape, method, bn_mode, power_kwargs, estimates)
    return float(product), estimates
