"""Declarative description of a feed-forward network's layer graph.

Only what norm estimation and the toy trainer need: weight-bearing layers
(dense, conv), batch-normalization parameters in inference form, declared
Lipschitz constants for activations and pooling, and two-path residual
blocks. Layers are immutable descriptions; they do not execute anything.
"""

from dataclasses import dataclass, field

import numpy as np

from .convops import ConvKernel
from .errors import DataError, ShapeError
from .validation import as_float_array


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray = None
    name: str = "dense"
    kind = "dense"

    def __post_init__(self):
        w = as_float_array(self.weights, "dense weights", ndim=2)
        object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = as_float_array(self.bias, "dense bias", ndim=1)
            if b.shape[0] != w.shape[0]:
                raise ShapeError(f"bias length {b.shape[0]} != output dim {w.shape[0]}")
            object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class ConvLayer:
    kernel: ConvKernel
    bias: np.ndarray = None
    # Spatial shape of this layer's input, when known; power iteration on the
    # conv operator needs it if it cannot be inferred from upstream layers.
    input_shape: tuple = None
    name: str = "conv"
    kind = "conv"

    def __post_init__(self):
        if self.bias is not None:
            b = as_float_array(self.bias, "conv bias", ndim=1)
            if b.shape[0] != self.kernel.c_out:
                raise ShapeError(f"bias length {b.shape[0]} != C_out {self.kernel.c_out}")
            object.__setattr__(self, "bias", b)
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))


@dataclass(frozen=True)
class BatchNormLayer:
    """Inference-mode batch normalization: per-channel scale/shift with running stats."""

    scale: np.ndarray  # learned per-channel scale
    shift: np.ndarray  # learned per-channel shift
    mean: np.ndarray  # running mean
    var: np.ndarray  # running variance
    eps: float = 1e-5
    name: str = "batchnorm"
    kind = "batchnorm"

    def __post_init__(self):
        arrays = {}
        n = None
        for attr in ("scale", "shift", "mean", "var"):
            a = as_float_array(getattr(self, attr), f"batchnorm {attr}", ndim=1)
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise ShapeError("batchnorm parameter vectors must share one channel count")
            arrays[attr] = a
        if np.any(arrays["var"] < 0):
            raise DataError("batchnorm running variance must be non-negative")
        if float(self.eps) <= 0:
            raise DataError(f"batchnorm eps must be positive, got {self.eps}")
        for attr, a in arrays.items():
            object.__setattr__(self, attr, a)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def channels(self):
        return self.scale.shape[0]


@dataclass(frozen=True)
class ActivationLayer:
    lipschitz: float = 1.0
    name: str = "activation"
    kind = "activation"

    def __post_init__(self):
        if float(self.lipschitz) <= 0:
            raise DataError(f"activation Lipschitz constant must be > 0, got {self.lipschitz}")
        object.__setattr__(self, "lipschitz", float(self.lipschitz))


@dataclass(frozen=True)
class PoolLayer:
    """Pooling treated as a declared-Lipschitz map.

    Max and average pooling are 1-Lipschitz in l2 for non-overlapping
    windows, which is the assumption behind the default constant.
    """

    lipschitz: float = 1.0
    # output spatial shape, if the pool changes it and downstream layers care
    output_shape: tuple = None
    name: str = "pool"
    kind = "pool"

    def __post_init__(self):
        if float(self.lipschitz) <= 0:
            raise DataError(f"pool Lipschitz constant must be > 0, got {self.lipschitz}")
        object.__setattr__(self, "lipschitz", float(self.lipschitz))
        if self.output_shape is not None:
            object.__setattr__(self, "output_shape", tuple(int(d) for d in self.output_shape))


@dataclass(frozen=True)
class ResidualBlock:
    """Two-path block: shortcut layer list plus mainstream layer list.

    inner_lipschitz is the constant of the activation between mainstream
    blocks; the activation after the paths merge rescales all paths alike
    and is therefore not a parameter here.
    """

    shortcut: tuple
    main: tuple
    inner_lipschitz: float = 1.0
    name: str = "residual-block"
    kind = "residual-block"

    def __post_init__(self):
        object.__setattr__(self, "shortcut", tuple(self.shortcut))
        object.__setattr__(self, "main", tuple(self.main))
        if not self.main:
            raise DataError("residual block needs a non-empty mainstream path")
        if float(self.inner_lipschitz) <= 0:
            raise DataError("inner activation constant must be > 0")
        object.__setattr__(self, "inner_lipschitz", float(self.inner_lipschitz))


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list with the network input shape and class count.

    input_shape is (features,) for dense-first networks or
    (channels, spatial...) for conv-first ones.
    """

    layers: tuple
    input_shape: tuple
    num_classes: int = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DataError("network needs at least one layer")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.num_classes is not None:
            if int(self.num_classes) < 2:
                raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
            object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def depth(self):
        """Number of weight-bearing layers, residual paths counted per block."""

        def count(ls):
            total = 0
            for layer in ls:
                if layer.kind in ("dense", "conv"):
                    total += 1
                elif layer.kind == "residual-block":
                    total += count(layer.shortcut) + count(layer.main)
            return total

        return count(self.layers)
