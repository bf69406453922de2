"""Deterministic desk-scale trainer emitting per-epoch margin snapshots.

A bias-free ReLU MLP (optionally fronted by a small 1-D conv layer) trained
with plain SGD on softmax cross-entropy over synthetic Gaussian blob data
with optional label corruption. Bias-free layers make the network exactly
positively homogeneous per layer: scaling one layer's weights by c > 0
scales every logit, hence every margin, by c, and scales the Lipschitz
estimate by the same c, so normalized margins are invariant. That is the
property the normalization diagnostics rely on, and the trainer keeps it
testable to float precision.

Everything is seeded; a run is byte-identical across repeats of the same
config on the same build.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .convops import ConvKernel
from .errors import DataError, NumericError
from .margins import margins_from_logits
from .network import ActivationLayer, ConvLayer, DenseLayer, NetworkSpec
from .norms import network_lipschitz
from .runio import RunManifest, RunRecord


@dataclass(frozen=True)
class BlobSpec:
    """Synthetic dataset: isotropic unit-variance Gaussian clusters.

    separation is the smallest distance between any two cluster centers, in
    units of the within-cluster standard deviation.
    """

    num_classes: int = 3
    n_train: int = 600
    n_test: int = 600
    dim: int = 20
    separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        if self.n_train < self.num_classes:
            raise DataError("need at least one training sample per class")
        if self.n_test < 1:
            raise DataError("need at least one test sample")
        if self.dim < 1:
            raise DataError(f"dimension must be >= 1, got {self.dim}")
        if not self.separation > 0:
            raise DataError(f"separation must be > 0, got {self.separation}")


@dataclass(frozen=True)
class Blobs:
    x_train: np.ndarray
    y_train_true: np.ndarray
    y_train: np.ndarray  # corrupted labels actually trained on
    x_test: np.ndarray
    y_test: np.ndarray
    centers: np.ndarray


def make_blobs(spec, corrupt_fraction=0.0):
    """Generate blob data; corrupt a seeded fraction of train labels.

    Corrupted samples are relabeled uniformly among the other classes, so at
    corrupt_fraction=1 every label differs from its original.
    """
    if not 0.0 <= corrupt_fraction <= 1.0:
        raise DataError(f"corrupt_fraction must lie in [0, 1], got {corrupt_fraction}")
    rng = np.random.default_rng(spec.seed)
    k, dim = spec.num_classes, spec.dim
    centers = rng.standard_normal((k, dim))
    dists = [
        np.linalg.norm(centers[i] - centers[j]) for i in range(k) for j in range(i + 1, k)
    ]
    min_dist = min(dists)
    if min_dist == 0:
        raise DataError("degenerate blob centers; use another seed")
    centers = centers * (spec.separation / min_dist)

    y_train = np.arange(spec.n_train, dtype=np.int64) % k
    x_train = centers[y_train] + rng.standard_normal((spec.n_train, dim))
    y_test = np.arange(spec.n_test, dtype=np.int64) % k
    x_test = centers[y_test] + rng.standard_normal((spec.n_test, dim))

    corrupted = y_train.copy()
    n_corrupt = int(round(corrupt_fraction * spec.n_train))
    if n_corrupt:
        idx = rng.choice(spec.n_train, size=n_corrupt, replace=False)
        shift = rng.integers(1, k, size=n_corrupt)
        corrupted[idx] = (corrupted[idx] + shift) % k
    return Blobs(
        x_train=x_train,
        y_train_true=y_train,
        y_train=corrupted,
        x_test=x_test,
        y_test=y_test,
        centers=centers,
    )


@dataclass(frozen=True)
class TrainConfig:
    data: BlobSpec = field(default_factory=BlobSpec)
    hidden: tuple = (8,)
    conv_channels: int = 0  # 0 disables the conv front-end
    conv_size: int = 5
    conv_stride: int = 1
    corrupt_fraction: float = 0.1
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    norm_method: str = "power"
    with_bias: bool = False
    init_scale: float = 1.0  # multiplier on the He-style init magnitude

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise DataError("corrupt_fraction must lie in [0, 1]")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise DataError("learning_rate must be >= 0")
        if self.norm_method not in ("power", "l1"):
            raise DataError(f"norm_method must be 'power' or 'l1', got {self.norm_method}")
        if not self.init_scale > 0:
            raise DataError("init_scale must be > 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def config_from_dict(obj):
    data = BlobSpec(**obj.get("data", {}))
    rest = {k: v for k, v in obj.items() if k != "data"}
    if "hidden" in rest:
        rest["hidden"] = tuple(rest["hidden"])
    return TrainConfig(data=data, **rest)


def config_to_dict(config):
    obj = asdict(config)
    obj["hidden"] = list(config.hidden)
    return obj


class ToyNet:
    """Weight container: optional conv front-end followed by dense layers."""

    def __init__(self, conv, dense, biases=None):
        self.conv = conv  # ConvKernel or None
        self.dense = dense  # list of (out, in) matrices
        self.biases = biases  # list parallel to dense, or None

    def copy(self):
        conv = None
        if self.conv is not None:
            conv = ConvKernel(
                self.conv.weights.copy(), self.conv.stride, self.conv.padding
            )
        biases = None if self.biases is None else [b.copy() for b in self.biases]
        return ToyNet(conv, [w.copy() for w in self.dense], biases)

    def to_network_spec(self, input_dim, num_classes):
        layers = []
        if self.conv is not None:
            layers.append(ConvLayer(kernel=self.conv, input_shape=(input_dim,), name="conv0"))
            layers.append(ActivationLayer(lipschitz=1.0, name="relu0"))
            input_shape = (1, input_dim)
        else:
            input_shape = (input_dim,)
        for i, w in enumerate(self.dense):
            bias = self.biases[i] if self.biases is not None else None
            layers.append(DenseLayer(weights=w, bias=bias, name=f"dense{i}"))
            if i < len(self.dense) - 1:
                layers.append(ActivationLayer(lipschitz=1.0, name=f"relu{i + 1}"))
        return NetworkSpec(layers=tuple(layers), input_shape=input_shape,
                           num_classes=num_classes)


def init_net(config, input_dim, num_classes, rng):
    conv = None
    flat_dim = input_dim
    scale = config.init_scale
    if config.conv_channels > 0:
        size = min(config.conv_size, input_dim)
        w = rng.standard_normal((config.conv_channels, 1, size)) * (
            scale * math.sqrt(2.0 / size)
        )
        conv = ConvKernel(w, stride=config.conv_stride, padding=(0,))
        out_len = (input_dim - size) // config.conv_stride + 1
        flat_dim = config.conv_channels * out_len
    widths = [flat_dim, *config.hidden, num_classes]
    dense = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        dense.append(rng.standard_normal((fan_out, fan_in)) * (scale * math.sqrt(2.0 / fan_in)))
    biases = [np.zeros(w.shape[0]) for w in dense] if config.with_bias else None
    return ToyNet(conv, dense, biases)


def _conv_forward_batch(kernel, x):
    """Batched 1-D conv: x is (n, C_in, L) -> (n, C_out, L_out)."""
    w, s = kernel.weights, kernel.stride
    n = x.shape[0]
    c_out, _, ksize = w.shape
    lo = (x.shape[2] - ksize) // s + 1
    out = np.zeros((n, c_out, lo))
    for k in range(ksize):
        sl = x[:, :, k : k + s * (lo - 1) + 1 : s]
        out += np.einsum("oi,nil->nol", w[:, :, k], sl)
    return out


def _conv_backward_batch(kernel, x, grad_out):
    """Kernel gradient for the batched conv above; x (n, C_in, L), grad (n, C_out, L_out)."""
    w, s = kernel.weights, kernel.stride
    ksize = w.shape[2]
    lo = grad_out.shape[2]
    grad_w = np.zeros_like(w)
    for k in range(ksize):
        sl = x[:, :, k : k + s * (lo - 1) + 1 : s]
        grad_w[:, :, k] = np.einsum("nol,nil->oi", grad_out, sl)
    return grad_w


def forward(net, x, keep=False):
    """Logits for a batch x of shape (n, dim); keep=True also returns the cache."""
    x = np.asarray(x, dtype=np.float64)
    cache = {"x": x}
    if net.conv is not None:
        signal = x[:, None, :]
        pre = _conv_forward_batch(net.conv, signal)
        act = np.maximum(pre, 0.0)
        a = act.reshape(x.shape[0], -1)
        cache.update(conv_in=signal, conv_pre=pre, conv_shape=act.shape)
    else:
        a = x
    pres, acts = [], [a]
    for i, w in enumerate(net.dense):
        z = a @ w.T
        if net.biases is not None:
            z = z + net.biases[i]
        pres.append(z)
        a = np.maximum(z, 0.0) if i < len(net.dense) - 1 else z
        acts.append(a)
    if keep:
        cache.update(pres=pres, acts=acts)
        return acts[-1], cache
    return acts[-1]


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - shifted[np.arange(labels.shape[0]), labels]))


def backward(net, x, labels):
    """Mean cross-entropy gradients for one batch, hand-derived.

    Returns (loss, conv kernel grad or None, dense grads, bias grads or None).
    ReLU uses subgradient 0 at 0.
    """
    logits, cache = forward(net, x, keep=True)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    n = x.shape[0]
    probs = _softmax(logits)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    dense_grads = [None] * len(net.dense)
    bias_grads = [None] * len(net.dense) if net.biases is not None else None
    acts, pres = cache["acts"], cache["pres"]
    for i in range(len(net.dense) - 1, -1, -1):
        dense_grads[i] = delta.T @ acts[i]
        if bias_grads is not None:
            bias_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.dense[i]) * (pres[i - 1] > 0)
        else:
            delta = delta @ net.dense[i]

    conv_grad = None
    if net.conv is not None:
        grad_act = delta.reshape(cache["conv_shape"])
        grad_pre = grad_act * (cache["conv_pre"] > 0)
        conv_grad = _conv_backward_batch(net.conv, cache["conv_in"], grad_pre)
    loss = cross_entropy(logits, labels)
    return loss, conv_grad, dense_grads, bias_grads


def _apply_sgd(net, conv_grad, dense_grads, bias_grads, lr):
    if conv_grad is not None:
        net.conv = ConvKernel(
            net.conv.weights - lr * conv_grad, net.conv.stride, net.conv.padding
        )
    for i, g in enumerate(dense_grads):
        net.dense[i] = net.dense[i] - lr * g
    if bias_grads is not None:
        for i, g in enumerate(bias_grads):
            net.biases[i] = net.biases[i] - lr * g


@dataclass
class ToyRun:
    """Full output of a training run: manifest, per-epoch records, final weights."""

    manifest: RunManifest
    records: list
    net: ToyNet
    blobs: Blobs
    config: TrainConfig
    diverged_at: int = None


def lipschitz_scale(net, input_dim, num_classes, method):
    spec = net.to_network_spec(input_dim, num_classes)
    scale, _ = network_lipschitz(spec, method=method)
    return scale


def train(config):
    """Run SGD for config.epochs epochs, capturing one record per epoch.

    Each record holds the raw train/test margins (train margins against the
    corrupted labels actually trained on), the Lipschitz scale of the
    current weights, and scalar metrics, all computed after the epoch's
    updates. Divergence (non-finite loss) stops the run early; the partial
    record list is returned with diverged_at set.
    """
    blobs = make_blobs(config.data, config.corrupt_fraction)
    k = config.data.num_classes
    dim = config.data.dim
    rng = np.random.default_rng(config.seed)
    net = init_net(config, dim, k, rng)

    records = []
    diverged_at = None
    n = blobs.x_train.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        try:
            for start in range(0, n, config.batch_size):
                batch = perm[start : start + config.batch_size]
                loss, conv_g, dense_g, bias_g = backward(
                    net, blobs.x_train[batch], blobs.y_train[batch]
                )
                if not math.isfinite(loss):
                    raise NumericError(f"training loss diverged at epoch {epoch}")
                _apply_sgd(net, conv_g, dense_g, bias_g, config.learning_rate)

            train_logits = forward(net, blobs.x_train)
            test_logits = forward(net, blobs.x_test)
            if not (np.all(np.isfinite(train_logits)) and np.all(np.isfinite(test_logits))):
                raise NumericError(f"non-finite logits at epoch {epoch}")
        except NumericError:
            diverged_at = epoch
            break
        train_margins = margins_from_logits(train_logits, blobs.y_train)
        test_margins = margins_from_logits(test_logits, blobs.y_test)
        scale = lipschitz_scale(net, dim, k, config.norm_method)
        records.append(
            RunRecord(
                epoch=epoch,
                train_margins=[float(v) for v in train_margins],
                test_margins=[float(v) for v in test_margins],
                lipschitz=scale,
                train_loss=cross_entropy(train_logits, blobs.y_train),
                train_error=float(np.mean(train_margins <= 0)),
                test_error=float(np.mean(test_margins <= 0)),
            )
        )

    notes = f"diverged at epoch {diverged_at}" if diverged_at is not None else None
    manifest = RunManifest(
        num_classes=k,
        n_train=config.data.n_train,
        n_test=config.data.n_test,
        normalization_method=config.norm_method,
        creator="margindyn toy trainer",
        notes=notes,
    )
    return ToyRun(
        manifest=manifest,
        records=records,
        net=net,
        blobs=blobs,
        config=config,
        diverged_at=diverged_at,
    )
