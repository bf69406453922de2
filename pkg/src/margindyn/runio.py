"""On-disk formats: run files (JSON Lines), tensors (MTEN), network dirs, reports.

Run file: UTF-8 JSON Lines with LF newlines. The first line is the manifest
object; every following line is one per-epoch record. Unknown fields are
preserved on read and re-emitted on write. Reading is streaming: memory use
does not grow with the number of epochs unless the caller keeps records.

Tensor file (MTEN): magic bytes "MTEN" (0x4D54454E), u32 little-endian
version (currently 1), u8 dtype (0 = float32, 1 = float64), u8 ndim in
1..8, ndim u64 little-endian dimension sizes, then the row-major
little-endian payload. Exact payload length is enforced; float32 payloads
are widened exactly to float64 on read.

Network dir: a layers.json descriptor (ordered layer list with kinds,
stride/padding, batchnorm parameters inline, residual nesting) next to the
MTEN files it references.

All writers are atomic: temp file in the target directory, then rename.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .convops import ConvKernel
from .errors import DataError, FormatError, ShapeError
from .network import (
    ActivationLayer,
    BatchNormLayer,
    ConvLayer,
    DenseLayer,
    NetworkSpec,
    PoolLayer,
    ResidualBlock,
)

RUN_SCHEMA_VERSION = 1
NETWORK_SCHEMA_VERSION = 1
MTEN_MAGIC = b"MTEN"
MTEN_VERSION = 1

_MANIFEST_FIELDS = (
    "num_classes",
    "n_train",
    "n_test",
    "normalization_method",
    "creator",
    "notes",
    "schema_version",
)
_RECORD_FIELDS = (
    "epoch",
    "lipschitz",
    "train_margins",
    "test_margins",
    "train_loss",
    "train_error",
    "test_error",
    "weights_dir",
)


@dataclass
class RunManifest:
    num_classes: int
    n_train: int = None
    n_test: int = None
    normalization_method: str = None
    creator: str = None
    notes: str = None
    schema_version: int = RUN_SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.schema_version) != RUN_SCHEMA_VERSION:
            raise FormatError(
                f"unsupported run schema_version {self.schema_version}, "
                f"expected {RUN_SCHEMA_VERSION}"
            )
        if int(self.num_classes) < 2:
            raise DataError(f"manifest field num_classes must be >= 2, got {self.num_classes}")
        self.num_classes = int(self.num_classes)
        self.schema_version = int(self.schema_version)


@dataclass
class RunRecord:
    """One epoch's raw (unnormalized) margins and scalar metrics."""

    epoch: int
    train_margins: list
    lipschitz: float = None
    test_margins: list = None
    train_loss: float = None
    train_error: float = None
    test_error: float = None
    weights_dir: str = None  # relative path to a network dir for this epoch
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epoch = int(self.epoch)
        self.train_margins = _check_margin_list(self.train_margins, "train_margins")
        if self.test_margins is not None:
            self.test_margins = _check_margin_list(self.test_margins, "test_margins")
        if self.lipschitz is not None:
            self.lipschitz = float(self.lipschitz)


# EpochSnapshot is the same shape of data the toy trainer emits per epoch.
EpochSnapshot = RunRecord


def _check_margin_list(values, name):
    out = [float(v) for v in values]
    if not out:
        raise DataError(f"field {name} must be a non-empty array")
    if not all(math.isfinite(v) for v in out):
        raise DataError(f"field {name} contains non-finite values")
    return out


def _atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest_to_obj(manifest):
    obj = {}
    for name in _MANIFEST_FIELDS:
        value = getattr(manifest, name)
        if value is not None:
            obj[name] = value
    obj.update(manifest.extra)
    return obj


def _record_to_obj(record):
    obj = {}
    for name in _RECORD_FIELDS:
        value = getattr(record, name)
        if value is not None:
            obj[name] = value
    obj.update(record.extra)
    return obj


def write_run(path, manifest, records):
    """Write a manifest plus an iterable of records as JSON Lines, atomically."""
    lines = [json.dumps(_manifest_to_obj(manifest), sort_keys=True)]
    for record in records:
        lines.append(json.dumps(_record_to_obj(record), sort_keys=True))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_manifest(obj, line_no):
    if not isinstance(obj, dict):
        raise FormatError(f"line {line_no}: manifest must be a JSON object")
    known = {k: obj[k] for k in _MANIFEST_FIELDS if k in obj}
    extra = {k: v for k, v in obj.items() if k not in _MANIFEST_FIELDS}
    if "num_classes" not in known:
        raise FormatError(f"line {line_no}: manifest is missing field num_classes")
    try:
        return RunManifest(extra=extra, **known)
    except (DataError, FormatError, TypeError, ValueError) as exc:
        raise FormatError(f"line {line_no}: {exc}") from exc


def _parse_record(obj, line_no):
    if not isinstance(obj, dict):
        raise FormatError(f"line {line_no}: record must be a JSON object")
    known = {k: obj[k] for k in _RECORD_FIELDS if k in obj}
    extra = {k: v for k, v in obj.items() if k not in _RECORD_FIELDS}
    for required in ("epoch", "train_margins"):
        if required not in known:
            raise FormatError(f"line {line_no}: record is missing field {required}")
    try:
        return RunRecord(extra=extra, **known)
    except (DataError, FormatError, TypeError, ValueError) as exc:
        raise FormatError(f"line {line_no}: {exc}") from exc


def read_run(path):
    """Parse a run file into (manifest, record iterator).

    The iterator is lazy; parse errors carry 1-based line numbers. Duplicate
    epochs are rejected as they stream past.
    """
    fh = open(path, "r", encoding="utf-8")
    first = fh.readline()
    if not first.strip():
        fh.close()
        raise FormatError("line 1: missing manifest")
    try:
        obj = json.loads(first)
    except json.JSONDecodeError as exc:
        fh.close()
        raise FormatError(f"line 1: malformed JSON: {exc.msg}") from exc
    manifest = _parse_manifest(obj, 1)

    def records():
        seen = set()
        with fh:
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"line {line_no}: malformed JSON: {exc.msg}") from exc
                record = _parse_record(obj, line_no)
                if record.epoch in seen:
                    raise FormatError(f"line {line_no}: duplicate epoch {record.epoch}")
                seen.add(record.epoch)
                yield record

    return manifest, records()


def read_run_list(path):
    """Convenience wrapper: fully materialize the record stream."""
    manifest, records = read_run(path)
    return manifest, list(records)


# ---------------------------------------------------------------------------
# MTEN tensor files


def write_tensor(path, array, dtype="f64"):
    array = np.asarray(array)
    if array.ndim < 1 or array.ndim > 8:
        raise FormatError(f"tensor rank must be in 1..8, got {array.ndim}")
    if any(d < 1 for d in array.shape):
        raise FormatError(f"tensor dimensions must be positive, got {array.shape}")
    if dtype == "f64":
        code, payload = 1, np.ascontiguousarray(array, dtype="<f8")
    elif dtype == "f32":
        code, payload = 0, np.ascontiguousarray(array, dtype="<f4")
    else:
        raise FormatError(f"unsupported tensor dtype {dtype!r}")
    header = MTEN_MAGIC + struct.pack("<IBB", MTEN_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    _atomic_write_bytes(path, header + payload.tobytes())


def read_tensor(path):
    """Read an MTEN file into a float64 array (float32 payloads widen exactly)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:4] != MTEN_MAGIC:
        raise FormatError(f"{path}: not an MTEN tensor file")
    version, code, ndim = struct.unpack_from("<IBB", data, 4)
    if version != MTEN_VERSION:
        raise FormatError(f"{path}: unsupported MTEN version {version}")
    if code not in (0, 1):
        raise FormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= 8:
        raise FormatError(f"{path}: tensor rank {ndim} outside 1..8")
    offset = 10
    if len(data) < offset + 8 * ndim:
        raise FormatError(f"{path}: truncated dimension header")
    shape = struct.unpack_from(f"<{ndim}Q", data, offset)
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: non-positive dimension in {shape}")
    offset += 8 * ndim
    itemsize = 4 if code == 0 else 8
    expected = int(np.prod(shape)) * itemsize
    if len(data) - offset != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - offset} bytes, expected {expected}"
        )
    dtype = "<f4" if code == 0 else "<f8"
    payload = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    return payload.astype(np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# Network directories


def _tensor_ref(dirpath, ref, layer_name):
    path = os.path.join(dirpath, ref)
    if not os.path.exists(path):
        raise FormatError(f"layer '{layer_name}': tensor file {ref!r} not found")
    return read_tensor(path)


def _layer_from_obj(obj, dirpath, index, prefix=""):
    kind = obj.get("kind")
    name = obj.get("name") or f"{prefix}layer{index}"
    if kind == "dense":
        weights = _tensor_ref(dirpath, obj["weights"], name)
        bias = _tensor_ref(dirpath, obj["bias"], name) if obj.get("bias") else None
        return DenseLayer(weights=weights, bias=bias, name=name)
    if kind == "conv":
        weights = _tensor_ref(dirpath, obj["weights"], name)
        bias = _tensor_ref(dirpath, obj["bias"], name) if obj.get("bias") else None
        try:
            kernel = ConvKernel(
                weights, stride=obj.get("stride", 1), padding=obj.get("padding")
            )
            return ConvLayer(
                kernel=kernel, bias=bias, input_shape=obj.get("input_shape"), name=name
            )
        except ShapeError as exc:
            raise FormatError(f"layer '{name}': {exc}") from exc
    if kind == "batchnorm":
        try:
            return BatchNormLayer(
                scale=obj["scale"],
                shift=obj["shift"],
                mean=obj["mean"],
                var=obj["var"],
                eps=obj.get("eps", 1e-5),
                name=name,
            )
        except (DataError, ShapeError) as exc:
            raise FormatError(f"layer '{name}': {exc}") from exc
    if kind == "activation":
        return ActivationLayer(lipschitz=obj.get("lipschitz", 1.0), name=name)
    if kind == "pool":
        return PoolLayer(
            lipschitz=obj.get("lipschitz", 1.0),
            output_shape=obj.get("output_shape"),
            name=name,
        )
    if kind == "residual-block":
        shortcut = tuple(
            _layer_from_obj(sub, dirpath, i, prefix=f"{name}.shortcut.")
            for i, sub in enumerate(obj.get("shortcut", []))
        )
        main = tuple(
            _layer_from_obj(sub, dirpath, i, prefix=f"{name}.main.")
            for i, sub in enumerate(obj.get("main", []))
        )
        try:
            return ResidualBlock(
                shortcut=shortcut,
                main=main,
                inner_lipschitz=obj.get("inner_lipschitz", 1.0),
                name=name,
            )
        except DataError as exc:
            raise FormatError(f"layer '{name}': {exc}") from exc
    raise FormatError(f"layer '{name}': unknown kind {kind!r}")


def read_network(dirpath):
    """Load layers.json plus referenced tensors into a validated NetworkSpec."""
    descriptor = os.path.join(dirpath, "layers.json")
    if not os.path.exists(descriptor):
        raise FormatError(f"{dirpath}: no layers.json found")
    with open(descriptor, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"layers.json: malformed JSON: {exc.msg}") from exc
    if obj.get("schema_version", NETWORK_SCHEMA_VERSION) != NETWORK_SCHEMA_VERSION:
        raise FormatError(f"unsupported network schema_version {obj.get('schema_version')}")
    if "input_shape" not in obj:
        raise FormatError("layers.json: missing input_shape")
    layers = tuple(
        _layer_from_obj(layer_obj, dirpath, i)
        for i, layer_obj in enumerate(obj.get("layers", []))
    )
    try:
        net = NetworkSpec(
            layers=layers,
            input_shape=obj["input_shape"],
            num_classes=obj.get("num_classes"),
        )
    except (DataError, ShapeError) as exc:
        raise FormatError(f"layers.json: {exc}") from exc
    check_composition(net)
    return net


def check_composition(net):
    """Propagate shapes through the layer list and flag the first mismatch."""

    def flat(shape):
        return int(np.prod(shape)) if shape is not None else None

    def walk(layers, shape):
        for layer in layers:
            if layer.kind == "dense":
                if shape is not None and flat(shape) != layer.weights.shape[1]:
                    raise ShapeError(
                        f"layer '{layer.name}': dense expects {layer.weights.shape[1]} "
                        f"inputs but upstream provides {flat(shape)}"
                    )
                shape = (layer.weights.shape[0],)
            elif layer.kind == "conv":
                kernel = layer.kernel
                if layer.input_shape is not None:
                    if shape is not None and len(shape) == len(layer.input_shape) + 1:
                        if tuple(shape[1:]) != layer.input_shape:
                            raise ShapeError(
                                f"layer '{layer.name}': declared input_shape "
                                f"{layer.input_shape} conflicts with upstream {shape[1:]}"
                            )
                    shape = (kernel.c_in, *layer.input_shape)
                if shape is None:
                    shape = None
                elif len(shape) != len(kernel.spatial_size) + 1:
                    raise ShapeError(
                        f"layer '{layer.name}': conv input must be "
                        f"(channels, spatial...), upstream provides {shape}"
                    )
                if shape is not None:
                    if shape[0] != kernel.c_in:
                        raise ShapeError(
                            f"layer '{layer.name}': expects {kernel.c_in} channels, "
                            f"upstream provides {shape[0]}"
                        )
                    shape = kernel.output_shape(shape)
            elif layer.kind == "batchnorm":
                if shape is not None and shape[0] != layer.channels:
                    raise ShapeError(
                        f"layer '{layer.name}': batchnorm over {layer.channels} channels, "
                        f"upstream provides {shape[0]}"
                    )
            elif layer.kind == "pool":
                if layer.output_shape is not None and shape is not None:
                    shape = (shape[0], *layer.output_shape)
            elif layer.kind == "activation":
                pass
            elif layer.kind == "residual-block":
                short_shape = walk(layer.shortcut, shape)
                main_shape = walk(layer.main, shape)
                if (
                    short_shape is not None
                    and main_shape is not None
                    and layer.shortcut
                    and tuple(short_shape) != tuple(main_shape)
                ):
                    raise ShapeError(
                        f"layer '{layer.name}': shortcut output {short_shape} does not "
                        f"match mainstream output {main_shape}"
                    )
                shape = main_shape
        return shape

    walk(net.layers, net.input_shape)
    return net


def _layer_to_obj(layer, dirpath, counter, prefix=""):
    if layer.kind == "dense":
        ref = f"{prefix}t{counter[0]:03d}_dense.mten"
        counter[0] += 1
        write_tensor(os.path.join(dirpath, ref), layer.weights)
        obj = {"kind": "dense", "name": layer.name, "weights": ref}
        if layer.bias is not None:
            bref = f"{prefix}t{counter[0]:03d}_bias.mten"
            counter[0] += 1
            write_tensor(os.path.join(dirpath, bref), layer.bias)
            obj["bias"] = bref
        return obj
    if layer.kind == "conv":
        ref = f"{prefix}t{counter[0]:03d}_conv.mten"
        counter[0] += 1
        write_tensor(os.path.join(dirpath, ref), layer.kernel.weights)
        obj = {
            "kind": "conv",
            "name": layer.name,
            "weights": ref,
            "stride": layer.kernel.stride,
            "padding": list(layer.kernel.padding),
        }
        if layer.input_shape is not None:
            obj["input_shape"] = list(layer.input_shape)
        if layer.bias is not None:
            bref = f"{prefix}t{counter[0]:03d}_bias.mten"
            counter[0] += 1
            write_tensor(os.path.join(dirpath, bref), layer.bias)
            obj["bias"] = bref
        return obj
    if layer.kind == "batchnorm":
        return {
            "kind": "batchnorm",
            "name": layer.name,
            "scale": list(layer.scale),
            "shift": list(layer.shift),
            "mean": list(layer.mean),
            "var": list(layer.var),
            "eps": layer.eps,
        }
    if layer.kind == "activation":
        return {"kind": "activation", "name": layer.name, "lipschitz": layer.lipschitz}
    if layer.kind == "pool":
        obj = {"kind": "pool", "name": layer.name, "lipschitz": layer.lipschitz}
        if layer.output_shape is not None:
            obj["output_shape"] = list(layer.output_shape)
        return obj
    if layer.kind == "residual-block":
        return {
            "kind": "residual-block",
            "name": layer.name,
            "inner_lipschitz": layer.inner_lipschitz,
            "shortcut": [
                _layer_to_obj(sub, dirpath, counter, prefix=f"{layer.name}_s_")
                for sub in layer.shortcut
            ],
            "main": [
                _layer_to_obj(sub, dirpath, counter, prefix=f"{layer.name}_m_")
                for sub in layer.main
            ],
        }
    raise DataError(f"cannot serialize layer kind {layer.kind!r}")


def write_network(net, dirpath):
    """Write a NetworkSpec as layers.json plus MTEN tensor files."""
    os.makedirs(dirpath, exist_ok=True)
    counter = [0]
    layer_objs = [_layer_to_obj(layer, dirpath, counter) for layer in net.layers]
    obj = {
        "schema_version": NETWORK_SCHEMA_VERSION,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "layers": layer_objs,
    }
    _atomic_write_bytes(
        os.path.join(dirpath, "layers.json"),
        (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )


# ---------------------------------------------------------------------------
# Reports


def write_report_json(report, path):
    _atomic_write_bytes(path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_curves_csv(epochs, curves, path):
    """Per-epoch metric table; curves maps column name -> array over epochs."""
    names = list(curves)
    lines = ["epoch," + ",".join(names)]
    for i, epoch in enumerate(epochs):
        cells = []
        for name in names:
            value = curves[name][i]
            cells.append("" if value is None or not math.isfinite(value) else repr(float(value)))
        lines.append(f"{int(epoch)}," + ",".join(cells))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_heatmap_csv(heatmap, path):
    """Matrix as CSV: one row per gamma1 value, one column per gamma2 value."""
    header = "gamma1\\gamma2," + ",".join(repr(float(g)) for g in heatmap.gamma2_grid)
    lines = [header]
    for i, g1 in enumerate(heatmap.gamma1_grid):
        cells = [repr(float(g1))]
        for j in range(heatmap.gamma2_grid.size):
            v = heatmap.values[i, j]
            cells.append("nan" if not math.isfinite(v) else repr(float(v)))
        lines.append(",".join(cells))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def heatmap_color(value):
    """Diverging color for a correlation in [-1, 1]; gray for undefined cells."""
    if value is None or not math.isfinite(value):
        return (128, 128, 128)
    v = max(-1.0, min(1.0, float(value)))
    lo = (59, 76, 192)  # -1
    mid = (240, 240, 240)  # 0
    hi = (180, 4, 38)  # +1
    if v < 0:
        t = v + 1.0
        a, b = lo, mid
    else:
        t = v
        a, b = mid, hi
    return tuple(int(round(a[k] + t * (b[k] - a[k]))) for k in range(3))


def write_heatmap_svg(heatmap, path, cell=12):
    """Color-mapped grid for eyeballing; each cell carries its value as data-value."""
    rows = heatmap.gamma1_grid.size
    cols = heatmap.gamma2_grid.size
    margin = 4
    width = cols * cell + 2 * margin
    height = rows * cell + 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!-- rows: gamma1 (test thresholds, low to high top to bottom), "
        f"cols: gamma2 (train thresholds, low to high left to right) -->",
    ]
    for i in range(rows):
        for j in range(cols):
            v = heatmap.values[i, j]
            r, g, b = heatmap_color(v)
            label = "nan" if not math.isfinite(v) else repr(float(v))
            parts.append(
                f'<rect x="{margin + j * cell}" y="{margin + i * cell}" '
                f'width="{cell}" height="{cell}" fill="rgb({r},{g},{b})" '
                f'data-value="{label}" data-row="{i}" data-col="{j}"/>'
            )
    parts.append("</svg>")
    _atomic_write_bytes(path, ("\n".join(parts) + "\n").encode("utf-8"))
