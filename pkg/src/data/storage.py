"""On-disk formats: tensor archives, model manifests, sidecars, tables.

Tensor archive (.sst), little-endian:
    b"SSTN" | u32 version (=1) | u32 ndim | ndim x u32 dims | prod(dims) x f32

Model manifest: JSON with ``input_dims``, ``weights_file`` and ``layers``;
each conv layer carries ``kernel`` and ``bias`` entries ``{offset, len}``
giving byte offset and byte length into the sibling weights blob (raw
little-endian f32, kernels laid out [out][in][kh][kw]).
"""
import json
import struct
from datetime import datetime
from pathlib import Path

import numpy as np

from src import config
from src.data.cifar import ZcaTransform
from src.data.sampling import DataMatrix
from src.errors import BoundsError, FormatError, ParseError, ValidationError
from src.model.graph import LAYER_KINDS, POOL_KINDS, LayerSpec, ModelGraph
from src.utils.logging import log_debug

SST_MAGIC = b"SSTN"
SST_VERSION = 1
MODEL_FORMAT = "channelfold-model"
LE_F32 = np.dtype("<f4")


def _ensure_parent(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -- tensor archives ---------------------------------------------------------

def tensor_bytes(t):
    t = np.asarray(t, dtype=np.float32)
    header = struct.pack(f"<4sII{t.ndim}I", SST_MAGIC, SST_VERSION, t.ndim, *t.shape)
    return header + t.astype(LE_F32).tobytes(order="C")


def save_tensor(t, path):
    """Write ``t`` as a .sst archive"""
    path = _ensure_parent(path)
    path.write_bytes(tensor_bytes(t))
    return path


def parse_tensor(buf, source="<bytes>"):
    if len(buf) < 12:
        raise FormatError(f"{source}: truncated header ({len(buf)} bytes)")
    magic, version, ndim = struct.unpack_from("<4sII", buf, 0)
    if magic != SST_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {SST_MAGIC!r}")
    if version != SST_VERSION:
        raise FormatError(f"{source}: unsupported archive version {version}")
    if ndim < 1:
        raise FormatError(f"{source}: ndim must be >= 1")
    header_len = 12 + 4 * ndim
    if len(buf) < header_len:
        raise FormatError(f"{source}: truncated dims at byte {len(buf)}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    if any(d < 1 for d in dims):
        raise FormatError(f"{source}: dims must be >= 1, got {list(dims)}")
    count = int(np.prod(dims))
    expected = header_len + 4 * count
    if len(buf) != expected:
        raise FormatError(f"{source}: payload is {len(buf) - header_len} bytes, expected {4 * count}")
    data = np.frombuffer(buf, dtype=LE_F32, count=count, offset=header_len)
    return data.astype(np.float32).reshape(dims)


def load_tensor(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"tensor archive not found: {path}")
    return parse_tensor(path.read_bytes(), str(path))


def _sidecar_path(path):
    return Path(path).with_suffix(".json")


def _write_json(path, payload):
    path = _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


# -- model manifests ---------------------------------------------------------

def save_model(graph, manifest_path):
    """Write manifest JSON plus the sibling ``.bin`` weights blob"""
    graph.validate()
    manifest_path = _ensure_parent(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")

    chunks = []
    offset = 0
    layers = []
    previous = None
    for layer in graph.layers:
        entry = layer.geometry()
        if previous is not None:
            entry["input"] = previous
        previous = layer.name
        if layer.is_conv:
            kernel, bias = graph.weights[layer.name]
            for key, array in (("kernel", kernel), ("bias", bias)):
                raw = np.asarray(array, dtype=np.float32).astype(LE_F32).tobytes(order="C")
                entry[key] = {"offset": offset, "len": len(raw)}
                chunks.append(raw)
                offset += len(raw)
        layers.append(entry)

    manifest = {
        "format": MODEL_FORMAT,
        "version": 1,
        "input_dims": list(graph.input_dims),
        "weights_file": blob_path.name,
        "layers": layers,
    }
    blob_path.write_bytes(b"".join(chunks))
    _write_json(manifest_path, manifest)
    log_debug(f"Saved model with {len(layers)} layers to {manifest_path}")
    return manifest_path


_MISSING = object()


def _field(entry, key, where, kind=int, default=_MISSING):
    if key not in entry:
        if default is not _MISSING:
            return default
        raise ParseError(f"{where}: missing field '{key}'")
    value = entry[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"{where}: field '{key}' must be an integer, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ParseError(f"{where}: field '{key}' must be a string, got {value!r}")
    return value


def _read_blob_array(blob, entry, where, key, dims):
    ref = entry.get(key)
    if not isinstance(ref, dict):
        raise ParseError(f"{where}: missing field '{key}'")
    offset = _field(ref, "offset", f"{where}.{key}")
    length = _field(ref, "len", f"{where}.{key}")
    if offset < 0 or length < 0 or offset + length > len(blob):
        raise BoundsError(
            f"{where}.{key}: bytes [{offset}, {offset + length}) exceed weights blob of {len(blob)} bytes"
        )
    count = int(np.prod(dims))
    if length != 4 * count:
        raise ValidationError(f"{where}: {key} has {length} bytes, dims {list(dims)} need {4 * count}")
    data = np.frombuffer(blob, dtype=LE_F32, count=count, offset=offset)
    return data.astype(np.float32).reshape(dims)


def _parse_layer(entry, index, previous):
    if not isinstance(entry, dict):
        raise ParseError(f"layers[{index}]: expected an object")
    name = _field(entry, "name", f"layers[{index}]", str)
    where = f"layers[{index}] ({name})"
    kind = _field(entry, "kind", where, str)
    if kind not in LAYER_KINDS:
        raise ParseError(f"{where}: unknown kind '{kind}'")
    source = entry.get("input")
    if source is not None and source != previous:
        raise ValidationError(f"{where}: input '{source}' branches off the chain (expected '{previous}')")

    if kind == "conv":
        return LayerSpec(
            name,
            kind,
            in_channels=_field(entry, "in_channels", where),
            out_channels=_field(entry, "out_channels", where),
            kernel_size=_field(entry, "kernel_size", where),
            stride=_field(entry, "stride", where, default=1),
            pad=_field(entry, "pad", where, default=0),
        )
    if kind in POOL_KINDS:
        k = _field(entry, "kernel_size", where)
        stride = _field(entry, "stride", where, default=k)
        return LayerSpec(name, kind, kernel_size=k, stride=stride, pad=_field(entry, "pad", where, default=0))
    return LayerSpec(name, kind)


def load_model(manifest_path):
    """Read a manifest and its weights blob into a validated ModelGraph"""
    manifest_path = Path(manifest_path)
    manifest = _read_json(manifest_path)
    if not isinstance(manifest, dict):
        raise ParseError(f"{manifest_path}: manifest must be a JSON object")

    input_dims = manifest.get("input_dims")
    if not (isinstance(input_dims, list) and len(input_dims) == 3 and all(isinstance(d, int) for d in input_dims)):
        raise ParseError(f"{manifest_path}: field 'input_dims' must be [C, H, W]")
    entries = manifest.get("layers")
    if not isinstance(entries, list):
        raise ParseError(f"{manifest_path}: field 'layers' must be a list")

    blob_path = manifest_path.parent / manifest.get("weights_file", manifest_path.with_suffix(".bin").name)
    if not blob_path.exists():
        raise FormatError(f"{manifest_path}: weights blob not found: {blob_path}")
    blob = blob_path.read_bytes()

    layers = []
    weights = {}
    previous = None
    for index, entry in enumerate(entries):
        layer = _parse_layer(entry, index, previous)
        if layer.is_conv:
            where = f"layers[{index}] ({layer.name})"
            for attr in ("in_channels", "out_channels", "kernel_size"):
                if getattr(layer, attr) < 1:
                    raise ValidationError(f"{where}: {attr} must be >= 1")
            kernel = _read_blob_array(blob, entry, where, "kernel", layer.kernel_dims())
            bias = _read_blob_array(blob, entry, where, "bias", (layer.out_channels,))
            weights[layer.name] = (kernel, bias)
        layers.append(layer)
        previous = layer.name

    graph = ModelGraph(layers, weights, tuple(input_dims)).validate()
    log_debug(f"Loaded model {manifest_path} ({len(layers)} layers, {len(weights)} conv)")
    return graph


# -- data matrices and preprocessing ----------------------------------------

def save_data_matrix(dm, path):
    """Write the matrix archive plus its JSON sidecar"""
    path = save_tensor(dm.values, path)
    _write_json(_sidecar_path(path), dm.sidecar())
    return path


def load_data_matrix(path):
    values = load_tensor(path)
    meta = _read_json(_sidecar_path(path))
    try:
        dm = DataMatrix(
            values=values,
            layer=meta["layer"],
            n_images=meta["N"],
            height=meta["H"],
            width=meta["W"],
            channels=meta["C"],
            seed=meta.get("seed"),
        )
    except KeyError as e:
        raise ParseError(f"{_sidecar_path(path)}: missing field {e}") from e
    return dm.check()


def save_zca(transform, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(transform.mean, directory / "mean.sst")
    save_tensor(transform.whitening, directory / "whitening.sst")
    _write_json(directory / "zca.json", {"epsilon": transform.epsilon, "shape": list(transform.shape)})
    return directory


def load_zca(directory):
    directory = Path(directory)
    meta = _read_json(directory / "zca.json")
    return ZcaTransform(
        mean=load_tensor(directory / "mean.sst"),
        whitening=load_tensor(directory / "whitening.sst"),
        epsilon=float(meta["epsilon"]),
        shape=tuple(meta["shape"]),
    )


# -- run manifests and tables -----------------------------------------------

def run_manifest_path(output_path):
    output_path = Path(output_path)
    return output_path.with_name(output_path.name + ".run.json")


def write_run_manifest(output_path, command, params, started_at):
    """Record the resolved parameters of a run next to its output"""
    payload = {
        "command": command,
        "params": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(params.items())},
        "version": config.VERSION,
        "environment": config.settings(),
        "started_at": started_at,
        "finished_at": datetime.now().isoformat(timespec="seconds"),
    }
    return _write_json(run_manifest_path(output_path), payload)


def save_table(df, path):
    """Save a DataFrame as CSV or Excel depending on the suffix"""
    path = _ensure_parent(path)
    if path.suffix == ".xlsx":
        df.to_excel(path, index=False)
    else:
        df.to_csv(path, index=False)
    return path
