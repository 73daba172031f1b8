import json
import struct

import numpy as np
import pytest

from conftest import conv_chain, make_rng
from src.data.cifar import fit_zca
from src.data.sampling import DataMatrix
from src.data.storage import (
    load_data_matrix,
    load_model,
    load_tensor,
    load_zca,
    run_manifest_path,
    save_data_matrix,
    save_model,
    save_tensor,
    save_zca,
    tensor_bytes,
    write_run_manifest,
)
from src.errors import BoundsError, FormatError, ParseError, ValidationError
from src.model.graph import LayerSpec, ModelGraph, conv, random_weights
from src.model.nin import build_nin_style


def test_sst_header_layout():
    buf = tensor_bytes(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert buf[:4] == b"SSTN"
    assert struct.unpack("<III", buf[4:16]) == (1, 2, 1)
    assert struct.unpack("<I", buf[16:20]) == (3,)
    assert struct.unpack("<3f", buf[20:]) == (1.0, 2.0, 3.0)


def test_sst_round_trip_is_bit_exact(tmp_path, rng):
    t = rng.standard_normal((2, 3, 4)).astype(np.float32)
    t[0, 0, 0] = -0.0
    t[1, 2, 3] = np.float32(1e-42)  # subnormal
    path = save_tensor(t, tmp_path / "t.sst")
    loaded = load_tensor(path)
    assert loaded.dtype == np.float32
    assert loaded.tobytes() == t.tobytes()
    assert path.read_bytes() == tensor_bytes(loaded)


def test_sst_rejects_bad_archives(tmp_path):
    good = tensor_bytes(np.ones((2, 2), dtype=np.float32))
    cases = {
        "magic.sst": b"XXXX" + good[4:],
        "version.sst": good[:4] + struct.pack("<I", 2) + good[8:],
        "short.sst": good[:-1],
        "header.sst": good[:6],
    }
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(FormatError):
            load_tensor(tmp_path / name)


def test_model_round_trip_is_bit_exact(tmp_path, rng):
    graph = conv_chain(rng)
    path = save_model(graph, tmp_path / "toy.json")
    loaded = load_model(path)
    assert loaded.layers == graph.layers
    assert loaded.input_dims == graph.input_dims
    for name, (kernel, bias) in graph.weights.items():
        assert loaded.weights[name][0].tobytes() == kernel.tobytes()
        assert loaded.weights[name][1].tobytes() == bias.tobytes()
    # Saving the loaded model reproduces both files byte for byte
    again = save_model(loaded, tmp_path / "again" / "toy.json")
    assert again.with_suffix(".bin").read_bytes() == path.with_suffix(".bin").read_bytes()


def test_manifest_documents_offsets(tmp_path, rng):
    graph = conv_chain(rng, channels=(3, 2, 1), kernel_sizes=(1, 1))
    manifest = json.loads(save_model(graph, tmp_path / "m.json").read_text())
    first = manifest["layers"][0]
    assert first["kernel"] == {"offset": 0, "len": 2 * 3 * 4}
    assert first["bias"] == {"offset": 24, "len": 8}
    assert manifest["weights_file"] == "m.bin"


def test_missing_blob_is_an_error(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    path.with_suffix(".bin").unlink()
    with pytest.raises(FormatError, match="weights blob"):
        load_model(path)


def test_offset_overrun_is_a_bounds_error(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    manifest["layers"][0]["kernel"]["offset"] = 10**6
    path.write_text(json.dumps(manifest))
    with pytest.raises(BoundsError):
        load_model(path)


def test_malformed_manifest_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "input_dims": [3, 4, 4],\n  "layers": [\n}')
    (tmp_path / "bad.bin").write_bytes(b"")
    with pytest.raises(ParseError, match=r"bad.json:4"):
        load_model(path)


def test_missing_field_names_layer(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    del manifest["layers"][0]["out_channels"]
    path.write_text(json.dumps(manifest))
    with pytest.raises(ParseError, match=r"conv1.*out_channels"):
        load_model(path)


@pytest.mark.parametrize("key, value", [("stride", "1"), ("pad", 1.5), ("stride", True)])
def test_conv_geometry_fields_must_be_integers(tmp_path, rng, key, value):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    manifest["layers"][0][key] = value
    path.write_text(json.dumps(manifest))
    with pytest.raises(ParseError, match=rf"conv1.*'{key}'"):
        load_model(path)


def test_pool_geometry_fields_must_be_integers(tmp_path, rng):
    layers = [conv("a", 3, 2, 1), LayerSpec("pool", "avgpool", kernel_size=2, stride=2)]
    graph = ModelGraph(layers, {"a": random_weights(layers[0], rng)}, (3, 4, 4)).validate()
    path = save_model(graph, tmp_path / "pooled.json")
    manifest = json.loads(path.read_text())
    manifest["layers"][1]["stride"] = "2"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ParseError, match=r"pool.*'stride'"):
        load_model(path)


def test_omitted_geometry_fields_take_defaults(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    del manifest["layers"][2]["stride"], manifest["layers"][2]["pad"]
    path.write_text(json.dumps(manifest))
    layer = load_model(path).layer("conv2")
    assert (layer.stride, layer.pad) == (1, 0)


def test_channel_mismatch_is_a_validation_error(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    manifest["layers"][2]["in_channels"] = 7
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValidationError, match="conv2"):
        load_model(path)


def test_branching_is_a_validation_error(tmp_path, rng):
    path = save_model(conv_chain(rng), tmp_path / "toy.json")
    manifest = json.loads(path.read_text())
    manifest["layers"][2]["input"] = "conv1"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValidationError, match="branches"):
        load_model(path)


def test_nin_manifest_round_trip(tmp_path):
    graph = build_nin_style(seed=3)
    loaded = load_model(save_model(graph, tmp_path / "nin.json"))
    assert [layer.name for layer in loaded.conv_layers()] == [layer.name for layer in graph.conv_layers()]
    assert loaded.shapes() == graph.shapes()


def test_data_matrix_round_trip_with_sidecar(tmp_path, rng):
    values = rng.standard_normal((2 * 3 * 3, 4)).astype(np.float32)
    dm = DataMatrix(values, "conv1", 2, 3, 3, 4, seed=7)
    path = save_data_matrix(dm, tmp_path / "conv1.sst")
    assert json.loads((tmp_path / "conv1.json").read_text()) == {
        "layer": "conv1", "N": 2, "H": 3, "W": 3, "C": 4, "seed": 7,
    }
    loaded = load_data_matrix(path)
    assert loaded.values.tobytes() == values.tobytes()
    assert (loaded.layer, loaded.n_images, loaded.height, loaded.width, loaded.channels, loaded.seed) == (
        "conv1", 2, 3, 3, 4, 7,
    )


def test_zca_round_trip(tmp_path):
    rng = make_rng(5)
    images = [rng.standard_normal((3, 2, 2)) for _ in range(30)]
    transform = fit_zca(images, epsilon=0.1)
    loaded = load_zca(save_zca(transform, tmp_path / "zca"))
    assert loaded.whitening.tobytes() == transform.whitening.tobytes()
    assert loaded.mean.tobytes() == transform.mean.tobytes()
    assert loaded.shape == (3, 2, 2)
    assert loaded.epsilon == pytest.approx(0.1)


def test_run_manifest_sits_next_to_output(tmp_path):
    out = tmp_path / "matrix.sst"
    write_run_manifest(out, "capture", {"n": 4, "seed": 42, "out": out}, "2024-01-01T00:00:00")
    payload = json.loads(run_manifest_path(out).read_text())
    assert run_manifest_path(out).name == "matrix.sst.run.json"
    assert payload["command"] == "capture"
    assert payload["params"] == {"n": 4, "out": str(out), "seed": 42}
    assert "version" in payload and "finished_at" in payload
