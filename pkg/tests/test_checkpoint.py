import pytest
import numpy as np

from app.core.errors import ConfigError
from app.services.checkpoint import MAGIC, load_params, read_tensors, save_params
from app.services.connectors import init_params

from .conftest import make_spec


@pytest.mark.parametrize("kind", ["linear", "mlp", "avgpool", "attnpool", "convmap"])
def test_save_then_load_restores_every_tensor(kind, tmp_path):
    spec = make_spec(kind, seed=4)
    params = init_params(spec)
    path = save_params(params, tmp_path / "params.bin")
    loaded = load_params(spec, path)
    assert list(loaded.tensors) == list(params.tensors)
    for name in params.tensors:
        assert np.array_equal(loaded[name].data, params[name].data)
        assert loaded[name].requires_grad


def test_header_lists_names_and_shapes(tmp_path):
    path = save_params(init_params(make_spec("mlp", d_v=3, d_llm=5)), tmp_path / "p.bin")
    header = path.read_bytes().split(b"\n\n", 1)[0].decode("utf-8").split("\n")
    assert header == [MAGIC, "mlp1_w 3,5", "mlp1_b 5", "mlp2_w 5,5", "mlp2_b 5"]


def test_wrong_magic_is_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"something else\nx 1\n\n" + np.zeros(1).tobytes())
    with pytest.raises(ConfigError):
        read_tensors(path)


def test_truncated_payload_is_rejected(tmp_path):
    path = save_params(init_params(make_spec("linear")), tmp_path / "p.bin")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ConfigError):
        read_tensors(path)


def test_loading_into_a_different_spec_fails(tmp_path):
    path = save_params(init_params(make_spec("mlp", d_v=4)), tmp_path / "p.bin")
    with pytest.raises(ConfigError):
        load_params(make_spec("mlp", d_v=5), path)
