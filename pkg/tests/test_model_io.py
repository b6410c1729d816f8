import struct

import numpy as np
import pytest

from iris_aqa import model_io as M
from iris_aqa.errors import ModelFormatError
from iris_aqa.pipeline import ModelParams, ModelVariant


def _params(rng, variant=ModelVariant.DeltaSubscoresWithSegments):
    nets = {
        "seg": {"s0.in.w": rng.standard_normal((1, 3, 4)), "s0.in.b": rng.standard_normal(4)},
        "pcs": {"norm.mean": np.array([5.0, 6.0]), "scalar": np.array(2.5)},
    }
    return ModelParams(variant, nets, {"dim": 3, "train_ids": ["b", "a"]})


def test_round_trip_is_exact(rng, tmp_path):
    p = _params(rng)
    path = tmp_path / "m.iris"
    M.save_model(path, p)
    q = M.load_model(path)
    assert q.variant is p.variant and q.meta == p.meta
    assert q.flat().keys() == p.flat().keys()
    for k, v in p.flat().items():
        assert q.flat()[k].shape == v.shape
        np.testing.assert_array_equal(q.flat()[k], v)
    assert M.dumps(q) == path.read_bytes()


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_variant_tag_round_trip(rng, variant):
    assert M.loads(M.dumps(_params(rng, variant))).variant is variant


def test_serialisation_is_deterministic(rng):
    p = _params(rng)
    reordered = ModelParams(p.variant, dict(reversed(list(p.nets.items()))), dict(reversed(list(p.meta.items()))))
    assert M.dumps(p) == M.dumps(reordered)
    assert M.dumps(p).startswith(b"IRIS" + struct.pack("<I", 1))


def test_corruption_is_detected(rng):
    data = M.dumps(_params(rng))
    with pytest.raises(ModelFormatError, match="magic"):
        M.loads(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError, match="version"):
        M.loads(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(ModelFormatError, match="variant"):
        M.loads(data[:8] + struct.pack("<I", 77) + data[12:])
    with pytest.raises(ModelFormatError, match="truncated"):
        M.loads(data[:-3])
    with pytest.raises(ModelFormatError, match="trailing"):
        M.loads(data + b"\0")
    with pytest.raises(ModelFormatError):
        M.loads(b"")


def test_meta_must_name_the_dimension(rng):
    p = _params(rng)
    p.meta.pop("dim")
    with pytest.raises(ModelFormatError, match="dimension"):
        M.loads(M.dumps(p))


def test_format_error_is_a_value_error():
    assert issubclass(ModelFormatError, ValueError)
