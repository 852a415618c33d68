import numpy as np

from models.design import SensingOperatorPair
from store import DesignStore
from utils.errors import NumericalFailureError, RankError
from utils.hashing import generate_cache_key, operator_id
from utils.serialize import serialize_for_json


def test_operator_id_tracks_content():
    phi = np.eye(4)
    assert operator_id(phi, phi, 2) == operator_id(phi.copy(), phi.copy(), 2)
    assert operator_id(phi, phi, 2) != operator_id(phi, 2.0 * phi, 2)
    assert SensingOperatorPair.identity(2).operator_id == operator_id(phi, phi, 2)


def test_cache_key():
    assert generate_cache_key("design.bin", 20) == generate_cache_key("design.bin", 20)
    assert generate_cache_key("design.bin", 20) != generate_cache_key("design.bin", 40)


def test_serialize_for_json():
    payload = serialize_for_json({
        "rsnr": float("-inf"),
        "rank": np.int64(3),
        "small": np.array([1.0, np.nan]),
        "large": np.zeros(200),
        "nested": {"k3": np.float64(12.5)},
    })
    assert payload["rsnr"] is None
    assert payload["rank"] == 3
    assert payload["small"] == [1.0, None]
    assert payload["large"].startswith("<array")
    assert payload["nested"] == {"k3": 12.5}


def test_error_messages():
    assert "iteration 12" in str(NumericalFailureError("SVD failed", 12))
    error = RankError(50, 31)
    assert error.available == 31 and "31" in str(error)


def test_store_caches_operators(design4, tmp_path):
    store = DesignStore(str(tmp_path / "unused.bin"))
    assert not store.is_available()
    store.set_design(design4["design"])
    assert store.is_available()
    assert store.operator(1) is store.operator(1)
    assert store.operator(1).rank == 1
