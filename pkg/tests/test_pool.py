import numpy as np
import pytest

from conftest import make_record, random_blob
from leaguerl.pool import (FrozenModel, ModelNotFound, ModelStore, PoolClient, PoolError,
                           export_model, import_model, start_pool_cluster)
from leaguerl.proto import ErrorCode, Message, encode
from leaguerl.proto.messages import ParamGet
from leaguerl.rpc import RpcError
from stress import pool_stress


def test_put_versions_and_freeze():
    store = ModelStore()
    assert store.put(make_record("a")).version == 0
    assert store.put(make_record("a")).version == 1
    frozen = store.freeze("a")
    assert frozen.frozen and frozen.version == 1
    assert store.freeze("a") is store.get("a")
    with pytest.raises(FrozenModel) as err:
        store.put(make_record("a"))
    assert err.value.code == ErrorCode.FROZEN
    with pytest.raises(ModelNotFound):
        store.get("b")
    with pytest.raises(ModelNotFound):
        store.freeze("b")


def test_list_keeps_creation_order():
    store = ModelStore()
    for k in ("c", "a", "b"):
        store.put(make_record(k))
    store.put(make_record("c"))
    assert [e.model_key for e in store.list()] == ["c", "a", "b"]
    assert "a" in store and len(store) == 3


def test_size_limit(rng):
    store = ModelStore(max_values=8)
    with pytest.raises(PoolError) as err:
        store.put(make_record(params=random_blob(rng, n_in=4, n_act=3)))
    assert err.value.code == ErrorCode.OVERSIZED


def test_export_import_zeroes_creation_time(tmp_path):
    rec = make_record("main:0003").replace(created_at=123.0, frozen=True, version=4,
                                           parent_key="main:0002")
    export_model(rec, tmp_path / "m.bin")
    back = import_model(tmp_path / "m.bin")
    assert back == rec.replace(created_at=0.0)
    export_model(rec.replace(created_at=99.0), tmp_path / "n.bin")
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "n.bin").read_bytes()


def test_import_rejects_other_frames(tmp_path):
    (tmp_path / "x").write_bytes(encode(Message.of(ParamGet("k"))))
    with pytest.raises(ValueError):
        import_model(tmp_path / "x")


@pytest.fixture
def cluster():
    services = start_pool_cluster(3)
    yield services
    for s in services:
        s.stop()


def test_writes_replicate_to_every_replica(cluster):
    client = PoolClient([s.endpoint for s in cluster], seed=0)
    try:
        rec = make_record("main:0000", rng=np.random.default_rng(3))
        client.put(rec)
        client.put(rec)
        client.freeze("main:0000")
        for s in cluster:
            got = s.store.get("main:0000")
            assert got.frozen and got.version == 1 and got.params == rec.params
        # any replica can answer reads
        for c in client.clients:
            assert c.call(ParamGet("main:0000")).record.version == 1
        with pytest.raises(FrozenModel):
            client.put(rec)
        with pytest.raises(ModelNotFound):
            client.get("nope")
        with pytest.raises(ModelNotFound):
            client.freeze("nope")
        assert [e.model_key for e in client.list()] == ["main:0000"]
    finally:
        client.close()


def test_replicas_refuse_direct_writes(cluster):
    replica = PoolClient([cluster[1].endpoint])
    try:
        with pytest.raises(RpcError) as err:
            replica.put(make_record())
        assert err.value.code == ErrorCode.BAD_REQUEST
    finally:
        replica.close()


def test_client_needs_an_endpoint():
    with pytest.raises(ValueError):
        PoolClient([])


def test_stress_small():
    res = pool_stress(n_readers=8, n_swaps=100)
    assert res.errors == [] and res.swaps == 100 and res.reads > 0
    assert (res.torn, res.regressions, res.frozen_violations) == (0, 0, 0)


def test_stress_replicated():
    res = pool_stress(n_readers=6, n_swaps=60, n_replicas=3)
    assert res.errors == [] and res.torn == 0 and res.frozen_violations == 0
