"""In-memory model store, its RPC service, and a replica-aware client.

Records are immutable values and the store swaps whole records under a lock,
so a reader always gets a record some completed put produced.  With several
replicas, replica 0 is the primary: it applies each write and forwards it to
the others before acknowledging, so any replica can serve reads.
"""
from __future__ import annotations

import logging
import random
import threading
from pathlib import Path
from typing import Optional, Sequence

from .proto import ErrorCode, Kind, Message, decode, encode
from .proto.messages import (Empty, FreezeModel, ListModels, ModelEntry, ParamGet, ParamPut,
                             ParamReply)
from .records import ModelRecord
from .rpc import RpcClient, RpcError, RpcServer

log = logging.getLogger(__name__)


class PoolError(RpcError):
    pass


class ModelNotFound(PoolError):
    def __init__(self, key: str):
        super().__init__(ErrorCode.NOT_FOUND, f"no model {key!r}")


class FrozenModel(PoolError):
    def __init__(self, key: str):
        super().__init__(ErrorCode.FROZEN, f"model {key!r} is frozen")


class ModelStore:
    """Thread-safe key -> ModelRecord map kept in creation order.

    ``put`` stamps each accepted record with a per-key version that increases
    by one per write; freezing keeps the version.
    """

    def __init__(self, max_values: Optional[int] = None):
        self._records: dict[str, ModelRecord] = {}
        self._lock = threading.Lock()
        self.max_values = max_values

    def put(self, record: ModelRecord) -> ModelRecord:
        if self.max_values is not None and record.params.values.size > self.max_values:
            raise PoolError(ErrorCode.OVERSIZED,
                            f"blob of {record.params.values.size} values exceeds {self.max_values}")
        with self._lock:
            old = self._records.get(record.model_key)
            if old is not None and old.frozen:
                raise FrozenModel(record.model_key)
            stored = record.replace(version=0 if old is None else old.version + 1)
            self._records[record.model_key] = stored
            return stored

    def get(self, key: str) -> ModelRecord:
        record = self._records.get(key)
        if record is None:
            raise ModelNotFound(key)
        return record

    def freeze(self, key: str) -> ModelRecord:
        with self._lock:
            record = self._records.get(key)
            if record is None:
                raise ModelNotFound(key)
            if not record.frozen:
                record = record.replace(frozen=True)
                self._records[key] = record
            return record

    def list(self) -> list[ModelEntry]:
        with self._lock:
            return [ModelEntry(r.model_key, r.frozen, r.created_at) for r in self._records.values()]

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def apply_replica(self, record: ModelRecord) -> None:
        """Install a record exactly as the primary stored it."""
        with self._lock:
            self._records[record.model_key] = record


def export_model(record: ModelRecord, path) -> None:
    """Write ``record`` as one ParamReply frame; creation time is zeroed so
    identical training runs produce identical files."""
    Path(path).write_bytes(encode(Message.of(ParamReply(record.replace(created_at=0.0)))))


def import_model(path) -> ModelRecord:
    msg = decode(Path(path).read_bytes())
    if msg.kind != Kind.PARAM_REPLY:
        raise ValueError(f"{path} does not hold a model record")
    return msg.payload.record


class ModelPoolService:
    def __init__(self, listen: str, replica_endpoints: Sequence[str] = (), primary: bool = True,
                 store: Optional[ModelStore] = None):
        self.store = store or ModelStore()
        self.primary = primary
        self._peers = [RpcClient(ep, retry_for=10.0) for ep in replica_endpoints]
        self._write_lock = threading.Lock()
        self.server = RpcServer(listen, {
            Kind.PARAM_GET: self._get,
            Kind.PARAM_PUT: self._put,
            Kind.FREEZE_MODEL: self._freeze,
            Kind.LIST_MODELS: self._list,
        })

    @property
    def endpoint(self) -> str:
        return self.server.endpoint

    def _get(self, req: ParamGet) -> ParamReply:
        return ParamReply(self.store.get(req.model_key))

    def _put(self, req: ParamPut) -> Empty:
        if req.replicated:
            self.store.apply_replica(req.record)
            return Empty()
        if not self.primary:
            raise RpcError(ErrorCode.BAD_REQUEST, "writes go to replica 0")
        with self._write_lock:
            stored = self.store.put(req.record)
            for peer in self._peers:
                peer.call(ParamPut(stored, replicated=True))
        return Empty()

    def _freeze(self, req: FreezeModel) -> Empty:
        if req.replicated:
            self.store.apply_replica(self.store.get(req.model_key).replace(frozen=True))
            return Empty()
        if not self.primary:
            raise RpcError(ErrorCode.BAD_REQUEST, "writes go to replica 0")
        with self._write_lock:
            self.store.freeze(req.model_key)
            for peer in self._peers:
                peer.call(FreezeModel(req.model_key, replicated=True))
        return Empty()

    def _list(self, req: ListModels) -> ListModels:
        return ListModels(tuple(self.store.list()))

    def start(self) -> "ModelPoolService":
        self.server.start()
        return self

    def serve_forever(self) -> None:
        self.server.serve_forever()

    def stop(self) -> None:
        self.server.stop()
        for peer in self._peers:
            peer.close()


class PoolClient:
    """Writes go to the first endpoint, reads to a random replica."""

    def __init__(self, endpoints: Sequence[str], seed: Optional[int] = None,
                 retry_for: float = 30.0):
        if not endpoints:
            raise ValueError("at least one model-pool endpoint is required")
        self.clients = [RpcClient(ep, retry_for=retry_for) for ep in endpoints]
        self._rng = random.Random(seed)

    def _reader(self) -> RpcClient:
        return self.clients[0] if len(self.clients) == 1 else self._rng.choice(self.clients)

    def get(self, key: str) -> ModelRecord:
        try:
            return self._reader().call(ParamGet(key)).record
        except RpcError as exc:
            if exc.code == ErrorCode.NOT_FOUND:
                raise ModelNotFound(key) from None
            raise

    def put(self, record: ModelRecord) -> None:
        try:
            self.clients[0].call(ParamPut(record))
        except RpcError as exc:
            if exc.code == ErrorCode.FROZEN:
                raise FrozenModel(record.model_key) from None
            raise

    def freeze(self, key: str) -> None:
        try:
            self.clients[0].call(FreezeModel(key))
        except RpcError as exc:
            if exc.code == ErrorCode.NOT_FOUND:
                raise ModelNotFound(key) from None
            raise

    def list(self) -> list[ModelEntry]:
        return list(self._reader().call(ListModels()).entries)

    def close(self) -> None:
        for c in self.clients:
            c.close()


def start_pool_cluster(n_replicas: int, host: str = "127.0.0.1") -> list[ModelPoolService]:
    """Start ``n_replicas`` in-process pool services on ephemeral ports."""
    replicas = [ModelPoolService(f"{host}:0", primary=False).start() for _ in range(n_replicas - 1)]
    primary = ModelPoolService(f"{host}:0", [r.endpoint for r in replicas]).start()
    return [primary] + replicas
