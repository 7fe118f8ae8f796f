"""Batched policy inference for actors running in remote-inference mode.

Requests queue up until ``max_batch`` are waiting or ``flush_timeout`` has passed
since the first one, then the whole batch is evaluated against one parameter
snapshot.  A refresh thread swaps in newer blobs from the model pool; the swap
is a single reference assignment so a batch never mixes two blobs.
"""
from __future__ import annotations

import logging
import queue
import threading
import time
from concurrent.futures import Future
from typing import Optional, Sequence

import numpy as np

from .policy import ParamBlob, evaluate
from .pool import PoolClient
from .proto import ErrorCode, Kind
from .proto.messages import InferenceReply, InferenceRequest
from .records import ModelRecord, parse_key
from .rpc import RpcError, RpcServer

log = logging.getLogger(__name__)


def resolve_model_key(spec: str, keys: Sequence[str]) -> Optional[str]:
    """``latest:<lineage>`` picks the highest generation of that lineage."""
    if not spec.startswith("latest:"):
        return spec
    lineage = spec[len("latest:"):]
    best = None
    for key in keys:
        try:
            lin, gen = parse_key(key)
        except ValueError:
            continue
        if lin == lineage and (best is None or gen > best[0]):
            best = (gen, key)
    return None if best is None else best[1]


class _Snapshot:
    __slots__ = ("key", "pool_version", "params", "version")

    def __init__(self, key: str, pool_version: int, params: ParamBlob, version: int):
        self.key = key
        self.pool_version = pool_version
        self.params = params
        self.version = version


class InferenceServer:
    def __init__(self, listen: str, pool=None, model_key: str = "latest:main",
                 max_batch: int = 32, flush_timeout: float = 0.002,
                 refresh_interval: float = 0.5):
        if max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if flush_timeout <= 0:
            raise ValueError("flush_timeout must be > 0")
        self.pool = pool
        self.model_key = model_key
        self.max_batch = max_batch
        self.flush_timeout = flush_timeout
        self.refresh_interval = refresh_interval
        self._snapshot: Optional[_Snapshot] = None
        self._swap_lock = threading.Lock()
        self._queue: "queue.Queue[tuple[np.ndarray, Future]]" = queue.Queue()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.batches = 0
        self.batch_sizes: list[int] = []
        self.server = RpcServer(listen, {Kind.INFERENCE_REQUEST: self._on_request})

    @property
    def endpoint(self) -> str:
        return self.server.endpoint

    @property
    def model_version(self) -> int:
        snap = self._snapshot
        return -1 if snap is None else snap.version

    def load(self, record: ModelRecord) -> bool:
        """Serve ``record`` from the next batch on; no-op if already current."""
        with self._swap_lock:
            old = self._snapshot
            if old is not None and old.key == record.model_key and old.pool_version == record.version:
                return False
            version = 0 if old is None else old.version + 1
            self._snapshot = _Snapshot(record.model_key, record.version, record.params, version)
            return True

    def refresh(self) -> bool:
        """Pull the newest blob for the configured key; keeps the old one on failure."""
        try:
            key = resolve_model_key(self.model_key, [e.model_key for e in self.pool.list()])
            if key is None:
                return False
            return self.load(self.pool.get(key))
        except (OSError, RpcError) as exc:
            log.warning("inference refresh failed, serving stale blob: %s", exc)
            return False

    def infer(self, obs) -> InferenceReply:
        """Queue one observation and wait for its batched result."""
        fut: Future = Future()
        self._queue.put((np.asarray(obs, dtype=np.float64), fut))
        return fut.result()

    def _on_request(self, req: InferenceRequest) -> InferenceReply:
        return self.infer(req.obs)

    def _batch_loop(self) -> None:
        while not self._stop.is_set():
            try:
                first = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            batch = [first]
            deadline = time.monotonic() + self.flush_timeout
            while len(batch) < self.max_batch:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    batch.append(self._queue.get(timeout=remaining))
                except queue.Empty:
                    break
            self._evaluate(batch)

    def _evaluate(self, batch) -> None:
        snap = self._snapshot
        self.batches += 1
        self.batch_sizes.append(len(batch))
        if snap is None:
            for _, fut in batch:
                fut.set_exception(RpcError(ErrorCode.NO_MODEL, "no model loaded yet"))
            return
        n_in = snap.params.n_inputs
        good = [(o, f) for o, f in batch if o.shape == (n_in,)]
        for o, f in batch:
            if o.shape != (n_in,):
                f.set_exception(RpcError(ErrorCode.BAD_REQUEST,
                                         f"observation shape {o.shape}, model expects ({n_in},)"))
        if not good:
            return
        try:
            logits, probs, logp, values = evaluate(snap.params, np.stack([o for o, _ in good]))
        except Exception as exc:
            for _, f in good:
                f.set_exception(RpcError(ErrorCode.BAD_REQUEST, str(exc)))
            return
        for i, (_, fut) in enumerate(good):
            fut.set_result(InferenceReply(snap.key, snap.version, logits[i].copy(),
                                          probs[i].copy(), logp[i].copy(), float(values[i])))

    def _refresh_loop(self) -> None:
        while not self._stop.wait(self.refresh_interval):
            self.refresh()

    def start(self) -> "InferenceServer":
        if self.pool is not None:
            self.refresh()
        self._threads = [threading.Thread(target=self._batch_loop, daemon=True, name="batcher")]
        if self.pool is not None and self.refresh_interval > 0:
            self._threads.append(threading.Thread(target=self._refresh_loop, daemon=True,
                                                  name="refresher"))
        for t in self._threads:
            t.start()
        self.server.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self.server.stop()
        for t in self._threads:
            t.join(timeout=2)


def connect_pool(endpoints: Sequence[str]) -> PoolClient:
    return PoolClient(endpoints, retry_for=2.0)
