"""Federated-averaging server and client round logic.

Protocol per round: the server broadcasts the current global state, every
client trains locally and returns a (possibly privacy-filtered or encrypted)
delta, the server waits for all of them (hard barrier), aggregates, and
applies the mean delta.  After the last round a final broadcast triggers
per-site validation of the finished global model.

Three privacy modes share the loop:

- plain: deltas travel as float64 vectors.
- dp: deltas pass through the SVT filter client-side before transmission.
- he: deltas are packed, encrypted, and summed under CKKS; the server holds
  only ciphertexts after round 0 and broadcasts the encrypted aggregate,
  which every client decrypts and applies to its own copy of the global
  model.  The server never sees plaintext parameters after initialization.
"""

from __future__ import annotations

import hmac
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import transport as tr
from .config import ExperimentConfig
from .data import CohortDataset
from .dp import SvtConfig, svt_filter
from .errors import AuthError, DecodeError, LayoutError, ProtocolError, RoundTimeoutError, StateError
from .he import (
    Ciphertext,
    CkksParams,
    KeyPair,
    add as he_add,
    decode as he_decode,
    decrypt as he_decrypt,
    deserialize_ct,
    encode as he_encode,
    encrypt as he_encrypt,
    keygen,
    mul_scalar_rescale,
    pack_update,
    serialize_ct,
    unpack_update,
)
from .learners import ModelKind, TrainConfig, init_params, predict_batch, train_local
from .metrics import MetricSet, evaluate_scores
from .params import LayoutManifest, ParamSet, apply_update, check_finite, compute_delta, flatten, unflatten
from .report import (
    ClientRoundRecord,
    CrossSiteTable,
    RoundRecord,
    RunReport,
    SiteValidation,
)
from .seeds import derive_seed, derived_rng


@dataclass
class ClientRecord:
    """Server-side view of one registered client."""

    client_id: str
    weight: float
    n_train: int
    n_valid: int
    channel: object


@dataclass
class RoundState:
    """Barrier bookkeeping for one aggregation round."""

    round_index: int
    pending: set[str]
    received: dict[str, tuple[tr.UpdateBody, float]] = field(default_factory=dict)

    def register(self, update: tr.UpdateBody, arrival: float):
        if update.client_id not in self.pending:
            raise ProtocolError(f"unexpected update from {update.client_id!r}")
        self.pending.discard(update.client_id)
        self.received[update.client_id] = (update, arrival)

    @property
    def complete(self) -> bool:
        return not self.pending


# -- aggregation -------------------------------------------------------------


def aggregate_plain(updates, weights) -> np.ndarray:
    """(sum of pre-scaled updates) / (sum of weights), elementwise."""
    updates = [np.asarray(u, dtype=np.float64) for u in updates]
    if not updates:
        raise LayoutError("no updates to aggregate")
    length = updates[0].size
    if any(u.size != length for u in updates):
        raise LayoutError("update lengths differ")
    if len(weights) != len(updates):
        raise LayoutError("weights and updates differ in count")
    total_weight = float(sum(weights))
    if total_weight <= 0:
        raise LayoutError("weights must sum to a positive value")
    return check_finite(np.sum(updates, axis=0) / total_weight, "aggregated update")


def aggregate_encrypted(per_client_chunks: list[list[Ciphertext]], weights) -> list[Ciphertext]:
    """Fold ciphertext chunks with add(), then one x(1/sum w) rescale per chunk.

    Delayed normalization: the division never touches ciphertext-ciphertext
    arithmetic, only a single plaintext reciprocal multiplication per chunk.
    """
    if not per_client_chunks:
        raise LayoutError("no encrypted updates to aggregate")
    n_chunks = len(per_client_chunks[0])
    if any(len(chunks) != n_chunks for chunks in per_client_chunks):
        raise LayoutError("clients disagree on chunk count")
    if len(weights) != len(per_client_chunks):
        raise LayoutError("weights and updates differ in count")
    reciprocal = 1.0 / float(sum(weights))
    out = []
    for idx in range(n_chunks):
        total = per_client_chunks[0][idx]
        for chunks in per_client_chunks[1:]:
            total = he_add(total, chunks[idx])
        out.append(mul_scalar_rescale(total, reciprocal))
    return out


# -- privacy pipelines -------------------------------------------------------


class PlainPipeline:
    mode = "plain"

    def client_encode(self, delta: np.ndarray, steps: int, rng) -> tuple[int, object, float]:
        return tr.PAYLOAD_PLAIN, delta, 0.0


class DpPipeline:
    mode = "dp"

    def __init__(self, cfg: SvtConfig):
        self.cfg = cfg

    def client_encode(self, delta: np.ndarray, steps: int, rng) -> tuple[int, object, float]:
        t0 = time.monotonic()
        filtered = svt_filter(delta, steps, self.cfg, rng)
        return tr.PAYLOAD_PLAIN, filtered, time.monotonic() - t0


class HePipeline:
    """Client-side encrypt/decrypt and server-side ciphertext handling.

    The server constructs this without key material; only clients hold the
    shared secret (derived from the shared run seed, mirroring a pre-agreed
    cohort key).
    """

    mode = "he"

    def __init__(self, params: CkksParams, keys: KeyPair | None):
        self.params = params
        self.keys = keys

    @classmethod
    def for_client(cls, params: CkksParams, master_seed: int) -> "HePipeline":
        return cls(params, keygen(params, derived_rng(master_seed, "hekey")))

    def client_encode(self, delta: np.ndarray, steps: int, rng) -> tuple[int, object, float]:
        if self.keys is None:
            raise StateError("pipeline has no key material")
        t0 = time.monotonic()
        blobs = []
        for chunk in pack_update(delta, self.params):
            ct = he_encrypt(he_encode(chunk, self.params), self.keys, rng)
            blobs.append(serialize_ct(ct))
        return tr.PAYLOAD_CHUNKS, blobs, time.monotonic() - t0

    def client_decode(self, blobs: list[bytes], length: int) -> tuple[np.ndarray, float]:
        if self.keys is None:
            raise StateError("pipeline has no key material")
        t0 = time.monotonic()
        chunks = []
        for blob in blobs:
            ct = deserialize_ct(blob, self.params)
            chunks.append(he_decode(he_decrypt(ct, self.keys))[: ct.slot_fill])
        flat = check_finite(unpack_update(chunks, length), "decrypted aggregate")
        return flat, time.monotonic() - t0

    def server_aggregate(self, payloads: list[list[bytes]], weights) -> list[bytes]:
        per_client = [
            [deserialize_ct(blob, self.params) for blob in blobs] for blobs in payloads
        ]
        return [serialize_ct(ct) for ct in aggregate_encrypted(per_client, weights)]


def build_pipeline(cfg: ExperimentConfig, with_keys: bool):
    if cfg.privacy_mode == "plain":
        return PlainPipeline()
    if cfg.privacy_mode == "dp":
        return DpPipeline(cfg.dp)
    if with_keys:
        return HePipeline.for_client(cfg.he, cfg.seed)
    return HePipeline(cfg.he, None)


# -- server ------------------------------------------------------------------


class FederationServer:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.kind = ModelKind(cfg.model)
        self.pipeline = build_pipeline(cfg, with_keys=False)
        self.clients: dict[str, ClientRecord] = {}
        self._inbox: queue.Queue = queue.Queue()
        self._readers: list[threading.Thread] = []
        self.event_log: list[list] = []
        self._t0 = time.monotonic()

    def _log(self, kind: str, who: str = ""):
        self.event_log.append([time.monotonic() - self._t0, kind, who])

    # -- registration --------------------------------------------------------

    def accept_clients(self, channels: list, timeout: float | None = None) -> None:
        """Authenticate JOIN on each channel until all expected sites joined."""
        expected = set(self.cfg.site_names())
        for channel in channels:
            frame = channel.recv(timeout=timeout)
            if frame.msg_type != tr.MSG_JOIN:
                channel.send(tr.Frame(tr.MSG_ERROR, 0, tr.encode_error("expected JOIN")))
                channel.close()
                raise ProtocolError("client spoke before joining")
            join = tr.decode_join(frame.body)
            if not hmac.compare_digest(join.token, self.cfg.token):
                channel.send(tr.Frame(tr.MSG_ERROR, 0, tr.encode_error("bad token")))
                channel.close()
                raise AuthError(f"client {join.client_id!r} presented a bad token")
            if join.client_id not in expected or join.client_id in self.clients:
                channel.send(tr.Frame(tr.MSG_ERROR, 0, tr.encode_error("unknown or duplicate site")))
                channel.close()
                raise ProtocolError(f"unexpected site {join.client_id!r}")
            weight = float(join.n_train) if self.cfg.weighting == "examples" else 1.0
            self.clients[join.client_id] = ClientRecord(
                join.client_id, weight, join.n_train, join.n_valid, channel
            )
            channel.send(tr.Frame(tr.MSG_JOIN_ACK, 0))
            self._log("join", join.client_id)
        missing = expected - set(self.clients)
        if missing:
            raise ProtocolError(f"sites never joined: {sorted(missing)}")
        for record in self.clients.values():
            thread = threading.Thread(
                target=self._reader, args=(record,), daemon=True
            )
            thread.start()
            self._readers.append(thread)

    def _reader(self, record: ClientRecord):
        while True:
            try:
                frame = record.channel.recv()
            except Exception as err:
                self._inbox.put((record.client_id, err))
                return
            self._inbox.put((record.client_id, frame))
            if frame.msg_type == tr.MSG_SHUTDOWN:
                return

    # -- round loop ------------------------------------------------------------

    def _ordered_ids(self) -> list[str]:
        return [s for s in self.cfg.site_names()]

    def _broadcast(self, round_index: int, body: tr.BroadcastBody):
        frame = tr.Frame(tr.MSG_BROADCAST, round_index, tr.encode_broadcast(body))
        for client_id in self._ordered_ids():
            self.clients[client_id].channel.send(frame)
        self._log("broadcast", str(round_index))

    def _collect(self, round_index: int, msg_type: int) -> dict[str, tuple[object, float]]:
        state_pending = set(self.clients)
        received: dict[str, tuple[object, float]] = {}
        deadline = time.monotonic() + self.cfg.timeout_seconds
        while state_pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RoundTimeoutError(
                    f"round {round_index}: no update from {sorted(state_pending)}"
                )
            try:
                client_id, item = self._inbox.get(timeout=remaining)
            except queue.Empty:
                raise RoundTimeoutError(
                    f"round {round_index}: no update from {sorted(state_pending)}"
                ) from None
            if isinstance(item, Exception):
                raise ProtocolError(f"client {client_id!r} failed: {item}")
            if item.msg_type != msg_type or item.round != round_index:
                raise ProtocolError(
                    f"client {client_id!r} sent type {item.msg_type} for round {item.round}, "
                    f"expected type {msg_type} round {round_index}"
                )
            arrival = time.monotonic() - self._t0
            received[client_id] = (item, arrival)
            state_pending.discard(client_id)
            self._log("update_received", client_id)
        return received

    def run(self) -> RunReport:
        cfg = self.cfg
        report = RunReport(
            kind="federated", method=cfg.method, learner=cfg.model, config=cfg.to_dict()
        )
        wall_start = time.monotonic()
        global_params = init_params(self.kind, derive_seed(cfg.seed, "init"))
        manifest = LayoutManifest.of(global_params)
        he_state: list[bytes] | None = None  # serialized aggregate ciphertexts

        try:
            for round_index in range(cfg.rounds):
                broadcast_at = time.monotonic() - self._t0
                self._broadcast(round_index, self._broadcast_body(global_params, he_state, False))
                state = RoundState(round_index, set(self.clients))
                for client_id, (frame, arrival) in self._collect(
                    round_index, tr.MSG_UPDATE
                ).items():
                    update = tr.decode_update(frame.body)
                    if update.client_id != client_id:
                        raise ProtocolError("update body does not match its channel")
                    state.register(update, arrival)
                self._log("aggregate_start", str(round_index))
                agg_t0 = time.monotonic()
                ordered = [state.received[cid][0] for cid in self._ordered_ids()]
                weights = [self.clients[cid].weight for cid in self._ordered_ids()]
                if isinstance(self.pipeline, HePipeline):
                    he_state = self.pipeline.server_aggregate(
                        [u.payload for u in ordered], weights
                    )
                else:
                    mean_delta = aggregate_plain([u.payload for u in ordered], weights)
                    global_params = apply_update(global_params, mean_delta, manifest)
                agg_seconds = time.monotonic() - agg_t0
                report.rounds.append(
                    self._round_record(round_index, state, broadcast_at, agg_seconds)
                )

            # final broadcast: clients evaluate the finished global model
            self._broadcast(cfg.rounds, self._broadcast_body(global_params, he_state, True))
            rows = []
            finals: dict[str, np.ndarray] = {}
            for client_id, (frame, _) in self._collect(cfg.rounds, tr.MSG_ROUND_DONE).items():
                done = tr.decode_round_done(frame.body)
                rows.append((client_id, done.metrics))
                if done.final_params is not None:
                    finals[client_id] = done.final_params
            ordered_rows = [
                SiteValidation(cid, dict(rows)[cid]) for cid in self._ordered_ids()
            ]
            report.cross_site = CrossSiteTable.from_rows(ordered_rows)
            if isinstance(self.pipeline, HePipeline):
                first = self._ordered_ids()[0]
                report.final_params = [float(v) for v in finals[first]]
            else:
                report.final_params = [float(v) for v in flatten(global_params)[0]]
        except (RoundTimeoutError, ProtocolError, AuthError, LayoutError, StateError, DecodeError) as err:
            report.aborted = True
            report.abort_reason = f"{type(err).__name__}: {err}"
        finally:
            self._shutdown()
        report.total_wall_seconds = time.monotonic() - wall_start
        report.event_log = self.event_log
        return report

    def _broadcast_body(self, global_params: ParamSet, he_state, final: bool) -> tr.BroadcastBody:
        if isinstance(self.pipeline, HePipeline) and he_state is not None:
            return tr.BroadcastBody(final, tr.PAYLOAD_CHUNKS, he_state)
        return tr.BroadcastBody(final, tr.PAYLOAD_PLAIN, flatten(global_params)[0])

    def _round_record(self, round_index, state: RoundState, broadcast_at, agg_seconds):
        clients = []
        for client_id in self._ordered_ids():
            update, arrival = state.received[client_id]
            payload_bytes = (
                update.payload.size * 8
                if update.payload_kind == tr.PAYLOAD_PLAIN
                else sum(len(b) for b in update.payload)
            )
            clients.append(
                ClientRoundRecord(
                    client_id=client_id,
                    steps=update.steps,
                    weight=update.weight,
                    pre_metrics=update.pre_metrics,
                    post_metrics=update.post_metrics,
                    train_seconds=update.train_seconds,
                    privacy_seconds=update.privacy_seconds,
                    payload_bytes=payload_bytes,
                    arrival_offset_seconds=arrival - broadcast_at,
                )
            )
        return RoundRecord(round_index, clients, agg_seconds)

    def _shutdown(self):
        for record in self.clients.values():
            try:
                record.channel.send(tr.Frame(tr.MSG_SHUTDOWN, 0))
            except Exception:
                pass


# -- client ------------------------------------------------------------------


class FederationClient:
    def __init__(self, cfg: ExperimentConfig, client_id: str, train: CohortDataset, valid: CohortDataset):
        self.cfg = cfg
        self.client_id = client_id
        self.kind = ModelKind(cfg.model)
        self.train = train
        self.valid = valid
        self.pipeline = build_pipeline(cfg, with_keys=True)
        self.weight = float(len(train)) if cfg.weighting == "examples" else 1.0
        self.global_params: ParamSet | None = None
        self.manifest: LayoutManifest | None = None
        self.next_round = 0

    def _evaluate(self, params: ParamSet) -> MetricSet:
        scores = predict_batch(self.kind, params, self.valid.features)
        return evaluate_scores(scores, self.valid.labels, self.cfg.threshold)

    def _install_broadcast(self, body: tr.BroadcastBody) -> float:
        if body.payload_kind == tr.PAYLOAD_PLAIN:
            params = unflatten(np.asarray(body.payload), self._manifest(np.asarray(body.payload).size))
            self.global_params = params
            return 0.0
        if self.global_params is None:
            raise ProtocolError("encrypted aggregate arrived before the initial model")
        delta, seconds = self.pipeline.client_decode(
            body.payload, self.manifest.total_length
        )
        self.global_params = apply_update(self.global_params, delta, self.manifest)
        return seconds

    def _manifest(self, length: int) -> LayoutManifest:
        if self.manifest is None:
            template = init_params(self.kind, 0)
            self.manifest = LayoutManifest.of(template)
        if self.manifest.total_length != length:
            raise LayoutError(
                f"broadcast carries {length} values, {self.kind.value} expects "
                f"{self.manifest.total_length}"
            )
        return self.manifest

    def run(self, channel) -> None:
        cfg = self.cfg
        channel.send(
            tr.Frame(
                tr.MSG_JOIN,
                0,
                tr.encode_join(
                    tr.JoinBody(self.client_id, cfg.token, len(self.train), len(self.valid))
                ),
            )
        )
        ack = channel.recv(timeout=cfg.timeout_seconds)
        if ack.msg_type == tr.MSG_ERROR:
            raise AuthError(tr.decode_error(ack.body))
        if ack.msg_type != tr.MSG_JOIN_ACK:
            raise ProtocolError(f"expected JOIN_ACK, got type {ack.msg_type}")

        while True:
            frame = channel.recv(timeout=cfg.timeout_seconds)
            if frame.msg_type == tr.MSG_SHUTDOWN:
                return
            if frame.msg_type == tr.MSG_ERROR:
                raise ProtocolError(tr.decode_error(frame.body))
            if frame.msg_type != tr.MSG_BROADCAST:
                raise ProtocolError(f"unexpected message type {frame.msg_type}")
            if frame.round != self.next_round:
                raise ProtocolError(
                    f"broadcast for round {frame.round}, expected {self.next_round}"
                )
            body = tr.decode_broadcast(frame.body)
            privacy_seconds = self._install_broadcast(body)
            pre_metrics = self._evaluate(self.global_params)

            if body.final:
                final_params = None
                if self.pipeline.mode == "he":
                    final_params = flatten(self.global_params)[0]
                channel.send(
                    tr.Frame(
                        tr.MSG_ROUND_DONE,
                        frame.round,
                        tr.encode_round_done(
                            tr.RoundDoneBody(self.client_id, pre_metrics, final_params)
                        ),
                    )
                )
                continue

            train_cfg = TrainConfig(
                learning_rate=cfg.learning_rate,
                batch_size=cfg.batch_for(self.client_id),
                local_epochs=cfg.local_epochs,
                l2_penalty=cfg.l2_penalty,
                seed=derive_seed(cfg.seed, "train", self.client_id, frame.round),
            )
            self.next_round += 1
            trained, stats = train_local(self.kind, self.global_params, self.train, train_cfg)
            post_metrics = self._evaluate(trained)
            delta, _ = flatten(compute_delta(trained, self.global_params))
            if cfg.weighting == "examples":
                delta = delta * self.weight
            kind, payload, encode_seconds = self.pipeline.client_encode(
                delta,
                max(stats.steps, 1),
                derived_rng(cfg.seed, "privacy", self.client_id, frame.round),
            )
            channel.send(
                tr.Frame(
                    tr.MSG_UPDATE,
                    frame.round,
                    tr.encode_update(
                        tr.UpdateBody(
                            client_id=self.client_id,
                            steps=stats.steps,
                            mode=self.pipeline.mode,
                            payload_kind=kind,
                            payload=payload,
                            weight=self.weight,
                            train_seconds=stats.wall_time,
                            privacy_seconds=privacy_seconds + encode_seconds,
                            pre_metrics=pre_metrics,
                            post_metrics=post_metrics,
                        )
                    ),
                )
            )


# -- orchestration -----------------------------------------------------------


def build_site_datasets(cfg: ExperimentConfig, only_site: str | None = None):
    """Per-site (train, valid) splits from the generator or CSV files."""
    from .data import generate_site, read_csv, split_train_valid

    spec = cfg.data.generator_spec(derive_seed(cfg.seed, "data"))
    out = {}
    for site in cfg.data.sites:
        if only_site is not None and site.name != only_site:
            continue
        if cfg.data.source == "csv":
            import os

            from .errors import ConfigError

            path = os.path.join(cfg.data.csv_dir or ".", f"{site.name}.csv")
            if not os.path.exists(path):
                raise ConfigError(f"site file does not exist: {path}")
            ds = read_csv(path)
        else:
            ds = generate_site(spec, site, derived_rng(spec.seed, "site", site.name))
        out[site.name] = split_train_valid(
            ds, cfg.train_frac, derive_seed(cfg.seed, "split", site.name)
        )
    if only_site is not None and only_site not in out:
        raise ProtocolError(f"unknown site {only_site!r}")
    return out


def run_simulation(cfg: ExperimentConfig) -> RunReport:
    """All clients in-process: one thread per client plus the coordinator."""
    datasets = build_site_datasets(cfg)
    server = FederationServer(cfg)
    server_channels = []
    client_threads = []
    client_errors: queue.Queue = queue.Queue()
    for name in cfg.site_names():
        server_end, client_end = tr.SimChannel.pair()
        server_channels.append(server_end)
        train, valid = datasets[name]
        client = FederationClient(cfg, name, train, valid)

        def drive(client=client, channel=client_end):
            try:
                client.run(channel)
            except Exception as err:  # surfaces after the run
                client_errors.put((client.client_id, err))

        thread = threading.Thread(target=drive, daemon=True)
        thread.start()
        client_threads.append(thread)
    server.accept_clients(server_channels, timeout=cfg.timeout_seconds)
    report = server.run()
    for thread in client_threads:
        thread.join(timeout=cfg.timeout_seconds)
    if not client_errors.empty() and not report.aborted:
        client_id, err = client_errors.get()
        report.aborted = True
        report.abort_reason = f"client {client_id!r}: {type(err).__name__}: {err}"
    return report


def run_tcp_server(cfg: ExperimentConfig, host: str, port: int) -> RunReport:
    listener = tr.TcpListener(host, port)
    try:
        channels = []
        for _ in cfg.site_names():
            channels.append(listener.accept(timeout=cfg.timeout_seconds))
        server = FederationServer(cfg)
        server.accept_clients(channels, timeout=cfg.timeout_seconds)
        return server.run()
    finally:
        listener.close()


def run_tcp_client(cfg: ExperimentConfig, site: str, host: str, port: int) -> None:
    datasets = build_site_datasets(cfg, only_site=site)
    train, valid = datasets[site]
    channel = tr.open_tcp_channel(host, port, timeout=cfg.timeout_seconds)
    try:
        FederationClient(cfg, site, train, valid).run(channel)
    finally:
        channel.close()


def run_central(cfg: ExperimentConfig) -> RunReport:
    """Pooled-data baseline: k-fold cross-validation with the same learner."""
    from .data import concat_datasets, kfold_split

    datasets = build_site_datasets(cfg)
    full = concat_datasets(
        [concat_datasets([train, valid]) for train, valid in datasets.values()]
    )
    kind = ModelKind(cfg.model)
    report = RunReport(kind="central", method="cml", learner=cfg.model, config=cfg.to_dict())
    t0 = time.monotonic()
    folds = kfold_split(full, cfg.central_folds, derive_seed(cfg.seed, "cv"))
    for fold_index, (train, test) in enumerate(folds):
        train_cfg = TrainConfig(
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            local_epochs=cfg.central_epochs,
            l2_penalty=cfg.l2_penalty,
            seed=derive_seed(cfg.seed, "central", fold_index),
        )
        params, _ = train_local(kind, init_params(kind, derive_seed(cfg.seed, "init")), train, train_cfg)
        scores = predict_batch(kind, params, test.features)
        report.fold_metrics.append(evaluate_scores(scores, test.labels, cfg.threshold))
    report.total_wall_seconds = time.monotonic() - t0
    return report
