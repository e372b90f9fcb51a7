"""Durable on-disk store: memories, mixed-precision embeddings, entity graph,
trust scores, gist blocks, patterns, and soft prompts in one SQLite file.

Single-writer, multi-reader: writes are serialized through an in-process
lock (cross-process exclusivity is handled by the caller's writer lock),
reads see committed snapshots via WAL. Every mutation is a single
transaction so an interrupted put leaves no partial record.

The canonical export is line-delimited JSON, one object per line, grouped
by kind and sorted by id; two stores with equal content export identical
bytes, which is what the durability checks compare.
"""

from __future__ import annotations

import base64
import json
import math
import sqlite3
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .forgetting import Lifecycle
from .quant import QuantizedVector, packed_length


class StoreError(Exception):
    pass


class UnknownMemoryError(StoreError):
    pass


class DuplicateMemoryError(StoreError):
    pass


class DimensionMismatchError(StoreError):
    pass


class TimeRegressionError(StoreError):
    """Per-memory access times must be monotone; retention math relies on it."""


class StoreNotEmptyError(StoreError):
    pass


class StoreCorruptError(StoreError):
    pass


class InjectedFaultError(StoreError):
    """Raised by the fault-injection hook to simulate a pre-commit crash."""


def normalize_entity(s: str) -> str:
    return s.strip().lower()


def pattern_confidence(evidence: int, rate: float) -> float:
    """Confidence of a behavioral pattern: evidence-capped deviation from
    indifference, min(evidence/10, 1) * |rate - 0.5| * 2, clamped to [0,1]."""
    if evidence < 0:
        raise StoreError("evidence must be non-negative")
    if not 0.0 <= rate <= 1.0:
        raise StoreError("rate must lie in [0,1]")
    value = min(evidence / 10.0, 1.0) * abs(rate - 0.5) * 2.0
    return max(0.0, min(1.0, value))


@dataclass
class MemoryRecord:
    id: str
    text: str
    entities: list[str] = field(default_factory=list)
    importance: float = 0.5
    emotional_salience: float = 0.0
    confirmations: int = 0
    access_count: int = 0
    event_time: float | None = None
    ingest_time: float | None = None
    last_access_time: float | None = None
    source_agent: str = "default"
    lifecycle: Lifecycle = Lifecycle.ACTIVE
    strength: float = 0.1
    retention: float = 1.0
    forgotten_at: float | None = None

    def validate(self) -> None:
        if not self.text:
            raise StoreError("memory text must be non-empty")
        if not 0.0 <= self.importance <= 1.0:
            raise StoreError(f"importance must lie in [0,1], got {self.importance}")
        if not 0.0 <= self.emotional_salience <= 1.0:
            raise StoreError(f"emotional salience must lie in [0,1], got {self.emotional_salience}")
        if self.confirmations < 0 or self.access_count < 0:
            raise StoreError("counts must be non-negative")
        if not 0.0 <= self.retention <= 1.0:
            raise StoreError("retention must lie in [0,1]")


@dataclass
class EmbeddingRecord:
    memory_id: str
    dim: int
    bits: int
    payload: bytes
    base_variance: float
    rotation_seed: int | None = None
    codebook_id: str | None = None

    def validate(self) -> None:
        if self.base_variance <= 0:
            raise StoreError("base variance must be positive")
        expected = 4 * self.dim if self.bits == 32 else packed_length(self.bits, self.dim)
        if len(self.payload) != expected:
            raise StoreError(f"payload is {len(self.payload)} bytes, expected {expected} "
                             f"for bits={self.bits} dim={self.dim}")

    @classmethod
    def from_vector(cls, memory_id: str, vec: np.ndarray, base_variance: float) -> "EmbeddingRecord":
        vec = np.asarray(vec, dtype=np.float32)
        return cls(memory_id=memory_id, dim=vec.size, bits=32,
                   payload=vec.tobytes(), base_variance=base_variance)

    @classmethod
    def from_quantized(cls, memory_id: str, q: QuantizedVector,
                       base_variance: float) -> "EmbeddingRecord":
        return cls(memory_id=memory_id, dim=q.dim, bits=q.bits, payload=q.packed,
                   base_variance=base_variance, rotation_seed=q.rotation_seed,
                   codebook_id=q.codebook_id)

    def to_quantized(self) -> QuantizedVector:
        if self.bits == 32:
            raise StoreError("full-precision embedding is not a quantized payload")
        return QuantizedVector(bits=self.bits, dim=self.dim, packed=self.payload,
                               rotation_seed=self.rotation_seed, codebook_id=self.codebook_id)

    def decode_f32(self) -> np.ndarray:
        if self.bits != 32:
            raise StoreError("not a full-precision payload")
        return np.frombuffer(self.payload, dtype=np.float32).astype(np.float64)

    def decode_vector(self, quantizer) -> np.ndarray:
        return self.decode_f32() if self.bits == 32 else quantizer.dequantize(self.to_quantized())


@dataclass
class GraphEdge:
    src: str
    dst: str
    relation: str
    weight: float

    def validate(self) -> None:
        if self.src == self.dst:
            raise StoreError("self-loop edges are not allowed")
        if not 0.0 < self.weight <= 1.0:
            raise StoreError(f"edge weight must lie in (0,1], got {self.weight}")


@dataclass
class GistBlock:
    id: str
    member_ids: list[str]
    summary_text: str
    embedding: np.ndarray

    def validate(self) -> None:
        if len(self.member_ids) < 2:
            raise StoreError("a gist needs at least two members")
        if len(set(self.member_ids)) != len(self.member_ids):
            raise StoreError("gist members must be distinct")


@dataclass
class Pattern:
    id: str
    subject: str
    predicate: str
    evidence: int
    agreements: int
    member_ids: list[str] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.agreements / self.evidence if self.evidence else 0.0

    @property
    def confidence(self) -> float:
        return pattern_confidence(self.evidence, self.rate)


@dataclass
class SoftPromptRecord:
    text: str
    token_estimate: int
    pattern_ids: list[str]
    generated_at: float
    id: int | None = None


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS memories (
    id TEXT PRIMARY KEY,
    text TEXT NOT NULL,
    entities TEXT NOT NULL,
    importance REAL NOT NULL,
    emotional_salience REAL NOT NULL,
    confirmations INTEGER NOT NULL,
    access_count INTEGER NOT NULL,
    event_time REAL NOT NULL,
    ingest_time REAL NOT NULL,
    last_access_time REAL NOT NULL,
    source_agent TEXT NOT NULL,
    lifecycle TEXT NOT NULL,
    strength REAL NOT NULL,
    retention REAL NOT NULL,
    forgotten_at REAL
);
CREATE TABLE IF NOT EXISTS embeddings (
    memory_id TEXT PRIMARY KEY,
    dim INTEGER NOT NULL,
    bits INTEGER NOT NULL,
    payload BLOB NOT NULL,
    base_variance REAL NOT NULL,
    rotation_seed INTEGER,
    codebook_id TEXT
);
CREATE TABLE IF NOT EXISTS trust (
    agent_id TEXT PRIMARY KEY,
    tau REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS edges (
    src TEXT NOT NULL,
    dst TEXT NOT NULL,
    relation TEXT NOT NULL,
    weight REAL NOT NULL,
    PRIMARY KEY (src, dst, relation)
);
CREATE TABLE IF NOT EXISTS gists (
    id TEXT PRIMARY KEY,
    member_ids TEXT NOT NULL,
    summary_text TEXT NOT NULL,
    embedding BLOB NOT NULL,
    dim INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS patterns (
    id TEXT PRIMARY KEY,
    subject TEXT NOT NULL,
    predicate TEXT NOT NULL,
    evidence INTEGER NOT NULL,
    agreements INTEGER NOT NULL,
    member_ids TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS soft_prompts (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    text TEXT NOT NULL,
    token_estimate INTEGER NOT NULL,
    pattern_ids TEXT NOT NULL,
    generated_at REAL NOT NULL
);
"""

_EXPORT_KINDS = ("memory", "embedding", "edge", "trust", "gist", "pattern", "soft_prompt")


class MemoryStore:
    def __init__(self, path: str | Path, dim: int | None = None):
        self.path = Path(path)
        self._lock = threading.RLock()
        self.fail_before_commit = False  # fault-injection hook for atomicity tests
        try:
            self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
            self._conn.isolation_level = None  # explicit BEGIN/COMMIT
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
            self._conn.executescript(_SCHEMA)
        except sqlite3.DatabaseError as exc:
            raise StoreCorruptError(f"{self.path} is not a usable store: {exc}") from exc
        stored_dim = self._meta_get("dim")
        if stored_dim is None:
            if dim is None:
                raise StoreError("a new store needs an embedding dimension")
            self._meta_set("dim", str(int(dim)))
            self.dim = int(dim)
        else:
            self.dim = int(stored_dim)
            if dim is not None and int(dim) != self.dim:
                raise DimensionMismatchError(
                    f"store was created with dim={self.dim}, requested {dim}")

    # -- low-level helpers --------------------------------------------------

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def _meta_get(self, key: str):
        row = self._conn.execute("SELECT value FROM meta WHERE key=?", (key,)).fetchone()
        return row[0] if row else None

    def _meta_set(self, key: str, value: str) -> None:
        self._conn.execute(
            "INSERT INTO meta(key, value) VALUES(?, ?) "
            "ON CONFLICT(key) DO UPDATE SET value=excluded.value", (key, value))

    def _txn(self):
        return _Transaction(self)

    def next_memory_id(self) -> str:
        with self._lock, self._txn():
            n = int(self._meta_get("memory_counter") or 0) + 1
            self._meta_set("memory_counter", str(n))
            return f"m{n:08d}"

    # -- memories -----------------------------------------------------------

    def put_memory(self, record: MemoryRecord, embedding: np.ndarray,
                   base_variance: float | None = None) -> str:
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.dim,):
            raise DimensionMismatchError(
                f"embedding has shape {embedding.shape}, store dim is {self.dim}")
        record = replace(record, entities=[normalize_entity(e) for e in record.entities])
        now = record.ingest_time
        if now is None:
            import time as _time
            now = _time.time()
        record.ingest_time = now
        if record.event_time is None:
            record.event_time = now
        if record.last_access_time is None:
            record.last_access_time = now
        if record.access_count < 1:
            record.access_count = 1
        record.validate()
        if base_variance is None:
            base_variance = 1.0 / self.dim
        emb = EmbeddingRecord.from_vector(record.id, embedding, base_variance)
        emb.validate()
        with self._lock, self._txn():
            exists = self._conn.execute(
                "SELECT 1 FROM memories WHERE id=?", (record.id,)).fetchone()
            if exists:
                raise DuplicateMemoryError(f"memory id {record.id} already exists")
            self._insert_memory_row(record)
            self._insert_embedding_row(emb)
            if self.fail_before_commit:
                raise InjectedFaultError("simulated crash before commit")
        return record.id

    def _insert_memory_row(self, r: MemoryRecord) -> None:
        self._conn.execute(
            "INSERT INTO memories VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
            (r.id, r.text, json.dumps(r.entities), r.importance, r.emotional_salience,
             r.confirmations, r.access_count, r.event_time, r.ingest_time,
             r.last_access_time, r.source_agent, r.lifecycle.value, r.strength,
             r.retention, r.forgotten_at))

    def _insert_embedding_row(self, e: EmbeddingRecord) -> None:
        self._conn.execute(
            "INSERT OR REPLACE INTO embeddings VALUES (?,?,?,?,?,?,?)",
            (e.memory_id, e.dim, e.bits, sqlite3.Binary(e.payload), e.base_variance,
             e.rotation_seed, e.codebook_id))

    @staticmethod
    def _row_to_memory(row) -> MemoryRecord:
        return MemoryRecord(
            id=row[0], text=row[1], entities=json.loads(row[2]), importance=row[3],
            emotional_salience=row[4], confirmations=row[5], access_count=row[6],
            event_time=row[7], ingest_time=row[8], last_access_time=row[9],
            source_agent=row[10], lifecycle=Lifecycle(row[11]), strength=row[12],
            retention=row[13], forgotten_at=row[14])

    def get_memory(self, memory_id: str) -> MemoryRecord:
        row = self._conn.execute("SELECT * FROM memories WHERE id=?", (memory_id,)).fetchone()
        if row is None:
            raise UnknownMemoryError(f"no memory with id {memory_id}")
        return self._row_to_memory(row)

    def touch(self, memory_id: str, t: float) -> MemoryRecord:
        with self._lock, self._txn():
            rec = self.get_memory(memory_id)
            if t < rec.last_access_time:
                raise TimeRegressionError(
                    f"touch at {t} precedes last access {rec.last_access_time}")
            rec.access_count += 1
            rec.last_access_time = t
            self._conn.execute(
                "UPDATE memories SET access_count=?, last_access_time=? WHERE id=?",
                (rec.access_count, rec.last_access_time, memory_id))
            return rec

    def delete_memory(self, memory_id: str) -> bool:
        """Remove the record, its embedding, incident edges, and gist/pattern
        memberships (gists that fall under two members are dropped)."""
        with self._lock, self._txn():
            row = self._conn.execute("SELECT 1 FROM memories WHERE id=?", (memory_id,)).fetchone()
            if row is None:
                return False
            self._conn.execute("DELETE FROM memories WHERE id=?", (memory_id,))
            self._conn.execute("DELETE FROM embeddings WHERE memory_id=?", (memory_id,))
            self._conn.execute("DELETE FROM edges WHERE src=? OR dst=?", (memory_id, memory_id))
            for gid, members_json in self._conn.execute("SELECT id, member_ids FROM gists").fetchall():
                members = json.loads(members_json)
                if memory_id in members:
                    members = [m for m in members if m != memory_id]
                    if len(members) < 2:
                        self._conn.execute("DELETE FROM gists WHERE id=?", (gid,))
                    else:
                        self._conn.execute("UPDATE gists SET member_ids=? WHERE id=?",
                                           (json.dumps(members), gid))
            for pid, members_json in self._conn.execute("SELECT id, member_ids FROM patterns").fetchall():
                members = json.loads(members_json)
                if memory_id in members:
                    members = [m for m in members if m != memory_id]
                    self._conn.execute("UPDATE patterns SET member_ids=? WHERE id=?",
                                       (json.dumps(members), pid))
            return True

    def scan(self, lifecycles=None, agent: str | None = None,
             time_range: tuple[float, float] | None = None) -> list[MemoryRecord]:
        """Filtered scan in deterministic id order. time_range is inclusive
        and applies to event_time."""
        clauses, params = [], []
        if lifecycles:
            states = sorted(lc.value if isinstance(lc, Lifecycle) else str(lc)
                            for lc in lifecycles)
            clauses.append(f"lifecycle IN ({','.join('?' * len(states))})")
            params.extend(states)
        if agent is not None:
            clauses.append("source_agent=?")
            params.append(agent)
        if time_range is not None:
            clauses.append("event_time>=? AND event_time<=?")
            params.extend(time_range)
        sql = "SELECT * FROM memories"
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY id"
        return [self._row_to_memory(r) for r in self._conn.execute(sql, params).fetchall()]

    def count_memories(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM memories").fetchone()[0]

    def apply_decay_result(self, memory_id: str, strength: float, retention: float,
                           lifecycle: Lifecycle, forgotten_at: float | None = None) -> None:
        with self._lock, self._txn():
            self._conn.execute(
                "UPDATE memories SET strength=?, retention=?, lifecycle=?, "
                "forgotten_at=COALESCE(?, forgotten_at) WHERE id=?",
                (strength, retention, lifecycle.value, forgotten_at, memory_id))

    # -- embeddings ---------------------------------------------------------

    def get_embedding(self, memory_id: str) -> EmbeddingRecord | None:
        row = self._conn.execute(
            "SELECT * FROM embeddings WHERE memory_id=?", (memory_id,)).fetchone()
        if row is None:
            return None
        return EmbeddingRecord(memory_id=row[0], dim=row[1], bits=row[2],
                               payload=bytes(row[3]), base_variance=row[4],
                               rotation_seed=row[5], codebook_id=row[6])

    def delete_embedding(self, memory_id: str) -> None:
        with self._lock, self._txn():
            self._conn.execute("DELETE FROM embeddings WHERE memory_id=?", (memory_id,))

    def demote_embedding(self, memory_id: str, new_bits: int, quantizer) -> None:
        emb = self.get_embedding(memory_id)
        if emb is None:
            raise UnknownMemoryError(f"no embedding for {memory_id}")
        if new_bits >= emb.bits:
            return
        if emb.bits == 32:
            vec = emb.decode_f32()
            vec = vec / np.linalg.norm(vec)
            q = quantizer.quantize(vec, new_bits)
        else:
            q = quantizer.requantize(emb.to_quantized(), new_bits)
        new_emb = EmbeddingRecord.from_quantized(memory_id, q, emb.base_variance)
        new_emb.validate()
        with self._lock, self._txn():
            self._insert_embedding_row(new_emb)

    # -- trust, edges, gists, patterns, prompts ------------------------------

    def set_trust(self, agent_id: str, tau: float) -> None:
        if not 0.0 <= tau <= 1.0:
            raise StoreError(f"trust must lie in [0,1], got {tau}")
        with self._lock, self._txn():
            self._conn.execute(
                "INSERT INTO trust VALUES (?,?) ON CONFLICT(agent_id) "
                "DO UPDATE SET tau=excluded.tau", (agent_id, tau))

    def get_trust(self, agent_id: str) -> float:
        row = self._conn.execute("SELECT tau FROM trust WHERE agent_id=?", (agent_id,)).fetchone()
        return row[0] if row else 1.0

    def add_edge(self, src: str, dst: str, relation: str, weight: float) -> None:
        edge = GraphEdge(src=src, dst=dst, relation=relation, weight=weight)
        edge.validate()
        for endpoint in (src, dst):
            if self._conn.execute("SELECT 1 FROM memories WHERE id=?", (endpoint,)).fetchone() is None:
                raise UnknownMemoryError(f"edge endpoint {endpoint} does not exist")
        with self._lock, self._txn():
            self._conn.execute(
                "INSERT INTO edges VALUES (?,?,?,?) ON CONFLICT(src,dst,relation) "
                "DO UPDATE SET weight=excluded.weight", (src, dst, relation, weight))

    def edges(self) -> list[GraphEdge]:
        rows = self._conn.execute(
            "SELECT src, dst, relation, weight FROM edges ORDER BY src, dst, relation").fetchall()
        return [GraphEdge(*r) for r in rows]

    def put_gist(self, gist: GistBlock) -> None:
        gist.validate()
        payload = np.asarray(gist.embedding, dtype=np.float32).tobytes()
        with self._lock, self._txn():
            self._conn.execute(
                "INSERT OR REPLACE INTO gists VALUES (?,?,?,?,?)",
                (gist.id, json.dumps(gist.member_ids), gist.summary_text,
                 sqlite3.Binary(payload), len(gist.embedding)))

    def gists(self) -> list[GistBlock]:
        rows = self._conn.execute("SELECT * FROM gists ORDER BY id").fetchall()
        return [GistBlock(id=r[0], member_ids=json.loads(r[1]), summary_text=r[2],
                          embedding=np.frombuffer(r[3], dtype=np.float32).astype(np.float64))
                for r in rows]

    def delete_gist(self, gist_id: str) -> None:
        with self._lock, self._txn():
            self._conn.execute("DELETE FROM gists WHERE id=?", (gist_id,))

    def add_observation(self, subject: str, predicate: str, agrees: bool,
                        member_ids: list[str] | None = None) -> Pattern:
        """Record one structured observation for a (subject, predicate) pattern."""
        import hashlib
        key = f"{subject.strip().lower()}|{predicate.strip().lower()}"
        pid = "pat-" + hashlib.sha1(key.encode("utf-8")).hexdigest()[:12]
        with self._lock, self._txn():
            row = self._conn.execute("SELECT * FROM patterns WHERE id=?", (pid,)).fetchone()
            if row is None:
                pattern = Pattern(id=pid, subject=subject, predicate=predicate,
                                  evidence=1, agreements=1 if agrees else 0,
                                  member_ids=list(member_ids or []))
                self._conn.execute("INSERT INTO patterns VALUES (?,?,?,?,?,?)",
                                   (pattern.id, pattern.subject, pattern.predicate,
                                    pattern.evidence, pattern.agreements,
                                    json.dumps(pattern.member_ids)))
            else:
                members = sorted(set(json.loads(row[5])) | set(member_ids or []))
                pattern = Pattern(id=row[0], subject=row[1], predicate=row[2],
                                  evidence=row[3] + 1,
                                  agreements=row[4] + (1 if agrees else 0),
                                  member_ids=members)
                self._conn.execute(
                    "UPDATE patterns SET evidence=?, agreements=?, member_ids=? WHERE id=?",
                    (pattern.evidence, pattern.agreements, json.dumps(members), pid))
            return pattern

    def patterns(self) -> list[Pattern]:
        rows = self._conn.execute("SELECT * FROM patterns ORDER BY id").fetchall()
        return [Pattern(id=r[0], subject=r[1], predicate=r[2], evidence=r[3],
                        agreements=r[4], member_ids=json.loads(r[5])) for r in rows]

    def save_soft_prompt(self, sp: SoftPromptRecord) -> SoftPromptRecord:
        with self._lock, self._txn():
            cur = self._conn.execute(
                "INSERT INTO soft_prompts(text, token_estimate, pattern_ids, generated_at) "
                "VALUES (?,?,?,?)",
                (sp.text, sp.token_estimate, json.dumps(sp.pattern_ids), sp.generated_at))
            sp.id = cur.lastrowid
            return sp

    def latest_soft_prompt(self) -> SoftPromptRecord | None:
        row = self._conn.execute(
            "SELECT id, text, token_estimate, pattern_ids, generated_at "
            "FROM soft_prompts ORDER BY id DESC LIMIT 1").fetchone()
        if row is None:
            return None
        return SoftPromptRecord(id=row[0], text=row[1], token_estimate=row[2],
                                pattern_ids=json.loads(row[3]), generated_at=row[4])

    def entity_vocabulary(self) -> set[str]:
        vocab: set[str] = set()
        for (entities_json,) in self._conn.execute("SELECT entities FROM memories").fetchall():
            vocab.update(json.loads(entities_json))
        return vocab

    # -- integrity, export, import ------------------------------------------

    def verify(self) -> list[str]:
        """Referential-integrity and invariant sweep; returns human-readable
        issues, empty when the store is clean."""
        issues: list[str] = []
        ids = {r[0] for r in self._conn.execute("SELECT id FROM memories").fetchall()}
        for rec in self.scan():
            try:
                rec.validate()
            except StoreError as exc:
                issues.append(f"memory {rec.id}: {exc}")
            from .forgetting import classify
            if rec.lifecycle != classify(rec.retention):
                issues.append(f"memory {rec.id}: lifecycle {rec.lifecycle.value} inconsistent "
                              f"with cached retention {rec.retention:.4f}")
            emb = self.get_embedding(rec.id)
            if rec.lifecycle == Lifecycle.FORGOTTEN:
                if emb is not None:
                    issues.append(f"memory {rec.id}: forgotten but still has an embedding")
            elif emb is None:
                issues.append(f"memory {rec.id}: missing embedding")
            else:
                try:
                    emb.validate()
                except StoreError as exc:
                    issues.append(f"embedding {rec.id}: {exc}")
        for row in self._conn.execute("SELECT memory_id FROM embeddings").fetchall():
            if row[0] not in ids:
                issues.append(f"embedding {row[0]}: references a missing memory")
        for e in self.edges():
            if e.src not in ids or e.dst not in ids:
                issues.append(f"edge {e.src}->{e.dst}: dangling endpoint")
        for g in self.gists():
            missing = [m for m in g.member_ids if m not in ids]
            if missing:
                issues.append(f"gist {g.id}: missing members {missing}")
            if len(g.member_ids) < 2:
                issues.append(f"gist {g.id}: fewer than two members")
        for p in self.patterns():
            if p.agreements > p.evidence:
                issues.append(f"pattern {p.id}: agreements exceed evidence")
        return issues

    def canonical_lines(self):
        def dump(kind, obj):
            return json.dumps({"kind": kind, **obj}, sort_keys=True, ensure_ascii=False,
                              separators=(",", ":"))

        for rec in self.scan():
            yield dump("memory", {
                "id": rec.id, "text": rec.text, "entities": rec.entities,
                "importance": rec.importance, "emotional_salience": rec.emotional_salience,
                "confirmations": rec.confirmations, "access_count": rec.access_count,
                "event_time": rec.event_time, "ingest_time": rec.ingest_time,
                "last_access_time": rec.last_access_time, "source_agent": rec.source_agent,
                "lifecycle": rec.lifecycle.value, "strength": rec.strength,
                "retention": rec.retention, "forgotten_at": rec.forgotten_at})
        for row in self._conn.execute("SELECT * FROM embeddings ORDER BY memory_id").fetchall():
            yield dump("embedding", {
                "memory_id": row[0], "dim": row[1], "bits": row[2],
                "payload": base64.b64encode(bytes(row[3])).decode("ascii"),
                "base_variance": row[4], "rotation_seed": row[5], "codebook_id": row[6]})
        for e in self.edges():
            yield dump("edge", {"src": e.src, "dst": e.dst, "relation": e.relation,
                                "weight": e.weight})
        for agent, tau in self._conn.execute(
                "SELECT agent_id, tau FROM trust ORDER BY agent_id").fetchall():
            yield dump("trust", {"agent_id": agent, "tau": tau})
        for g in self.gists():
            yield dump("gist", {
                "id": g.id, "member_ids": g.member_ids, "summary_text": g.summary_text,
                "embedding": base64.b64encode(
                    np.asarray(g.embedding, dtype=np.float32).tobytes()).decode("ascii")})
        for p in self.patterns():
            yield dump("pattern", {"id": p.id, "subject": p.subject, "predicate": p.predicate,
                                   "evidence": p.evidence, "agreements": p.agreements,
                                   "member_ids": p.member_ids})
        for row in self._conn.execute("SELECT * FROM soft_prompts ORDER BY id").fetchall():
            yield dump("soft_prompt", {"id": row[0], "text": row[1], "token_estimate": row[2],
                                       "pattern_ids": json.loads(row[3]), "generated_at": row[4]})

    def export_canonical(self, path: str | Path) -> int:
        lines = list(self.canonical_lines())
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return len(lines)

    def canonical_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.canonical_lines()).encode("utf-8")

    def import_canonical(self, path: str | Path) -> int:
        if self.count_memories() or self._conn.execute(
                "SELECT COUNT(*) FROM patterns").fetchone()[0]:
            raise StoreNotEmptyError("import requires an empty store")
        n = 0
        with self._lock, self._txn():
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                kind = obj.pop("kind")
                if kind == "memory":
                    obj["lifecycle"] = Lifecycle(obj["lifecycle"])
                    self._insert_memory_row(MemoryRecord(**obj))
                elif kind == "embedding":
                    obj["payload"] = base64.b64decode(obj["payload"])
                    self._insert_embedding_row(EmbeddingRecord(**obj))
                elif kind == "edge":
                    self._conn.execute("INSERT INTO edges VALUES (?,?,?,?)",
                                       (obj["src"], obj["dst"], obj["relation"], obj["weight"]))
                elif kind == "trust":
                    self._conn.execute("INSERT INTO trust VALUES (?,?)",
                                       (obj["agent_id"], obj["tau"]))
                elif kind == "gist":
                    self._conn.execute(
                        "INSERT INTO gists VALUES (?,?,?,?,?)",
                        (obj["id"], json.dumps(obj["member_ids"]), obj["summary_text"],
                         sqlite3.Binary(base64.b64decode(obj["embedding"])),
                         len(base64.b64decode(obj["embedding"])) // 4))
                elif kind == "soft_prompt":
                    self._conn.execute(
                        "INSERT INTO soft_prompts(id, text, token_estimate, pattern_ids, "
                        "generated_at) VALUES (?,?,?,?,?)",
                        (obj["id"], obj["text"], obj["token_estimate"],
                         json.dumps(obj["pattern_ids"]), obj["generated_at"]))
                elif kind == "pattern":
                    self._conn.execute(
                        "INSERT INTO patterns VALUES (?,?,?,?,?,?)",
                        (obj["id"], obj["subject"], obj["predicate"], obj["evidence"],
                         obj["agreements"], json.dumps(obj["member_ids"])))
                else:
                    raise StoreError(f"unknown export kind {kind!r}")
                n += 1
        return n


class _Transaction:
    """BEGIN IMMEDIATE / COMMIT / ROLLBACK wrapper; nestable (inner no-ops)."""

    def __init__(self, store: MemoryStore):
        self.store = store
        self.nested = False

    def __enter__(self):
        if self.store._conn.in_transaction:
            self.nested = True
        else:
            self.store._conn.execute("BEGIN IMMEDIATE")
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.nested:
            return False
        if exc_type is None:
            self.store._conn.execute("COMMIT")
        else:
            self.store._conn.execute("ROLLBACK")
        return False
