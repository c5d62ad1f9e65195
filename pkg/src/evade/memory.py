"""Persistent case bank of evaluated scenarios with similarity retrieval.

Records append to an in-memory list guarded by a lock (single writer,
concurrent readers see the bank before or after an insert, never a torn
record) and optionally to a JSONL log: a versioned header line followed by
one self-describing record per line. Retrieval is an exact linear scan,
which is the oracle at desk-scale bank sizes.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import EvaluationReport
from .policy import Policy
from .scenario import ScenarioVector, similarity

BANK_FILE_VERSION = 1
HEADER_PREFIX = "#evade-bank"

# A stored case counts as a success when its run ended essentially clean.
SUCCESS_COLLISION_LOSS = 0.1


class DuplicateRecordError(Exception):
    pass


@dataclass(frozen=True)
class MemoryRecord:
    id: str
    vector: ScenarioVector
    prompt_text: str
    policy: Policy
    outcome: EvaluationReport
    created_at: float


class MemoryBank:
    def __init__(self, path: Optional[str | Path] = None,
                 success_collision_loss: float = SUCCESS_COLLISION_LOSS):
        self.path = Path(path) if path else None
        self.success_collision_loss = success_collision_loss
        self._records: list[MemoryRecord] = []
        self._ids: set[str] = set()
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def __len__(self) -> int:
        return len(self._records)

    def next_id(self) -> str:
        return f"rec-{len(self._records) + 1:04d}"

    def insert(self, record: MemoryRecord) -> str:
        with self._lock:
            if record.id in self._ids:
                raise DuplicateRecordError(f"record id {record.id!r} already stored")
            if self.path is not None:
                new_file = not self.path.exists()
                with open(self.path, "a", encoding="utf-8") as fh:
                    if new_file:
                        fh.write(f"{HEADER_PREFIX} v{BANK_FILE_VERSION}\n")
                    fh.write(json.dumps(_record_to_json(record)) + "\n")
                    fh.flush()
            # Swap in a fresh list so readers iterating the old one are safe.
            self._records = self._records + [record]
            self._ids = self._ids | {record.id}
        return record.id

    def retrieve_nearest(self, v: ScenarioVector, k: int = 1
                         ) -> list[tuple[MemoryRecord, float]]:
        if k < 1:
            raise ValueError("k must be at least 1")
        records = self._records
        scored = [(r, similarity(v, r.vector)) for r in records]
        scored.sort(key=lambda rs: (-rs[1], rs[0].id))
        return scored[:k]

    def successful_cases(self, v: ScenarioVector, k: int = 1,
                         include_failures: bool = False
                         ) -> list[tuple[MemoryRecord, float]]:
        """Nearest cases whose stored outcome was clean, for prompting."""
        records = self._records
        if not include_failures:
            records = [r for r in records
                       if r.outcome.collision_loss < self.success_collision_loss
                       and r.outcome.false_trigger_loss == 0.0]
        scored = [(r, similarity(v, r.vector)) for r in records]
        scored.sort(key=lambda rs: (-rs[1], rs[0].id))
        return scored[:k]

    def records(self) -> list[MemoryRecord]:
        return list(self._records)

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith(HEADER_PREFIX):
                raise ValueError(f"{self.path} is not a bank file")
            version = int(header.split("v")[-1])
            if version != BANK_FILE_VERSION:
                raise ValueError(f"unsupported bank file version {version}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = _record_from_json(json.loads(line))
                self._records.append(record)
                self._ids.add(record.id)


def _record_to_json(r: MemoryRecord) -> dict:
    return {
        "id": r.id,
        "vector": [float(x) for x in r.vector.values],
        "truncated": r.vector.truncated,
        "prompt": r.prompt_text,
        "policy": int(r.policy),
        "collision_loss": r.outcome.collision_loss,
        "false_trigger_loss": r.outcome.false_trigger_loss,
        "created_at": r.created_at,
    }


def _record_from_json(d: dict) -> MemoryRecord:
    return MemoryRecord(
        id=d["id"],
        vector=ScenarioVector(values=np.asarray(d["vector"], dtype=float),
                              truncated=bool(d.get("truncated", False))),
        prompt_text=d["prompt"],
        policy=Policy(d["policy"]),
        outcome=EvaluationReport(collision_loss=d["collision_loss"],
                                 false_trigger_loss=d["false_trigger_loss"]),
        created_at=d["created_at"],
    )
