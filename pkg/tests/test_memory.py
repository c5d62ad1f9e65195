import threading

import numpy as np
import pytest

from evade import memory as mem
from evade import scenario as sc
from evade.metrics import EvaluationReport
from evade.policy import Policy


def make_vector(rng=None, values=None):
    if values is None:
        values = rng.uniform(-1, 1, sc.VECTOR_DIM)
    return sc.ScenarioVector(values=np.asarray(values, dtype=float))


def make_record(rec_id, vector, policy=Policy.AEB, collision=0.0,
                false_trigger=0.0):
    return mem.MemoryRecord(
        id=rec_id, vector=vector, prompt_text=f"scene {rec_id}",
        policy=policy,
        outcome=EvaluationReport(collision_loss=collision,
                                 false_trigger_loss=false_trigger),
        created_at=0.0)


class TestInsertRetrieve:
    def test_self_retrieval(self):
        bank = mem.MemoryBank()
        rng = np.random.default_rng(0)
        v = make_vector(rng)
        bank.insert(make_record("a", v))
        out = bank.retrieve_nearest(v, k=1)
        assert out[0][0].id == "a"
        assert out[0][1] == pytest.approx(1.0)

    def test_empty_bank(self):
        bank = mem.MemoryBank()
        assert bank.retrieve_nearest(make_vector(np.random.default_rng(1))) == []
        assert len(bank) == 0

    def test_insert_grows_bank(self):
        bank = mem.MemoryBank()
        rng = np.random.default_rng(2)
        bank.insert(make_record("a", make_vector(rng)))
        assert len(bank) == 1
        bank.insert(make_record("b", make_vector(rng)))
        assert len(bank) == 2
        ids = {r.id for r in bank.records()}
        assert ids == {"a", "b"}

    def test_duplicate_id_rejected(self):
        bank = mem.MemoryBank()
        rng = np.random.default_rng(3)
        bank.insert(make_record("a", make_vector(rng)))
        with pytest.raises(mem.DuplicateRecordError):
            bank.insert(make_record("a", make_vector(rng)))

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            mem.MemoryBank().retrieve_nearest(
                make_vector(np.random.default_rng(4)), k=0)

    def test_topk_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(42)
        bank = mem.MemoryBank()
        vectors = []
        for i in range(50):
            v = make_vector(rng)
            vectors.append((f"r{i:02d}", v))
            bank.insert(make_record(f"r{i:02d}", v))
        query = make_vector(rng)
        got = bank.retrieve_nearest(query, k=5)
        oracle = sorted(((rid, sc.similarity(query, v)) for rid, v in vectors),
                        key=lambda t: (-t[1], t[0]))[:5]
        assert [(r.id, pytest.approx(s)) for r, s in got] == \
            [(rid, pytest.approx(s)) for rid, s in oracle]


class TestSuccessFilter:
    def test_failed_only_bank_yields_nothing(self):
        bank = mem.MemoryBank()
        rng = np.random.default_rng(5)
        v = make_vector(rng)
        bank.insert(make_record("bad", v, collision=3.0))
        assert bank.successful_cases(v, k=3) == []

    def test_success_included(self):
        bank = mem.MemoryBank()
        v = make_vector(np.random.default_rng(6))
        bank.insert(make_record("good", v, collision=0.0))
        out = bank.successful_cases(v, k=1)
        assert out[0][0].id == "good"

    def test_success_beats_failure_at_equal_similarity(self):
        bank = mem.MemoryBank()
        v = make_vector(np.random.default_rng(7))
        bank.insert(make_record("bad", v, collision=2.0))
        bank.insert(make_record("good", v, collision=0.05))
        out = bank.successful_cases(v, k=2)
        assert [r.id for r, _ in out] == ["good"]

    def test_false_trigger_counts_as_failure(self):
        bank = mem.MemoryBank()
        v = make_vector(np.random.default_rng(8))
        bank.insert(make_record("ft", v, false_trigger=0.5))
        assert bank.successful_cases(v) == []
        out = bank.successful_cases(v, include_failures=True)
        assert [r.id for r, _ in out] == ["ft"]


class TestPersistence:
    def test_roundtrip_identical_retrieval(self, tmp_path):
        path = tmp_path / "bank.jsonl"
        bank = mem.MemoryBank(path=path)
        rng = np.random.default_rng(9)
        for i in range(10):
            bank.insert(make_record(f"r{i}", make_vector(rng),
                                    policy=Policy(i % 8),
                                    collision=float(i % 3)))
        query = make_vector(rng)
        before = [(r.id, s) for r, s in bank.retrieve_nearest(query, k=10)]
        reloaded = mem.MemoryBank(path=path)
        after = [(r.id, s) for r, s in reloaded.retrieve_nearest(query, k=10)]
        assert before == after
        assert reloaded.records()[0].prompt_text.startswith("scene")

    def test_header_versioned(self, tmp_path):
        path = tmp_path / "bank.jsonl"
        bank = mem.MemoryBank(path=path)
        bank.insert(make_record("a", make_vector(np.random.default_rng(1))))
        first = path.read_text().splitlines()[0]
        assert first == "#evade-bank v1"

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.jsonl"
        path.write_text("not a bank\n")
        with pytest.raises(ValueError):
            mem.MemoryBank(path=path)


class TestConcurrency:
    def test_insert_atomic_under_concurrent_retrieval(self):
        bank = mem.MemoryBank()
        rng = np.random.default_rng(10)
        query = make_vector(rng)
        stop = threading.Event()
        errors = []

        def reader():
            while not stop.is_set():
                for record, sim in bank.retrieve_nearest(query, k=5) or []:
                    # A torn record would break these invariants.
                    if record.vector.values.shape != (sc.VECTOR_DIM,):
                        errors.append("bad vector")
                    if not 0.0 <= sim <= 1.0:
                        errors.append("bad similarity")

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        for i in range(200):
            bank.insert(make_record(f"r{i}", make_vector(rng)))
        stop.set()
        for t in threads:
            t.join()
        assert errors == []
        assert len(bank) == 200
