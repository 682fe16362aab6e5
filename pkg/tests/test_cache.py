"""File cache tests: round trips, corruption handling, and concurrency."""

import json
import threading

import pytest

from renyi_qkd.cache import CACHE_ENV_VAR, ResultCache, default_cache_path
from renyi_qkd.keyrate import clear_divergence_cache, divergence_bound, set_file_cache


def test_default_cache_path_env(monkeypatch):
    monkeypatch.delenv(CACHE_ENV_VAR, raising=False)
    assert default_cache_path() is None
    monkeypatch.setenv(CACHE_ENV_VAR, "  ")
    assert default_cache_path() is None
    monkeypatch.setenv(CACHE_ENV_VAR, "/tmp/some-cache-dir")
    assert default_cache_path() == "/tmp/some-cache-dir"


def test_round_trip_and_miss(tmp_path):
    cache = ResultCache(tmp_path / "nested" / "cache")
    key = ("div", 0.05, 0.0, 1.2, 1e-06, 2000, 0, 0)
    record = {"lower": 0.5, "upper": 0.5000001, "iterations": 7, "converged": True}
    assert cache.lookup(key) is None
    cache.store(key, record)
    assert cache.lookup(key) == record
    assert cache.lookup(("div", 0.06, 0.0, 1.2, 1e-06, 2000, 0, 0)) is None
    assert len(cache) == 1


def test_distinct_keys_distinct_entries(tmp_path):
    cache = ResultCache(tmp_path)
    keys = [("div", p, 0.0, 1.2) for p in (0.01, 0.02, 0.03)]
    for i, key in enumerate(keys):
        cache.store(key, {"value": i})
    assert len(cache) == 3
    for i, key in enumerate(keys):
        assert cache.lookup(key) == {"value": i}


def test_corrupt_entry_warns_and_misses(tmp_path, caplog):
    cache = ResultCache(tmp_path)
    key = ("div", 0.1, 0.0, 1.5)
    cache.store(key, {"value": 1.0})
    entry = next(tmp_path.glob("*.json"))
    entry.write_text("{not valid json", encoding="utf-8")
    with caplog.at_level("WARNING", logger="renyi_qkd.cache"):
        assert cache.lookup(key) is None
    assert any("corrupt" in rec.message for rec in caplog.records)


def test_key_mismatch_warns_and_misses(tmp_path, caplog):
    cache = ResultCache(tmp_path)
    key = ("div", 0.1, 0.0, 1.5)
    cache.store(key, {"value": 1.0})
    entry = next(tmp_path.glob("*.json"))
    entry.write_text(json.dumps({"key": ["other"], "record": {"value": 2.0}}),
                     encoding="utf-8")
    with caplog.at_level("WARNING", logger="renyi_qkd.cache"):
        assert cache.lookup(key) is None
    assert any("mismatch" in rec.message for rec in caplog.records)


def test_malformed_record_warns_and_misses(tmp_path, caplog):
    cache = ResultCache(tmp_path)
    key = ("div", 0.1, 0.0, 1.5)
    cache.store(key, {"value": 1.0})
    entry = next(tmp_path.glob("*.json"))
    entry.write_text(json.dumps({"key": list(key), "record": [1, 2]}),
                     encoding="utf-8")
    with caplog.at_level("WARNING", logger="renyi_qkd.cache"):
        assert cache.lookup(key) is None
    assert any("malformed" in rec.message for rec in caplog.records)


def test_store_leaves_no_temp_files(tmp_path):
    cache = ResultCache(tmp_path)
    for i in range(10):
        cache.store(("k", i), {"value": i})
    assert list(tmp_path.glob("*.tmp")) == []
    assert len(cache) == 10


def test_concurrent_writers_distinct_keys(tmp_path):
    cache = ResultCache(tmp_path)
    errors = []

    def worker(start):
        try:
            for i in range(start, start + 25):
                cache.store(("k", i), {"value": i})
                got = cache.lookup(("k", i))
                assert got == {"value": i}
        except Exception as exc:  # pragma: no cover - surfaced via errors list
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in (0, 25, 50, 75)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    assert len(cache) == 100
    for i in range(100):
        assert cache.lookup(("k", i)) == {"value": i}


def test_divergence_bound_uses_file_cache(tmp_path):
    cache = ResultCache(tmp_path)
    set_file_cache(cache)
    try:
        clear_divergence_cache()
        cold = divergence_bound(0.05, 0.0, 1.3)
        assert len(cache) == 1
        # drop the in-memory layer so the next call must hit the files
        clear_divergence_cache()
        warm = divergence_bound(0.05, 0.0, 1.3)
        assert warm == cold
        assert len(cache) == 1
    finally:
        set_file_cache(None)
        clear_divergence_cache()


def test_divergence_bound_survives_corrupt_file_cache(tmp_path):
    cache = ResultCache(tmp_path)
    set_file_cache(cache)
    try:
        clear_divergence_cache()
        cold = divergence_bound(0.05, 0.0, 1.3)
        entry = next(tmp_path.glob("*.json"))
        entry.write_text("garbage", encoding="utf-8")
        clear_divergence_cache()
        recomputed = divergence_bound(0.05, 0.0, 1.3)
        assert recomputed == pytest.approx(cold)
    finally:
        set_file_cache(None)
        clear_divergence_cache()
