import pytest


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keeps every test's scaling-tensor cache out of the user's home directory."""
    cache_dir = tmp_path / "tidb-cache"
    monkeypatch.setenv("TIDB_CACHE_DIR", str(cache_dir))
    return cache_dir
