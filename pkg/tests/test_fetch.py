from __future__ import annotations

import functools
import gzip
import io
import json
import tarfile
import threading
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

import pytest

from blockmmf.fetch import (
    CacheMissError,
    ExtractError,
    FetchError,
    ResolutionError,
    extract_mtx,
    fetch,
    resolve,
)
from blockmmf.matrix_io import parse_matrix_market

MTX = b"""%%MatrixMarket matrix coordinate real general
% name: Test/tiny
% kind: test problem
3 3 2
1 1 1.0
3 2 2.0
"""


def _tarball(name, data=MTX):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        info = tarfile.TarInfo(f"{name}/{name}.mtx")
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


class _Handler(SimpleHTTPRequestHandler):
    hits: list = []

    def do_GET(self):
        type(self).hits.append(self.path)
        super().do_GET()

    def log_message(self, *args):
        pass


@pytest.fixture
def server(tmp_path):
    root = tmp_path / "www"
    (root / "Test").mkdir(parents=True)
    (root / "Test" / "tiny.tar.gz").write_bytes(_tarball("tiny"))
    (root / "Test" / "broken.tar.gz").write_bytes(_tarball("broken")[:40])
    (root / "Test" / "plain.mtx.gz").write_bytes(gzip.compress(MTX))
    _Handler.hits = []
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), functools.partial(_Handler, directory=str(root)))
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}", _Handler.hits
    httpd.shutdown()
    httpd.server_close()


def test_resolve():
    assert resolve("HB/bcsstk17", "https://x/MM") == ("https://x/MM/HB/bcsstk17.tar.gz", "bcsstk17")
    assert resolve("https://h/a/b/foo.mtx.gz")[1] == "foo"
    with pytest.raises(ResolutionError, match="no-slash"):
        resolve("no-slash")


def test_fetch_then_cache_hit(server, tmp_path):
    base, hits = server
    cache = tmp_path / "cache"
    p1 = fetch("Test/tiny", cache=cache, base_url=base)
    A = parse_matrix_market(p1)
    assert A.nnz_stored == 2 and A.meta["kind"] == "test problem"
    digest = p1.parent.name
    assert len(digest) == 64 and p1.parent.parent.name == digest[:2]
    index = json.loads((cache / "index.json").read_text())
    assert index["Test/tiny"]["size"] == len(MTX)
    n = len(hits)
    p2 = fetch("Test/tiny", cache=cache, base_url=base)
    assert p2 == p1 and len(hits) == n  # no network I/O on the second call
    assert fetch("Test/tiny", cache=cache, offline=True) == p1


def test_unknown_id_names_it(server, tmp_path):
    base, _ = server
    with pytest.raises(ResolutionError, match="Test/nothere"):
        fetch("Test/nothere", cache=tmp_path / "c", base_url=base)


def test_corrupted_archive_leaves_no_entry(server, tmp_path):
    base, _ = server
    cache = tmp_path / "c"
    with pytest.raises(ExtractError):
        fetch("Test/broken", cache=cache, base_url=base)
    assert not (cache / "index.json").exists()
    assert not cache.exists() or not any(p.is_file() for p in cache.rglob("*"))


def test_offline_miss(tmp_path):
    with pytest.raises(CacheMissError):
        fetch("Test/tiny", cache=tmp_path / "c", offline=True)


def test_url_and_gzip_member(server, tmp_path):
    base, _ = server
    p = fetch(f"{base}/Test/plain.mtx.gz", cache=tmp_path / "c")
    assert p.name == "plain.mtx" and p.read_bytes() == MTX


def test_network_failure_is_fetch_error(tmp_path):
    with pytest.raises(FetchError):
        fetch("Test/tiny", cache=tmp_path / "c", base_url="http://127.0.0.1:9", timeout=2)


def test_cache_env_var(server, tmp_path, monkeypatch):
    base, _ = server
    monkeypatch.setenv("BLOCKMMF_CACHE", str(tmp_path / "envcache"))
    monkeypatch.setenv("BLOCKMMF_BASE_URL", base)
    p = fetch("Test/tiny")
    assert (tmp_path / "envcache") in p.parents


def test_extract_rejects_non_matrix_market():
    with pytest.raises(ExtractError):
        extract_mtx(b"hello", "x")
    with pytest.raises(ExtractError):
        extract_mtx(_tarball("x", b"not a matrix\n"), "x")
