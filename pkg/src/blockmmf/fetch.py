"""Download and cache SuiteSparse (UFSMC) matrices in Matrix Market form.

Matrices are addressed as ``Group/Name`` (e.g. ``HB/bcsstk17``) or by URL.
Extracted ``.mtx`` files live under a content-addressed path
``<cache>/<sha[:2]>/<sha>/<name>.mtx``; ``index.json`` maps ids to hashes.

Environment:
    BLOCKMMF_CACHE     cache directory (default ``~/.cache/blockmmf``)
    BLOCKMMF_BASE_URL  collection root (default ``https://sparse.tamu.edu/MM``)
"""
from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import os
import re
import tarfile
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://sparse.tamu.edu/MM"
_ID_RE = re.compile(r"^([A-Za-z0-9_.\-]+)/([A-Za-z0-9_.+\-]+)$")
_INDEX = "index.json"


class FetchError(RuntimeError):
    pass


class ResolutionError(FetchError):
    """The id cannot be turned into a downloadable matrix."""


class ExtractError(FetchError):
    pass


class CacheMissError(FetchError):
    pass


def cache_dir(path=None) -> Path:
    if path is None:
        path = os.environ.get("BLOCKMMF_CACHE") or Path.home() / ".cache" / "blockmmf"
    return Path(path)


def resolve(ident: str, base_url: str | None = None) -> tuple[str, str]:
    """Return ``(url, matrix_name)`` for an id or URL."""
    if re.match(r"^(https?|file)://", ident):
        name = ident.rstrip("/").rsplit("/", 1)[-1]
        for suffix in (".tar.gz", ".mtx.gz", ".mtx"):
            if name.endswith(suffix):
                name = name[: -len(suffix)]
                break
        return ident, name
    m = _ID_RE.match(ident.strip())
    if not m:
        raise ResolutionError(f"cannot resolve matrix id {ident!r}; expected 'Group/Name'")
    base = (base_url or os.environ.get("BLOCKMMF_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
    group, name = m.groups()
    return f"{base}/{group}/{name}.tar.gz", name


def _load_index(root: Path) -> dict:
    try:
        return json.loads((root / _INDEX).read_text())
    except FileNotFoundError:
        return {}


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def extract_mtx(blob: bytes, name: str) -> bytes:
    """Pull the Matrix Market member out of a ``.tar.gz``, ``.mtx.gz`` or plain ``.mtx``."""
    try:
        if blob[:2] == b"\x1f\x8b":
            try:
                with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
                    members = [m for m in tar.getmembers() if m.isfile() and m.name.endswith(".mtx")]
                    wanted = [m for m in members if Path(m.name).name == f"{name}.mtx"] or members
                    if not wanted:
                        raise ExtractError(f"archive for {name!r} holds no .mtx member")
                    member = wanted[0]
                    data = tar.extractfile(member).read()
                    if len(data) != member.size:
                        raise ExtractError(f"{member.name}: extracted {len(data)} of {member.size} bytes")
            except tarfile.ReadError:
                data = gzip.decompress(blob)
        else:
            data = blob
    except (OSError, EOFError, tarfile.TarError, gzip.BadGzipFile) as exc:
        raise ExtractError(f"corrupted archive for {name!r}: {exc}") from None
    if not data.lstrip()[:14].lower().startswith(b"%%matrixmarket"):
        raise ExtractError(f"extracted member for {name!r} is not a Matrix Market file")
    return data


def _download(url: str, ident: str, timeout: float) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code == 404:
            raise ResolutionError(f"matrix {ident!r} not found at {url}") from None
        raise FetchError(f"HTTP {exc.code} while fetching {ident!r} from {url}") from None
    except (urllib.error.URLError, OSError) as exc:
        raise FetchError(f"cannot download {ident!r} from {url}: {exc}") from None


def fetch(
    ident: str,
    cache: str | os.PathLike | None = None,
    offline: bool = False,
    base_url: str | None = None,
    timeout: float = 60.0,
) -> Path:
    """Path of the cached ``.mtx`` for ``ident``, downloading it on a miss."""
    root = cache_dir(cache)
    url, name = resolve(ident, base_url)
    index = _load_index(root)
    entry = index.get(ident)
    if entry:
        path = root / entry["path"]
        if path.is_file() and path.stat().st_size == entry["size"]:
            log.debug("cache hit for %s", ident)
            return path
    if offline:
        raise CacheMissError(f"matrix {ident!r} is not cached and offline mode is on")

    log.info("downloading %s", url)
    data = extract_mtx(_download(url, ident, timeout), name)
    digest = hashlib.sha256(data).hexdigest()
    rel = Path(digest[:2]) / digest / f"{name}.mtx"
    _write_atomic(root / rel, data)
    index = _load_index(root)
    index[ident] = {"path": rel.as_posix(), "sha256": digest, "size": len(data), "url": url}
    _write_atomic(root / _INDEX, json.dumps(index, indent=1, sort_keys=True).encode())
    return root / rel
