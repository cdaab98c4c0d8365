"""Binary cache files for preprocessing artifacts.

Each cache is a small envelope: a magic line naming the format version, a
JSON header with the hashes the payload was built from, and a pickled
payload. A loader returns None whenever the magic or the expected header
does not match, which makes "rebuild on mismatch" the caller's one-liner.
"""

from __future__ import annotations

import hashlib
import json
import pickle
from pathlib import Path

VALUE_INDEX_MAGIC = b"QCWVIDX1"
CONTEXT_STORE_MAGIC = b"QCWCTXS1"
_HEADER_LIMIT = 1 << 20


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def save_envelope(path: str | Path, magic: bytes, header: dict, payload: object) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(len(header_bytes).to_bytes(8, "big"))
        fh.write(header_bytes)
        fh.write(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


def load_envelope(path: str | Path, magic: bytes, expected_header: dict) -> object | None:
    """Payload if the file exists with matching magic and header, else None."""
    p = Path(path)
    if not p.is_file():
        return None
    try:
        with open(p, "rb") as fh:
            if fh.read(len(magic) + 1) != magic + b"\n":
                return None
            size = int.from_bytes(fh.read(8), "big")
            if size > _HEADER_LIMIT:
                return None
            header = json.loads(fh.read(size).decode("utf-8"))
            if header != expected_header:
                return None
            return pickle.load(fh)
    except (OSError, ValueError, pickle.UnpicklingError, EOFError):
        return None
