"""Persistence: binary feature-vector cache and JSON model files.

Feature record layout (little-endian):

    magic "AEFC" | version u16 | key hash 32 bytes | dim u32
    | dim * float32 | CRC32C u32 of all prior bytes

The index is a JSON-lines file, one {key_hash, segment, offset} object per
line. Writers append to a per-process segment file; a record only becomes
visible through the index after its bytes (checksum included) are flushed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import uuid

import numpy as np

from .errors import CacheError, FormatError, IoError
from .imageprep import PreprocessConfig, RawImage, ViewKind
from .svm import SvmModel

log = logging.getLogger(__name__)

MAGIC = b"AEFC"
RECORD_VERSION = 1
_HEADER = struct.Struct("<4sH32sI")


# --- CRC32C (Castagnoli), slice-by-8 software implementation -------------------


def _make_tables() -> list[list[int]]:
    poly = 0x82F63B78
    t0 = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        t0.append(c)
    tables = [t0]
    for _ in range(7):
        prev = tables[-1]
        tables.append([(prev[i] >> 8) ^ t0[prev[i] & 0xFF] for i in range(256)])
    return tables


_T = _make_tables()
_U32x2 = struct.Struct("<II")


def crc32c(data: bytes, crc: int = 0) -> int:
    crc = ~crc & 0xFFFFFFFF
    t0, t1, t2, t3, t4, t5, t6, t7 = _T
    n = len(data)
    p = 0
    unpack = _U32x2.unpack_from
    while n - p >= 8:
        a, b = unpack(data, p)
        a ^= crc
        crc = (
            t7[a & 0xFF]
            ^ t6[(a >> 8) & 0xFF]
            ^ t5[(a >> 16) & 0xFF]
            ^ t4[a >> 24]
            ^ t3[b & 0xFF]
            ^ t2[(b >> 8) & 0xFF]
            ^ t1[(b >> 16) & 0xFF]
            ^ t0[b >> 24]
        )
        p += 8
    while p < n:
        crc = (crc >> 8) ^ t0[(crc ^ data[p]) & 0xFF]
        p += 1
    return ~crc & 0xFFFFFFFF


# --- cache keys -----------------------------------------------------------------


class CacheKey:
    """Identity of one extraction: image content, backbone, view, preprocess."""

    __slots__ = ("image_hash", "backbone_id", "view", "preprocess_hash", "digest")

    def __init__(self, image_hash: str, backbone_id: str, view: ViewKind, preprocess_hash: str):
        self.image_hash = image_hash
        self.backbone_id = backbone_id
        self.view = view
        self.preprocess_hash = preprocess_hash
        payload = "\x1f".join([image_hash, backbone_id, view.value, preprocess_hash])
        self.digest = hashlib.sha256(payload.encode("utf-8")).digest()

    def hex(self) -> str:
        return self.digest.hex()


def encode_record(key: CacheKey, values: np.ndarray) -> bytes:
    v = np.ascontiguousarray(values, dtype="<f4")
    body = _HEADER.pack(MAGIC, RECORD_VERSION, key.digest, v.shape[0]) + v.tobytes()
    return body + struct.pack("<I", crc32c(body))


def decode_record(buf: bytes, offset: int = 0) -> tuple[bytes, np.ndarray, int]:
    """Return (key_hash, values, bytes_consumed); raises CacheError on corruption."""
    head = buf[offset : offset + _HEADER.size]
    if len(head) < _HEADER.size:
        raise CacheError("truncated record header")
    magic, version, key_hash, dim = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CacheError(f"bad record magic {magic!r}")
    if version != RECORD_VERSION:
        raise CacheError(f"unsupported record version {version}")
    end = offset + _HEADER.size + 4 * dim
    payload = buf[offset:end]
    crc_bytes = buf[end : end + 4]
    if len(payload) < _HEADER.size + 4 * dim or len(crc_bytes) < 4:
        raise CacheError("truncated record body")
    (crc,) = struct.unpack("<I", crc_bytes)
    if crc32c(payload) != crc:
        raise CacheError("record checksum mismatch")
    values = np.frombuffer(payload, dtype="<f4", count=dim, offset=_HEADER.size).copy()
    return key_hash, values, _HEADER.size + 4 * dim + 4


class FeatureCache:
    """Append-only on-disk feature vector store, keyed by extraction inputs."""

    INDEX_NAME = "index.jsonl"

    def __init__(self, root):
        self.root = str(root)
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as e:
            raise CacheError(f"cannot create cache root {self.root}: {e}") from e
        self._index: dict[bytes, tuple[str, int]] = {}
        self._segment_name = f"seg-{os.getpid()}-{uuid.uuid4().hex[:8]}.bin"
        self._segment_fh = None
        self._load_index()

    # key construction lives here so callers never hash inputs themselves
    @staticmethod
    def make_key(img: RawImage, backbone_id: str, view: ViewKind, cfg: PreprocessConfig) -> CacheKey:
        return CacheKey(
            image_hash=img.content_hash(),
            backbone_id=backbone_id,
            view=view,
            preprocess_hash=cfg.digest(),
        )

    def _index_path(self) -> str:
        return os.path.join(self.root, self.INDEX_NAME)

    def _load_index(self) -> None:
        path = self._index_path()
        if not os.path.exists(path):
            return
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                        self._index[bytes.fromhex(entry["key_hash"])] = (
                            entry["segment"],
                            int(entry["offset"]),
                        )
                    except (json.JSONDecodeError, KeyError, ValueError):
                        log.warning("skipping malformed index line in %s", path)
        except OSError as e:
            raise CacheError(f"cannot read cache index {path}: {e}") from e

    def put(self, key: CacheKey, values: np.ndarray) -> None:
        if key.digest in self._index:
            return  # equal key implies equal extraction inputs: idempotent
        record = encode_record(key, values)
        try:
            if self._segment_fh is None:
                self._segment_fh = open(os.path.join(self.root, self._segment_name), "ab")
            offset = self._segment_fh.tell()
            self._segment_fh.write(record)
            self._segment_fh.flush()
            os.fsync(self._segment_fh.fileno())
            with open(self._index_path(), "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"key_hash": key.hex(), "segment": self._segment_name, "offset": offset}
                    )
                    + "\n"
                )
        except OSError as e:
            raise CacheError(f"cache write failed: {e}") from e
        self._index[key.digest] = (self._segment_name, offset)

    def get(self, key: CacheKey) -> np.ndarray | None:
        """Stored float32 values, or None on a miss. Corrupt records are
        treated as misses with a warning."""
        entry = self._index.get(key.digest)
        if entry is None:
            return None
        segment, offset = entry
        try:
            with open(os.path.join(self.root, segment), "rb") as fh:
                fh.seek(offset)
                head = fh.read(_HEADER.size)
                if len(head) < _HEADER.size:
                    raise CacheError("truncated record")
                dim = _HEADER.unpack(head)[3]
                rest = fh.read(4 * dim + 4)
            key_hash, values, _ = decode_record(head + rest)
        except (OSError, CacheError) as e:
            log.warning("corrupt cache record for %s: %s", key.hex(), e)
            return None
        if key_hash != key.digest:
            log.warning("cache index points at a record with a different key; treating as miss")
            return None
        return values

    def __len__(self) -> int:
        return len(self._index)

    def gc(self) -> list[str]:
        """Delete segment files no index entry references. Returns their names."""
        referenced = {segment for segment, _ in self._index.values()}
        removed = []
        for name in sorted(os.listdir(self.root)):
            if name.startswith("seg-") and name.endswith(".bin") and name not in referenced:
                try:
                    os.unlink(os.path.join(self.root, name))
                    removed.append(name)
                except OSError as e:
                    raise CacheError(f"cannot remove segment {name}: {e}") from e
        return removed

    def close(self) -> None:
        if self._segment_fh is not None:
            self._segment_fh.close()
            self._segment_fh = None


# --- model files ------------------------------------------------------------------


def _json_17g(obj, out: list[str]) -> None:
    """JSON writer that renders every real with 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, float):
        if not np.isfinite(obj):
            raise FormatError(f"cannot serialize non-finite real {obj}")
        out.append(format(obj, ".17g"))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _json_17g(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)) + ":")
            _json_17g(v, out)
        out.append("}")
    else:
        raise FormatError(f"cannot serialize {type(obj).__name__}")


def dumps_model(m: SvmModel) -> str:
    out: list[str] = []
    _json_17g(m.to_dict(), out)
    return "".join(out)


def save_model(m: SvmModel, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_model(m))
            fh.write("\n")
    except OSError as e:
        raise IoError(f"cannot write model {path}: {e}") from e


def load_model(path) -> SvmModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise IoError(f"cannot read model {path}: {e}") from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"model file {path} is not valid JSON: {e}") from e
    return SvmModel.from_dict(obj)
