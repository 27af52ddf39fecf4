"""Readers and writers for the store files the pipeline exchanges.

Everything here is implemented against the published byte layouts, not
against the pipeline's own serialization code: the adapter must keep
working when it is deployed on a machine that only has the model
runtime installed.  Layouts (all integers little-endian):

``prompts.bin``
    magic ``PRM1``, u32 record count, then per record u32 view id,
    u32 superpoint id, u32 point count and that many (u32 row, u32 col)
    pairs.

``masks.bin`` / ``index.json``
    one record per (view, superpoint) pair holding exactly three mask
    candidates; each candidate is u32 run-length count, the runs as
    u32, and a f32 confidence.  Runs are row-major over the full image
    and alternate starting with a count of zero pixels.  The index maps
    ``"view,sp"`` keys to byte offsets into ``masks.bin``.

``features_<view>.fmap``
    magic ``FMP1``, u32 height/width/channels, f32 data row-major.
    The pipeline insists on 256 channels.

``instances_<view>.imap``
    magic ``IMP1``, u32 height/width, u16 labels row-major, 0 meaning
    background.

All writers go through a temp-file-plus-rename step so a crashed or
killed export never leaves a half-written file where the pipeline
expects a finished one.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

PROMPT_MAGIC = b"PRM1"
FMAP_MAGIC = b"FMP1"
IMAP_MAGIC = b"IMP1"

#: channel count the consumer requires in every feature map
FEATURE_CHANNELS = 256

#: candidates per mask record, fixed by the store layout
CANDIDATES_PER_RECORD = 3


class AdapterError(RuntimeError):
    """Raised for malformed inputs or broken export invariants."""


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file in the same directory.

    ``os.replace`` is atomic on POSIX, so readers either see the old
    file or the complete new one, never a prefix.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# prompt dump


def read_prompt_dump(path: Path) -> list[tuple[int, int, list[tuple[int, int]]]]:
    """Parse a prompt dump into ``(view_id, sp_id, [(row, col), ...])`` records."""
    blob = Path(path).read_bytes()
    if blob[:4] != PROMPT_MAGIC:
        raise AdapterError(f"{path}: not a prompt dump (bad magic {blob[:4]!r})")
    pos = 4
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    records = []
    for _ in range(count):
        view_id, sp_id, k = struct.unpack_from("<III", blob, pos)
        pos += 12
        points = []
        for _ in range(k):
            row, col = struct.unpack_from("<II", blob, pos)
            pos += 8
            points.append((row, col))
        if not points:
            raise AdapterError(f"{path}: empty prompt set for view {view_id}")
        records.append((view_id, sp_id, points))
    if pos != len(blob):
        raise AdapterError(f"{path}: {len(blob) - pos} trailing bytes")
    return records


# ---------------------------------------------------------------------------
# run-length masks


def rle_encode(mask: np.ndarray) -> np.ndarray:
    """Run-length encode a boolean image, row-major, zeros run first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    runs = np.diff(edges)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return runs.astype(np.uint32)


def _encode_candidate(mask: np.ndarray, confidence: float) -> bytes:
    runs = rle_encode(mask)
    return (
        struct.pack("<I", runs.size)
        + runs.tobytes()
        + struct.pack("<f", float(confidence))
    )


class MaskStoreWriter:
    """Accumulates mask records and writes ``masks.bin`` + ``index.json``.

    Records are buffered until :meth:`close` so both files land
    atomically; until then the target directory is untouched.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self._chunks: list[bytes] = []
        self._index: dict[str, int] = {}
        self._offset = 0
        self._closed = False

    def add(
        self,
        view_id: int,
        sp_id: int,
        candidates: list[tuple[np.ndarray, float]],
    ) -> None:
        if self._closed:
            raise AdapterError("writer already closed")
        if len(candidates) != CANDIDATES_PER_RECORD:
            raise AdapterError(
                f"record needs {CANDIDATES_PER_RECORD} candidates, "
                f"got {len(candidates)}"
            )
        key = f"{view_id},{sp_id}"
        if key in self._index:
            raise AdapterError(f"duplicate record for ({view_id}, {sp_id})")
        areas = [int(np.count_nonzero(m)) for m, _ in candidates]
        if any(a == 0 for a in areas):
            raise AdapterError(f"empty candidate mask for ({view_id}, {sp_id})")
        if any(a < b for a, b in zip(areas, areas[1:])):
            raise AdapterError(
                f"candidates for ({view_id}, {sp_id}) not sorted by area"
            )
        record = b"".join(_encode_candidate(m, c) for m, c in candidates)
        self._index[key] = self._offset
        self._chunks.append(record)
        self._offset += len(record)

    def close(self) -> None:
        if self._closed:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(self.directory / "masks.bin", b"".join(self._chunks))
        index_text = json.dumps(self._index, indent=0, sort_keys=True)
        atomic_write_bytes(self.directory / "index.json", index_text.encode())
        self._closed = True

    def __enter__(self) -> "MaskStoreWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        # leave nothing behind on failure; the rerun starts clean
        if exc_type is None:
            self.close()


# ---------------------------------------------------------------------------
# dense per-view maps


def write_feature_map(path: Path, data: np.ndarray) -> None:
    """Serialize an ``(h, w, 256)`` float32 feature grid."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != FEATURE_CHANNELS:
        raise AdapterError(
            f"feature map must be (h, w, {FEATURE_CHANNELS}), got {arr.shape}"
        )
    header = FMAP_MAGIC + struct.pack("<III", *arr.shape)
    atomic_write_bytes(Path(path), header + arr.tobytes())


def write_instance_map(path: Path, labels: np.ndarray) -> None:
    """Serialize an ``(h, w)`` uint16 instance-label image."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise AdapterError(f"instance map must be 2-D, got shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > np.iinfo(np.uint16).max:
        raise AdapterError("instance labels out of uint16 range")
    arr = np.ascontiguousarray(arr, dtype=np.uint16)
    header = IMAP_MAGIC + struct.pack("<II", *arr.shape)
    atomic_write_bytes(Path(path), header + arr.tobytes())


# ---------------------------------------------------------------------------
# store metadata


def update_metadata(directory: Path, **fields) -> None:
    """Merge ``fields`` into ``directory/metadata.json``, creating it if absent.

    Both exporters contribute to the same file, so this reads the
    current content first instead of clobbering the other tool's keys.
    """
    path = Path(directory) / "metadata.json"
    meta = {}
    if path.is_file():
        meta = json.loads(path.read_text())
    meta.update(fields)
    payload = json.dumps(meta, indent=1, sort_keys=True).encode()
    atomic_write_bytes(path, payload)
