"""
records.py
----------
Detection record streams: the interchange format between the photon source
and the analysis pipeline.

A stream is a numpy structured array of RECORD_DTYPE, ordered by trial_id.
On disk it is either

* binary: magic ``AFCDLCZ1``, then chunks of ``u32 count`` followed by
  ``count`` packed little-endian records ``{u64 trial_id, u8 channel,
  f64 timestamp_us}``, or
* text: ``trial_id,channel,timestamp_us`` lines with channel names
  ``stokes`` / ``anti_stokes``.

The source truth sidecar is a separate ``.npz`` file.
"""

import io
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, NamedTuple

import numpy as np

import logger.logger as log
from errors import DataError

logger = log.get_logger(__name__)

MAGIC = b"AFCDLCZ1"
CHUNK_RECORDS = 1 << 16
TEXT_HEADER = "trial_id,channel,timestamp_us"

RECORD_DTYPE = np.dtype(
    [("trial_id", "<u8"), ("channel", "u1"), ("timestamp_us", "<f8")]
)
_COUNT_DTYPE = np.dtype("<u4")
MAX_TRIAL_ID = np.iinfo(np.uint64).max


class Channel(IntEnum):
    STOKES = 0
    ANTI_STOKES = 1

    @classmethod
    def parse(cls, text: str) -> "Channel":
        key = text.strip().lower()
        aliases = {
            "stokes": cls.STOKES,
            "s": cls.STOKES,
            "0": cls.STOKES,
            "anti_stokes": cls.ANTI_STOKES,
            "antistokes": cls.ANTI_STOKES,
            "as": cls.ANTI_STOKES,
            "1": cls.ANTI_STOKES,
        }
        if key not in aliases:
            raise ValueError("unknown channel %r" % text)
        return aliases[key]

    @property
    def label(self) -> str:
        return self.name.lower()


class DetectionRecord(NamedTuple):
    trial_id: int
    channel: Channel
    timestamp_us: float


def empty_records() -> np.ndarray:
    return np.empty(0, dtype=RECORD_DTYPE)


def _channel(value) -> Channel:
    return Channel.parse(value) if isinstance(value, str) else Channel(value)


def make_records(records: Iterable) -> np.ndarray:
    """Build a stream from DetectionRecord-like (trial_id, channel, timestamp) tuples."""
    rows = [(int(r[0]), int(_channel(r[1])), float(r[2])) for r in records]
    return np.array(rows, dtype=RECORD_DTYPE) if rows else empty_records()


def iter_records(records: np.ndarray) -> Iterator[DetectionRecord]:
    for trial_id, channel, timestamp in records.tolist():
        yield DetectionRecord(trial_id, Channel(channel), timestamp)


def as_record_array(records) -> np.ndarray:
    """Accept a record array or an iterable of record chunks."""
    if isinstance(records, np.ndarray):
        if records.dtype != RECORD_DTYPE:
            raise DataError("record array has dtype %s, expected %s" % (records.dtype, RECORD_DTYPE))
        return records
    chunks = [as_record_array(chunk) for chunk in records]
    if not chunks:
        return empty_records()
    return np.concatenate(chunks)


def check_order(records: np.ndarray, previous_trial: int | None = None):
    """Raise DataError unless trial_id is non-decreasing."""
    trial = records["trial_id"]
    if trial.size == 0:
        return
    if previous_trial is not None and trial[0] < previous_trial:
        raise DataError("trial_id decreases across chunks", trial_id=int(trial[0]))
    bad = np.flatnonzero(trial[1:] < trial[:-1])
    if bad.size:
        raise DataError("trial_id decreases in stream order", trial_id=int(trial[bad[0] + 1]))


def channel_mask(records: np.ndarray, channel: Channel) -> np.ndarray:
    return records["channel"] == int(channel)


class RecordWriter:
    """
    Append-only writer for the binary stream format.

    Usage::

        with RecordWriter(path) as writer:
            writer.write(chunk)
    """

    def __init__(self, path: str, chunk_records: int = CHUNK_RECORDS):
        self._path = path
        self._chunk_records = chunk_records
        self._file = open(path, "wb")
        self._file.write(MAGIC)
        self.count = 0

    def write(self, records: np.ndarray):
        records = as_record_array(records)
        for start in range(0, records.size, self._chunk_records):
            chunk = records[start : start + self._chunk_records]
            self._file.write(np.array([chunk.size], dtype=_COUNT_DTYPE).tobytes())
            self._file.write(np.ascontiguousarray(chunk).tobytes())
            self.count += chunk.size

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None
            logger.debug("Wrote %d records to %s" % (self.count, self._path))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records_binary(path: str, records: np.ndarray):
    with RecordWriter(path) as writer:
        writer.write(records)


def _iter_binary(f: io.BufferedReader) -> Iterator[np.ndarray]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise DataError("missing AFCDLCZ1 header", offset=0)
    offset = len(MAGIC)
    previous = None
    while True:
        head = f.read(_COUNT_DTYPE.itemsize)
        if not head:
            return
        if len(head) < _COUNT_DTYPE.itemsize:
            raise DataError("truncated chunk header", offset=offset)
        count = int(np.frombuffer(head, dtype=_COUNT_DTYPE)[0])
        offset += _COUNT_DTYPE.itemsize
        payload = f.read(count * RECORD_DTYPE.itemsize)
        if len(payload) < count * RECORD_DTYPE.itemsize:
            raise DataError(
                "chunk declares %d records but the file ends early" % count,
                offset=offset + len(payload),
            )
        chunk = np.frombuffer(payload, dtype=RECORD_DTYPE)
        bad = np.flatnonzero(chunk["channel"] > Channel.ANTI_STOKES)
        if bad.size:
            raise DataError(
                "invalid channel code %d" % chunk["channel"][bad[0]],
                offset=offset + int(bad[0]) * RECORD_DTYPE.itemsize + 8,
            )
        unordered = np.flatnonzero(chunk["trial_id"][1:] < chunk["trial_id"][:-1])
        if unordered.size or (chunk.size and previous is not None and chunk["trial_id"][0] < previous):
            index = int(unordered[0]) + 1 if unordered.size else 0
            raise DataError(
                "trial_id decreases in stream order",
                trial_id=int(chunk["trial_id"][index]),
                offset=offset + index * RECORD_DTYPE.itemsize,
            )
        if chunk.size:
            previous = int(chunk["trial_id"][-1])
        offset += len(payload)
        yield chunk


def write_records_text(path: str, records: np.ndarray):
    records = as_record_array(records)
    with open(path, "w", encoding="utf-8") as f:
        f.write(TEXT_HEADER + "\n")
        for trial_id, channel, timestamp in records.tolist():
            f.write("%d,%s,%r\n" % (trial_id, Channel(channel).label, timestamp))
    logger.debug("Wrote %d text records to %s" % (records.size, path))


def _iter_text(f: io.BufferedReader, chunk_records: int = CHUNK_RECORDS) -> Iterator[np.ndarray]:
    rows = []
    offset = 0
    previous = None
    for raw in f:
        line = raw.decode("utf-8", errors="replace").strip()
        start = offset
        offset += len(raw)
        if not line or line.startswith("#") or line.replace(" ", "") == TEXT_HEADER:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            parts = line.split()
        try:
            if len(parts) != 3:
                raise ValueError(line)
            row = (int(parts[0]), int(Channel.parse(parts[1])), float(parts[2]))
        except ValueError:
            raise DataError("malformed record %r" % line, offset=start)
        if row[0] < 0:
            raise DataError("negative trial_id", offset=start)
        if row[0] > MAX_TRIAL_ID:
            raise DataError("trial_id %d does not fit in 64 bits" % row[0], offset=start)
        if previous is not None and row[0] < previous:
            raise DataError("trial_id decreases in stream order", trial_id=row[0], offset=start)
        previous = row[0]
        rows.append(row)
        if len(rows) >= chunk_records:
            yield np.array(rows, dtype=RECORD_DTYPE)
            rows = []
    if rows:
        yield np.array(rows, dtype=RECORD_DTYPE)


def detect_format(path: str) -> str:
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    return "binary" if head == MAGIC else "text"


def iter_record_chunks(path: str, fmt: str | None = None) -> Iterator[np.ndarray]:
    """Stream record chunks from a binary or text file."""
    fmt = fmt or detect_format(path)
    with open(path, "rb") as f:
        if fmt == "binary":
            yield from _iter_binary(f)
        elif fmt == "text":
            yield from _iter_text(f)
        else:
            raise ValueError("unknown record format %r" % fmt)


def read_records(path: str, fmt: str | None = None) -> np.ndarray:
    records = as_record_array(list(iter_record_chunks(path, fmt)))
    logger.debug("Read %d records from %s" % (records.size, path))
    return records


def write_records(path: str, records: np.ndarray, fmt: str = "binary"):
    if fmt == "binary":
        write_records_binary(path, records)
    elif fmt == "text":
        write_records_text(path, records)
    else:
        raise ValueError("unknown record format %r" % fmt)


class NoiseOrigin(IntEnum):
    READOUT_NOISE = 0
    WRITE_INDUCED_FLUORESCENCE = 1


PAIR_DTYPE = np.dtype(
    [
        ("trial_id", "<u8"),
        ("t_s", "<f8"),
        ("t_as", "<f8"),
        ("survived_readout", "?"),
        ("stokes_detected", "?"),
        ("anti_stokes_detected", "?"),
    ]
)
NOISE_DTYPE = np.dtype(
    [
        ("trial_id", "<u8"),
        ("channel", "u1"),
        ("timestamp_us", "<f8"),
        ("origin", "u1"),
        ("detected", "?"),
    ]
)


@dataclass(eq=False)
class SourceTruth:
    """
    Generated pairs and noise events behind a record stream. Pairs whose
    Stokes and anti-Stokes photons were both detected appear as one stokes and
    one anti_stokes record.
    """

    pairs: np.ndarray
    noise: np.ndarray

    @classmethod
    def empty(cls) -> "SourceTruth":
        return cls(np.empty(0, dtype=PAIR_DTYPE), np.empty(0, dtype=NOISE_DTYPE))

    @classmethod
    def concatenate(cls, parts: Iterable["SourceTruth"]) -> "SourceTruth":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.pairs for p in parts]),
            np.concatenate([p.noise for p in parts]),
        )

    @property
    def coincident_pairs(self) -> np.ndarray:
        pairs = self.pairs
        return pairs[pairs["stokes_detected"] & pairs["anti_stokes_detected"]]

    def save(self, path: str):
        with open(path, "wb") as f:
            np.savez(f, pairs=self.pairs, noise=self.noise)
        logger.debug("Wrote source truth to %s" % path)

    @classmethod
    def load(cls, path: str) -> "SourceTruth":
        with np.load(path) as data:
            return cls(data["pairs"], data["noise"])
