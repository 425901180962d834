"""File formats: XYZ clouds, CSV tables, JSON configs and parameter blobs.

Parameter blob layout (all little-endian)::

    magic   4 bytes  b"PGCN"
    version uint16   (currently 1)
    count   uint32   number of arrays
    per array:
        name_len uint16, name utf-8
        ndim     uint8,  dims uint32 * ndim
        data     float64 * prod(dims), C order
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

BLOB_MAGIC = b"PGCN"
BLOB_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; the message carries the offending line."""


def read_xyz(path):
    """Read whitespace-separated points, one per line; ``#`` lines are comments."""
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no points found")
    pts = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite coordinate")
    return pts


def write_xyz(path, points):
    np.savetxt(path, np.asarray(points), fmt="%.17g")


def write_index_csv(path_or_file, indices):
    """One row per point, no header."""
    _write_rows(path_or_file, None, np.asarray(indices).tolist())


def read_index_csv(path):
    with open(path, newline="") as fh:
        return np.array([[int(v) for v in row] for row in csv.reader(fh)], dtype=np.intp)


def write_table_csv(path_or_file, rows, columns):
    """Write dict rows under ``columns``; floats use ``repr`` so they round-trip."""
    _write_rows(path_or_file, columns, [[_fmt(r.get(c)) for c in columns] for r in rows])


def read_table_csv(path):
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _parse(text):
    if text == "":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _write_rows(path_or_file, header, rows):
    if hasattr(path_or_file, "write"):
        _emit(path_or_file, header, rows)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _emit(fh, header, rows)


def _emit(fh, header, rows):
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(header)
    writer.writerows(rows)


def load_json(path):
    """Parse a JSON file, reporting the line and column of syntax errors."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def dump_json(data, path=None):
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_params(path, params):
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<HI", BLOB_VERSION, len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8", order="C")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    data = Path(path).read_bytes()
    if data[:4] != BLOB_MAGIC:
        raise FormatError(f"{path}: not a parameter blob")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"{path}: unsupported blob version {version}")
    try:
        params, pos = _unpack_arrays(data, count)
    except (struct.error, ValueError):
        raise FormatError(f"{path}: truncated parameter blob") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return params


def _unpack_arrays(data, count):
    pos = 10
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return params, pos
