"""On-disk formats: JSON, CSV with a JSON header, and header + raw float64 payloads.

All writes go through :func:`atomic_write` (temp file in the target
directory, fsync, rename), so a crashed run never leaves half a file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


def atomic_write(path, data):
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o)}")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default)


def write_json(path, obj):
    return atomic_write(path, dumps(obj) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- CSV with optional JSON header line ------------------------------------

def write_csv(path, columns, rows, header=None):
    buf = io.StringIO()
    if header is not None:
        buf.write("# " + json.dumps(header, sort_keys=True, default=_default) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue())


def read_csv(path):
    """Return (header dict or None, column names, list of rows as strings)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = None
    if lines and lines[0].startswith("# "):
        header = json.loads(lines[0][2:])
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return header, rows[0], rows[1:]


# -- JSON header line + little-endian float64 payload --------------------------

def write_payload(path, header, array):
    arr = np.ascontiguousarray(array)
    if np.iscomplexobj(arr):
        arr = arr.astype("<c16")
    else:
        arr = arr.astype("<f8")
    head = dict(header)
    head.setdefault("format_version", FORMAT_VERSION)
    head["payload_bytes"] = int(arr.nbytes)
    blob = json.dumps(head, sort_keys=True, default=_default).encode("utf-8") + b"\n"
    return atomic_write(path, blob + arr.tobytes())


def read_payload(path, complex_=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    cut = raw.find(b"\n")
    if cut < 0:
        raise FormatError(f"{path}: missing JSON header line")
    try:
        header = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    body = raw[cut + 1:]
    if header.get("payload_bytes", len(body)) != len(body):
        raise FormatError(f"{path}: payload is {len(body)} bytes, header says "
                          f"{header['payload_bytes']}")
    if complex_ is None:
        complex_ = header.get("scalar", "").startswith("complex")
    arr = np.frombuffer(body, dtype="<c16" if complex_ else "<f8").copy()
    return header, arr


# -- run manifest -------------------------------------------------------------

def write_manifest(out_dir, command, config, outputs, extra=None):
    entries = []
    for p in outputs:
        entries.append({"path": os.path.relpath(p, out_dir), "sha256": sha256_file(p)})
    man = {"command": command, "config": config, "outputs": entries,
           "format_version": FORMAT_VERSION}
    if extra:
        man["results"] = extra
    return write_json(os.path.join(out_dir, f"manifest-{command}.json"), man)
