import hashlib
import json
import os
import re

import numpy as np

from qtimes_errors import ConfigError

FILENAME_BAD_CHARS = r'[<>:"/\\|?*\x00-\x1F]'
THREADS_ENV = "QTIMES_THREADS"


def sanitize_filename(name, maxlen=200):
    safe = re.sub(FILENAME_BAD_CHARS, "_", name)
    safe = safe.strip(" .")
    return safe[:maxlen] if len(safe) > maxlen else safe


def get_unique_filename(filename):
    if not os.path.exists(filename):
        return filename
    name, extn = os.path.splitext(filename)
    counter = 2
    while True:
        new_filename = f"{name} v{counter}{extn}"
        if not os.path.exists(new_filename):
            return new_filename
        counter += 1


def worker_count():
    """Pool size: QTIMES_THREADS if set, else min(4, cpu_count)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'")
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1")
        return value
    return min(4, os.cpu_count() or 1)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(data):
    return json.dumps(data, sort_keys=True, indent=2, default=_json_default)


def output_path(directory, name, overwrite=False):
    path = os.path.join(directory, sanitize_filename(name))
    return path if overwrite else get_unique_filename(path)


def write_csv(path, columns, header):
    """Comma-separated, header row, 17 significant digits."""
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def write_json(path, data):
    with open(path, "w") as f:
        f.write(dumps_json(data))
        f.write("\n")
    return path

