"""File formats: kernel CSV, GMCF binary, JSON records, plot series and manifests.

Floats are written with 17 significant digits so that every file round-trips
bit for bit and identical runs give byte-identical output.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .grid import GridSpec

GMCF_MAGIC = b"GMCF"
FLOAT_FMT = "%.17g"


def fmt(x: float) -> str:
    return FLOAT_FMT % x


# ---------------------------------------------------------------------------
# kernel matrices
# ---------------------------------------------------------------------------


def write_matrix_csv(path, matrix: np.ndarray, grid: GridSpec) -> Path:
    """Row-major CSV with the header ``# d=<d> n=<n> h=<spacing>``."""
    path = Path(path)
    m = np.atleast_2d(np.asarray(matrix, float))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# d={grid.d} n={grid.n} h={fmt(grid.spacing)}\n")
        for row in m:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_matrix_csv(path) -> tuple[np.ndarray, dict]:
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise ValueError("missing '# d=.. n=.. h=..' header")
        meta = dict(item.split("=", 1) for item in head[1:].split())
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    info = {"d": int(meta["d"]), "n": int(meta["n"]), "h": float(meta["h"])}
    return np.array(rows), info


# ---------------------------------------------------------------------------
# flat binary realizations
# ---------------------------------------------------------------------------


def write_gmcf(path, array: np.ndarray) -> Path:
    """``b"GMCF"``, ``u32`` rank, ``u32`` dims, then the ``f64`` payload, little-endian, C order."""
    a = np.ascontiguousarray(array, dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(GMCF_MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())
    return path


def read_gmcf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != GMCF_MAGIC:
        raise ValueError("not a GMCF file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    off = 8 + 4 * ndim
    a = np.frombuffer(raw, dtype="<f8", offset=off)
    if a.size != int(np.prod(shape)):
        raise ValueError("GMCF payload does not match its header")
    return a.reshape(shape).astype(float)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable and explicit
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# plot series
# ---------------------------------------------------------------------------


def write_series(path, columns: list[str], rows) -> Path:
    """Plain CSV with a header line; ``rows`` may be empty (header only)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_series(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(v) for v in row] for row in r if row]
    return header, np.array(data).reshape(-1, len(header))


# ---------------------------------------------------------------------------
# hashes and manifests
# ---------------------------------------------------------------------------


def git_blob_hash(data: bytes) -> str:
    """The object id ``git hash-object`` would assign to ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(_plain(config), sort_keys=True).encode()).hexdigest()


def write_manifest(directory, config: dict, outputs: list[Path], wall_time: float, extra: dict | None = None) -> Path:
    directory = Path(directory)
    files = {}
    for p in sorted(Path(o) for o in outputs):
        data = p.read_bytes()
        files[p.relative_to(directory).as_posix()] = {
            "git_hash": git_blob_hash(data),
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        }
    man = {"config_hash": config_hash(config), "outputs": files, "wall_time": wall_time}
    if extra:
        man.update(extra)
    return write_json(directory / "manifest.json", man)


def verify_manifest(directory) -> list[str]:
    """Names of outputs whose content no longer matches the manifest (empty when valid)."""
    directory = Path(directory)
    man = read_json(directory / "manifest.json")
    bad = []
    for name, rec in man["outputs"].items():
        p = directory / name
        if not p.exists() or git_blob_hash(p.read_bytes()) != rec["git_hash"]:
            bad.append(name)
    return bad
