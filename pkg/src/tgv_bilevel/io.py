"""Binary PGM images, CSV fields and tables, and configuration profiles."""
from __future__ import annotations

import configparser
import csv
from dataclasses import fields, is_dataclass, replace
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ImageFormatError("truncated PGM header")
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with 8- or 16-bit samples, scaled to ``[0, 1]``."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    (magic, w, h, maxval), off = _tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = w * h * dtype.itemsize
    raw = data[off:off + nbytes]
    if len(raw) != nbytes:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(float) / maxval


def write_pgm(path, u, bits: int = 16):
    """Write ``u`` (clipped to ``[0, 1]``) as binary PGM."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    q = np.rint(u * maxval)
    arr = q.astype(">u2") if bits == 16 else q.astype("u1")
    h, w = u.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_field_csv(path, a):
    """One image row per CSV row, values in ``repr`` precision."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        for row in a:
            wr.writerow([repr(float(v)) for v in row])


def read_field_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows)


def write_table_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------------------
# Configuration

DEFAULT_PROFILES = """\
[noise]
sigma2 = 0.01
seed = 0
n_w = 7

[dual]
beta = 1e-3
gamma = 0.0
delta = 1e-6
eps0_init = 1e3
eps1_init = 1e3
eps0_final = 1e-12
eps1_final = 1e-12
theta_eps = 0.05

[bilevel-dual]
lam = 1e-11
alpha0_bounds = 1e-7, 1e-2
alpha1_bounds = 1e-7, 1e-2
tau0_init = 1.0
tau1_init = 1e-12
c = 1e-8
theta_minus = 0.25
theta_plus = 2.0
max_outer = 30
eps_alpha = 1e-10
alpha0_init = 3.125e-6
alpha1_init = 9e-4

[pd]
mu = 0.1
alpha_reg = 1.0
gamma0 = 1e-3
gamma1 = 1e-3
delta = 1e-5
kkt_tol = 1e-4

[bilevel-pd]
lambda0 = 1e-11
lambda1 = 1e-11
alpha0_bounds = 1e-2, 10.0
alpha1_bounds = 1e-4, 10.0
tau0_init = 0.05
tau1_init = 100.0
c = 1e-9
theta_minus = 0.25
theta_plus = 2.0
max_outer = 40
eps_alpha = 1e-6
laplacian_weight = 6e4
alpha0_mode = scalar
alpha0_init = 0.2
alpha1_init = 0.25
"""


def load_config(path=None) -> configparser.ConfigParser:
    """Default profiles, overlaid with ``path`` when given."""
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_PROFILES)
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _convert(raw: str, current):
    if isinstance(current, bool):
        v = raw.strip().lower()
        if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return v in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [float(x) for x in raw.split(",")]
        if len(parts) != len(current):
            raise ValueError(f"expected {len(current)} comma-separated values, got {raw!r}")
        return tuple(parts)
    return raw.strip()


def apply_section(obj, section) -> object:
    """Return a copy of dataclass ``obj`` with matching keys from ``section``."""
    if not is_dataclass(obj):
        raise TypeError("expected a dataclass instance")
    changes = {}
    names = {f.name for f in fields(obj)}
    for key, raw in section.items():
        if key not in names or is_dataclass(getattr(obj, key)):
            raise ValueError(f"unknown parameter {key!r} for {type(obj).__name__}")
        changes[key] = _convert(raw, getattr(obj, key))
    return replace(obj, **changes) if changes else obj
