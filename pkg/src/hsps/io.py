"""CSV / JSON artifacts.  Every file carries a provenance block: CSV files as
leading ``# key: value`` comment lines, JSON files as a ``provenance`` object.
Floats are written with repr so files round-trip exactly and same-seed runs
are byte-identical."""

import csv
import io
import json
import math
import os

import numpy as np

from . import __version__
from .homodyne import QuadratureDataset

TOOL = "hsps"


def provenance(seed, config_hash, **extra):
    out = {"tool": TOOL, "version": __version__, "seed": seed, "config_sha256": config_hash}
    out.update(extra)
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _write_text(path, text):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def write_csv(path, header, rows, prov):
    buf = io.StringIO()
    for k, v in prov.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _write_text(path, buf.getvalue())


def read_csv(path):
    """Returns ``(provenance, header, rows)`` with rows as lists of strings."""
    prov, lines = {}, []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                prov[key.strip()] = val.strip()
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return prov, rows[0], rows[1:]


def write_json(path, obj):
    _write_text(path, json.dumps(_jsonable(obj), indent=2) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None


def write_quadratures(path, ds, prov):
    prov = dict(prov, label=ds.label, scale_gain=repr(float(ds.scale_gain)))
    write_csv(path, [ds.label], ([v] for v in ds.values), prov)


def read_quadratures(path):
    prov, header, rows = read_csv(path)
    if len(header) != 1:
        raise ValueError(f"{path}: expected a one-column dataset")
    try:
        values = np.array([float(r[0]) for r in rows])
        gain = float(prov.get("scale_gain", 1.0))
    except (ValueError, IndexError):
        raise ValueError(f"{path}: malformed dataset") from None
    label = prov.get("label", header[0])
    # a dataset edited or concatenated by hand need not be centered
    values = values - values.mean()
    return QuadratureDataset(values - values.mean(), label, gain), prov


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"{path}: output directory is not writable")
