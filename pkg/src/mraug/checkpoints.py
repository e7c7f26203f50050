"""Checkpoint archives: a single zip holding named parameter tensors as
.npy entries, a JSON config, JSON metadata, and the loss history as CSV
text.  Archives are written with fixed timestamps so identical contents
produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, payload)


def history_to_csv(history: dict[str, list[float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    names = list(history)
    writer.writerow(names)
    length = max((len(v) for v in history.values()), default=0)
    for i in range(length):
        writer.writerow([history[n][i] if i < len(history[n]) else "" for n in names])
    return buf.getvalue()


def history_from_csv(text: str) -> dict[str, list[float]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return {}
    names = rows[0]
    history: dict[str, list[float]] = {n: [] for n in names}
    for row in rows[1:]:
        for name, cell in zip(names, row):
            if cell != "":
                history[name].append(float(cell))
    return history


def save_archive(path: Path, params: dict[str, np.ndarray], config: dict,
                 meta: dict, history: dict[str, list[float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(params):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(params[name]))
            _write_entry(zf, f"params/{name}.npy", buf.getvalue())
        _write_entry(zf, "config.json", json.dumps(config, indent=1, sort_keys=True).encode())
        _write_entry(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        _write_entry(zf, "history.csv", history_to_csv(history).encode())


def load_archive(path: Path):
    path = Path(path)
    params: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path, "r") as zf:
        for name in zf.namelist():
            if name.startswith("params/") and name.endswith(".npy"):
                with zf.open(name) as f:
                    params[name[len("params/"):-len(".npy")]] = np.load(io.BytesIO(f.read()))
        config = json.loads(zf.read("config.json"))
        meta = json.loads(zf.read("meta.json"))
        history = history_from_csv(zf.read("history.csv").decode())
    return params, config, meta, history
