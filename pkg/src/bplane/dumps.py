"""Versioned columnar dumps: one ``.npz`` of arrays plus a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_columns(path, columns: dict[str, np.ndarray], manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path.with_suffix(".npz"), **columns)
    head = {"format_version": FORMAT_VERSION, "columns": sorted(columns), **manifest}
    path.with_suffix(".json").write_text(json.dumps(head, indent=2, sort_keys=True, default=float))
    return path.with_suffix(".npz")


def load_columns(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    head = json.loads(path.with_suffix(".json").read_text())
    if head.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dump version {head.get('format_version')}")
    with np.load(path.with_suffix(".npz")) as data:
        cols = {k: data[k] for k in data.files}
    return cols, head
