"""Parameter checkpoints: one AVT1 tensor file per parameter plus ``index.json``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .model import Head, ModelSpec, build_head
from .trackdata import CorruptedCorpusError, read_tensor, write_tensor

INDEX_NAME = "index.json"


def _file_name(param_name: str) -> str:
    return param_name.replace("/", "_") + ".avt"


def save_checkpoint(head: Head, directory, extra: dict | None = None) -> dict:
    """Write every parameter (as float32) and an index with the model spec.

    The index is written with sorted keys and no timestamps, so the same
    parameters always give the same bytes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files, crcs = {}, {}
    for name, p in head.named_params().items():
        fname = _file_name(name)
        crcs[name] = write_tensor(directory / fname, p.data)
        files[name] = fname
    index = {
        "version": __version__,
        "spec": {
            "head": head.spec.head,
            "hv": head.spec.hv,
            "wv": head.spec.wv,
            "ha": head.spec.ha,
            "d": head.spec.d,
            "pe_cross": head.spec.pe_cross,
            "pe_self": head.spec.pe_self,
        },
        "files": files,
        "crc32s": crcs,
        "extra": extra or {},
    }
    (directory / INDEX_NAME).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def load_checkpoint(directory) -> tuple[Head, dict]:
    """Rebuild the head from the stored spec and copy the stored values in."""
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.is_file():
        raise FileNotFoundError(f"no checkpoint index at {index_path}")
    index = json.loads(index_path.read_text())
    spec = ModelSpec(**index["spec"])
    head = build_head(spec, 0)
    params = head.named_params()
    missing = set(params) ^ set(index["files"])
    if missing:
        raise CorruptedCorpusError(f"checkpoint parameter names differ from the model: {sorted(missing)}")
    for name, p in params.items():
        arr = read_tensor(directory / index["files"][name], index["crc32s"][name])
        if arr.shape != p.data.shape:
            raise CorruptedCorpusError(f"{name}: stored shape {arr.shape} != model shape {p.data.shape}")
        p.data = arr.astype(np.float64)
    return head, index
