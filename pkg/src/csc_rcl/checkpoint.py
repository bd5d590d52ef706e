"""Checkpoint container: a ``.npz`` of named float64 tensors plus a JSON header.

The header (array ``__meta__``) holds the format version, the backbone config,
the lexicon fingerprint and free-form training state. Optimizer tensors are
stored under ``opt/<slot>/<param>``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import BackboneConfig, TransformerBackbone, init_params_shapes

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, model: TransformerBackbone, lexicon_fingerprint: str, *,
                    optimizer_state: dict[str, dict[str, np.ndarray]] | None = None,
                    meta: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "lexicon_fingerprint": lexicon_fingerprint,
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    for slot, tensors in (optimizer_state or {}).items():
        for k, v in tensors.items():
            arrays[f"opt/{slot}/{k}"] = np.asarray(v)
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, lexicon_fingerprint: str | None = None
                    ) -> tuple[TransformerBackbone, dict[str, dict[str, np.ndarray]], dict]:
    """Return (model, optimizer_state, meta). Refuses a mismatched lexicon."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    with data:
        if "__meta__" not in data.files:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        if lexicon_fingerprint is not None and header["lexicon_fingerprint"] != lexicon_fingerprint:
            raise CheckpointError(
                f"{path}: lexicon fingerprint {header['lexicon_fingerprint']} does not match "
                f"the loaded lexicon ({lexicon_fingerprint})"
            )
        cfg = BackboneConfig(**header["config"])
        params, opt = {}, {}
        for key in data.files:
            if key.startswith("param/"):
                params[key[6:]] = data[key].astype(np.float64)
            elif key.startswith("opt/"):
                _, slot, name = key.split("/", 2)
                opt.setdefault(slot, {})[name] = data[key]
    for name, shape in init_params_shapes(cfg).items():
        if name not in params or params[name].shape != shape:
            raise CheckpointError(f"{path}: parameter {name} missing or mis-shaped")
    meta = dict(header.get("meta", {}))
    meta["lexicon_fingerprint"] = header["lexicon_fingerprint"]
    return TransformerBackbone(cfg, params), opt, meta
