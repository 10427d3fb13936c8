"""Versioned model checkpoints.

A checkpoint is a single ``.npz`` archive:

* ``meta`` -- UTF-8 JSON (uint8 array) with ``format``, ``version``,
  ``config`` (the network config document), ``seed``, ``epochs_trained``,
  ``rng_state`` and ``layers`` (kind of each layer, in order);
* ``param/<name>`` -- parameter values, ``<name>`` as in
  ``Sequential.named_parameters`` (``"<index>.<kind>.weight|bias"``);
* ``mask/<name>`` -- fixed connectivity masks of sparse layers;
* ``duty/<index>`` -- duty cycles of each k-winners layer.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from ..rng import stream
from ..tensor import Sequential
from .configs import NetworkConfig
from .network import build_network

FORMAT = "sparsenet-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model: Sequential, config: NetworkConfig, seed: int,
                    epochs_trained: int = 0, rng_state: dict | None = None) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": config.to_dict(),
        "seed": seed,
        "epochs_trained": epochs_trained,
        "rng_state": rng_state,
        "layers": [layer.kind for layer in model.layers],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.value
        if p.mask is not None:
            arrays[f"mask/{name}"] = p.mask
    for i, layer in enumerate(model.layers):
        state = layer.state()
        if "duty_cycles" in state:
            arrays[f"duty/{i}"] = state["duty_cycles"]
    atomic_write_bytes(path, _npz_bytes(arrays))


def _npz_bytes(arrays: dict) -> bytes:
    """An ``np.load``-compatible archive with fixed entry timestamps.

    ``np.savez`` stamps entries with the wall clock, which would make two
    identical runs produce different bytes.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[key]), allow_pickle=False)
    return buf.getvalue()


def load_checkpoint(path, boost_at_inference: bool = True) -> tuple[Sequential, NetworkConfig, dict]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    with archive:
        if "meta" not in archive:
            raise CheckpointError(f"{path}: missing metadata")
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        config = NetworkConfig.from_dict(meta["config"])
        model = build_network(config, stream(0, "model"), boost_at_inference=boost_at_inference)
        if [layer.kind for layer in model.layers] != meta["layers"]:
            raise CheckpointError(f"{path}: layer layout does not match its config")
        for name, p in model.named_parameters():
            value = archive[f"param/{name}"]
            if value.shape != p.shape:
                raise CheckpointError(f"{path}: {name} has shape {value.shape}, expected {p.shape}")
            p.value = value.copy()
            p.grad = np.zeros_like(p.value)
            if f"mask/{name}" in archive:
                p.mask = archive[f"mask/{name}"].copy()
        for i, layer in enumerate(model.layers):
            if f"duty/{i}" in archive:
                layer.load_state({"duty_cycles": archive[f"duty/{i}"]})
    return model, config, meta
