"""Checkpoint container: a zip with a JSON manifest and raw float32 tensors.

Layout::

    manifest.json          format version, model config, vocabulary hash,
                           one entry per tensor (name, group, shape, frozen)
    tensors/<name>.f4      row-major little-endian float32
    vocab.txt, bpe.txt     the text codec (bpe.txt only in subword mode)
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError
from ..ndgrad import Tensor
from ..textproc import BpeModel, TextCodec, Vocabulary
from .params import ModelConfig, Parameters, group_of, parameter_shapes

FORMAT_VERSION = 1
_LE_F4 = np.dtype("<f4")


def vocab_digest(codec: TextCodec) -> str:
    h = hashlib.sha256(codec.vocab.dumps().encode("utf-8"))
    if codec.bpe is not None:
        h.update(b"\0" + codec.bpe.dumps().encode("utf-8"))
    return h.hexdigest()


def save_checkpoint(path: str | Path, params: Parameters, codec: TextCodec, extra: dict[str, Any] | None = None) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": params.config.to_dict(),
        "vocab_sha256": vocab_digest(codec),
        "vocab_mode": codec.mode,
        "tensors": [
            {"name": name, "group": group_of(name), "shape": list(t.shape), "frozen": not t.requires_grad}
            for name, t in params.items()
        ],
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=1))
            for name, t in params.items():
                zf.writestr(f"tensors/{name}.f4", np.ascontiguousarray(t.data, dtype=_LE_F4).tobytes())
            zf.writestr("vocab.txt", codec.vocab.dumps())
            if codec.bpe is not None:
                zf.writestr("bpe.txt", codec.bpe.dumps())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, dtype=np.float32) -> tuple[Parameters, TextCodec, dict]:
    """Returns ``(params, codec, manifest)``; every tensor shape is checked
    against the stored model config."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: missing or malformed manifest") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {manifest.get('format_version')}")
        config = ModelConfig.from_dict(manifest["model_config"])
        expected = parameter_shapes(config)
        names = [e["name"] for e in manifest["tensors"]]
        if sorted(names) != sorted(expected):
            raise DataError(f"{path}: tensor names do not match the model config")
        tensors, frozen = {}, set()
        for entry in manifest["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if shape != expected[name]:
                raise DataError(f"{path}: {name} has shape {shape}, config requires {expected[name]}")
            raw = zf.read(f"tensors/{name}.f4")
            if len(raw) != _LE_F4.itemsize * int(np.prod(shape)):
                raise DataError(f"{path}: {name} holds {len(raw)} bytes, expected shape {shape}")
            tensors[name] = Tensor(np.frombuffer(raw, dtype=_LE_F4).reshape(shape).astype(dtype))
            if entry.get("frozen"):
                frozen.add(group_of(name))
        vocab = Vocabulary.loads(zf.read("vocab.txt").decode("utf-8"))
        bpe = BpeModel.loads(zf.read("bpe.txt").decode("utf-8")) if "bpe.txt" in zf.namelist() else None
    codec = TextCodec(vocab, bpe)
    if vocab_digest(codec) != manifest["vocab_sha256"]:
        raise DataError(f"{path}: vocabulary does not match its recorded hash")
    if len(vocab) != config.vocab_size:
        raise DataError(f"{path}: vocabulary has {len(vocab)} ids, config says {config.vocab_size}")
    return Parameters(config, tensors, frozen), codec, manifest
