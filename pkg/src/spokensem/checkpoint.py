"""Versioned checkpoint container.

Layout (little-endian): ``b"SSCK"``, version (u8), header length (u32), a
UTF-8 JSON header, then the tensors as float32 in header order. The header
records model name, configuration, training state and a ``[name, shape]``
index. Tensor names are ``param/<key>``, ``adam_m/<key>`` and ``adam_v/<key>``.
"""
from dataclasses import asdict
import json
import os
import struct

import numpy as np

from .audio2vec import Audio2Vec
from .encoder import EncoderConfig
from .errors import ConfigError, FormatError
from .segmatch import AdversaryConfig, SegMatch

MAGIC = b"SSCK"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")
MODEL_NAMES = ("segmatch", "audio2vec-c", "audio2vec-u")


def save_checkpoint(path, model, optimizer=None, meta=None):
    tensors = [(f"param/{k}", v) for k, v in sorted(model.params.items())]
    adam_step = 0
    if optimizer is not None:
        adam_step = optimizer.step_count
        tensors += [(f"adam_m/{k}", v) for k, v in sorted(optimizer.m.items())]
        tensors += [(f"adam_v/{k}", v) for k, v in sorted(optimizer.v.items())]
    header = {
        "model": model.name,
        "encoder": asdict(model.encoder_config),
        "hyperparameters": model.hyperparameters(),
        "adam_step": adam_step,
        "meta": meta or {},
        "tensors": [[name, list(np.shape(v))] for name, v in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, v in tensors:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(header, tensors)`` with tensors as a name -> float32 array dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    offset = _PREFIX.size + hlen
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(data):
            raise FormatError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return header, tensors


def build_model(name, encoder_config, hyperparameters, params=None, seed=0):
    hp = dict(hyperparameters)
    if name == "segmatch":
        adv = hp.pop("adversary", None)
        adversary = AdversaryConfig(**adv) if adv else None
        return SegMatch(encoder_config, adversary=adversary, params=params, seed=seed, **hp)
    if name in ("audio2vec-c", "audio2vec-u"):
        return Audio2Vec(name[-1].upper(), encoder_config, params=params, seed=seed, **hp)
    raise ConfigError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")


def load_checkpoint(path):
    """Rebuild the model; returns ``(model, adam_state or None, header)``."""
    header, tensors = read_checkpoint(path)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = build_model(header["model"], EncoderConfig(**header["encoder"]),
                        header["hyperparameters"], params=params)
    template = build_model(header["model"], model.encoder_config, header["hyperparameters"])
    expected = {k: v.shape for k, v in template.params.items()}
    found = {k: v.shape for k, v in params.items()}
    if expected != found:
        raise ConfigError(f"{path}: parameter set does not match the stored configuration")
    m = {k[len("adam_m/"):]: v for k, v in tensors.items() if k.startswith("adam_m/")}
    state = None
    if m:
        v = {k[len("adam_v/"):]: t for k, t in tensors.items() if k.startswith("adam_v/")}
        state = {"step": header["adam_step"], "m": m, "v": v}
    return model, state, header
