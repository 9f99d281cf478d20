"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"HIPSCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header (sorted keys)
    ...       raw little-endian array data, in header["arrays"] order

Each ``header["arrays"]`` entry is ``[name, dtype, shape, offset, nbytes]``
with ``offset`` relative to the start of the array data.
"""

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from hipscreen.errors import HipScreenError
from hipscreen.nnet.unet import UNetConfig

MAGIC = b"HIPSCKPT"
FORMAT_VERSION = 1


class CheckpointError(HipScreenError):
    pass


@dataclass
class Checkpoint:
    unet_config: UNetConfig
    params: dict
    bn_state: dict
    adam_t: int = 0
    adam_state: dict = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = None
    train_config: dict = field(default_factory=dict)
    best_val_dsc: float = None
    format_version: int = FORMAT_VERSION

    def copy(self):
        return copy.deepcopy(self)


def _arrays(ckpt):
    out = []
    for prefix, group in (("param.", ckpt.params), ("bn.", ckpt.bn_state), ("", ckpt.adam_state)):
        for name in sorted(group):
            out.append((prefix + name, np.ascontiguousarray(group[name])))
    return out


def to_bytes(ckpt):
    arrays = _arrays(ckpt)
    entries, offset = [], 0
    for name, arr in arrays:
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        nbytes = le.nbytes
        entries.append([name, le.dtype.str, list(arr.shape), offset, nbytes])
        offset += nbytes
    header = {
        "unet_config": ckpt.unet_config.to_dict(),
        "adam_t": ckpt.adam_t,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "train_config": ckpt.train_config,
        "best_val_dsc": ckpt.best_val_dsc,
        "arrays": entries,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head]
    for (_, arr), entry in zip(arrays, entries):
        chunks.append(arr.astype(entry[1], copy=False).tobytes(order="C"))
    return b"".join(chunks)


def from_bytes(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, head_len = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(blob[start:start + head_len].decode("utf-8"))
    data = memoryview(blob)[start + head_len:]
    params, bn_state, adam_state = {}, {}, {}
    for name, dtype, shape, offset, nbytes in header["arrays"]:
        arr = np.frombuffer(data[offset:offset + nbytes], dtype=np.dtype(dtype)).reshape(shape)
        arr = arr.astype(np.dtype(dtype).newbyteorder("="), copy=True)
        if name.startswith("param."):
            params[name[len("param."):]] = arr
        elif name.startswith("bn."):
            bn_state[name[len("bn."):]] = arr
        else:
            adam_state[name] = arr
    return Checkpoint(
        unet_config=UNetConfig.from_dict(header["unet_config"]),
        params=params, bn_state=bn_state, adam_t=header["adam_t"], adam_state=adam_state,
        epoch=header["epoch"], rng_state=header["rng_state"],
        train_config=header["train_config"], best_val_dsc=header["best_val_dsc"],
        format_version=version)


def save(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
