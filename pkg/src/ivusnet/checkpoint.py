"""Binary checkpoint files.

Layout (all integers little-endian):
    magic "IVN1" | version u32 | config length u32 | config bytes
    | tensor count u32
    | per tensor: name length u16, name bytes, ndim u8, ndim x u32 dims,
      prod(dims) x f32 values, row-major

The config block is UTF-8 ``key=value`` lines describing the architecture.
Saved tensors cover every trainable parameter plus the batch-norm running
statistics, so a round trip reproduces inference output bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import ArchConfig, IvusNet

MAGIC = b"IVN1"
VERSION = 1


def _config_block(cfg):
    lines = [
        "block_depths=" + ",".join(str(d) for d in cfg.block_depths),
        f"main_convs_per_block={cfg.main_convs_per_block}",
        f"input_channels={cfg.input_channels}",
        f"refine={int(cfg.refine)}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config(blob):
    kv = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, val = line.partition("=")
        kv[key.strip()] = val.strip()
    try:
        return ArchConfig(
            block_depths=tuple(int(d) for d in kv["block_depths"].split(",")),
            main_convs_per_block=int(kv["main_convs_per_block"]),
            input_channels=int(kv["input_channels"]),
            refine=bool(int(kv["refine"])),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad config block in checkpoint: {exc}") from exc


def _all_tensors(net):
    entries = [(name, p.data) for name, p in net.named_parameters().items()]
    entries += list(net.named_buffers().items())
    return entries


def save_checkpoint(net, path):
    """Write the network's parameters and running stats to ``path``."""
    cfg_blob = _config_block(net.cfg)
    entries = _all_tensors(net)
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(cfg_blob)), cfg_blob,
             struct.pack("<I", len(entries))]
    for name, arr in entries:
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at byte "
                f"{self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]


def load_checkpoint(path):
    """Read a checkpoint; returns ``(network, arch_config)``.

    Raises FormatError (with the byte offset) on a bad magic, an unsupported
    version, truncation, or tensors whose shapes do not match the
    architecture implied by the config block.
    """
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    cfg_len = r.u32("config length")
    cfg = _parse_config(r.take(cfg_len, "config block"))
    count = r.u32("tensor count")

    loaded = {}
    for _ in range(count):
        name_len = r.u16("name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        ndim = r.u8("ndim")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"dims of {name}"))
        n_vals = int(np.prod(dims)) if ndim else 1
        raw = r.take(4 * n_vals, f"values of {name}")
        loaded[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.blob):
        raise FormatError(f"trailing garbage after byte {r.pos}")

    net = IvusNet(cfg, seed=0)
    expected = dict(_all_tensors(net))
    if set(loaded) != set(expected):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise FormatError(f"tensor set mismatch: missing {missing[:3]}, "
                          f"unexpected {extra[:3]}")
    params = net.named_parameters()
    buffers = net.named_buffers()
    for name, arr in loaded.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise FormatError(
                f"tensor {name}: file shape {arr.shape} does not match "
                f"config-implied shape {target.shape}")
        target[...] = arr
    return net, cfg
