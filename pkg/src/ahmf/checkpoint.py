"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"AHMF"
    version u32      1
    config  u32 scale, u32 depth, u32 width, u8 gru_shared,
            u32 guidance_channels, u8 fusion_code, u8 collab_code
    count   u32      number of model tensor records
    record* u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
            raw little-endian float32 data

An optional optimizer section follows the model records: u32 count, the
same record encoding with names suffixed ".adam_m" / ".adam_v", then a
u64 step counter.  Round-trips are bit-exact.
"""

import struct

import numpy as np

from .model import COLLAB_KINDS, FUSION_KINDS, ModelConfig, build

MAGIC = b"AHMF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_record(name, arr):
    nb = name.encode("utf-8")
    if len(nb) > 0xFFFF:
        raise CheckpointError(f"tensor name too long: {name!r}")
    if arr.dtype != np.float32:
        raise CheckpointError(
            f"checkpoints store float32 tensors; {name!r} is {arr.dtype}"
        )
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).astype("<f4").tobytes()


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self):
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode("utf-8")
        (ndim,) = self.unpack("<B")
        dims = self.unpack(f"<{ndim}I")
        count = int(np.prod(dims)) if ndim else 1
        raw = self.take(4 * count)
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        return name, arr

    @property
    def exhausted(self):
        return self.pos >= len(self.data)


def save_checkpoint(path, model, moments=None):
    """Write model parameters and optionally (moment dict, step)."""
    cfg = model.cfg
    blob = [MAGIC, struct.pack("<I", VERSION)]
    blob.append(
        struct.pack(
            "<IIIBIBB",
            cfg.scale,
            cfg.depth,
            cfg.width,
            int(cfg.gru_shared),
            cfg.guidance_channels,
            FUSION_KINDS.index(cfg.fusion),
            COLLAB_KINDS.index(cfg.collab),
        )
    )
    items = list(model.store.items())
    blob.append(struct.pack("<I", len(items)))
    for name, t in items:
        blob.append(_pack_record(name, t.data))
    if moments is not None:
        table, step = moments
        blob.append(struct.pack("<I", 2 * len(table)))
        for name, (m, v) in table.items():
            blob.append(_pack_record(name + ".adam_m", m))
            blob.append(_pack_record(name + ".adam_v", v))
        blob.append(struct.pack("<Q", step))
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (model, moments-or-None)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    scale, depth, width, shared, channels, fus, col = r.unpack("<IIIBIBB")
    try:
        cfg = ModelConfig(
            scale=scale,
            depth=depth,
            width=width,
            guidance_channels=channels,
            gru_shared=bool(shared),
            fusion=FUSION_KINDS[fus],
            collab=COLLAB_KINDS[col],
        )
    except IndexError as exc:
        raise CheckpointError(f"{path}: invalid config record") from exc

    (count,) = r.unpack("<I")
    tensors = dict(r.record() for _ in range(count))
    model = build(cfg, seed=0)
    stored = set(tensors)
    expected = set(model.store.names())
    if stored != expected:
        missing = sorted(expected - stored)[:4]
        extra = sorted(stored - expected)[:4]
        raise CheckpointError(
            f"{path}: tensor names do not match the architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, t in model.store.items():
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data = np.ascontiguousarray(arr)

    moments = None
    if not r.exhausted:
        (ocount,) = r.unpack("<I")
        raw = dict(r.record() for _ in range(ocount))
        (step,) = r.unpack("<Q")
        table = {}
        for name in model.store.names():
            try:
                table[name] = (raw[name + ".adam_m"], raw[name + ".adam_v"])
            except KeyError as exc:
                raise CheckpointError(
                    f"{path}: optimizer section misses moments for {name}"
                ) from exc
        moments = (table, step)
    return model, moments
