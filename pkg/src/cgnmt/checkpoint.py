"""Named-tensor checkpoint container.

Binary layout (all integers little-endian):
    magic "CGNMT1"
    per tensor, sorted by name:
        u64 name length, UTF-8 name,
        u64 rank, rank x u64 dims,
        float32 little-endian values.
Round-trips are bit-exact for float32 data.
"""

import struct

import numpy as np

MAGIC = b"CGNMT1"


class CheckpointError(IOError):
    pass


def save_tensors(path, tensors):
    """Write a dict of name -> array (or Tensor) as a checkpoint archive."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(tensors):
            arr = tensors[name]
            data = np.asarray(getattr(arr, "data", arr), dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(data).tobytes())


def load_tensors(path):
    """Read a checkpoint archive back into a dict of name -> float32 array."""
    out = {}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint archive")
        while True:
            head = fh.read(8)
            if not head:
                break
            (name_len,) = struct.unpack("<Q", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise CheckpointError(f"{path}: truncated record for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    return out
