"""Binary checkpoint container for named float32 arrays.

Layout (all little-endian):
    magic  b"CHDR"
    u32    version (currently 1)
    then per array:
        u16   name length, followed by the UTF-8 name
        u8    rank
        u32   extent per axis
        f32   payload, C order
Round-trips are bit-exact for finite and non-finite floats alike.
"""

import struct

import numpy as np

from ..errors import DataError

MAGIC = b"CHDR"
VERSION = 1


def save_arrays(path, arrays):
    """Write a name -> float32 ndarray map; insertion order is preserved."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype="<f4")
            if not a.flags.c_contiguous:  # ascontiguousarray would promote 0-d
                a = np.ascontiguousarray(a)
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name!r}")
            if a.ndim > 0xFF:
                raise ValueError(f"rank {a.ndim} exceeds format limit")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            for ext in a.shape:
                f.write(struct.pack("<I", ext))
            f.write(a.tobytes())


def load_arrays(path):
    """Read back a name -> float32 ndarray map; raises DataError on a corrupt
    or foreign file."""
    out = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw = f.read(4)
        if len(raw) != 4:
            raise DataError(f"{path}: truncated header")
        (version,) = struct.unpack("<I", raw)
        if version != VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        while True:
            head = f.read(2)
            if not head:
                break
            if len(head) != 2:
                raise DataError(f"{path}: truncated record header")
            (nlen,) = struct.unpack("<H", head)
            nb = f.read(nlen)
            if len(nb) != nlen:
                raise DataError(f"{path}: truncated parameter name")
            name = nb.decode("utf-8")
            rb = f.read(1)
            if len(rb) != 1:
                raise DataError(f"{path}: truncated rank for '{name}'")
            rank = rb[0]
            shape = []
            for _ in range(rank):
                eb = f.read(4)
                if len(eb) != 4:
                    raise DataError(f"{path}: truncated extents for '{name}'")
                shape.append(struct.unpack("<I", eb)[0])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = f.read(4 * count)
            if len(payload) != 4 * count:
                raise DataError(f"{path}: truncated payload for '{name}'")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
            out[name] = arr
    return out
