"""SRT4 raw tensor dumps and the indexed multi-tensor container.

SRT4 layout (little-endian)::

    0   4s   magic b"SRT4"
    4   u8   dtype code (see DTYPE_CODES)
    5   3x   reserved, zero
    8   4I   dims n, c, h, w
    24  ...  row-major payload

Lower-rank arrays are stored with leading unit dims, so a bias vector of
length k becomes (1, 1, 1, k).

Container layout::

    0   4s   magic b"SRTC"
    4   I    version (1)
    8   I    entry count
    12  ...  entries: H name length, name (utf-8), Q offset, Q byte length
    ...      SRT4 blobs at the recorded absolute offsets
"""
import struct

import numpy as np

MAGIC = b"SRT4"
CONTAINER_MAGIC = b"SRTC"
HEADER = struct.Struct("<4sB3x4I")
DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
    np.dtype("<i4"): 5,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def _as4(shape):
    if len(shape) > 4:
        raise FormatError(f"SRT4 holds at most 4 dims, got shape {shape}")
    return (1,) * (4 - len(shape)) + tuple(int(d) for d in shape)


def to_bytes(arr):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
    return HEADER.pack(MAGIC, DTYPE_CODES[dt], *_as4(arr.shape)) + payload


def from_bytes(buf, name="<buffer>"):
    if len(buf) < HEADER.size:
        raise FormatError(f"{name}: truncated header ({len(buf)} bytes)")
    magic, code, *dims = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if code not in CODE_DTYPES:
        raise FormatError(f"{name}: unknown dtype code {code}")
    dt = CODE_DTYPES[code]
    expected = HEADER.size + int(np.prod(dims)) * dt.itemsize
    if len(buf) != expected:
        raise FormatError(f"{name}: payload is {len(buf)} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype=dt, offset=HEADER.size).reshape(dims).copy()


def save(path, arr):
    with open(path, "wb") as f:
        f.write(to_bytes(arr))


def load(path):
    with open(path, "rb") as f:
        return from_bytes(f.read(), str(path))


def save_container(path, tensors):
    """Write a name -> array mapping into one indexed file."""
    blobs = [(name.encode("utf-8"), to_bytes(a)) for name, a in tensors.items()]
    table_size = 12 + sum(2 + len(n) + 16 for n, _ in blobs)
    parts = [struct.pack("<4sII", CONTAINER_MAGIC, 1, len(blobs))]
    offset = table_size
    for n, b in blobs:
        parts.append(struct.pack("<H", len(n)) + n + struct.pack("<QQ", offset, len(b)))
        offset += len(b)
    parts.extend(b for _, b in blobs)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_container(path):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated container")
    magic, version, count = struct.unpack_from("<4sII", buf)
    if magic != CONTAINER_MAGIC or version != 1:
        raise FormatError(f"{path}: not an SRTC v1 container")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
        off, size = struct.unpack_from("<QQ", buf, pos + 2 + nlen)
        pos += 2 + nlen + 16
        if off + size > len(buf):
            raise FormatError(f"{path}: entry {name!r} runs past end of file")
        out[name] = from_bytes(buf[off:off + size], f"{path}:{name}")
    return out
