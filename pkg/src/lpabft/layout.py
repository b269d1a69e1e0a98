"""Block-major packing of an int8 matrix.

The logical ``rows x cols`` matrix is cut into ``rb x cb`` tiles (zero padded
at the ragged edges). Tiles are stored column-panel first: all row tiles of
column panel 0, then panel 1, and so on; each tile is row-major. This is the
order the GEMM kernel walks, so one panel of B stays hot while A streams.
"""

import numpy as np


def grid(rows, cols, rb, cb):
    if rb < 1 or cb < 1:
        raise ValueError(f"block sizes must be positive, got {rb}x{cb}")
    return -(-rows // rb), -(-cols // cb)


def packed_length(rows, cols, rb, cb):
    nrb, ncb = grid(rows, cols, rb, cb)
    return nrb * ncb * rb * cb


def pack_blocks(logical, rb, cb):
    logical = np.asarray(logical, dtype=np.int8)
    rows, cols = logical.shape
    nrb, ncb = grid(rows, cols, rb, cb)
    padded = np.zeros((nrb * rb, ncb * cb), dtype=np.int8)
    padded[:rows, :cols] = logical
    return np.ascontiguousarray(padded.reshape(nrb, rb, ncb, cb).transpose(2, 0, 1, 3)).ravel()


def unpack_blocks(buf, rows, cols, rb, cb):
    nrb, ncb = grid(rows, cols, rb, cb)
    buf = np.asarray(buf, dtype=np.int8)
    if buf.size != nrb * ncb * rb * cb:
        raise ValueError(f"packed buffer has {buf.size} elements, expected {nrb * ncb * rb * cb}")
    tiles = buf.reshape(ncb, nrb, rb, cb).transpose(1, 2, 0, 3).reshape(nrb * rb, ncb * cb)
    return np.ascontiguousarray(tiles[:rows, :cols])


def packed_offset(r, c, rows, rb, cb):
    """Buffer index of logical element (r, c)."""
    nrb = -(-rows // rb)
    tile = (c // cb) * nrb + r // rb
    return tile * rb * cb + (r % rb) * cb + c % cb
