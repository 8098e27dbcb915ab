"""Bit-exact reader and writer for the MNIST IDX container.

Layout (all header integers big-endian):

    bytes 0-1   zero
    byte  2     element type code (0x08 = unsigned byte)
    byte  3     number of dimensions
    then one uint32 per dimension, then the row-major payload.

MNIST images therefore carry magic 0x00000803 and labels 0x00000801.
Gzipped files (``.gz``) are handled transparently.
"""
import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

_TYPE_CODES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IDXFormatError(ValueError):
    """Raised for truncated, corrupt or unexpected IDX files."""


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def parse_idx(raw: bytes, expected_magic: int | None = None) -> np.ndarray:
    if len(raw) < 4:
        raise IDXFormatError("file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise IDXFormatError(f"wrong magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if raw[0] != 0 or raw[1] != 0 or raw[2] not in _TYPE_CODES:
        raise IDXFormatError(f"bad IDX magic 0x{magic:08x}")
    dtype = _TYPE_CODES[raw[2]]
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IDXFormatError("truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(shape)) if ndim else 1
    payload = raw[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise IDXFormatError(
            f"payload holds {len(payload)} bytes, header promises {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    try:
        with _open(path) as fh:
            raw = fh.read()
    except (OSError, EOFError) as exc:
        raise IDXFormatError(f"cannot read {path}: {exc}") from exc
    return parse_idx(raw, expected_magic)


def write_idx(fh, array: np.ndarray) -> None:
    """Write ``array`` to an open binary file object in IDX layout."""
    array = np.asarray(array)
    for code, dtype in _TYPE_CODES.items():
        if dtype.kind == array.dtype.kind and dtype.itemsize == array.dtype.itemsize:
            break
    else:
        raise TypeError(f"no IDX type code for dtype {array.dtype}")
    fh.write(bytes([0, 0, code, array.ndim]))
    fh.write(struct.pack(f">{array.ndim}I", *array.shape))
    fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def find_mnist_files(directory) -> tuple[Path, Path]:
    """Locate the training image/label files inside an MNIST directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"MNIST directory not found: {directory}")
    found = []
    for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (directory / name).exists():
                found.append(directory / name)
                break
        else:
            raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")
    return found[0], found[1]


def load_mnist(directory) -> tuple[np.ndarray, np.ndarray]:
    """Return (uint8 images of shape (n, 28, 28), int64 labels of shape (n,))."""
    img_path, lbl_path = find_mnist_files(directory)
    images = read_idx(img_path, IMAGES_MAGIC)
    labels = read_idx(lbl_path, LABELS_MAGIC)
    if images.ndim != 3:
        raise IDXFormatError(f"{img_path}: expected 3 dimensions, got {images.ndim}")
    if len(images) != len(labels):
        raise IDXFormatError(f"{len(images)} images but {len(labels)} labels")
    return images, labels.astype(np.int64)
