"""Plain-text tensor fixture files.

Format (UTF-8):
    line 1: space-separated shape extents
    line 2: space-separated row-major values

The format is deliberately primitive so any implementation can produce or
consume fixtures without a serialization library.
"""

import numpy as np

from .tensor import ShapeError, Tensor


def save_tensor(path, tensor):
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    shape = " ".join(str(e) for e in data.shape)
    values = " ".join(repr(float(v)) for v in data.reshape(-1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(shape + "\n" + values + "\n")


def load_tensor(path):
    with open(path, encoding="utf-8") as fh:
        shape_line = fh.readline().strip()
        value_line = fh.readline().strip()
    shape = tuple(int(e) for e in shape_line.split()) if shape_line else ()
    values = np.array([float(v) for v in value_line.split()] if value_line else [],
                      dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ShapeError(
            f"fixture {path}: {values.size} values for shape {shape}")
    return Tensor(values.reshape(shape))
