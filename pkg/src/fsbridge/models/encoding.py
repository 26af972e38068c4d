import base64
from typing import Sequence

import numpy as np

from fsbridge.errors import SerializationError


def encode_f64(array: np.ndarray) -> str:
    """Row-major little-endian float64 bytes, base64 encoded."""
    data = np.ascontiguousarray(array, dtype='<f8')
    return base64.b64encode(data.tobytes(order='C')).decode('ascii')


def decode_f64(text: str, shape: Sequence[int]) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, TypeError) as exc:
        raise SerializationError("Invalid base64 payload", str(exc))
    array = np.frombuffer(raw, dtype='<f8').astype(np.float64)
    expected = int(np.prod(shape)) if len(shape) else 1
    if array.size != expected:
        raise SerializationError(
            "Payload size mismatch",
            f"expected {expected} float64 values for shape {tuple(shape)}, got {array.size}",
        )
    return array.reshape(tuple(shape))


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any float64."""
    return format(float(value), '.17g')
