'''
MIT License

Copyright (c) 2024 fsbridge contributors

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
'''

"""Deterministic RNG streams.

Every random draw in the package comes from a ``numpy.random.Generator``
derived from one base seed. Named subsystems and per-path streams are
derived by hashing, so the same (seed, name) or (seed, path index) always
replays the same stream regardless of how many other streams exist.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict

import numpy as np


def _hash_to_u64(text: str) -> int:
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big", signed=False)


def derive_seed(base_seed: int, name: str) -> int:
    """Map (base seed, stream name) to a child seed."""
    if not name:
        raise ValueError("stream name must be non-empty")
    return _hash_to_u64(f"{base_seed}:{name}")


def path_rng(base_seed: int, path_index: int) -> np.random.Generator:
    """Generator for one simulated path: (seed, path index) -> stream."""
    if path_index < 0:
        raise ValueError("path index must be non-negative")
    return np.random.default_rng(_hash_to_u64(f"{base_seed}:path:{path_index}"))


@dataclass
class RNGStreams:
    """Named, persistent child generators of one base seed."""
    base_seed: int
    _streams: Dict[str, np.random.Generator] = field(default_factory=dict, init=False, repr=False)

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = np.random.default_rng(derive_seed(self.base_seed, name))
        return self._streams[name]

    def reset(self) -> None:
        self._streams.clear()
