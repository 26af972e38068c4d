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

import logging
from typing import Optional


class BridgeError(Exception):
    """Base exception for fsbridge failures."""
    default_code = 1

    def __init__(self, error: str, details: Optional[str] = None, code: Optional[int] = None):
        self.code = self.default_code if code is None else code
        self.error = error
        self.details = details
        super().__init__(f"{self.code}: {error} - {details or 'No details provided'}")

    def to_dict(self) -> dict:
        return {
            'code': self.code,
            'error': self.error,
            'details': self.details,
            'kind': type(self).__name__,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'BridgeError':
        kinds = {sub.__name__: sub for sub in _all_subclasses(BridgeError)}
        kind = kinds.get(data.get('kind', ''), cls)
        return kind(
            error=data.get('error', 'Unknown Error'),
            details=data.get('details'),
            code=data.get('code'),
        )


class ConfigError(BridgeError):
    """Invalid or unknown configuration (CLI exit code 2)."""
    default_code = 2


class NumericalError(BridgeError):
    """Non-finite values or failed factorizations (CLI exit code 3)."""
    default_code = 3

    def __init__(self, error: str, details: Optional[str] = None, code: Optional[int] = None,
                 step: Optional[int] = None):
        self.step = step
        if step is not None:
            details = f"step {step}: {details}" if details else f"step {step}"
        super().__init__(error, details, code)


class InvalidParameterError(BridgeError, ValueError):
    """A precondition on a caller-supplied value does not hold."""
    default_code = 4


class GridMismatchError(InvalidParameterError):
    """Fields or eigen-systems live on incompatible grids."""


class SerializationError(BridgeError):
    """A stored document cannot be read back (bad version, bad payload)."""
    default_code = 5


class InsufficientSamplesError(InvalidParameterError):
    """Fewer samples than a statistic requires."""


def _all_subclasses(cls):
    for sub in cls.__subclasses__():
        yield sub
        yield from _all_subclasses(sub)


def log_error(logger: logging.Logger, error: BridgeError, context: str = "fsbridge") -> None:
    logger.error(
        f"{context} error: {error.code}\n"
        f"Error Message: {error.error}\n"
        f"Details: {error.details or 'No details provided'}"
    )
