from . import controller
from . import models
from importlib.metadata import version, PackageNotFoundError
from fsbridge.models import (
    GridSpec,
    GridField,
    SpectralField,
    FieldSet,
    EigenSystem,
    OUBridgeParams,
    StepScheme,
    ControlParams,
)
from fsbridge.errors import BridgeError

try:
    __version__ = version("fsbridge")
except PackageNotFoundError:  # pragma: no cover
    # Package is not installed
    __version__ = "unknown"

__all__ = [
    'controller',
    'models',
    '__version__',
    'BridgeError',
    'GridSpec',
    'GridField',
    'SpectralField',
    'FieldSet',
    'EigenSystem',
    'OUBridgeParams',
    'StepScheme',
    'ControlParams',
]
