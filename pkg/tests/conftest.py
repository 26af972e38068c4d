import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to the beginning of sys.path if not already there
src_path = str(Path(__file__).parent.parent.absolute() / "src")
if src_path not in sys.path:
    sys.path.insert(0, src_path)

from fsbridge.models import ControlArch, GridSpec, OUBridgeParams  # noqa: E402
from fsbridge.spectral_basis import build_cosine_basis, build_kernel_basis_1d  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def line_grid():
    return GridSpec.line(32, -1.0, 1.0)


@pytest.fixture
def square_grid():
    return GridSpec.square(8, 0.0, 1.0)


@pytest.fixture
def cosine_eigs(line_grid):
    return build_cosine_basis(line_grid, 8)


@pytest.fixture
def kernel_eigs(line_grid):
    return build_kernel_basis_1d(line_grid, 0.2)


@pytest.fixture
def cosine_process(cosine_eigs):
    return OUBridgeParams(eigs=cosine_eigs, sigma=0.7, T=1.0)


@pytest.fixture
def kernel_process(kernel_eigs):
    return OUBridgeParams(eigs=kernel_eigs, sigma=1.0, T=1.0)


@pytest.fixture
def small_arch():
    return ControlArch.preset('small', 1)
