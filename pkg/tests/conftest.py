import numpy as np
import pytest

from semvid.fixtures import make_test_clip
from semvid.ldpc import make_ldpc_code
from semvid.video import Gop


@pytest.fixture(scope="session")
def reference_clip():
    return make_test_clip()


@pytest.fixture(scope="session")
def reference_gop(reference_clip):
    return Gop(reference_clip.frames)


@pytest.fixture(scope="session")
def small_clip():
    return make_test_clip(width=64, height=64, n_frames=8)


@pytest.fixture(scope="session")
def small_gop(small_clip):
    return Gop(small_clip.frames)


@pytest.fixture(scope="session")
def ldpc_code():
    return make_ldpc_code(512, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
