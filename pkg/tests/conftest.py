import os

# Allow up to 8 worker threads regardless of visible cores; must be set
# before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
