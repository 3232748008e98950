import numpy as np
import pytest

from drg.autodiff import reset_tape, set_default_dtype


@pytest.fixture(autouse=True)
def _fresh_tape():
    reset_tape()
    set_default_dtype(np.float32)
    yield
    reset_tape()
    set_default_dtype(np.float32)
