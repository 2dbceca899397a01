import importlib

import numpy as np
import pytest

from autopool import _kernels_py, evaluation, pooling


def _available_kernels():
    mods = [_kernels_py]
    try:
        mods.append(importlib.import_module("autopool._kernels"))
    except ImportError:
        pass
    return mods


KERNELS = _available_kernels()


@pytest.fixture(params=KERNELS, ids=lambda k: k.NAME)
def backend(request, monkeypatch):
    """Run a test once per available kernel implementation."""
    monkeypatch.setattr(pooling, "kernels", request.param)
    monkeypatch.setattr(evaluation, "kernels", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
