import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from augmem import backend
from augmem.model_core import ModelConfig, SegmentSpec, init_weights

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def tiny_config(**changes):
    base = dict(
        d_model=16, n_heads=2, n_enc_layers=2, n_dec_layers=2, d_ffn=32, d_feat=12,
        vocab_size=24, conv_channels=2, segment=SegmentSpec(2, 4, 2), max_memory=3,
        predecision_chunk=4, waitk=2, max_target_len=40,
    )
    base.update(changes)
    return ModelConfig(**base)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def weights(cfg):
    return init_weights(cfg, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=backend.available())
def each_backend(request):
    with backend.use_backend(request.param) as name:
        yield name


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
