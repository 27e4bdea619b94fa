import numpy as np
import pytest
import torch

from fabrictouch import synth

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def specs():
    return synth.well_separated(8, seed=0)


@pytest.fixture(scope="session")
def small_trial(specs):
    return synth.generate_trial(specs[3], 240, np.random.default_rng(7), session_tag="day1", trial_id="t-small")
