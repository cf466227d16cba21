import random

import factory
import numpy as np
import pytest
from factory import fuzzy

from relevance_grpo.exceptions import ValidationError
from relevance_grpo.policy.toy import ToyInstance
from relevance_grpo.settings import Validator
from relevance_grpo.trainer import SyntheticTask, ToyEnvironment, default_intents

seed = random.randint(1, 10 ** 9)
print(f"Running tests with seed: {seed:0>10}")
factory.random.reseed_random(seed)


@pytest.fixture
def v_int():
    return fuzzy.FuzzyInteger(-10 ** 10, 10 ** 10).fuzz()


@pytest.fixture
def v_str():
    return fuzzy.FuzzyText(length=100).fuzz()


@pytest.fixture
def rng():
    return np.random.default_rng(seed)


@pytest.fixture
def is_positive():
    def is_positive(val, **kwargs):
        if val <= 0:
            raise ValidationError('Value should be positive')

    return is_positive


@pytest.fixture
def ValidatorMock():
    class ValidatorMock(Validator):
        called_with_value = None

        def __call__(self, value, **kwargs):
            self.called_with_value = value

    return ValidatorMock


DOCUMENT = (
    'We queued for ramen in Ueno after the museum. The broth was rich and the '
    'noodles were firm. Prices were fair for Tokyo.'
)


@pytest.fixture
def document():
    return DOCUMENT


@pytest.fixture
def toy_instance():
    query = 'best ramen in ueno'
    return ToyInstance.build(query, DOCUMENT, default_intents(query))


@pytest.fixture
def synthetic_task():
    return SyntheticTask()


@pytest.fixture
def toy_env(synthetic_task):
    return ToyEnvironment.from_task(synthetic_task)
