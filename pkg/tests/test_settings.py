import importlib
import sys
import typing
from collections import namedtuple

import pytest

import relevance_grpo
from relevance_grpo.exceptions import ValidationError
from relevance_grpo.settings import (
    INVALID_SETTINGS,
    DictSource,
    Setting,
    Settings,
    Undefined,
)


def test_init_empty_settings():
    Settings()


def test_import_in_unsupported_python_fails(mocker):
    VersionInfo = namedtuple(
        'version_info', ['major', 'minor', 'micro', 'releaselevel', 'serial']
    )
    unsupported_python_version_info = VersionInfo(3, 7, 0, 'final', 0)

    mocker.patch.object(sys, 'version_info', unsupported_python_version_info)
    with pytest.raises(
        ImportError, match="Python 3.8 or higher is required by relevance_grpo"
    ):
        importlib.reload(relevance_grpo)


def test_setting_ctor(v_int):
    validators = (lambda x: x,)
    s = Setting(v_int, type_hint=int, validators=validators, doc="docstring")

    assert s.value == v_int
    assert s.__doc__ == "docstring"
    assert s.validators == validators
    assert s.type_hint is int


def test_settings_converted_from_attributes(v_int):
    class TestSettings(Settings):
        DEMO: int = v_int
        demo: str = v_int

    assert isinstance(TestSettings.DEMO, Setting)
    assert TestSettings.__dict__["DEMO"].type_hint is int
    assert isinstance(TestSettings.demo, int)


def test_setting_set(v_int):
    class TestSettings(Settings):
        DEMO: int = v_int

    class DevSettings(Settings):
        DEMO = v_int + 1

    assert TestSettings().DEMO != DevSettings().DEMO


def test_guessed_type():
    class TestSettings(Settings):
        BOOLEAN = True
        INT = 10
        FLOAT = 10.0
        LIST = list()
        TUPLE = tuple()
        STR = "str"
        DICT = dict()
        COMPLEX = 10 + 10j

    d = TestSettings.__dict__
    assert d["BOOLEAN"].type_hint is bool
    assert d["INT"].type_hint is int
    assert d["FLOAT"].type_hint is float
    assert d["LIST"].type_hint is list
    assert d["TUPLE"].type_hint is tuple
    assert d["STR"].type_hint is str
    assert d["DICT"].type_hint is dict
    assert d["COMPLEX"].type_hint is typing.Any


def test_classmethod_is_not_automatically_converted_setting():
    class TestSettings(Settings):
        @classmethod
        def CLASS_METH(cls):
            return cls

    assert not isinstance(TestSettings.CLASS_METH, Setting)


def test_method_is_not_automatically_converted_setting():
    class TestSettings(Settings):
        def TO_CONFIG(self):
            return {}

    assert not isinstance(TestSettings.__dict__['TO_CONFIG'], Setting)


def test_guess_setting_type_inherits_type_hint():
    class BaseSettings(Settings):
        DEBUG: typing.Optional[bool] = False

    class DevSettings(BaseSettings):
        DEBUG = True

    assert DevSettings.DEBUG.type_hint == BaseSettings.DEBUG.type_hint


def test_setting_is_validated():
    validate_called = False

    def validator(value, **_):
        nonlocal validate_called
        validate_called = True

    class TestSettings(Settings):
        MAX_SPEED = Setting(10, validators=(validator,))

    assert TestSettings().is_valid()
    assert validate_called


def test_non_validation_error_is_added_to_errors():
    def validator_with_exception(value, **_):
        raise Exception('Invalid value')

    class TestSettings(Settings):
        MAX_SPEED = Setting(10, validators=(validator_with_exception,))

    test_settings = TestSettings()
    assert not test_settings.is_valid()
    assert test_settings.errors == {'MAX_SPEED': ['Invalid value']}


def test_validation_error_caused_by_exception():
    class NoPasaranError(Exception):
        ...

    def validator_with_exception(value, **_):
        raise NoPasaranError()

    class TestSettings(Settings):
        MAX_SPEED = Setting(10, validators=(validator_with_exception,))

    with pytest.raises(ValidationError) as e:
        TestSettings().is_valid(raise_exception=True)

    assert isinstance(e.value.__cause__, NoPasaranError)


#
# ValueTypeValidator
#


def test_value_type_validator():
    class TestSettings(Settings):
        EPSILON: str = 10

    with pytest.raises(
        ValidationError,
        match=(
            "Expected value of type `<class 'str'>` "
            "got value of type `<class 'int'>`"
        ),
    ):
        TestSettings().is_valid(raise_exception=True)


def test_value_type_validator_accepts_none_for_optional():
    class TestSettings(Settings):
        THRESHOLD: typing.Optional[int] = None

    assert TestSettings().is_valid()


def test_value_type_validator_allows_undefined_for_any_type():
    class AppSettings(Settings):
        HOST: str = Undefined

    assert AppSettings().is_valid()


def test_settings_default_validators(is_positive):
    class TestSettings(Settings):
        default_validators = (is_positive,)

        MIN_STEPS = 0
        MAX_STEPS = 10

    test_settings = TestSettings()
    assert not test_settings.is_valid()
    assert test_settings.errors['MIN_STEPS'] == ['Value should be positive']
    assert 'MAX_STEPS' not in test_settings.errors


#
# Nested settings
#


def test_settings_cannot_init_with_value():
    class TestSettings(Settings):
        ...

    with pytest.raises(AssertionError):
        TestSettings(value=10)


def test_nested_setting_values():
    class ClipSettings(Settings):
        EPSILON = 0.2

    class GrpoSettings(Settings):
        GROUP_SIZE = 16
        CLIP = ClipSettings()

    class RunSettings(Settings):
        GRPO = GrpoSettings()

    run_settings = RunSettings()
    assert run_settings.is_valid()
    assert run_settings.GRPO.GROUP_SIZE == 16
    assert run_settings.GRPO.CLIP.EPSILON == 0.2


def test_nested_settings_are_not_shared_between_instances():
    class GrpoSettings(Settings):
        GROUP_SIZE = 16

    class RunSettings(Settings):
        GRPO = GrpoSettings()

    first, second = RunSettings(), RunSettings()
    first.update({'grpo': {'group_size': 4}})

    assert first.GRPO.GROUP_SIZE == 4
    assert second.GRPO.GROUP_SIZE == 16


def test_nested_settings_validation_raises():
    class BackendSettings(Settings):
        MODEL: str = 10

    class RunSettings(Settings):
        BACKEND = BackendSettings()

    with pytest.raises(
        ValidationError,
        match=(
            "BACKEND: MODEL: Expected value of type `<class 'str'>` "
            "got value of type `<class 'int'>`"
        ),
    ):
        RunSettings().is_valid(raise_exception=True)


def test_nested_triple_nested_validation_errors():
    class ClipSettings(Settings):
        NAME: str = 10

    class GrpoSettings(Settings):
        CLIP = ClipSettings()

    class RunSettings(Settings):
        GRPO = GrpoSettings()

    run_settings = RunSettings()
    assert not run_settings.is_valid()
    # fmt: off
    assert run_settings.errors == {'GRPO': [{'CLIP': [{'NAME': [
        "Expected value of type `<class 'str'>` got value of type `<class 'int'>`"
    ]}]}]}
    # fmt: on


#
# Cross-field validation
#


def test_validate_called():
    validate_called = False

    class TestSettings(Settings):
        def validate(self):
            nonlocal validate_called
            validate_called = True

    assert TestSettings().is_valid()
    assert validate_called


def test_validate_not_called_when_a_setting_is_invalid():
    class TestSettings(Settings):
        STEPS: int = 'many'

        def validate(self):
            raise AssertionError('should not be called')

    assert not TestSettings().is_valid()


def test_error_preserved_when_validate_raises_string_error():
    class TestSettings(Settings):
        def validate(self):
            raise ValidationError('there was an error XXXX')

    test_settings = TestSettings()
    assert not test_settings.is_valid()
    assert test_settings.errors == {INVALID_SETTINGS: ['there was an error XXXX']}


def test_validate_error_keyed_by_setting_name():
    class TestSettings(Settings):
        KIND = 'http'
        MODEL = ''

        def validate(self):
            if self.KIND == 'http' and not self.MODEL:
                raise ValidationError({'MODEL': 'required when kind is http'})

    test_settings = TestSettings()
    assert not test_settings.is_valid()
    assert test_settings.errors == {'MODEL': ['required when kind is http']}


def test_error_raised_when_validate_raises_settings_validation_error():
    class TestSettings(Settings):
        def validate(self):
            raise ValidationError('there was an error XXXX')

    with pytest.raises(ValidationError, match='there was an error XXXX'):
        TestSettings().is_valid(raise_exception=True)


def test_settings_errors_readonly():
    class TestSettings(Settings):
        ...

    with pytest.raises(AttributeError):
        TestSettings().errors = {}


#
# Update and export
#


def test_update_is_case_insensitive():
    class GrpoSettings(Settings):
        EPSILON = 0.2

    class RunSettings(Settings):
        GRPO = GrpoSettings()

    run_settings = RunSettings().update({'Grpo': {'epsilon': 0.1}})
    assert run_settings.GRPO.EPSILON == 0.1


def test_update_coerces_whole_numbers_to_float():
    class TestSettings(Settings):
        BETA: float = 0.01

    test_settings = TestSettings().update({'beta': 1})
    assert test_settings.BETA == 1.0
    assert isinstance(test_settings.BETA, float)
    assert test_settings.is_valid()


def test_update_converts_lists_to_tuples():
    class TestSettings(Settings):
        BETAS: tuple = (0.0,)

    test_settings = TestSettings().update({'betas': [0.0, 1.0]})
    assert test_settings.BETAS == (0.0, 1.0)


def test_update_ignores_missing_keys():
    class TestSettings(Settings):
        STEPS = 400

    assert TestSettings().update({'other': 1}).STEPS == 400


def test_origins_track_the_source_of_each_value():
    class GrpoSettings(Settings):
        EPSILON = 0.2
        BETA = 0.01

    class RunSettings(Settings):
        SEED = 0
        GRPO = GrpoSettings()

    run_settings = RunSettings().update(
        DictSource({'grpo': {'beta': 0.05}}, label='run.yaml')
    )
    run_settings.SEED = 3

    assert run_settings.origins() == {'GRPO.BETA': 'run.yaml', 'SEED': 'assignment'}
    assert GrpoSettings.EPSILON.origin(run_settings.GRPO) == 'default'


def test_as_dict():
    class GrpoSettings(Settings):
        EPSILON = 0.2
        BETAS = (0.0, 1.0)

    class RunSettings(Settings):
        SEED = 0
        GRPO = GrpoSettings()

    assert RunSettings().as_dict() == {
        'seed': 0,
        'grpo': {'epsilon': 0.2, 'betas': [0.0, 1.0]},
    }


def test_setting_paths():
    class GrpoSettings(Settings):
        EPSILON = 0.2
        BETA = 0.01

    class RunSettings(Settings):
        SEED = 0
        GRPO = GrpoSettings()

    paths = sorted(RunSettings().setting_paths())
    assert paths == ['GRPO.BETA', 'GRPO.EPSILON', 'SEED']
