from typing import Optional

import pytest

from relevance_grpo.exceptions import RelevanceGrpoError, ValidationError
from relevance_grpo.settings import (
    DictSource,
    EnvVarSource,
    NotFound,
    OverrideSource,
    Setting,
    Settings,
    sources,
)

from ..utils import Match


def test_get_source_fail_for_unknown_source():
    with pytest.raises(sources.NoSuitableSourceFound):
        assert sources.get_source('/test/dummy')


#
# StringSourceMixin
#


def test_string_source_mixin_convert_int_value():
    assert sources.StringSourceMixin.convert_value('10', int) == 10


def test_string_source_mixin_convert_float_value():
    assert sources.StringSourceMixin.convert_value('10.25', float) == 10.25


@pytest.mark.parametrize('true_str', ('true', 'True', 'TRUE', '1', 'yes'))
def test_string_source_mixin_convert_true_value(true_str):
    assert sources.StringSourceMixin.convert_value(true_str, bool) is True


@pytest.mark.parametrize('false_str', ('false', 'False', 'FALSE', '0', 'no'))
def test_string_source_mixin_convert_false_value(false_str):
    assert sources.StringSourceMixin.convert_value(false_str, bool) is False


@pytest.mark.parametrize('null_str', ('null', 'None', ''))
def test_string_source_mixin_convert_optional_null(null_str):
    assert sources.StringSourceMixin.convert_value(null_str, Optional[float]) is None


def test_string_source_mixin_convert_optional_value():
    assert sources.StringSourceMixin.convert_value('0.75', Optional[float]) == 0.75


def test_string_source_mixin_keeps_str_value():
    assert sources.StringSourceMixin.convert_value('null', str) == 'null'


#
# Dict source
#


def S(name: str, type_hint=str) -> Setting:
    s = Setting(type_hint=type_hint)
    s.__set_name__(s, name)
    return s


def test_get_source_for_dict_retuns_dict_source():
    dsrc = sources.get_source({'a': 10})
    assert isinstance(dsrc, sources.DictSource)


def test_dict_source_two_levels_nested_dicts_values():
    dsrc = sources.get_source({'a': 10, 'c': {'d': 30}})
    assert dsrc.read(S('a')) == 10
    assert dsrc.read(S('c')) == {'d': 30}
    assert dsrc.read(S('d'), parents=('c',)) == 30


def test_dict_source_read_non_existing_setting_returns_not_found():
    dsrc = sources.get_source({})
    assert dsrc.read(S('NOT_EXISTS')) == NotFound


def test_dict_source_missing_parent_returns_not_found():
    dsrc = sources.get_source({'grpo': 1})
    assert dsrc.read(S('EPSILON'), parents=('GRPO',)) == NotFound


#
# Override source
#


def test_override_source_scalar_values():
    osrc = OverrideSource(
        ['grpo.epsilon=0.1', 'GRPO.STEPS = 12', 'dataset.balance=false']
    )
    assert osrc.read(S('EPSILON', float), ('GRPO',)) == 0.1
    assert osrc.read(S('STEPS', int), ('grpo',)) == 12
    assert osrc.read(S('BALANCE', bool), ('DATASET',)) is False


def test_override_source_non_scalar_parsed_as_yaml():
    osrc = OverrideSource(['eval.betas=[0.0, 1.0]', 'dataset.gate=null'])
    assert osrc.read(S('BETAS', tuple), ('EVAL',)) == [0.0, 1.0]
    assert osrc.read(S('GATE', Optional[float]), ('DATASET',)) is None


def test_override_source_not_found():
    assert OverrideSource([]).read(S('SEED', int)) == NotFound


@pytest.mark.parametrize('assignment', ('grpo.epsilon', '=0.1', ''))
def test_override_source_rejects_malformed_assignment(assignment):
    with pytest.raises(RelevanceGrpoError, match='expected key=value'):
        OverrideSource([assignment])


def test_override_source_unknown_keys():
    osrc = OverrideSource(['grpo.epsilon=0.1', 'grpo.epsilom=0.1'])
    assert osrc.unknown_keys(['GRPO.EPSILON', 'GRPO.BETA']) == ['grpo.epsilom']


def test_update_with_unconvertible_value_raises_validation_error():
    class GrpoSettings(Settings):
        STEPS: int = 400

    class RunSettings(Settings):
        GRPO = GrpoSettings()

    with pytest.raises(ValidationError, match='GRPO.STEPS: cannot read value'):
        RunSettings().update(OverrideSource(['grpo.steps=many']))


#
# Updating
#


class GrpoSettings(Settings):
    STEPS: int = 400
    EPSILON: float = 0.2


class RunSettings(Settings):
    SEED: int = 0
    GRPO = GrpoSettings()


def test_update_without_settings_does_not_read(mocker):
    class EmptySettings(Settings):
        pass

    source = mocker.Mock(spec=sources.Source)

    EmptySettings().update(source)
    source.read.assert_not_called()


def test_later_updates_win():
    run_settings = RunSettings()
    run_settings.update(DictSource({'grpo': {'steps': 360}}, label='preset'))
    run_settings.update(OverrideSource(['grpo.steps=12']))

    assert run_settings.GRPO.STEPS == 12
    assert run_settings.origins() == {'GRPO.STEPS': '--set'}


def test_update_reads_every_leaf_with_its_parents(mocker):
    source = mocker.Mock(spec=sources.Source)
    source.label = 'mock'
    source.read = mocker.MagicMock(return_value=NotFound)

    RunSettings().update(source)

    source.read.assert_any_call(Match(lambda s: s.name == 'SEED'), ())
    source.read.assert_any_call(Match(lambda s: s.name == 'STEPS'), ('GRPO',))
    source.read.assert_any_call(Match(lambda s: s.name == 'EPSILON'), ('GRPO',))
    assert source.read.call_count == 3


def test_update_nested_setting_from_source(mocker):
    source = mocker.Mock(spec=sources.Source)
    source.label = 'mock'
    source.read = mocker.MagicMock(
        side_effect=lambda s, parents: 20 if s.name == 'STEPS' else NotFound
    )

    run_settings = RunSettings().update(source)

    assert run_settings.is_valid()
    assert run_settings.GRPO.STEPS == 20
    assert run_settings.origins() == {'GRPO.STEPS': 'mock'}


def test_environment_source_label():
    assert EnvVarSource('RELGRPO').label == 'environment (RELGRPO_*)'
    assert EnvVarSource('').label == 'environment'
