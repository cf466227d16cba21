import json
import os

import pytest

from relevance_grpo.config import (
    PRESETS,
    DatasetSettings,
    RunSettings,
    load_run_config,
)
from relevance_grpo.exceptions import RelevanceGrpoError, ValidationError
from relevance_grpo.grpo import GrpoConfig
from relevance_grpo.policy.http import HttpBackend
from relevance_grpo.rollout import get_variant


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in list(os.environ):
        if name.startswith('RELGRPO_'):
            monkeypatch.delenv(name)


def messages(excinfo):
    return excinfo.value.field_messages()


def test_defaults_are_valid():
    settings = load_run_config()

    assert settings.BACKEND.KIND == 'toy'
    assert settings.GRPO.to_config() == GrpoConfig(
        epsilon=0.2,
        beta=0.01,
        group_size=16,
        learning_rate=4.0,
        batch_size=8,
        steps=400,
    )
    assert settings.REWARD.LAMBDA == 0.0
    assert settings.ABLATION.to_variant() == get_variant('full')


def test_appendix_preset_loads_verbatim():
    settings = load_run_config('paper-appendix-b')

    assert settings.GRPO.GROUP_SIZE == 16
    assert settings.GRPO.LEARNING_RATE == 5e-7
    assert settings.GRPO.BATCH_SIZE == 32
    assert settings.GRPO.STEPS == 360
    assert settings.REWARD.LAMBDA == 0.0


def test_every_preset_is_valid():
    for name in PRESETS:
        assert load_run_config(name).is_valid()


def test_unknown_preset():
    with pytest.raises(ValidationError) as e:
        load_run_config('paper-appendix-z')

    assert messages(e)[0].startswith('preset: unknown preset `paper-appendix-z`')


def test_precedence_preset_file_environment_override(tmp_path, monkeypatch):
    config_file = tmp_path / 'run.yaml'
    config_file.write_text('grpo:\n  epsilon: 0.15\n  beta: 0.05\n  group_size: 8\n')
    monkeypatch.setenv('RELGRPO_GRPO_EPSILON', '0.1')
    monkeypatch.setenv('RELGRPO_GRPO_BETA', '0.02')

    settings = load_run_config(
        'paper-appendix-b', str(config_file), ['grpo.epsilon=0.05']
    )

    assert settings.GRPO.EPSILON == 0.05
    assert settings.GRPO.BETA == 0.02
    assert settings.GRPO.GROUP_SIZE == 8
    assert settings.GRPO.STEPS == 360


def test_origins_name_the_winning_source(tmp_path, monkeypatch):
    config_file = tmp_path / 'run.yaml'
    config_file.write_text('grpo:\n  group_size: 8\n')
    monkeypatch.setenv('RELGRPO_GRPO_BETA', '0.02')

    settings = load_run_config(
        'paper-appendix-b', str(config_file), ['grpo.epsilon=0.05']
    )
    origins = settings.origins()

    assert origins['GRPO.EPSILON'] == '--set'
    assert origins['GRPO.BETA'] == 'environment (RELGRPO_*)'
    assert origins['GRPO.GROUP_SIZE'] == str(config_file)
    assert origins['GRPO.STEPS'] == 'preset paper-appendix-b'
    assert 'SAMPLING.TEMPERATURE' not in origins


def test_environment_can_be_ignored(monkeypatch):
    monkeypatch.setenv('RELGRPO_GRPO_EPSILON', '0.1')

    assert load_run_config(use_environment=False).GRPO.EPSILON == 0.2
    assert load_run_config().GRPO.EPSILON == 0.1


def test_json_config_file(tmp_path):
    config_file = tmp_path / 'run.json'
    config_file.write_text(
        json.dumps({'Reward': {'Lambda': 0.1}, 'ablation': {'variant': 'no_extract'}})
    )

    settings = load_run_config(config_file=str(config_file))

    assert settings.REWARD.LAMBDA == 0.1
    assert settings.ABLATION.to_variant() == get_variant('no_extract')


def test_overrides_are_typed():
    settings = load_run_config(
        overrides=[
            'reward.require_extract_consistency=yes',
            'grpo.group_size=4',
            'dataset.forwards_required=5',
            'dataset.random_negatives=null',
        ]
    )

    assert settings.REWARD.REQUIRE_EXTRACT_CONSISTENCY is True
    assert settings.GRPO.GROUP_SIZE == 4
    assert settings.DATASET.FORWARDS_REQUIRED == 5
    assert settings.DATASET.RANDOM_NEGATIVES is None


def test_out_of_range_value_is_reported_by_path():
    with pytest.raises(ValidationError) as e:
        load_run_config(overrides=['grpo.epsilon=1.5'])

    assert messages(e) == ['GRPO.EPSILON: Value `1.5` is outside (0, 1)']


def test_every_invalid_field_is_reported():
    with pytest.raises(ValidationError) as e:
        load_run_config(
            overrides=['grpo.group_size=1', 'reward.lambda=1', 'backend.kind=grpc']
        )

    assert sorted(m.split(':')[0] for m in messages(e)) == [
        'BACKEND.KIND',
        'GRPO.GROUP_SIZE',
        'REWARD.LAMBDA',
    ]


@pytest.mark.parametrize(
    'overrides, expected',
    [
        (['backend.kind=http'], 'BACKEND.MODEL: required when backend.kind is http'),
        (
            ['backend.kind=scripted'],
            'BACKEND.SCRIPT: required when backend.kind is scripted',
        ),
        (
            ['grpo.reference_snapshot_policy=fixed-file'],
            'GRPO.REFERENCE_PARAMS: '
            'required when reference_snapshot_policy is fixed-file',
        ),
        (
            ['dataset.forwards_required=2', 'dataset.citation_threshold=5'],
            'DATASET.CITATION_THRESHOLD: 5 exceeds forwards_required 2',
        ),
        (
            ['dataset.corpus=/nonexistent/corpus.jsonl'],
            'DATASET.CORPUS: Path `/nonexistent/corpus.jsonl` does not exist',
        ),
    ],
)
def test_cross_field_validation(overrides, expected):
    with pytest.raises(ValidationError) as e:
        load_run_config(overrides=overrides)

    assert messages(e) == [expected]


def test_unknown_override_key():
    with pytest.raises(ValidationError) as e:
        load_run_config(overrides=['grpo.epsilom=0.1'])

    assert messages(e) == ['grpo.epsilom: unknown setting in --set']


def test_unknown_file_key(tmp_path):
    config_file = tmp_path / 'run.yaml'
    config_file.write_text('grpo:\n  group_sise: 8\n')

    with pytest.raises(ValidationError) as e:
        load_run_config(config_file=str(config_file))

    assert messages(e) == [f'grpo.group_sise: unknown setting in {config_file}']


def test_computed_settings_cannot_be_overridden():
    with pytest.raises(ValidationError):
        load_run_config(overrides=['dataset.random_negative_count=3'])


def test_malformed_override():
    with pytest.raises(RelevanceGrpoError, match='expected key=value'):
        load_run_config(overrides=['grpo.epsilon'])


def test_missing_config_file(tmp_path):
    with pytest.raises(RelevanceGrpoError, match='was not found'):
        load_run_config(config_file=str(tmp_path / 'absent.yaml'))


def test_require_citation_config():
    with pytest.raises(ValidationError) as e:
        DatasetSettings().require_citation_config()

    assert messages(e) == [
        'DATASET.GENERATION_LOG: required by build-dataset',
        'DATASET.CORPUS: required by build-dataset',
        'DATASET.FORWARDS_REQUIRED: required by build-dataset',
        'DATASET.CITATION_THRESHOLD: required by build-dataset',
    ]


def test_require_agreement_gate_with_annotations():
    dataset = DatasetSettings().update(
        {
            'generation_log': 'log.jsonl',
            'corpus': 'corpus.jsonl',
            'annotations': 'annotations.csv',
            'forwards_required': 5,
            'citation_threshold': 2,
        }
    )

    with pytest.raises(ValidationError) as e:
        dataset.require_citation_config()

    assert messages(e) == [
        'DATASET.AGREEMENT_GATE: required when annotations are given'
    ]

    dataset.update({'agreement_gate': 0.8})
    dataset.require_citation_config()


def test_random_negative_count():
    dataset = DatasetSettings()
    assert dataset.RANDOM_NEGATIVE_COUNT == 1667

    dataset.update({'train_size': 9})
    assert dataset.RANDOM_NEGATIVE_COUNT == 3

    dataset.update({'random_negatives': 40})
    assert dataset.RANDOM_NEGATIVE_COUNT == 40


def test_http_backend_from_settings():
    settings = load_run_config(
        overrides=[
            'backend.kind=http',
            'backend.model=judge-7b',
            'backend.base_url=http://judge:9000',
            'backend.max_in_flight=3',
        ]
    )

    backend = settings.BACKEND.http_backend()

    assert isinstance(backend, HttpBackend)
    assert backend.model == 'judge-7b'
    assert backend.max_in_flight == 3


def test_prompts_directory(tmp_path):
    (tmp_path / 'round1_system.txt').write_text('Sei un giudice di rilevanza.')

    settings = load_run_config(overrides=[f'prompts_dir={tmp_path}'])

    assert settings.prompts().round1_system == 'Sei un giudice di rilevanza.'


def test_as_dict_contains_every_group():
    data = RunSettings().as_dict()

    groups = {'backend', 'sampling', 'reward', 'grpo', 'dataset', 'eval', 'ablation'}
    assert set(data) >= groups
    assert data['grpo']['epsilon'] == 0.2
    assert data['dataset']['random_negative_count'] == 1667
