"""Run configuration: typed settings groups, named presets and the loading order.

Values are resolved from (lowest to highest precedence) a named preset, an
optional YAML/JSON file, ``RELGRPO_<GROUP>_<NAME>`` environment variables and
``--set group.name=value`` overrides. Keys are case-insensitive.
"""
import logging
from typing import Any, Dict, Iterable, Iterator, Optional

from .dataset import DEFAULT_MAX_AUX_DOCS, DEFAULT_TRAIN_SIZE, balanced_targets
from .evaluation import DEFAULT_REQUERY_WINDOW
from .exceptions import ValidationError
from .grpo import REFERENCE_POLICIES, GrpoConfig
from .policy.base import SamplingConfig
from .policy.http import HttpBackend
from .prompts import PromptSet, load_prompt_set
from .reward import RewardConfig
from .rollout import VARIANTS, InteractionVariant, get_variant
from .settings import (
    DictSource,
    EnvVarSource,
    InRange,
    OneOf,
    OverrideSource,
    PathExists,
    Settings,
    get_source,
    setting,
    validate,
)
from .settings.sources import FileSource
from .trainer import INIT_MODES
from .trainer import SMOOTHING_WINDOW as DEFAULT_SMOOTHING_WINDOW

logger = logging.getLogger(__name__)

BACKEND_KINDS = ('toy', 'http', 'scripted')
ENV_PREFIX = 'RELGRPO'


class BackendSettings(Settings):
    KIND: str = 'toy' @ validate(OneOf(BACKEND_KINDS))
    BASE_URL: str = 'http://localhost:8000'
    MODEL: str = ''
    #: name of the environment variable holding the bearer token
    API_KEY_ENV: str = 'OPENAI_API_KEY'
    MAX_IN_FLIGHT: int = 8 @ validate(InRange(1))
    MAX_ATTEMPTS: int = 5 @ validate(InRange(1))
    BACKOFF_BASE: float = 0.5 @ validate(InRange(0))
    BACKOFF_MAX: float = 30.0 @ validate(InRange(0))
    TIMEOUT: float = 120.0 @ validate(InRange(0, low_open=True))
    #: JSON fingerprint → response table for the scripted backend
    SCRIPT: str = '' @ validate(PathExists())
    #: toy parameters (JSON), zero logits when empty
    TOY_PARAMS: str = '' @ validate(PathExists())

    def validate(self):
        if self.KIND == 'http' and not self.MODEL:
            raise ValidationError({'MODEL': 'required when backend.kind is http'})
        if self.KIND == 'scripted' and not self.SCRIPT:
            raise ValidationError({'SCRIPT': 'required when backend.kind is scripted'})

    def http_backend(self) -> HttpBackend:
        return HttpBackend(
            self.BASE_URL,
            self.MODEL,
            api_key_env=self.API_KEY_ENV or None,
            max_in_flight=self.MAX_IN_FLIGHT,
            max_attempts=self.MAX_ATTEMPTS,
            backoff_base=self.BACKOFF_BASE,
            backoff_max=self.BACKOFF_MAX,
            timeout=self.TIMEOUT,
        )


class SamplingSettings(Settings):
    TEMPERATURE: float = 1.0 @ validate(InRange(0))
    SEED: int = 0
    MAX_TOKENS: int = 1024 @ validate(InRange(1))

    def to_config(self) -> SamplingConfig:
        return SamplingConfig(self.TEMPERATURE, self.SEED, self.MAX_TOKENS)


class RewardSettings(Settings):
    #: partial credit for a prediction one label away from gold
    LAMBDA: float = 0.0 @ validate(InRange(0, 1, high_open=True))
    REQUIRE_EXTRACT_CONSISTENCY: bool = False

    def to_config(self) -> RewardConfig:
        return RewardConfig(self.LAMBDA, self.REQUIRE_EXTRACT_CONSISTENCY)


class GrpoSettings(Settings):
    EPSILON: float = 0.2 @ validate(InRange(0, 1, low_open=True, high_open=True))
    BETA: float = 0.01 @ validate(InRange(0))
    GROUP_SIZE: int = 16 @ validate(InRange(2))
    LEARNING_RATE: float = 4.0 @ validate(InRange(0))
    BATCH_SIZE: int = 8 @ validate(InRange(1))
    STEPS: int = 400 @ validate(InRange(0))
    REFERENCE_SNAPSHOT_POLICY: str = 'initial' @ validate(OneOf(REFERENCE_POLICIES))
    REFERENCE_PARAMS: str = '' @ validate(PathExists())
    INIT: str = 'zero' @ validate(OneOf(INIT_MODES))
    TEACHER_ACCURACY: float = 0.7 @ validate(InRange(0, 1))
    DEMOS_PER_PAIR: int = 32 @ validate(InRange(1))
    LOG_EVERY: int = 20 @ validate(InRange(0))

    def validate(self):
        if self.REFERENCE_SNAPSHOT_POLICY == 'fixed-file' and not self.REFERENCE_PARAMS:
            raise ValidationError(
                {
                    'REFERENCE_PARAMS': 'required when reference_snapshot_policy '
                    'is fixed-file'
                }
            )

    def to_config(self) -> GrpoConfig:
        return GrpoConfig(
            epsilon=self.EPSILON,
            beta=self.BETA,
            group_size=self.GROUP_SIZE,
            learning_rate=self.LEARNING_RATE,
            batch_size=self.BATCH_SIZE,
            steps=self.STEPS,
            reference_snapshot_policy=self.REFERENCE_SNAPSHOT_POLICY,
        )


class DatasetSettings(Settings):
    GENERATION_LOG: str = '' @ validate(PathExists())
    CORPUS: str = '' @ validate(PathExists())
    ANNOTATIONS: str = '' @ validate(PathExists())
    #: labeled pairs JSONL for rollout and train-toy
    PAIRS: str = '' @ validate(PathExists())

    # No defaults: build-dataset refuses to run until both are configured.
    FORWARDS_REQUIRED: Optional[int] = None @ validate(InRange(1))
    CITATION_THRESHOLD: Optional[int] = None @ validate(InRange(1))
    AGREEMENT_GATE: Optional[float] = None @ validate(InRange(0, 1))

    #: None draws as many as the balanced class-0 target
    RANDOM_NEGATIVES: Optional[int] = None @ validate(InRange(0))
    BALANCE: bool = True
    TRAIN_SIZE: int = DEFAULT_TRAIN_SIZE @ validate(InRange(0))
    MAX_AUX_DOCS: int = DEFAULT_MAX_AUX_DOCS @ validate(InRange(0))
    SEED: int = 0

    def validate(self):
        forwards, threshold = self.FORWARDS_REQUIRED, self.CITATION_THRESHOLD
        if forwards is not None and threshold is not None and threshold > forwards:
            message = f'{threshold} exceeds forwards_required {forwards}'
            raise ValidationError({'CITATION_THRESHOLD': message})

    def require_citation_config(self):
        names = ('GENERATION_LOG', 'CORPUS', 'FORWARDS_REQUIRED', 'CITATION_THRESHOLD')
        missing = {
            name: 'required by build-dataset'
            for name in names
            if getattr(self, name) in (None, '')
        }
        if self.ANNOTATIONS and self.AGREEMENT_GATE is None:
            missing['AGREEMENT_GATE'] = 'required when annotations are given'
        if missing:
            error = ValidationError(missing)
            error.prepend_source('DATASET')
            raise error

    @setting
    def RANDOM_NEGATIVE_COUNT(self) -> int:
        """Random negatives actually drawn."""
        if self.RANDOM_NEGATIVES is not None:
            return self.RANDOM_NEGATIVES
        return balanced_targets(self.TRAIN_SIZE)[0]


class EvalSettings(Settings):
    REQUERY_WINDOW: float = DEFAULT_REQUERY_WINDOW @ validate(InRange(0, low_open=True))
    #: smoothed mean reward a training run has to reach in `report`
    CROSSING_THRESHOLD: float = 0.8 @ validate(InRange(0, 1))
    SMOOTHING_WINDOW: int = DEFAULT_SMOOTHING_WINDOW @ validate(InRange(1))


class AblationSettings(Settings):
    VARIANT: str = 'full' @ validate(OneOf(sorted(VARIANTS)))

    def to_variant(self) -> InteractionVariant:
        return get_variant(self.VARIANT)


class RunSettings(Settings):
    OUTPUT: str = 'runs/latest'
    SEED: int = 0
    #: directory of ``<template>.txt`` files replacing the English prompts
    PROMPTS_DIR: str = '' @ validate(PathExists())

    BACKEND = BackendSettings()
    SAMPLING = SamplingSettings()
    REWARD = RewardSettings()
    GRPO = GrpoSettings()
    DATASET = DatasetSettings()
    EVAL = EvalSettings()
    ABLATION = AblationSettings()

    def prompts(self) -> PromptSet:
        return load_prompt_set(self.PROMPTS_DIR or None)


PRESETS: Dict[str, Dict[str, Any]] = {
    'toy-default': {
        'backend': {'kind': 'toy'},
        'grpo': {
            'epsilon': 0.2,
            'beta': 0.01,
            'group_size': 16,
            'learning_rate': 4.0,
            'batch_size': 8,
            'steps': 400,
        },
        'reward': {'lambda': 0.0},
    },
    'paper-appendix-b': {
        'grpo': {
            'group_size': 16,
            'learning_rate': 5e-7,
            'batch_size': 32,
            'steps': 360,
        },
        'reward': {'lambda': 0.0},
    },
}
DEFAULT_PRESET = 'toy-default'


def _flatten_keys(data: Any, parents: str = '') -> Iterator[str]:
    if not isinstance(data, dict):
        yield parents
        return
    for key, value in data.items():
        path = f'{parents}.{key}' if parents else str(key)
        yield from _flatten_keys(value, path)


def _reject_unknown(keys: Iterable[str], known: Iterable[str], origin: str):
    known_lower = {k.lower() for k in known}
    unknown = sorted({k.lower() for k in keys} - known_lower)
    if unknown:
        raise ValidationError({key: f'unknown setting in {origin}' for key in unknown})


def load_run_config(
    preset: Optional[str] = DEFAULT_PRESET,
    config_file: Optional[str] = None,
    overrides: Iterable[str] = (),
    use_environment: bool = True,
) -> RunSettings:
    """Resolve and validate the run configuration.

    Raises :class:`ValidationError` listing every invalid or unknown field.
    """
    settings = RunSettings()
    known = list(settings.setting_paths())

    if preset:
        if preset not in PRESETS:
            raise ValidationError(
                {
                    'preset': f'unknown preset `{preset}`, '
                    f'expected one of {sorted(PRESETS)}'
                }
            )
        settings.update(DictSource(PRESETS[preset], label=f'preset {preset}'))

    if config_file:
        source = get_source(config_file)
        if isinstance(source, FileSource):
            _reject_unknown(_flatten_keys(source.data), known, config_file)
        settings.update(source)

    if use_environment:
        settings.update(EnvVarSource(ENV_PREFIX))

    override_source = OverrideSource(overrides)
    _reject_unknown(override_source.data, known, '--set')
    settings.update(override_source)

    if not settings.is_valid():
        raise ValidationError(settings.errors)
    for path, origin in sorted(settings.origins().items()):
        logger.debug('%s taken from %s', path, origin)
    return settings
