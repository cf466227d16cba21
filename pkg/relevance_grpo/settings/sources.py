"""Configuration sources.

A source answers one question: "which value does this setting have here?".
``Settings.update()`` walks the (nested) settings tree and asks a source for
every leaf. Lookups are case-insensitive so that configuration files can use
``grpo: {epsilon: 0.1}`` for the ``GRPO.EPSILON`` setting.
"""
import json
import logging
import os
from pathlib import Path
from typing import (
    TYPE_CHECKING,
    Any,
    Dict,
    Iterable,
    List,
    Optional,
    Tuple,
    Type,
    Union,
)

from ..exceptions import RelevanceGrpoError
from .types import unwrap_optional

if TYPE_CHECKING:
    from .setting import Setting

logger = logging.getLogger(__name__)

_registered_sources: List[Type['Source']] = []

AnySource = Union[Dict[str, Any], str, 'Source', Path]


class NotFound:
    pass


def register_source(source_cls: Type['Source']):
    if source_cls not in _registered_sources:
        _registered_sources.append(source_cls)
    return source_cls


class NoSuitableSourceFound(RelevanceGrpoError):
    def __init__(self, src: AnySource):
        super().__init__(
            f'No suitable source found to handle "{src}".\n'
            'Supported configuration files: .yml, .yaml, .json'
        )


def get_source(src: AnySource) -> 'Source':
    if isinstance(src, Source):
        return src

    for src_cls in _registered_sources:
        source = src_cls.get_source(src)
        if source is not None:
            return source

    raise NoSuitableSourceFound(src)


def lookup(data: Any, name: str) -> Any:
    """Case-insensitive key lookup in a mapping; NotFound if absent."""
    if not isinstance(data, dict):
        return NotFound
    if name in data:
        return data[name]
    lowered = name.lower()
    for key, val in data.items():
        if str(key).lower() == lowered:
            return val
    return NotFound


def lookup_path(data: Any, parents: Iterable[str], name: str) -> Any:
    for key in parents:
        data = lookup(data, key)
        if data is NotFound:
            return NotFound
    return lookup(data, name)


class Source:
    #: Reported as the origin of every value this source provides
    label = 'source'

    @staticmethod
    def get_source(src: AnySource) -> Optional['Source']:
        return None

    def read(
        self, setting: 'Setting', parents: Tuple[str, ...] = ()
    ) -> Union[Type[NotFound], Any]:
        raise NotImplementedError


class StringSourceMixin:
    """Extends source by providing a string value to required type
       conversion method."""

    @staticmethod
    def convert_value(val: str, type_hint: Any = None) -> Any:
        """Convert given string value to type based on `type_hint`"""
        optional = unwrap_optional(type_hint) is not type_hint
        if optional and val.lower() in ('null', 'none', ''):
            return None
        type_hint = unwrap_optional(type_hint)
        if type_hint in (int, float):
            return type_hint(val)
        elif type_hint is bool:
            if val.lower() in ('true', '1', 'yes'):
                return True
            elif val.lower() in ('false', '0', 'no'):
                return False
        elif val.lower() in ('null', 'none') and type_hint is not str:
            return None

        return val


@register_source
class DictSource(Source):
    def __init__(self, s: dict, label: str = 'dict'):
        self.data: dict = s
        self.label = label

    @staticmethod
    def get_source(src: AnySource) -> Optional['DictSource']:
        if isinstance(src, dict):
            return DictSource(src)
        return None

    def read(
        self, setting: 'Setting', parents: Tuple[str, ...] = ()
    ) -> Union[Type[NotFound], Any]:
        return lookup_path(self.data, parents, setting.name)


class FileSource(Source):
    extensions: List[str] = []

    path: str

    def __init__(self, path):
        self.path = path
        self.label = str(path)
        self._data: Optional[dict] = None

    @classmethod
    def get_source(cls, src) -> Optional['FileSource']:
        if isinstance(src, cls):
            return src

        if isinstance(src, Path):
            src = str(src)

        if isinstance(src, str):
            for ext in cls.extensions:
                if src.endswith(ext):
                    return cls(src)

        return None

    @property
    def data(self) -> dict:
        if self._data is None:
            logger.debug('Reading configuration file %s', self.path)
            data = self._read_file(self.path)
            if not isinstance(data, dict):
                raise RelevanceGrpoError(
                    f'{self.path} must contain a mapping at the top level'
                )
            self._data = data
        return self._data

    def read(
        self, setting: 'Setting', parents: Tuple[str, ...] = ()
    ) -> Union[Type[NotFound], Any]:
        return lookup_path(self.data, parents, setting.name)

    @staticmethod
    def _read_file(path: str) -> dict:
        raise NotImplementedError


@register_source
class JsonSource(FileSource):
    extensions = ['.json']

    @staticmethod
    def _read_file(path):
        try:
            with open(path) as f:
                return json.load(f)
        except FileNotFoundError as e:
            raise RelevanceGrpoError(f'Source file {path} was not found') from e
        except json.decoder.JSONDecodeError as e:
            raise RelevanceGrpoError(f'Error parsing JSON from {path}: {e}') from e


@register_source
class YamlSource(FileSource):
    extensions = ['.yml', '.yaml']

    def __init__(self, path):
        try:
            import yaml  # noqa: F401 # imported but unused
        except ImportError as e:
            raise RelevanceGrpoError(
                f'YAML source is not available for `{path}` '
                'due to error importing `yaml` package.\n'
                'Perhaps you have forgotten to install PyYAML?'
            ) from e
        super().__init__(path)

    @staticmethod
    def _read_file(path):
        import yaml

        try:
            with open(path) as f:
                return yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise RelevanceGrpoError(f'Source file {path} was not found') from e
        except yaml.YAMLError as e:
            raise RelevanceGrpoError(f'Error parsing YAML from {path}: {e}') from e


class EnvVarSource(StringSourceMixin, Source):
    """Reads ``<PREFIX>_<GROUP>_<NAME>`` environment variables."""

    def __init__(self, prefix: str = 'RELGRPO'):
        self.prefix = prefix
        self.label = f'environment ({prefix}_*)' if prefix else 'environment'

    def read(
        self, setting, parents: Tuple[str, ...] = ()
    ) -> Union[Type[NotFound], Any]:
        parts = [self.prefix] if self.prefix else []
        parts.extend(p.upper() for p in parents)
        parts.append(setting.name.upper())
        val = os.environ.get('_'.join(parts))

        if val is None:
            return NotFound
        return self.convert_value(val, setting.type_hint)


class OverrideSource(StringSourceMixin, Source):
    """Command-line ``--set dotted.key=value`` overrides.

    Scalar settings are converted by their type hint; anything else is parsed
    as a YAML flow value (``--set eval.splits=[zero_vs_rest]``).
    """

    label = '--set'

    def __init__(self, assignments: Iterable[str]):
        self.data: Dict[str, str] = {}
        for assignment in assignments:
            key, sep, value = assignment.partition('=')
            if not sep or not key.strip():
                raise RelevanceGrpoError(
                    f'Invalid override `{assignment}`: expected key=value'
                )
            self.data[key.strip().lower()] = value.strip()

    def read(
        self, setting, parents: Tuple[str, ...] = ()
    ) -> Union[Type[NotFound], Any]:
        key = '.'.join((*parents, setting.name)).lower()
        if key not in self.data:
            return NotFound
        raw = self.data[key]
        if setting.type_hint in (int, float, bool, str):
            return self.convert_value(raw, setting.type_hint)
        import yaml

        return yaml.safe_load(raw)

    def unknown_keys(self, known: Iterable[str]) -> List[str]:
        known_lower = {k.lower() for k in known}
        return sorted(k for k in self.data if k not in known_lower)
