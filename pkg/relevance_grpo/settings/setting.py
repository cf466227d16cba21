import functools
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Tuple

from .types import GuessSettingType, Undefined
from .validators import Validator

if TYPE_CHECKING:
    from .behaviors import Behavior
    from .settings import Settings

#: Origin reported for a value nobody has overridden
DEFAULT_ORIGIN = 'default'

_VALUES = '_setting_values'


def _assigned(owner: 'Settings') -> Dict[str, Tuple[Any, str]]:
    return vars(owner).setdefault(_VALUES, {})


class Setting:
    """A single configuration value declared on a :class:`Settings` class.

    The declared value is the default. Values assigned on an instance are kept
    per instance together with their origin, the label of the source that
    provided them (``--set``, a file path, ``environment``...).
    """

    type_hint: Any
    validators: Tuple[Validator, ...]
    _behaviors: List['Behavior']

    def __init__(
        self,
        value: Any = Undefined,
        *,
        doc: str = '',
        validators: Tuple[Validator, ...] = (),
        type_hint: Any = GuessSettingType,
    ):
        self.value = value
        self.type_hint = type_hint
        self.validators = tuple(validators)
        self.__doc__ = doc
        self.name = ''
        self._behaviors = []

    def __set_name__(self, _, name):
        self.name = name

    def __get__(self, owner, owner_type=None):
        if owner is None:
            return self
        return self.get_value(owner)

    def __set__(self, owner: 'Settings', val):
        self.set_value(owner, val)

    def get_value(self, owner: 'Settings') -> Any:
        value, _ = _assigned(owner).get(self.name, (self.value, DEFAULT_ORIGIN))
        return value

    def set_value(self, owner: 'Settings', val, origin: str = 'assignment'):
        _assigned(owner)[self.name] = (val, origin)

    def origin(self, owner: 'Settings') -> str:
        _, origin = _assigned(owner).get(self.name, (self.value, DEFAULT_ORIGIN))
        return origin

    def __repr__(self):
        return f'<{type(self).__name__} {self.name or "?"}={self.value!r}>'


class PropertySetting(Setting):
    """A read-only setting computed from other settings of the same owner."""

    def __init__(self, fget: Callable):
        super().__init__(doc=fget.__doc__ or '')
        functools.update_wrapper(self, fget)
        self.type_hint = fget.__annotations__.get('return', Any)
        self.fget = fget

    def get_value(self, owner: 'Settings'):
        return self.fget(owner)

    def set_value(self, owner: 'Settings', val, origin: str = 'assignment'):
        raise AttributeError(f'{self.name} is computed and cannot be set')

    def origin(self, owner: 'Settings') -> str:
        return 'computed'
