import math
import os
from typing import TYPE_CHECKING, Any, Iterable, Optional

from typeguard import check_type
from typing_extensions import Protocol

from ..exceptions import ValidationError
from .types import Undefined

if TYPE_CHECKING:
    from .setting import Setting
    from .settings import Settings

try:  # typeguard >= 3
    from typeguard import TypeCheckError

    def _check_type(name: str, value: Any, type_hint: Any):
        check_type(value, type_hint)


except ImportError:  # pragma: no cover - typeguard 2.x
    TypeCheckError = TypeError  # type: ignore

    def _check_type(name: str, value: Any, type_hint: Any):
        check_type(name, value, type_hint)


class Validator(Protocol):
    """A validator is a callable that raises an exception if a value is wrong.

    A validator accepts a value as a mandatory argument, and keyword-only arguments
    referring to settings, setting and setting's name."""

    def __call__(
        self,
        value,
        *,
        name: Optional[str] = None,
        owner: Optional['Settings'] = None,
        setting: Optional['Setting'] = None,
    ):
        """Validate a value. Raise `ValidationError` if value is wrong."""
        ...


class RequiredValidator(Validator):
    def __init__(self, message: Optional[str] = None):
        if message is None:
            message = (
                'Setting `{name}` is required to have a value. '
                'Current value is `Undefined`'
            )
        self.message = message

    def __call__(self, value, *, name, **ignore):
        if value is Undefined:
            raise ValidationError(self.message.format(name=name))


class ValueTypeValidator(Validator):
    def __init__(self, type_hint=None):
        self.type_hint = type_hint

    def __call__(self, value, *, name, setting, **ignore):
        if value is Undefined:
            return

        type_hint = setting.type_hint if self.type_hint is None else self.type_hint

        try:
            _check_type(name, value, type_hint)
        except (TypeError, TypeCheckError) as e:
            raise ValidationError(
                f'Expected value of type `{type_hint}` '
                f'got value of type `{type(value)}`'
            ) from e


class InRange(Validator):
    """Numeric bounds check; each bound is inclusive unless marked open."""

    def __init__(
        self,
        low: float = -math.inf,
        high: float = math.inf,
        *,
        low_open: bool = False,
        high_open: bool = False,
    ):
        self.low = low
        self.high = high
        self.low_open = low_open
        self.high_open = high_open

    def __call__(self, value, **ignore):
        if value is Undefined or value is None:
            return
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f'Expected a number, got `{value!r}`')
        if math.isnan(value):
            raise ValidationError('Value is NaN')

        too_low = value <= self.low if self.low_open else value < self.low
        too_high = value >= self.high if self.high_open else value > self.high
        if too_low or too_high:
            raise ValidationError(f'Value `{value}` is outside {self._interval()}')

    def _interval(self) -> str:
        left = '(' if self.low_open else '['
        right = ')' if self.high_open else ']'
        return f'{left}{self.low}, {self.high}{right}'


class OneOf(Validator):
    def __init__(self, choices: Iterable[Any]):
        self.choices = tuple(choices)

    def __call__(self, value, **ignore):
        if value is Undefined:
            return
        if value not in self.choices:
            options = ', '.join(repr(c) for c in self.choices)
            raise ValidationError(f'Value `{value!r}` is not one of {options}')


class PathExists(Validator):
    """Accepts None/empty (unset optional path) or an existing filesystem path."""

    def __call__(self, value, **ignore):
        if value is Undefined or not value:
            return
        if not os.path.exists(value):
            raise ValidationError(f'Path `{value}` does not exist')
