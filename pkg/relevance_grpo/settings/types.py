from typing import Any, Tuple, Union


class _Sentinel(type):
    def __bool__(cls):
        return False

    def __repr__(cls):
        return cls.__name__

    def __call__(cls, *args, **kwargs):
        raise RuntimeError(f'{cls.__name__} is a marker and cannot be instantiated')


class Undefined(metaclass=_Sentinel):
    """Marks a setting that has no value until a source provides one."""


class GuessSettingType(metaclass=_Sentinel):
    """Type hint placeholder: the hint is inferred from the default value."""


# bool before int: isinstance(True, int) holds
_GUESSABLE: Tuple[type, ...] = (bool, int, float, str, list, tuple, dict)


def guess_type_hint(value: Any) -> Any:
    if value is Undefined:
        return Any
    return next((t for t in _GUESSABLE if isinstance(value, t)), Any)


def unwrap_optional(type_hint: Any) -> Any:
    """``Optional[X]`` → ``X``; other hints are returned unchanged."""
    if getattr(type_hint, '__origin__', None) is Union:
        args = [a for a in type_hint.__args__ if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return type_hint
