import logging
from typing import Any, Dict, Iterator, List, Tuple

from ..exceptions import ValidationError, ValidationErrorDetails
from .setting import DEFAULT_ORIGIN, PropertySetting, Setting
from .sources import AnySource, NotFound, Source, get_source
from .types import GuessSettingType, guess_type_hint, unwrap_optional
from .validators import Validator, ValueTypeValidator

logger = logging.getLogger(__name__)

INVALID_SETTINGS = '__invalid__settings__'


class SettingsMeta(type):
    def __new__(mcs, name, bases, class_dict):
        new_dict = mcs.class_dict_to_settings(class_dict, bases)
        return super().__new__(mcs, name, bases, new_dict)

    @classmethod
    def class_dict_to_settings(mcs, class_dict: dict, bases: List[type]):
        new_dict = {}
        annotations = class_dict.get('__annotations__', {})

        for name, attr in class_dict.items():
            new_attr = attr

            # Make a Setting out of each UPPERCASE_ATTRIBUTE
            if (
                not isinstance(attr, Setting)
                and mcs._is_setting_name(name)
                and mcs._can_be_converted_to_setting_automatically(attr)
            ):
                type_hint = annotations.get(name, GuessSettingType)
                new_attr = Setting(attr, type_hint=type_hint)

            if isinstance(new_attr, Setting):
                if new_attr.type_hint is GuessSettingType:
                    new_attr.type_hint = mcs._guess_type_hint(
                        name, new_attr, annotations, bases
                    )
                # Final touch: apply behaviors
                for behavior in new_attr._behaviors:
                    behavior.decorate(new_attr)

            new_dict[name] = new_attr

        return new_dict

    @classmethod
    def _guess_type_hint(mcs, name, setting: Setting, annotations, bases: List[type]):
        # we still have to check annotations,
        # e.g. if the setting was instantiated by behavior
        annotation_type_hint = annotations.get(name, GuessSettingType)
        if annotation_type_hint is not GuessSettingType:
            return annotation_type_hint

        # try to get the type hint from the base classes
        for base in bases:
            try:
                return getattr(base, name).type_hint
            except AttributeError:
                pass

        return guess_type_hint(setting.value)

    @classmethod
    def _is_setting_name(mcs, name: str) -> bool:
        """Return True if name is written in the upper case"""
        return not name.startswith('_') and name.upper() == name

    @classmethod
    def _can_be_converted_to_setting_automatically(mcs, attr: Any) -> bool:
        """Return False if attribute should not be converted
           to a Setting automatically"""
        callable_types = (property, classmethod, staticmethod)
        return not isinstance(attr, callable_types) and not callable(attr)


class Settings(Setting, metaclass=SettingsMeta):
    """A typed, validated group of configuration values.

    Nested ``Settings`` instances act as sub-groups; they are reached through
    dotted paths (``grpo.epsilon``) by sources and in validation errors."""

    default_validators: Tuple[Validator, ...] = ()
    mandatory_validators: Tuple[Validator, ...] = (ValueTypeValidator(),)

    _errors: ValidationErrorDetails = {}

    def __init__(self, **kwargs):
        assert (
            'value' not in kwargs
        ), '"value" argument should not be passed to Settings.__init__()'
        assert (
            'type_hint' not in kwargs
        ), '"type_hint" argument should not be passed to Settings.__init__()'

        super().__init__(value=self, type_hint=self.__class__, **kwargs)

        # Nested settings declared on the class are shared descriptors;
        # every instance gets its own copy so updates do not leak.
        for name, attr in self.settings_attributes():
            if isinstance(attr, Settings):
                setattr(self, name, type(attr)())

    @classmethod
    def settings_attributes(cls) -> Iterator[Tuple[str, Setting]]:
        for name in dir(cls):
            attr = getattr(cls, name)
            if isinstance(attr, Setting):
                yield name, attr

    def is_valid(self, raise_exception=False) -> bool:
        self._errors = {}
        self._errors = self._run_validation(raise_exception)
        return self._errors == {}

    def _run_validation(self, raise_exception=False) -> ValidationErrorDetails:
        errors = {}

        # validate each setting individually
        for name, setting in self.settings_attributes():
            setting_errors = self._validate_setting(name, setting, raise_exception)
            if setting_errors:
                errors[name] = setting_errors

        if errors == {}:
            try:
                self.validate()
            except ValidationError as e:
                if raise_exception:
                    raise e
                if isinstance(e.details, dict):
                    # keyed by setting name
                    errors.update({k: [v] for k, v in e.details.items()})
                else:
                    errors[INVALID_SETTINGS] = [str(e)]

        return errors

    def _validate_setting(
        self, name: str, setting: Setting, raise_exception=False
    ) -> ValidationErrorDetails:
        value = getattr(self, name)

        errors: List[ValidationErrorDetails] = []
        validators = setting.validators or self.default_validators
        if not isinstance(setting, PropertySetting):
            validators += self.mandatory_validators

        for validator in validators:
            try:
                validator(value, name=name, owner=self, setting=setting)
            except ValidationError as e:
                if raise_exception:
                    raise ValidationError({name: e.details}) from e
                errors.append(str(e))
            except Exception as e:
                if raise_exception:
                    raise ValidationError({name: str(e)}) from e
                errors.append(str(e))

        # nested Settings
        if isinstance(value, Settings):
            nested_settings = value
            try:
                nested_settings.is_valid(raise_exception=raise_exception)
            except ValidationError as e:
                assert raise_exception
                raise ValidationError({name: e.details}) from e

            if nested_settings.errors:
                errors.append(nested_settings.errors)

        return errors

    def validate(self):
        """Cross-field checks; override in subclasses."""

    def update(self, source: AnySource) -> 'Settings':
        source_obj = get_source(source)
        self._update(self, source_obj, parents=())
        return self

    @staticmethod
    def _update(settings: 'Settings', source: Source, parents: Tuple[str, ...] = ()):
        """Recursively update settings object from a source"""
        for name, setting in settings.settings_attributes():
            if isinstance(setting, PropertySetting):
                continue
            if isinstance(setting, Settings):
                Settings._update(getattr(settings, name), source, (*parents, name))
                continue

            try:
                new_val = source.read(setting, parents)
            except (TypeError, ValueError) as e:
                path = '.'.join((*parents, name))
                raise ValidationError({path: f'cannot read value: {e}'}) from e

            if new_val is NotFound:
                continue

            path = '.'.join((*parents, name))
            logger.debug('Setting %s updated from %s', path, source.label)
            setting.set_value(
                settings, _coerce(new_val, setting.type_hint), origin=source.label
            )

    def setting_paths(self, parents: Tuple[str, ...] = ()) -> Iterator[str]:
        """Dotted paths of every leaf setting, e.g. ``GRPO.EPSILON``."""
        for name, setting in self.settings_attributes():
            if isinstance(setting, PropertySetting):
                continue
            value = getattr(self, name)
            if isinstance(value, Settings):
                yield from value.setting_paths((*parents, name))
            else:
                yield '.'.join((*parents, name))

    def origins(self, parents: Tuple[str, ...] = ()) -> Dict[str, str]:
        """Where each overridden leaf setting got its value from.

        Settings still at their declared default are left out.
        """
        result: Dict[str, str] = {}
        for name, setting in self.settings_attributes():
            if isinstance(setting, PropertySetting):
                continue
            value = getattr(self, name)
            if isinstance(value, Settings):
                result.update(value.origins((*parents, name)))
            elif setting.origin(self) != DEFAULT_ORIGIN:
                result['.'.join((*parents, name))] = setting.origin(self)
        return result

    def as_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {}
        for name, _ in self.settings_attributes():
            value = getattr(self, name)
            key = name.lower()
            if isinstance(value, Settings):
                result[key] = value.as_dict()
            elif isinstance(value, tuple):
                result[key] = list(value)
            else:
                result[key] = value
        return result

    @property
    def errors(self) -> ValidationErrorDetails:
        return self._errors


def _coerce(value: Any, type_hint: Any) -> Any:
    type_hint = unwrap_optional(type_hint)
    # YAML/JSON have no float literal for whole numbers
    if type_hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if type_hint in (tuple, Tuple) and isinstance(value, list):
        return tuple(value)
    return value
