import types
from typing import Any, Optional, Tuple, Union

from .setting import PropertySetting, Setting
from .validators import RequiredValidator, Validator


class GenericBehaviorMeta(type):
    def __call__(cls, *args, init_with_arguments=False, **kwargs):
        # Explicitly tell the metaclass that
        # Behavior.__init__(arg1, arg2, ...)
        # is expected
        # Case: @validate(validator1, ...)

        if init_with_arguments:
            return super().__call__(*args, **kwargs)

        # Act as a decorator
        _decorating_setting_or_method = (
            len(args) == 1
            and len(kwargs) == 0
            and isinstance(args[0], (Setting, types.FunctionType))
        )

        if _decorating_setting_or_method:
            bhv = super().__call__()
            return bhv(args[0])
        return super().__call__(*args, **kwargs)

    def __rmatmul__(cls, setting: Any):
        # `10 @ required`: behavior class used without arguments
        return cls().__rmatmul__(setting)


class BehaviorWithArgumentsMeta(GenericBehaviorMeta):
    def __call__(cls, *args, **kwargs):
        return super().__call__(*args, **kwargs, init_with_arguments=True)


class Behavior(metaclass=GenericBehaviorMeta):
    """Attaches extra semantics (usually validators) to a setting.

    Behaviors are applied when the owning ``Settings`` class is created, so
    ``EPSILON: float = 0.2 @ validate(InRange(0, 1))`` keeps the annotation
    as the type hint of the resulting setting."""

    def __call__(self, setting_or_method: Union[Setting, types.FunctionType]):
        setting: Setting

        if isinstance(setting_or_method, types.FunctionType):
            setting = PropertySetting(setting_or_method)
        else:
            setting = setting_or_method

        self.attach(setting)
        return setting

    def __rmatmul__(self, setting: Any):
        if not isinstance(setting, Setting):
            setting = Setting(setting)

        self.attach(setting)
        return setting

    def attach(self, setting: Setting):
        setting._behaviors.append(self)

    def decorate(self, setting: Setting):
        pass


class validate(Behavior, metaclass=BehaviorWithArgumentsMeta):
    def __init__(self, *validators: Validator):
        self._validators: Tuple[Validator, ...] = validators

    def decorate(self, setting: Setting):
        setting.validators += self._validators
        super().decorate(setting)


class required(Behavior):
    def __init__(self, message: Optional[str] = None):
        self.message = message

    def decorate(self, setting: Setting):
        setting.validators = (RequiredValidator(self.message),) + setting.validators
        super().decorate(setting)
