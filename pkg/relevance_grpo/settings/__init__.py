"""Typed, validated configuration objects and the sources that fill them."""
from .behaviors import Behavior, required, validate  # noqa: F401 # imported but unused
from .setting import PropertySetting, Setting  # noqa: F401 # imported but unused
from .settings import INVALID_SETTINGS, Settings  # noqa: F401 # imported but unused
from .sources import (  # noqa: F401 # imported but unused
    DictSource,
    EnvVarSource,
    JsonSource,
    NotFound,
    OverrideSource,
    Source,
    YamlSource,
    get_source,
    register_source,
)
from .types import Undefined  # noqa: F401 # imported but unused
from .validators import (  # noqa: F401 # imported but unused
    InRange,
    OneOf,
    PathExists,
    RequiredValidator,
    Validator,
    ValueTypeValidator,
)

# ALIASES
setting = PropertySetting
