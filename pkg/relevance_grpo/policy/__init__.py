"""Text-generation backends: chat-completions client, scripted double, toy policy."""
from .base import (  # noqa: F401 # imported but unused
    Backend,
    CompletionResult,
    Message,
    SamplingConfig,
)
from .http import HttpBackend, parse_completion  # noqa: F401 # imported but unused
from .scripted import ScriptedBackend, fingerprint  # noqa: F401 # imported but unused
from .toy import (  # noqa: F401 # imported but unused
    ToyBackend,
    ToyInstance,
    ToyPolicyParams,
    feature_bucket,
    toy_logprob_and_grad,
    toy_sample,
)
