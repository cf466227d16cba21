from typing import Any, Dict, List, Mapping, Optional, Union


class RelevanceGrpoError(Exception):
    """Base class for all relevance_grpo exceptions."""


SettingName = str

# fmt: off
#:
ValidationErrorDetails = Union[                   # type: ignore
    str,
    List['ValidationErrorDetails'],               # type: ignore
    Dict[SettingName, 'ValidationErrorDetails'],  # type: ignore
]
# fmt: on


class ValidationError(RelevanceGrpoError):
    """Raised when a configuration value violates its validators."""

    sources: List[str]

    def __init__(self, details: ValidationErrorDetails = ''):
        super().__init__(details)
        self.details = details
        self.sources = []

    def prepend_source(self, source: str):
        self.sources.insert(0, source)

    def __str__(self):
        detail_str = _format_detail(self.details)
        if self.sources:
            source = '.'.join(self.sources)
            return f'{source}: {detail_str}'
        return detail_str

    def field_messages(self) -> List[str]:
        """Flatten the details tree into ``dotted.path: message`` lines."""
        prefix = '.'.join(self.sources)
        return list(_flatten_detail(self.details, prefix))


def _format_detail(detail) -> str:
    if isinstance(detail, list):
        return '; '.join(_format_detail(d) for d in detail)
    elif isinstance(detail, dict):
        return '\n'.join(f'{k}: {_format_detail(v)}.' for k, v in detail.items())
    else:
        return str(detail)


def _flatten_detail(detail, path: str):
    if isinstance(detail, dict):
        for key, sub in detail.items():
            sub_path = f'{path}.{key}' if path else str(key)
            yield from _flatten_detail(sub, sub_path)
    elif isinstance(detail, list):
        for sub in detail:
            yield from _flatten_detail(sub, path)
    else:
        yield f'{path}: {detail}' if path else str(detail)


class InputError(RelevanceGrpoError, ValueError):
    """A precondition of an operation was violated by its arguments."""


class DataError(RelevanceGrpoError, ValueError):
    """A record read from disk or a log is internally inconsistent."""


class ShortfallError(RelevanceGrpoError):
    """Not enough samples to build the requested class-balanced split."""

    def __init__(self, deficits: Mapping[int, int]):
        self.deficits = dict(deficits)
        listing = ', '.join(
            f'class {label}: short by {missing}'
            for label, missing in sorted(self.deficits.items())
        )
        super().__init__(f'Insufficient samples for a balanced split ({listing})')


class UndefinedMetricError(RelevanceGrpoError, ValueError):
    """A metric is undefined for the given inputs (e.g. AUC with one class)."""


class TrainingDivergedError(RelevanceGrpoError):
    """The GRPO objective became non-finite."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BackendError(RelevanceGrpoError):
    """A text-generation backend failed to produce a completion."""

    retriable: bool = False


class TransportError(BackendError):
    retriable = True


class BackendTimeoutError(BackendError):
    retriable = True


class RateLimitError(BackendError):
    retriable = True


class ServerError(BackendError):
    def __init__(self, status: int, body: str = ''):
        super().__init__(f'Server responded with status {status}: {body[:200]}')
        self.status = status
        # 5xx are transient, anything else is a request problem
        self.retriable = 500 <= status < 600


class MalformedResponseError(BackendError):
    retriable = False
