import hashlib
import json
import logging
import re
from typing import Dict, List, Mapping, Sequence, Union

from ..exceptions import DataError, InputError
from .base import CompletionResult, Message, SamplingConfig

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r'\S+')

ScriptEntry = Union[str, List[str]]


def fingerprint(messages: Sequence[Message]) -> str:
    """Stable SHA-256 over the roles and contents of a conversation."""
    canonical = json.dumps(
        [[m.role, m.content] for m in messages],
        ensure_ascii=False,
        separators=(',', ':'),
    )
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _checked(key: str, entry: ScriptEntry) -> ScriptEntry:
    if isinstance(entry, list):
        if not entry:
            raise InputError(f'Scripted entry {key[:12]} has no responses')
        if not all(isinstance(text, str) for text in entry):
            raise InputError(f'Scripted entry {key[:12]} must list strings')
    elif not isinstance(entry, str):
        raise InputError(
            f'Scripted entry {key[:12]} must be a string or a list of strings'
        )
    return entry


class ScriptedBackend:
    """Deterministic test double answering from a fingerprint → response table.

    A table entry may be a list of responses; the sampling seed then selects
    ``responses[seed % len(responses)]``, which gives a seed-keyed backend for
    group rollouts.
    """

    def __init__(
        self,
        script: Mapping[str, ScriptEntry],
        default: str = '',
        token_logprob: float = -1.0,
    ):
        self.script: Dict[str, ScriptEntry] = {
            key: _checked(key, entry) for key, entry in script.items()
        }
        self.default = default
        self.token_logprob = min(token_logprob, 0.0)
        self.calls = 0

    @classmethod
    def from_file(cls, path: str, default: str = '') -> 'ScriptedBackend':
        try:
            with open(path, encoding='utf-8') as f:
                script = json.load(f)
        except (OSError, ValueError) as e:
            raise DataError(f'Cannot load script table {path}: {e}') from e
        if not isinstance(script, dict):
            raise DataError(f'Script table {path} must be a JSON object')
        try:
            return cls(script, default=default)
        except InputError as e:
            raise DataError(f'Script table {path}: {e}') from e

    def add(self, messages: Sequence[Message], response: ScriptEntry) -> str:
        key = fingerprint(messages)
        self.script[key] = _checked(key, response)
        return key

    def complete(
        self, messages: Sequence[Message], sampling: SamplingConfig
    ) -> CompletionResult:
        self.calls += 1
        key = fingerprint(messages)
        entry = self.script.get(key)
        if entry is None:
            logger.debug('No scripted response for %s, using default', key[:12])
            text = self.default
        elif isinstance(entry, list):
            text = entry[sampling.seed % len(entry)]
        else:
            text = entry

        tokens = _TOKEN.findall(text)
        return CompletionResult(
            text=text,
            token_count=len(tokens),
            token_logprobs=[(token, self.token_logprob) for token in tokens],
        )
