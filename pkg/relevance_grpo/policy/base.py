from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from typing_extensions import Protocol

from ..exceptions import InputError

ROLES = ('system', 'user', 'assistant')


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise InputError(f'Unknown message role `{self.role}`')

    def to_dict(self) -> Dict[str, str]:
        return {'role': self.role, 'content': self.content}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Message':
        return cls(role=data['role'], content=data['content'])


@dataclass
class SamplingConfig:
    temperature: float = 1.0
    seed: int = 0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise InputError('temperature must be >= 0')
        if self.max_tokens <= 0:
            raise InputError('max_tokens must be positive')

    def with_seed(self, seed: int) -> 'SamplingConfig':
        return SamplingConfig(self.temperature, seed, self.max_tokens)


@dataclass
class CompletionResult:
    text: str
    token_count: int
    #: (token text, log-probability) pairs; None when the backend omits them
    token_logprobs: Optional[List[Tuple[str, float]]] = None
    #: vocabulary indices of sampled tokens, set by backends with closed-form gradients
    token_ids: Optional[List[int]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.token_logprobs is not None:
            if len(self.token_logprobs) != self.token_count:
                raise InputError(
                    f'{len(self.token_logprobs)} log-probabilities for '
                    f'{self.token_count} tokens'
                )
            if any(lp > 0 for _, lp in self.token_logprobs):
                raise InputError('log-probabilities must be <= 0')

    @property
    def logprob_values(self) -> Optional[List[float]]:
        if self.token_logprobs is None:
            return None
        return [lp for _, lp in self.token_logprobs]


class Backend(Protocol):
    """Anything that completes a chat conversation."""

    def complete(
        self, messages: Sequence[Message], sampling: SamplingConfig
    ) -> CompletionResult:
        ...
