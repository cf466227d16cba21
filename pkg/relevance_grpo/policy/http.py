"""Client for OpenAI-compatible ``/v1/chat/completions`` servers (vLLM, TGI, ...)."""
import logging
import os
import random
import threading
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import requests

from ..exceptions import (
    BackendError,
    BackendTimeoutError,
    InputError,
    MalformedResponseError,
    RateLimitError,
    ServerError,
    TransportError,
)
from .base import CompletionResult, Message, SamplingConfig

logger = logging.getLogger(__name__)


class HttpBackend:
    """Chat-completions backend with bounded concurrency and retries.

    Retriable failures (transport, timeout, 429, 5xx) are retried with
    exponential backoff and full jitter, at most ``max_attempts`` calls in total.
    At most ``max_in_flight`` requests are outstanding at any time, however many
    threads share the backend.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: Optional[str] = 'OPENAI_API_KEY',
        max_in_flight: int = 8,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_max: float = 30.0,
        timeout: float = 120.0,
        request_logprobs: bool = True,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        if max_in_flight < 1:
            raise InputError('max_in_flight must be >= 1')
        if max_attempts < 1:
            raise InputError('max_attempts must be >= 1')

        self.url = base_url.rstrip('/') + '/v1/chat/completions'
        self.model = model
        self.api_key_env = api_key_env
        self.max_in_flight = max_in_flight
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_max = backoff_max
        self.timeout = timeout
        self.request_logprobs = request_logprobs
        self.session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    def complete(
        self, messages: Sequence[Message], sampling: SamplingConfig
    ) -> CompletionResult:
        if not messages:
            raise InputError('at least one message is required')

        payload = self._build_payload(messages, sampling)
        last_error: Optional[BackendError] = None
        for attempt in range(self.max_attempts):
            try:
                with self._in_flight:
                    body = self._post(payload)
                return parse_completion(body)
            except BackendError as e:
                last_error = e
                if not e.retriable or attempt + 1 == self.max_attempts:
                    raise
                delay = self._backoff(attempt)
                logger.warning(
                    'Attempt %d/%d failed (%s), retrying in %.2fs',
                    attempt + 1,
                    self.max_attempts,
                    e,
                    delay,
                )
                self._sleep(delay)

        assert last_error is not None
        raise last_error

    def _build_payload(
        self, messages: Sequence[Message], sampling: SamplingConfig
    ) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            'model': self.model,
            'messages': [m.to_dict() for m in messages],
            'temperature': sampling.temperature,
            'max_tokens': sampling.max_tokens,
            'seed': sampling.seed,
        }
        if self.request_logprobs:
            payload['logprobs'] = True
        return payload

    def _headers(self) -> Dict[str, str]:
        headers = {'Content-Type': 'application/json'}
        token = os.environ.get(self.api_key_env) if self.api_key_env else None
        if token:
            headers['Authorization'] = f'Bearer {token}'
        return headers

    def _post(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        logger.debug('POST %s (%d messages)', self.url, len(payload['messages']))
        try:
            response = self.session.post(
                self.url, json=payload, headers=self._headers(), timeout=self.timeout
            )
        except requests.Timeout as e:
            raise BackendTimeoutError(f'Request to {self.url} timed out') from e
        except requests.RequestException as e:
            raise TransportError(f'Request to {self.url} failed: {e}') from e

        if response.status_code == 429:
            raise RateLimitError(f'Rate limited by {self.url}')
        if not 200 <= response.status_code < 300:
            raise ServerError(response.status_code, response.text)

        try:
            return response.json()
        except ValueError as e:
            raise MalformedResponseError(f'Response body is not JSON: {e}') from e

    def _backoff(self, attempt: int) -> float:
        ceiling = min(self.backoff_max, self.backoff_base * 2 ** attempt)
        return self._rng.uniform(0, ceiling)


def parse_completion(body: Dict[str, Any]) -> CompletionResult:
    """Read text, per-token log-probabilities and usage from a response body."""
    try:
        choice = body['choices'][0]
        text = choice['message']['content']
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedResponseError(f'Missing choices[0].message.content: {e}') from e
    if not isinstance(text, str):
        raise MalformedResponseError('choices[0].message.content is not a string')

    token_logprobs = _read_logprobs(choice.get('logprobs'))
    if token_logprobs is not None:
        token_count = len(token_logprobs)
    else:
        usage = body.get('usage') or {}
        token_count = usage.get('completion_tokens')
        if not isinstance(token_count, int):
            raise MalformedResponseError('usage.completion_tokens is missing')

    return CompletionResult(
        text=text,
        token_count=token_count,
        token_logprobs=token_logprobs,
        metadata={'finish_reason': choice.get('finish_reason'), 'id': body.get('id')},
    )


def _read_logprobs(logprobs: Any) -> Optional[List[Tuple[str, float]]]:
    if not logprobs:
        return None
    content = logprobs.get('content') if isinstance(logprobs, dict) else None
    if not content:
        return None
    try:
        # servers occasionally report tiny positive values from float rounding
        return [(item['token'], min(float(item['logprob']), 0.0)) for item in content]
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedResponseError(f'Malformed logprobs entry: {e}') from e
