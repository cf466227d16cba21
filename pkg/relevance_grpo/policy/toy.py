"""Slot-factored categorical policy with closed-form log-probabilities.

The policy stands in for an LLM when exercising GRPO end to end. A response is
reduced to one categorical choice ("token") per slot:

* ``intent``  - one of the instance's intent candidates (index 0 is an empty
  intent, which violates the round-1 grammar),
* ``extract`` - the none-sentinel, or a candidate-document sentence, verbatim or
  with mutated punctuation (which violates the verbatim rule),
* ``score``   - a relevance label 0/1/2.

Each slot's logits are looked up by the instance's feature bucket, a stable
hash of the query. ``log pi(token) = log_softmax(logits[bucket, :k])[token]``
and its gradient w.r.t. that row is ``onehot(token) - softmax(row)``.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from ..exceptions import InputError
from ..tagparse import (
    EXTRACT,
    INTENT,
    ROUND1,
    ROUND2,
    SCORE,
    Grammar,
    Round1Output,
    Round2Output,
    render_round1,
    render_round2,
    validate_extract,
)
from .base import CompletionResult, Message, SamplingConfig

logger = logging.getLogger(__name__)

SLOTS = (INTENT, EXTRACT, SCORE)
LABELS = (0, 1, 2)
DEFAULT_BUCKETS = 64
DEFAULT_VOCAB_WIDTH = {INTENT: 4, EXTRACT: 9, SCORE: 3}

_SENTENCE_END = re.compile(r'(?<=[.!?])\s+')
_PUNCT_SWAP = {'.': '!', '!': '.', '?': '.', ',': ';', ';': ',', ':': ';'}

#: (slot, vocabulary index)
Token = Tuple[str, int]


def feature_bucket(query: str, buckets: int = DEFAULT_BUCKETS) -> int:
    digest = hashlib.blake2b(query.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'big') % buckets


def slots_for(grammar: Grammar) -> Tuple[str, ...]:
    return tuple(slot for slot in SLOTS if slot in grammar)


def split_sentences(document: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_END.split(document.strip()) if s.strip()]


def mutate_punctuation(fragment: str) -> str:
    """Change the last punctuation mark, or append one, to break the verbatim copy."""
    for i in range(len(fragment) - 1, -1, -1):
        if fragment[i] in _PUNCT_SWAP:
            return fragment[:i] + _PUNCT_SWAP[fragment[i]] + fragment[i + 1 :]
    return fragment + '.'


@dataclass(frozen=True)
class ToyInstance:
    """Per-instance slot vocabularies, all conditioned on ``bucket``."""

    query: str
    document: str
    bucket: int
    intents: Tuple[str, ...]
    fragments: Tuple[Optional[str], ...]
    labels: Tuple[int, ...] = LABELS

    @classmethod
    def build(
        cls,
        query: str,
        document: str,
        intents: Sequence[str],
        *,
        buckets: int = DEFAULT_BUCKETS,
        vocab_width: Mapping[str, int] = DEFAULT_VOCAB_WIDTH,
    ) -> 'ToyInstance':
        intent_vocab = ('',) + tuple(i for i in intents if i.strip())
        intent_vocab = intent_vocab[: vocab_width[INTENT]]

        fragments: List[Optional[str]] = [None]
        for sentence in split_sentences(document):
            if len(fragments) + 2 > vocab_width[EXTRACT]:
                break
            mutated = mutate_punctuation(sentence)
            if validate_extract(mutated, document):
                continue
            fragments.extend([sentence, mutated])

        return cls(
            query=query,
            document=document,
            bucket=feature_bucket(query, buckets),
            intents=intent_vocab,
            fragments=tuple(fragments),
        )

    def vocabulary(self, slot: str) -> tuple:
        if slot == INTENT:
            return self.intents
        if slot == EXTRACT:
            return self.fragments
        if slot == SCORE:
            return self.labels
        raise InputError(f'Unknown slot `{slot}`')

    def vocab_size(self, slot: str) -> int:
        return len(self.vocabulary(slot))


@dataclass
class ToyPolicyParams:
    """Logit tables, one ``(buckets, width)`` array per slot."""

    logits: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(
        cls,
        buckets: int = DEFAULT_BUCKETS,
        vocab_width: Mapping[str, int] = DEFAULT_VOCAB_WIDTH,
    ) -> 'ToyPolicyParams':
        return cls({slot: np.zeros((buckets, vocab_width[slot])) for slot in SLOTS})

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        buckets: int = DEFAULT_BUCKETS,
        vocab_width: Mapping[str, int] = DEFAULT_VOCAB_WIDTH,
        scale: float = 1.0,
    ) -> 'ToyPolicyParams':
        return cls(
            {
                slot: rng.normal(0.0, scale, size=(buckets, vocab_width[slot]))
                for slot in SLOTS
            }
        )

    @property
    def buckets(self) -> int:
        return next(iter(self.logits.values())).shape[0]

    def copy(self) -> 'ToyPolicyParams':
        return ToyPolicyParams({slot: arr.copy() for slot, arr in self.logits.items()})

    def zeros_like(self) -> 'ToyPolicyParams':
        return ToyPolicyParams(
            {slot: np.zeros_like(arr) for slot, arr in self.logits.items()}
        )

    def add_scaled_(self, other: 'ToyPolicyParams', scale: float) -> 'ToyPolicyParams':
        """In-place ``self += scale * other``."""
        for slot, arr in other.logits.items():
            self.logits[slot] += scale * arr
        return self

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(arr))) for arr in self.logits.values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for arr in self.logits.values())

    def to_dict(self) -> Dict[str, list]:
        return {slot: arr.tolist() for slot, arr in self.logits.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, list]) -> 'ToyPolicyParams':
        return cls({slot: np.asarray(data[slot], dtype=float) for slot in SLOTS})


def _row(params: ToyPolicyParams, instance: ToyInstance, slot: str) -> np.ndarray:
    k = instance.vocab_size(slot)
    if k == 0:
        raise InputError(f'Empty vocabulary for slot `{slot}`')
    table = params.logits[slot]
    if k > table.shape[1]:
        raise InputError(
            f'Slot `{slot}` has {k} candidates but the policy is {table.shape[1]} wide'
        )
    return table[instance.bucket, :k]


def slot_logprobs(
    params: ToyPolicyParams, instance: ToyInstance, slot: str
) -> np.ndarray:
    """Log-probabilities over the slot's vocabulary for this instance."""
    return log_softmax(_row(params, instance, slot))


def toy_sample(
    params: ToyPolicyParams,
    instance: ToyInstance,
    sampling: SamplingConfig,
    slots: Sequence[str],
    rng: Optional[np.random.Generator] = None,
) -> List[Tuple[Token, float]]:
    """Draw one token per slot; returns ``((slot, index), logprob)`` pairs.

    At temperature 0 the argmax is taken (lowest index on ties) and the
    reported log-probability is the untempered one.
    """
    rng = rng if rng is not None else np.random.default_rng(sampling.seed)
    drawn = []
    for slot in slots:
        row = _row(params, instance, slot)
        if sampling.temperature == 0:
            index = int(np.argmax(row))
            logp = float(log_softmax(row)[index])
        else:
            tempered = row / sampling.temperature
            index = int(rng.choice(len(row), p=softmax(tempered)))
            logp = float(log_softmax(tempered)[index])
        drawn.append(((slot, index), logp))
    return drawn


def iter_token_terms(
    params: ToyPolicyParams, instance: ToyInstance, tokens: Sequence[Token]
) -> Iterator[Tuple[str, int, int, float, np.ndarray]]:
    """Yield ``(slot, bucket, k, logprob, d logprob / d logits[slot][bucket, :k])``."""
    for slot, index in tokens:
        row = _row(params, instance, slot)
        k = len(row)
        if not 0 <= index < k:
            raise InputError(f'Token index {index} outside slot `{slot}` of size {k}')
        logp = log_softmax(row)
        grad_row = -np.exp(logp)
        grad_row[index] += 1.0
        yield slot, instance.bucket, k, float(logp[index]), grad_row


def toy_logprob_and_grad(
    params: ToyPolicyParams, instance: ToyInstance, tokens: Sequence[Token]
) -> Tuple[np.ndarray, ToyPolicyParams]:
    """Per-token log-probabilities and the gradient of their sum."""
    logps = []
    grad = params.zeros_like()
    for slot, bucket, k, logp, grad_row in iter_token_terms(params, instance, tokens):
        logps.append(logp)
        grad.logits[slot][bucket, :k] += grad_row
    return np.asarray(logps), grad


def token_logprobs(
    params: ToyPolicyParams, instance: ToyInstance, tokens: Sequence[Token]
) -> np.ndarray:
    return np.asarray(
        [slot_logprobs(params, instance, slot)[index] for slot, index in tokens]
    )


def _token_text(instance: ToyInstance, token: Token) -> str:
    slot, index = token
    value = instance.vocabulary(slot)[index]
    return 'none' if value is None else str(value)


class ToyBackend:
    """Backend adapter: answers the rounds of one instance from the toy policy.

    The round is recognised by the number of user turns in the conversation;
    the first round samples ``round1_grammar`` slots, the second the
    ``round2_grammar`` slots. With ``round1_grammar=None`` (single-round
    interaction) the first call samples everything.
    """

    def __init__(
        self,
        params: ToyPolicyParams,
        instance: ToyInstance,
        round1_grammar: Optional[Grammar] = ROUND1,
        round2_grammar: Grammar = ROUND2,
    ):
        self.params = params
        self.instance = instance
        self.round1_grammar = round1_grammar
        self.round2_grammar = round2_grammar

    def complete(
        self, messages: Sequence[Message], sampling: SamplingConfig
    ) -> CompletionResult:
        user_turns = sum(1 for m in messages if m.role == 'user')
        first_round = user_turns == 1 and self.round1_grammar is not None
        grammar = self.round1_grammar if first_round else self.round2_grammar
        assert grammar is not None

        rng = np.random.default_rng([sampling.seed, user_turns])
        slots = slots_for(grammar)
        drawn = toy_sample(self.params, self.instance, sampling, slots, rng)
        choice = {slot: index for (slot, index), _ in drawn}

        think = f'Query "{self.instance.query}" considered.'
        if first_round:
            intent = self.instance.intents[choice[INTENT]] if INTENT in choice else None
            text = render_round1(Round1Output(think, intent), grammar)
        else:
            text = render_round2(
                Round2Output(
                    think=think,
                    score=self.instance.labels[choice[SCORE]],
                    extract=self.instance.fragments[choice[EXTRACT]]
                    if EXTRACT in choice
                    else None,
                    intent=self.instance.intents[choice[INTENT]]
                    if INTENT in choice
                    else None,
                ),
                grammar,
            )

        return CompletionResult(
            text=text,
            token_count=len(drawn),
            token_logprobs=[(_token_text(self.instance, tok), lp) for tok, lp in drawn],
            token_ids=[index for (_, index), _ in drawn],
            metadata={'slots': list(slots)},
        )
