"""Two-round interaction: intent inference, then extraction and scoring.

Round 1 shows the query with auxiliary in-platform documents and asks for the
user's intent. Round 2 continues the same conversation with the candidate
document and asks for a verbatim fragment and a 0/1/2 relevance score. A parse
failure in either round is recorded in the trajectory and gates the reward to
zero; only backend failures mark a trajectory as failed.
"""
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .exceptions import BackendError, DataError, InputError
from .jsonl import append_jsonl, drop_torn_tail, read_jsonl
from .policy.base import Backend, CompletionResult, Message, SamplingConfig
from .prompts import (
    DEFAULT_PROMPTS,
    PromptSet,
    render_round1_prompt,
    render_round2_messages,
    render_single_round_prompt,
)
from .reward import (
    Round1Result,
    Round2Result,
    RewardBreakdown,
    RewardConfig,
    is_inconsistent_extract,
    total_reward,
)
from .tagparse import (
    EXTRACT,
    ROUND1,
    ROUND1_NO_INTENT,
    ROUND2,
    ROUND2_NO_EXTRACT,
    SINGLE_ROUND,
    Grammar,
    ParseFailure,
    parse_round1,
    parse_round2,
)

logger = logging.getLogger(__name__)

DEFAULT_GROUP_SIZE = 16


@dataclass(frozen=True)
class InteractionVariant:
    """Which grammars are enforced and whether auxiliary documents are shown."""

    name: str
    #: None for single-round interaction
    round1_grammar: Optional[Grammar]
    round2_grammar: Grammar
    use_aux_docs: bool = True

    @property
    def single_round(self) -> bool:
        return self.round1_grammar is None

    @property
    def extract_checked(self) -> bool:
        return EXTRACT in self.round2_grammar


FULL = InteractionVariant('full', ROUND1, ROUND2)
VARIANTS: Dict[str, InteractionVariant] = {
    v.name: v
    for v in (
        FULL,
        InteractionVariant('no_intent', ROUND1_NO_INTENT, ROUND2),
        InteractionVariant('no_extract', ROUND1, ROUND2_NO_EXTRACT),
        InteractionVariant('no_retrieval', ROUND1, ROUND2, use_aux_docs=False),
        InteractionVariant('single_round', None, SINGLE_ROUND),
    )
}


def get_variant(name: str) -> InteractionVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise InputError(
            f'Unknown interaction variant `{name}`, expected one of {sorted(VARIANTS)}'
        ) from None


@dataclass(frozen=True)
class QueryDocPair:
    id: str
    query: str
    aux_docs: Tuple[str, ...]
    candidate: str
    gold: Optional[int] = None

    def __post_init__(self):
        if not self.query.strip():
            raise InputError(f'Pair {self.id}: query must be non-empty')
        if self.gold is not None and self.gold not in (0, 1, 2):
            raise InputError(f'Pair {self.id}: gold label must be 0, 1 or 2')
        object.__setattr__(self, 'aux_docs', tuple(self.aux_docs))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'query': self.query,
            'aux_docs': list(self.aux_docs),
            'candidate': self.candidate,
            'gold': self.gold,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QueryDocPair':
        try:
            return cls(
                id=str(data['id']),
                query=data['query'],
                aux_docs=tuple(data.get('aux_docs') or ()),
                candidate=data['candidate'],
                gold=data.get('gold'),
            )
        except KeyError as e:
            raise DataError(f'Query-document record is missing {e}') from e


def read_pairs(path) -> List[QueryDocPair]:
    return [QueryDocPair.from_dict(record) for record in read_jsonl(path)]


@dataclass
class Trajectory:
    pair_id: str
    seed: int
    candidate: str
    variant: InteractionVariant = FULL
    gold: Optional[int] = None
    round1_messages: List[Message] = field(default_factory=list)
    round1_raw: Optional[str] = None
    round2_messages: List[Message] = field(default_factory=list)
    round2_raw: Optional[str] = None
    #: sampling-policy log-probabilities, round 1 then round 2
    token_logprobs_old: Optional[List[float]] = None
    token_count: int = 0
    #: toy-policy vocabulary indices and their slots, aligned with the log-probabilities
    token_ids: Optional[List[int]] = None
    token_slots: Optional[List[str]] = None
    reward: Optional[RewardBreakdown] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def reward_total(self) -> float:
        return self.reward.total if self.reward is not None else 0.0

    def reparse(self) -> Tuple[Round1Result, Round2Result]:
        round1 = None
        if not self.variant.single_round and self.round1_raw is not None:
            round1 = parse_round1(self.round1_raw, self.variant.round1_grammar)
        round2 = None
        if self.round2_raw is not None:
            round2 = parse_round2(self.round2_raw, self.variant.round2_grammar)
        return round1, round2

    @property
    def tokens(self) -> List[Tuple[str, int]]:
        if self.token_ids is None or self.token_slots is None:
            raise InputError(f'Trajectory {self.pair_id}/{self.seed} has no token ids')
        return list(zip(self.token_slots, self.token_ids))

    def to_dict(self) -> Dict[str, Any]:
        round1, round2 = self.reparse()
        return {
            'pair_id': self.pair_id,
            'seed': self.seed,
            'variant': self.variant.name,
            'candidate': self.candidate,
            'gold': self.gold,
            'round1_messages': [m.to_dict() for m in self.round1_messages],
            'round1_raw': self.round1_raw,
            'round1_parsed': _parsed_dict(round1),
            'round2_messages': [m.to_dict() for m in self.round2_messages],
            'round2_raw': self.round2_raw,
            'round2_parsed': _parsed_dict(round2),
            'token_logprobs_old': self.token_logprobs_old,
            'token_count': self.token_count,
            'token_ids': self.token_ids,
            'token_slots': self.token_slots,
            'reward': self.reward.to_dict() if self.reward is not None else None,
            'error': self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Trajectory':
        try:
            reward = data.get('reward')
            return cls(
                pair_id=str(data['pair_id']),
                seed=int(data['seed']),
                candidate=data['candidate'],
                variant=get_variant(data.get('variant', FULL.name)),
                gold=data.get('gold'),
                round1_messages=_messages(data, 'round1_messages'),
                round1_raw=data.get('round1_raw'),
                round2_messages=_messages(data, 'round2_messages'),
                round2_raw=data.get('round2_raw'),
                token_logprobs_old=data.get('token_logprobs_old'),
                token_count=int(data.get('token_count', 0)),
                token_ids=data.get('token_ids'),
                token_slots=data.get('token_slots'),
                reward=RewardBreakdown.from_dict(reward) if reward else None,
                error=data.get('error'),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f'Malformed trajectory record: {e!r}') from e


def _messages(data: Dict[str, Any], key: str) -> List[Message]:
    return [Message.from_dict(m) for m in data.get(key, [])]


def _parsed_dict(result) -> Optional[Dict[str, Any]]:
    if result is None:
        return None
    if isinstance(result, ParseFailure):
        return {
            'failure': result.kind.value,
            'position': result.position,
            'tag': result.tag,
        }
    return asdict(result)


@dataclass
class GroupRollout:
    pair_id: str
    trajectories: List[Trajectory]
    unusable: bool = False

    @property
    def rewards(self) -> List[float]:
        return [t.reward_total for t in self.trajectories]

    @property
    def failed_count(self) -> int:
        return sum(1 for t in self.trajectories if t.failed)


def _merge_tokens(trajectory: Trajectory, results: Sequence[CompletionResult]) -> None:
    trajectory.token_count = sum(r.token_count for r in results)
    logprobs = [r.logprob_values for r in results]
    if all(lp is not None for lp in logprobs):
        trajectory.token_logprobs_old = [
            v for lp in logprobs for v in lp  # type: ignore
        ]
    if all(r.token_ids is not None for r in results):
        trajectory.token_ids = [i for r in results for i in r.token_ids]  # type: ignore
        trajectory.token_slots = [
            s for r in results for s in r.metadata.get('slots', [])
        ]


def run_trajectory(
    pair: QueryDocPair,
    backend: Backend,
    sampling: SamplingConfig,
    variant: InteractionVariant = FULL,
    reward_config: Optional[RewardConfig] = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
) -> Trajectory:
    """Run both rounds for one pair; backend errors are recorded, not raised."""
    reward_config = reward_config or RewardConfig()
    trajectory = Trajectory(
        pair_id=pair.id,
        seed=sampling.seed,
        candidate=pair.candidate,
        variant=variant,
        gold=pair.gold,
    )
    aux_docs = pair.aux_docs if variant.use_aux_docs else ()
    results: List[CompletionResult] = []

    try:
        if variant.single_round:
            messages = render_single_round_prompt(
                pair.query, aux_docs, pair.candidate, variant.round2_grammar, prompts
            )
            trajectory.round2_messages = messages
            results.append(backend.complete(messages, sampling))
            trajectory.round2_raw = results[-1].text
        else:
            assert variant.round1_grammar is not None
            messages = render_round1_prompt(
                pair.query, aux_docs, variant.round1_grammar, prompts
            )
            trajectory.round1_messages = messages
            results.append(backend.complete(messages, sampling))
            trajectory.round1_raw = results[-1].text

            prior = [*messages, Message('assistant', trajectory.round1_raw)]
            messages = render_round2_messages(
                prior, pair.candidate, variant.round2_grammar, prompts
            )
            trajectory.round2_messages = messages
            results.append(backend.complete(messages, sampling))
            trajectory.round2_raw = results[-1].text
    except BackendError as e:
        trajectory.error = f'{type(e).__name__}: {e}'
        logger.error(
            'Trajectory %s/%d failed: %s', pair.id, sampling.seed, trajectory.error
        )
        return trajectory

    _merge_tokens(trajectory, results)
    if pair.gold is not None:
        trajectory.reward = total_reward(trajectory, pair.gold, reward_config)
    return trajectory


def run_group(
    pair: QueryDocPair,
    backend: Backend,
    group_size: int = DEFAULT_GROUP_SIZE,
    sampling: Optional[SamplingConfig] = None,
    seeds: Optional[Sequence[int]] = None,
    *,
    variant: InteractionVariant = FULL,
    reward_config: Optional[RewardConfig] = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
    max_workers: int = 1,
) -> GroupRollout:
    """Sample ``group_size`` trajectories of one pair with distinct seeds.

    Seeds default to ``sampling.seed, sampling.seed + 1, ...``; trajectories
    are returned in ascending seed order.
    """
    if group_size < 2:
        raise InputError(f'group_size must be >= 2, got {group_size}')
    sampling = sampling or SamplingConfig()
    if seeds is None:
        seeds = [sampling.seed + i for i in range(group_size)]
    if len(seeds) != group_size or len(set(seeds)) != group_size:
        raise InputError(f'{group_size} distinct seeds are required')

    def _one(seed: int) -> Trajectory:
        return run_trajectory(
            pair, backend, sampling.with_seed(seed), variant, reward_config, prompts
        )

    ordered = sorted(seeds)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            trajectories = list(executor.map(_one, ordered))
    else:
        trajectories = [_one(seed) for seed in ordered]

    group = GroupRollout(pair_id=pair.id, trajectories=trajectories)
    if group.failed_count * 2 > group_size:
        group.unusable = True
        logger.warning(
            'Group %s unusable: %d of %d trajectories failed',
            pair.id,
            group.failed_count,
            group_size,
        )
    return group


def read_trajectories(path) -> List[Trajectory]:
    return [Trajectory.from_dict(record) for record in read_jsonl(path)]


def collect_rollouts(
    pairs: Iterable[QueryDocPair],
    backend_for: Callable[[QueryDocPair], Backend],
    output_path,
    group_size: int = DEFAULT_GROUP_SIZE,
    sampling: Optional[SamplingConfig] = None,
    *,
    variant: InteractionVariant = FULL,
    reward_config: Optional[RewardConfig] = None,
    prompts: PromptSet = DEFAULT_PROMPTS,
    max_workers: int = 1,
    resume: bool = True,
) -> int:
    """Append one line per trajectory to ``output_path``; returns lines written.

    Group seeds are ``sampling.seed, sampling.seed + 1, ...``. With ``resume``
    set, seeds already stored for a pair are not sampled again: complete
    groups are skipped and partial groups get only their missing seeds. A
    final line left unterminated by an interrupted write is dropped first.
    """
    if group_size < 2:
        raise InputError(f'group_size must be >= 2, got {group_size}')
    sampling = sampling or SamplingConfig()
    seeds = [sampling.seed + i for i in range(group_size)]
    collected: Dict[str, Set[int]] = defaultdict(set)
    if resume and Path(output_path).exists():
        if drop_torn_tail(output_path):
            logger.warning('Dropped an unterminated last line of %s', output_path)
        for record in read_jsonl(output_path):
            collected[str(record['pair_id'])].add(int(record['seed']))

    written = 0
    for pair in pairs:
        missing = [seed for seed in seeds if seed not in collected[pair.id]]
        if not missing:
            logger.info('Skipping pair %s, already collected', pair.id)
            continue
        if len(missing) == group_size:
            trajectories = run_group(
                pair,
                backend_for(pair),
                group_size,
                sampling,
                variant=variant,
                reward_config=reward_config,
                prompts=prompts,
                max_workers=max_workers,
            ).trajectories
        else:
            logger.info(
                'Completing pair %s: %d of %d seeds missing',
                pair.id,
                len(missing),
                group_size,
            )
            backend = backend_for(pair)
            trajectories = [
                run_trajectory(
                    pair,
                    backend,
                    sampling.with_seed(seed),
                    variant,
                    reward_config,
                    prompts,
                )
                for seed in missing
            ]
        for trajectory in trajectories:
            append_jsonl(output_path, trajectory.to_dict())
            written += 1
        logger.info(
            'Pair %s: mean reward %.3f',
            pair.id,
            sum(t.reward_total for t in trajectories) / len(trajectories),
        )
    return written


@dataclass
class RewardAudit:
    #: one ``{pair_id, seed, stored, recomputed, match}`` row per trajectory
    rows: List[Dict[str, Any]]
    #: positive scores given with the none-sentinel extract
    inconsistent_extracts: int = 0

    @property
    def mismatches(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if not row['match']]


def audit_rewards(
    trajectories: Iterable[Trajectory], config: RewardConfig
) -> RewardAudit:
    """Recompute every stored reward from the raw outputs and compare them exactly.

    Failed trajectories and trajectories without a gold label have no reward;
    they match when none was stored.
    """
    rows = []
    inconsistent = 0
    for trajectory in trajectories:
        stored = trajectory.reward.to_dict() if trajectory.reward is not None else None
        recomputed = None
        if not trajectory.failed and trajectory.gold is not None:
            recomputed = total_reward(trajectory, trajectory.gold, config).to_dict()
            _, round2 = trajectory.reparse()
            if trajectory.variant.extract_checked and is_inconsistent_extract(round2):
                inconsistent += 1
        rows.append(
            {
                'pair_id': trajectory.pair_id,
                'seed': trajectory.seed,
                'stored': stored,
                'recomputed': recomputed,
                'match': stored == recomputed,
            }
        )

    if inconsistent:
        logger.warning(
            '%d trajectories score the document as relevant '
            'without extracting a fragment',
            inconsistent,
        )
    return RewardAudit(rows, inconsistent)
