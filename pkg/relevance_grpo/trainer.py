"""GRPO training of the toy policy, with an optional supervised cold start."""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, InputError, TrainingDivergedError
from .grpo import (
    GrpoConfig,
    PolicySnapshot,
    ToyGroup,
    grpo_gradient,
    grpo_terms,
    toy_group_logprobs,
)
from .jsonl import atomic_open
from .policy.base import SamplingConfig
from .policy.toy import (
    DEFAULT_BUCKETS,
    DEFAULT_VOCAB_WIDTH,
    EXTRACT,
    INTENT,
    SCORE,
    Token,
    ToyBackend,
    ToyInstance,
    ToyPolicyParams,
    feature_bucket,
    slots_for,
    token_logprobs,
    toy_logprob_and_grad,
    toy_sample,
)
from .reward import RewardConfig
from .rollout import FULL, InteractionVariant, QueryDocPair, run_group

logger = logging.getLogger(__name__)

INIT_MODES = ('zero', 'cold_start')
SMOOTHING_WINDOW = 10

DEFAULT_TOPICS: Tuple[Tuple[str, str], ...] = (
    (
        'best ramen in ueno',
        'We queued for ramen in Ueno after the museum. The broth was rich and '
        'the noodles were firm. Prices were fair for Tokyo.',
    ),
    (
        'ski resorts near sapporo',
        'Niseko is two hours from Sapporo by bus. Powder snow lasts until March. '
        'Rental shops open at eight.',
    ),
    (
        'kyoto autumn leaves',
        'The maples at Tofukuji turn red in late November. Arrive early, the '
        'bridge gets crowded! Evening illumination is worth it.',
    ),
    (
        'shibuya night bars',
        'Chilling in Shibuya after midnight is easy. Small bars line Nonbei '
        'Yokocho. Most charge a seating fee.',
    ),
    (
        'osaka street food',
        'Dotonbori stalls sell takoyaki until late. Try the kushikatsu in '
        'Shinsekai. Never double dip the sauce!',
    ),
    (
        'hakone hot springs',
        'Hakone has dozens of onsen ryokan. Day passes cost around two thousand '
        'yen. Tattoos may be refused at public baths.',
    ),
)


def default_intents(query: str) -> Tuple[str, ...]:
    return (
        f'find information about {query}',
        f'compare options for {query}',
        f'plan a visit around {query}',
    )


class SyntheticTask:
    """Labeled pairs whose gold label is a deterministic function of the query.

    ``gold = feature_bucket(query) mod 3``; one candidate document per topic.
    """

    def __init__(
        self,
        topics: Sequence[Tuple[str, str]] = DEFAULT_TOPICS,
        buckets: int = DEFAULT_BUCKETS,
        vocab_width: Dict[str, int] = DEFAULT_VOCAB_WIDTH,
    ):
        if not topics:
            raise InputError('SyntheticTask needs at least one topic')
        self.buckets = buckets
        self.vocab_width = dict(vocab_width)
        self.pairs = [
            QueryDocPair(
                id=f'synthetic-{i}',
                query=query,
                aux_docs=(document.split('. ')[0],),
                candidate=document,
                gold=feature_bucket(query, buckets) % 3,
            )
            for i, (query, document) in enumerate(topics)
        ]


class ToyEnvironment:
    """Maps pairs to toy instances, caching the derived vocabularies."""

    def __init__(
        self,
        pairs: Sequence[QueryDocPair],
        buckets: int = DEFAULT_BUCKETS,
        vocab_width: Dict[str, int] = DEFAULT_VOCAB_WIDTH,
    ):
        if not pairs:
            raise InputError('Training needs at least one pair')
        missing = [p.id for p in pairs if p.gold is None]
        if missing:
            raise InputError(f'Training pairs without gold label: {missing[:5]}')
        self.pairs = list(pairs)
        self.buckets = buckets
        self.vocab_width = dict(vocab_width)
        self._instances: Dict[str, ToyInstance] = {}

    @classmethod
    def from_task(cls, task: SyntheticTask) -> 'ToyEnvironment':
        return cls(task.pairs, task.buckets, task.vocab_width)

    def instance(self, pair: QueryDocPair) -> ToyInstance:
        if pair.id not in self._instances:
            self._instances[pair.id] = ToyInstance.build(
                pair.query,
                pair.candidate,
                default_intents(pair.query),
                buckets=self.buckets,
                vocab_width=self.vocab_width,
            )
        return self._instances[pair.id]

    def initial_params(self) -> ToyPolicyParams:
        return ToyPolicyParams.zeros(self.buckets, self.vocab_width)


def variant_slots(variant: InteractionVariant) -> Tuple[str, ...]:
    """Slots sampled over a whole trajectory, in generation order."""
    slots = slots_for(variant.round2_grammar)
    if variant.round1_grammar is not None:
        slots = slots_for(variant.round1_grammar) + slots
    return slots


def teacher_demonstration(
    instance: ToyInstance,
    gold: int,
    rng: np.random.Generator,
    slots: Sequence[str],
    accuracy: float = 0.7,
) -> List[Token]:
    """A well-formed response whose label is correct with probability ``accuracy``."""
    tokens: List[Token] = []
    for slot in slots:
        if slot == INTENT:
            tokens.append((INTENT, int(rng.integers(1, len(instance.intents)))))
        elif slot == EXTRACT:
            verbatim = list(range(1, len(instance.fragments), 2))
            if gold == 0 or not verbatim:
                tokens.append((EXTRACT, 0))
            else:
                tokens.append((EXTRACT, int(rng.choice(verbatim))))
        elif slot == SCORE:
            label = gold
            if rng.random() >= accuracy:
                label = int(rng.choice([c for c in instance.labels if c != gold]))
            tokens.append((SCORE, label))
    return tokens


def cold_start_fit(
    params: ToyPolicyParams,
    demonstrations: Sequence[Tuple[ToyInstance, List[Token]]],
    learning_rate: float = 1.0,
    epochs: int = 50,
) -> ToyPolicyParams:
    """Maximum-likelihood fit on demonstrations by full-batch gradient ascent."""
    if not demonstrations:
        raise InputError('cold start needs at least one demonstration')
    fitted = params.copy()
    for epoch in range(epochs):
        grad = fitted.zeros_like()
        total = 0.0
        for instance, tokens in demonstrations:
            logps, g = toy_logprob_and_grad(fitted, instance, tokens)
            grad.add_scaled_(g, 1.0)
            total += float(np.sum(logps))
        fitted.add_scaled_(grad, learning_rate / len(demonstrations))
        logger.debug(
            'Cold start epoch %d: mean log-likelihood %.4f',
            epoch,
            total / len(demonstrations),
        )
    return fitted


def _ratios_inside(
    groups: Sequence[ToyGroup], params: ToyPolicyParams, margin: float
) -> bool:
    for group in groups:
        for tokens, logp_old in zip(group.tokens, group.logp_old):
            logp = token_logprobs(params, group.instance, tokens)
            if np.any(np.abs(np.exp(logp - logp_old) - 1.0) > margin):
                return False
    return True


def _smallest_gradient(
    groups: Sequence[ToyGroup],
    params: ToyPolicyParams,
    ref: ToyPolicyParams,
    config: GrpoConfig,
) -> float:
    grad = grpo_gradient(groups, params, ref, config)
    smallest = math.inf
    for group in groups:
        bucket = group.instance.bucket
        for slot in {slot for tokens in group.tokens for slot, _ in tokens}:
            k = group.instance.vocab_size(slot)
            # a single candidate has log-probability 0 whatever its logit
            if k > 1:
                row = np.abs(grad.logits[slot][bucket, :k])
                smallest = min(smallest, float(row.min()))
    return smallest


def gradient_check_problem(
    env: ToyEnvironment,
    rng: np.random.Generator,
    config: Optional[GrpoConfig] = None,
    group_size: int = 4,
    group_count: int = 2,
    variant: InteractionVariant = FULL,
    noise_scale: float = 0.02,
    min_gradient: float = 1e-7,
) -> Tuple[ToyPolicyParams, ToyPolicyParams, List[ToyGroup]]:
    """Random ``(params, reference, groups)`` for checking gradients.

    Groups are sampled from a perturbed copy of ``params`` acting as the old
    policy, so importance ratios differ from 1 but every ratio stays within
    ``config.epsilon / 2`` of 1, away from the kinks of the clipped surrogate.
    Rewards are drawn from ``{0, 0.5, 1}`` and redrawn until every group has
    a spread. Draws where a touched coordinate has a gradient below
    ``min_gradient``, with ``config.beta`` or with no KL term, are rejected:
    there a central difference measures rounding noise.
    """
    config = config or GrpoConfig()
    if group_size < 2:
        raise InputError('group_size must be at least 2 to have a reward spread')
    buckets, widths = env.buckets, env.vocab_width
    params = ToyPolicyParams.random(rng, buckets, widths)
    ref = ToyPolicyParams.random(rng, buckets, widths)
    slots = variant_slots(variant)
    sampling = SamplingConfig(temperature=1.0)
    screens = (replace(config, beta=0.0), config)

    while True:
        noise = ToyPolicyParams.random(rng, buckets, widths, noise_scale)
        old = params.copy().add_scaled_(noise, 1.0)
        groups = []
        for _ in range(group_count):
            pair = env.pairs[int(rng.integers(0, len(env.pairs)))]
            instance = env.instance(pair)
            tokens = [
                [token for token, _ in toy_sample(old, instance, sampling, slots, rng)]
                for _ in range(group_size)
            ]
            rewards = rng.choice([0.0, 0.5, 1.0], size=group_size)
            while np.ptp(rewards) == 0:
                rewards = rng.choice([0.0, 0.5, 1.0], size=group_size)
            groups.append(
                ToyGroup.sampled_from(
                    instance, [float(r) for r in rewards], tokens, old
                )
            )
        if not _ratios_inside(groups, params, config.epsilon / 2):
            noise_scale /= 2
            continue
        if all(
            _smallest_gradient(groups, params, ref, screen) >= min_gradient
            for screen in screens
        ):
            return params, ref, groups
        logger.debug('Redrawing a gradient check problem with a vanishing gradient')


@dataclass
class TrainingLogEntry:
    step: int
    mean_reward: float
    mean_token_count: float
    objective: float
    kl_mean: float
    format_rate: float
    unusable_groups: int
    elapsed_s: float

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingResult:
    log: List[TrainingLogEntry]
    params: ToyPolicyParams
    reference: ToyPolicyParams
    init: str = 'zero'
    seed: int = 0

    @property
    def rewards(self) -> List[float]:
        return [entry.mean_reward for entry in self.log]


def train(
    pairs: Sequence[QueryDocPair],
    config: Optional[GrpoConfig] = None,
    init: str = 'zero',
    *,
    seed: int = 0,
    reward_config: Optional[RewardConfig] = None,
    variant: InteractionVariant = FULL,
    reference: Optional[ToyPolicyParams] = None,
    teacher_accuracy: float = 0.7,
    demos_per_pair: int = 32,
    buckets: int = DEFAULT_BUCKETS,
    vocab_width: Dict[str, int] = DEFAULT_VOCAB_WIDTH,
    log_every: int = 20,
    on_step: Optional[Callable[[TrainingLogEntry], None]] = None,
    stop_at: Optional[float] = None,
) -> TrainingResult:
    """Run ``config.steps`` GRPO steps on the toy policy.

    Every step snapshots ``theta_old``, rolls out ``config.batch_size`` groups
    of ``config.group_size`` trajectories at temperature 1, and takes one plain
    gradient-ascent step on the objective. The reference policy is the policy
    at training start unless ``reference`` is given. With ``stop_at`` set,
    training ends at the first step whose full trailing window of
    :data:`SMOOTHING_WINDOW` mean rewards averages at least ``stop_at``, the
    step :func:`first_crossing` reports.
    """
    config = config or GrpoConfig()
    reward_config = reward_config or RewardConfig()
    if init not in INIT_MODES:
        raise InputError(f'init must be one of {INIT_MODES}, got `{init}`')
    if config.reference_snapshot_policy == 'fixed-file' and reference is None:
        raise InputError('reference_snapshot_policy=fixed-file needs reference params')

    env = ToyEnvironment(pairs, buckets, vocab_width)
    rng = np.random.default_rng(seed)
    params = env.initial_params()

    if init == 'cold_start':
        slots = variant_slots(variant)
        demos = []
        for pair in env.pairs:
            instance = env.instance(pair)
            for _ in range(demos_per_pair):
                tokens = teacher_demonstration(
                    instance, pair.gold, rng, slots, teacher_accuracy
                )
                demos.append((instance, tokens))
        params = cold_start_fit(params, demos)

    ref = reference.copy() if reference is not None else params.copy()
    started = time.monotonic()
    log: List[TrainingLogEntry] = []

    for step in range(config.steps):
        old = PolicySnapshot.take(params, 'theta_old')
        picks = rng.integers(0, len(env.pairs), config.batch_size)
        batch = [env.pairs[i] for i in picks]

        groups: List[ToyGroup] = []
        rewards: List[float] = []
        token_counts: List[int] = []
        format_ok = 0
        unusable = 0
        for pair in batch:
            instance = env.instance(pair)
            backend = ToyBackend(
                old.params, instance, variant.round1_grammar, variant.round2_grammar
            )
            group = run_group(
                pair,
                backend,
                config.group_size,
                SamplingConfig(temperature=1.0, seed=int(rng.integers(0, 2 ** 31))),
                variant=variant,
                reward_config=reward_config,
            )
            if group.unusable:
                unusable += 1
                continue
            rewards.extend(group.rewards)
            token_counts.extend(t.token_count for t in group.trajectories)
            format_ok += sum(
                1 for t in group.trajectories if t.reward and t.reward.format_ok
            )
            groups.append(
                ToyGroup(
                    instance=instance,
                    rewards=group.rewards,
                    tokens=[t.tokens for t in group.trajectories],
                    logp_old=[
                        np.asarray(t.token_logprobs_old) for t in group.trajectories
                    ],
                )
            )

        if not groups:
            raise TrainingDivergedError(
                f'Step {step}: every group was unusable', {'step': step}
            )

        terms = grpo_terms(toy_group_logprobs(groups, params, ref), config)
        if not math.isfinite(terms.objective):
            raise TrainingDivergedError(
                f'Objective became non-finite at step {step}',
                {
                    'step': step,
                    'objective': terms.objective,
                    'kl_mean': terms.kl_mean,
                    'max_abs_logit': params.max_abs(),
                    'mean_reward': float(np.mean(rewards)),
                },
            )

        grad = grpo_gradient(groups, params, ref, config)
        params.add_scaled_(grad, config.learning_rate)
        if not params.is_finite():
            raise TrainingDivergedError(
                f'Parameters became non-finite at step {step}',
                {'step': step, 'objective': terms.objective},
            )

        entry = TrainingLogEntry(
            step=step,
            mean_reward=float(np.mean(rewards)),
            mean_token_count=float(np.mean(token_counts)),
            objective=terms.objective,
            kl_mean=terms.kl_mean,
            format_rate=format_ok / len(rewards),
            unusable_groups=unusable,
            elapsed_s=time.monotonic() - started,
        )
        log.append(entry)
        if on_step is not None:
            on_step(entry)
        if log_every and step % log_every == 0:
            logger.info(
                'step %d: reward %.3f, format %.3f, objective %.4f, kl %.5f',
                step,
                entry.mean_reward,
                entry.format_rate,
                entry.objective,
                entry.kl_mean,
            )
        if stop_at is not None and _window_reached(log, stop_at):
            logger.info('Smoothed reward reached %g at step %d', stop_at, step)
            break

    return TrainingResult(log=log, params=params, reference=ref, init=init, seed=seed)


def _window_reached(log: Sequence[TrainingLogEntry], threshold: float) -> bool:
    if len(log) < SMOOTHING_WINDOW:
        return False
    window = [entry.mean_reward for entry in log[-SMOOTHING_WINDOW:]]
    return float(np.mean(window)) >= threshold


def smoothed(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> List[float]:
    """Trailing mean over at most ``window`` values."""
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1) : i + 1]
        out.append(float(np.mean(chunk)))
    return out


def first_crossing(
    values: Sequence[float], threshold: float, window: int = SMOOTHING_WINDOW
) -> Optional[int]:
    """First step whose full trailing window averages at least ``threshold``."""
    for i, value in enumerate(smoothed(values, window)):
        if i + 1 >= window and value >= threshold:
            return i
    return None


def final_reward(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> float:
    if not values:
        raise InputError('empty training log')
    return float(np.mean(values[-window:]))


def write_training_csv(path, log: Sequence[TrainingLogEntry]) -> None:
    """Plot-ready series, one row per step, with the smoothed reward appended."""
    rewards_smoothed = smoothed([entry.mean_reward for entry in log])
    with atomic_open(path) as f:
        writer = csv.writer(f)
        columns = list(TrainingLogEntry.__dataclass_fields__)
        writer.writerow(columns + ['mean_reward_smoothed'])
        for entry, smooth in zip(log, rewards_smoothed):
            row = entry.to_dict()
            writer.writerow([row[c] for c in columns] + [smooth])


def read_training_log(records) -> List[TrainingLogEntry]:
    try:
        return [TrainingLogEntry(**record) for record in records]
    except TypeError as e:
        raise DataError(f'Malformed training log record: {e}') from e
