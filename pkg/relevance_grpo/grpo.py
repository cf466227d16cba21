"""Group-relative policy optimisation with a clipped surrogate and a KL penalty.

For every group of trajectories sampled from the same input the rewards are
standardised into advantages ``A_i = (r_i - mean) / std``. Each generated
token contributes

    min(ratio * A_i, clip(ratio, 1 - eps, 1 + eps) * A_i) - beta * kl

with ``ratio = pi(token) / pi_old(token)`` and the per-token estimator
``kl = x - ln x - 1``, ``x = pi_ref(token) / pi(token)``. Token terms are
averaged within a trajectory, trajectories within a group and groups within a
batch.

The gradient is exact for :mod:`relevance_grpo.policy.toy` parameters; the
``min`` is differentiated through the branch it selects.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError
from .policy.toy import (
    Token,
    ToyInstance,
    ToyPolicyParams,
    iter_token_terms,
    slot_logprobs,
    token_logprobs,
)

logger = logging.getLogger(__name__)

REFERENCE_POLICIES = ('initial', 'fixed-file')


@dataclass
class GrpoConfig:
    epsilon: float = 0.2
    beta: float = 0.01
    group_size: int = 16
    learning_rate: float = 4.0
    batch_size: int = 8
    steps: int = 400
    reference_snapshot_policy: str = 'initial'

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise InputError(f'epsilon must be in (0, 1), got {self.epsilon}')
        if self.beta < 0:
            raise InputError(f'beta must be >= 0, got {self.beta}')
        if self.group_size < 2:
            raise InputError(f'group_size must be >= 2, got {self.group_size}')
        if self.batch_size < 1 or self.steps < 0:
            raise InputError('batch_size must be >= 1 and steps >= 0')
        if self.learning_rate < 0:
            raise InputError('learning_rate must be >= 0')
        if self.reference_snapshot_policy not in REFERENCE_POLICIES:
            raise InputError(
                f'reference_snapshot_policy must be one of {REFERENCE_POLICIES}'
            )


@dataclass(frozen=True)
class AdvantageStats:
    mean: float
    std: float
    advantages: np.ndarray


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only copy of toy parameters tagged ``theta_old`` or ``theta_ref``."""

    tag: str
    params: ToyPolicyParams

    @classmethod
    def take(cls, params: ToyPolicyParams, tag: str) -> 'PolicySnapshot':
        if tag not in ('theta_old', 'theta_ref'):
            raise InputError(f'Unknown snapshot tag `{tag}`')
        frozen = params.copy()
        for arr in frozen.logits.values():
            arr.setflags(write=False)
        return cls(tag, frozen)


def standardize_advantages(rewards: Sequence[float]) -> AdvantageStats:
    """Population-standardised rewards; a constant group gets all-zero advantages."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise InputError(f'At least 2 rewards are required, got {len(r)}')

    mean = float(np.mean(r))
    if np.ptp(r) == 0:
        return AdvantageStats(mean, 0.0, np.zeros_like(r))
    std = float(np.std(r))
    return AdvantageStats(mean, std, (r - mean) / std)


def per_token_surrogate(
    logp_new: float, logp_old: float, advantage: float, epsilon: float
) -> float:
    ratio = float(np.exp(logp_new - logp_old))
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_estimate(logp_new, logp_ref):
    """``x - ln x - 1`` with ``x = exp(logp_ref - logp_new)``; works elementwise."""
    d = np.subtract(logp_ref, logp_new)
    kl = np.maximum(np.expm1(d) - d, 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl


@dataclass
class TrajectoryLogprobs:
    """Aligned per-token log-probabilities of one trajectory."""

    new: np.ndarray
    old: np.ndarray
    ref: np.ndarray

    def __post_init__(self):
        self.new = np.asarray(self.new, dtype=float)
        self.old = np.asarray(self.old, dtype=float)
        self.ref = np.asarray(self.ref, dtype=float)
        if not (self.new.shape == self.old.shape == self.ref.shape):
            raise InputError(
                f'Token vectors differ in length: new {self.new.shape}, '
                f'old {self.old.shape}, ref {self.ref.shape}'
            )


@dataclass
class GroupLogprobs:
    rewards: Sequence[float]
    trajectories: List[TrajectoryLogprobs]

    def __post_init__(self):
        if len(self.rewards) != len(self.trajectories):
            raise InputError('One reward per trajectory is required')


@dataclass
class ObjectiveTerms:
    objective: float
    kl_mean: float
    clip_fraction: float
    degenerate_groups: int


def _trajectory_value(
    traj: TrajectoryLogprobs, advantage: float, config: GrpoConfig
) -> Tuple[float, float, int]:
    ratio = np.exp(traj.new - traj.old)
    clipped = np.clip(ratio, 1.0 - config.epsilon, 1.0 + config.epsilon)
    surrogate = np.minimum(ratio * advantage, clipped * advantage)
    kl = np.maximum(np.expm1(traj.ref - traj.new) - (traj.ref - traj.new), 0.0)
    n = len(traj.new)
    value = float(np.mean(surrogate - config.beta * kl)) if n else 0.0
    clipped_tokens = int(np.sum(ratio * advantage > clipped * advantage))
    return value, float(np.sum(kl)), clipped_tokens


def grpo_terms(groups: Sequence[GroupLogprobs], config: GrpoConfig) -> ObjectiveTerms:
    """The objective and its diagnostics over a batch of groups."""
    if not groups:
        raise InputError('At least one group is required')

    group_values = []
    kl_sum = 0.0
    token_total = 0
    clipped_total = 0
    degenerate = 0
    for group in groups:
        stats = standardize_advantages(group.rewards)
        if stats.std == 0:
            degenerate += 1
        values = []
        for traj, advantage in zip(group.trajectories, stats.advantages):
            value, kl, clipped = _trajectory_value(traj, float(advantage), config)
            values.append(value)
            kl_sum += kl
            clipped_total += clipped
            token_total += len(traj.new)
        group_values.append(float(np.mean(values)))

    return ObjectiveTerms(
        objective=float(np.mean(group_values)),
        kl_mean=kl_sum / token_total if token_total else 0.0,
        clip_fraction=clipped_total / token_total if token_total else 0.0,
        degenerate_groups=degenerate,
    )


def grpo_objective(groups: Sequence[GroupLogprobs], config: GrpoConfig) -> float:
    return grpo_terms(groups, config).objective


@dataclass
class ToyGroup:
    """A sampled group on one toy instance: tokens and their old log-probabilities."""

    instance: ToyInstance
    rewards: Sequence[float]
    tokens: List[List[Token]]
    logp_old: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rewards) != len(self.tokens):
            raise InputError('One reward per trajectory is required')
        if self.logp_old and len(self.logp_old) != len(self.tokens):
            raise InputError(
                'One old log-probability vector per trajectory is required'
            )

    @classmethod
    def sampled_from(
        cls,
        instance: ToyInstance,
        rewards: Sequence[float],
        tokens: List[List[Token]],
        old: ToyPolicyParams,
    ) -> 'ToyGroup':
        logp_old = [token_logprobs(old, instance, t) for t in tokens]
        return cls(instance, rewards, tokens, logp_old)


def toy_group_logprobs(
    groups: Sequence[ToyGroup], params: ToyPolicyParams, ref: ToyPolicyParams
) -> List[GroupLogprobs]:
    result = []
    for group in groups:
        trajectories = []
        for i, tokens in enumerate(group.tokens):
            new = token_logprobs(params, group.instance, tokens)
            old = group.logp_old[i] if group.logp_old else new
            trajectories.append(
                TrajectoryLogprobs(
                    new, old, token_logprobs(ref, group.instance, tokens)
                )
            )
        result.append(GroupLogprobs(group.rewards, trajectories))
    return result


def toy_objective(
    groups: Sequence[ToyGroup],
    params: ToyPolicyParams,
    ref: ToyPolicyParams,
    config: GrpoConfig,
) -> float:
    return grpo_objective(toy_group_logprobs(groups, params, ref), config)


def _token_weight(
    logp_new: float,
    logp_old: float,
    logp_ref: float,
    advantage: float,
    config: GrpoConfig,
) -> float:
    """d(token term) / d logp_new."""
    ratio = float(np.exp(logp_new - logp_old))
    low, high = 1.0 - config.epsilon, 1.0 + config.epsilon
    clipped = min(max(ratio, low), high)
    weight = 0.0
    if ratio * advantage <= clipped * advantage or low < ratio < high:
        weight = advantage * ratio
    x = float(np.exp(logp_ref - logp_new))
    return weight + config.beta * (x - 1.0)


def grpo_gradient(
    groups: Sequence[ToyGroup],
    params: ToyPolicyParams,
    ref: ToyPolicyParams,
    config: GrpoConfig,
) -> ToyPolicyParams:
    """Exact gradient of :func:`toy_objective` w.r.t. ``params``."""
    if not groups:
        raise InputError('At least one group is required')

    grad = params.zeros_like()
    group_scale = 1.0 / len(groups)
    for group in groups:
        advantages = standardize_advantages(group.rewards).advantages
        traj_scale = group_scale / len(group.tokens)
        for i, tokens in enumerate(group.tokens):
            if not tokens:
                continue
            old = group.logp_old[i] if group.logp_old else None
            scale = traj_scale / len(tokens)
            terms = iter_token_terms(params, group.instance, tokens)
            for t, (slot, bucket, k, logp_new, grad_row) in enumerate(terms):
                logp_old = float(old[t]) if old is not None else logp_new
                logp_ref = float(slot_logprobs(ref, group.instance, slot)[tokens[t][1]])
                weight = _token_weight(
                    logp_new, logp_old, logp_ref, float(advantages[i]), config
                )
                grad.logits[slot][bucket, :k] += scale * weight * grad_row
    return grad


def touched_coordinates(groups: Sequence[ToyGroup]) -> Iterator[Tuple[str, int, int]]:
    """Every ``(slot, bucket, index)`` whose logit the groups' objective depends on."""
    seen: Dict[Tuple[str, int, int], None] = {}
    for group in groups:
        slots = {slot for tokens in group.tokens for slot, _ in tokens}
        for slot in sorted(slots):
            for j in range(group.instance.vocab_size(slot)):
                seen.setdefault((slot, group.instance.bucket, j), None)
    return iter(seen)


def finite_diff_check(
    params: ToyPolicyParams,
    groups: Sequence[ToyGroup],
    config: GrpoConfig,
    h: float = 1e-5,
    ref: Optional[ToyPolicyParams] = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if h <= 0:
        raise InputError('h must be positive')
    ref = ref if ref is not None else params

    analytic = grpo_gradient(groups, params, ref, config)
    shifted = params.copy()
    worst = 0.0
    for slot, bucket, j in touched_coordinates(groups):
        original = shifted.logits[slot][bucket, j]
        shifted.logits[slot][bucket, j] = original + h
        f_plus = toy_objective(groups, shifted, ref, config)
        shifted.logits[slot][bucket, j] = original - h
        f_minus = toy_objective(groups, shifted, ref, config)
        shifted.logits[slot][bucket, j] = original

        numeric = (f_plus - f_minus) / (2 * h)
        a = float(analytic.logits[slot][bucket, j])
        error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        if error > worst:
            logger.debug(
                'New worst coordinate %s[%d, %d]: analytic %.6g, numeric %.6g',
                slot,
                bucket,
                j,
                a,
                numeric,
            )
            worst = error
    return worst
