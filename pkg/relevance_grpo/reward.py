"""Rule-based reward: a format gate times a graded score reward.

``total = format_ok * score_reward`` where ``score_reward`` is 1 for an exact
label, ``lam`` for an off-by-one label and 0 otherwise.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

from .exceptions import InputError
from .tagparse import ParseFailure, Round1Output, Round2Output, validate_extract

logger = logging.getLogger(__name__)

LABELS = (0, 1, 2)

Round1Result = Union[Round1Output, ParseFailure, None]
Round2Result = Union[Round2Output, ParseFailure, None]


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 0.0
    require_extract_consistency: bool = False

    def __post_init__(self):
        if not 0 <= self.lam < 1:
            raise InputError(f'lambda must be in [0, 1), got {self.lam}')


@dataclass(frozen=True)
class RewardBreakdown:
    format_ok: bool
    #: None when no score could be parsed
    score_reward: Optional[float]
    total: float

    def to_dict(self):
        return {
            'format_ok': self.format_ok,
            'score_reward': self.score_reward,
            'total': self.total,
        }

    @classmethod
    def from_dict(cls, data) -> 'RewardBreakdown':
        return cls(
            format_ok=bool(data['format_ok']),
            score_reward=data.get('score_reward'),
            total=float(data['total']),
        )


def _check_label(name: str, label) -> None:
    if isinstance(label, bool) or label not in LABELS:
        raise InputError(f'{name} label must be one of 0, 1, 2; got {label!r}')


def score_reward(pred: int, gold: int, lam: float) -> float:
    _check_label('predicted', pred)
    _check_label('gold', gold)
    if not 0 <= lam < 1:
        raise InputError(f'lambda must be in [0, 1), got {lam}')

    distance = abs(pred - gold)
    if distance == 0:
        return 1.0
    if distance == 1:
        return float(lam)
    return 0.0


def is_inconsistent_extract(round2: Round2Result) -> bool:
    """A positive score whose extract is the none-sentinel."""
    return (
        isinstance(round2, Round2Output)
        and round2.score >= 1
        and round2.extract is None
    )


def format_indicator(
    round1: Round1Result,
    round2: Round2Result,
    candidate_doc: str,
    require_extract_consistency: bool = False,
    extract_checked: bool = True,
) -> bool:
    """True iff every round parsed and the extract is verbatim.

    ``round1`` is ``None`` for single-round interaction, where the only
    response is passed as ``round2``. With ``extract_checked`` false (grammars
    without an extract block) the consistency gate does not apply.
    """
    if isinstance(round1, ParseFailure) or not isinstance(round2, Round2Output):
        return False
    if not validate_extract(round2.extract, candidate_doc):
        return False
    if (
        require_extract_consistency
        and extract_checked
        and is_inconsistent_extract(round2)
    ):
        return False
    return True


def compute_reward(
    round1: Round1Result,
    round2: Round2Result,
    candidate_doc: str,
    gold: Optional[int],
    config: RewardConfig,
    extract_checked: bool = True,
) -> RewardBreakdown:
    if gold is None:
        raise InputError('gold label is required to compute a reward')
    _check_label('gold', gold)

    format_ok = format_indicator(
        round1,
        round2,
        candidate_doc,
        config.require_extract_consistency,
        extract_checked,
    )
    score = None
    if isinstance(round2, Round2Output):
        score = score_reward(round2.score, gold, config.lam)
        if extract_checked and is_inconsistent_extract(round2):
            logger.warning(
                'Score %d given without an extracted fragment', round2.score
            )
    total = score if (format_ok and score is not None) else 0.0
    return RewardBreakdown(format_ok=format_ok, score_reward=score, total=total)


def total_reward(
    trajectory, gold: Optional[int], config: RewardConfig
) -> RewardBreakdown:
    """Recompute the reward of a trajectory from its stored raw outputs."""
    round1, round2 = trajectory.reparse()
    return compute_reward(
        round1,
        round2,
        trajectory.candidate,
        gold,
        config,
        extract_checked=trajectory.variant.extract_checked,
    )
