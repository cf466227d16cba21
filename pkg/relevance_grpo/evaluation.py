"""Relevance metrics: per-class F1, one-vs-rest AUC, GSB delta and re-query rate."""
import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .exceptions import DataError, InputError, UndefinedMetricError
from .jsonl import read_jsonl
from .policy.toy import SCORE, ToyInstance, ToyPolicyParams, slot_logprobs

logger = logging.getLogger(__name__)

LABELS = (0, 1, 2)
PROBABILITY_SUM_TOLERANCE = 1e-6
BRUTEFORCE_LIMIT = 10_000
DEFAULT_REQUERY_WINDOW = 60.0


class AucSplit(str, enum.Enum):
    #: gold 0 against gold 1 or 2, ranked by P(1) + P(2)
    ZERO_VS_REST = 'zero_vs_rest'
    #: gold 2 against gold 0 or 1, ranked by P(2)
    TWOPLUS_VS_REST = 'twoplus_vs_rest'


@dataclass(frozen=True)
class ScoredPrediction:
    pair_id: str
    gold: int
    pred: int
    class_scores: Optional[Tuple[float, float, float]] = None
    #: False when class_scores are logits
    scores_are_probabilities: bool = True

    def __post_init__(self):
        for name, label in (('gold', self.gold), ('pred', self.pred)):
            if isinstance(label, bool) or label not in LABELS:
                raise InputError(
                    f'{self.pair_id}: {name} must be 0, 1 or 2, got {label!r}'
                )
        if self.class_scores is not None:
            scores = tuple(float(s) for s in self.class_scores)
            if len(scores) != 3:
                raise InputError(f'{self.pair_id}: class_scores needs 3 values')
            off_by = abs(sum(scores) - 1)
            if self.scores_are_probabilities and off_by > PROBABILITY_SUM_TOLERANCE:
                raise InputError(
                    f'{self.pair_id}: class probabilities sum to {sum(scores)}'
                )
            object.__setattr__(self, 'class_scores', scores)

    @property
    def probabilities(self) -> Optional[np.ndarray]:
        if self.class_scores is None:
            return None
        scores = np.asarray(self.class_scores)
        return scores if self.scores_are_probabilities else softmax(scores)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScoredPrediction':
        try:
            scores = data.get('class_scores')
            return cls(
                pair_id=str(data['pair_id']),
                gold=data['gold'],
                pred=data['pred'],
                class_scores=tuple(scores) if scores is not None else None,
                scores_are_probabilities=data.get('scores_are_probabilities', True),
            )
        except KeyError as e:
            raise InputError(f'Prediction record is missing {e}') from e


def read_predictions(path) -> List[ScoredPrediction]:
    return [ScoredPrediction.from_dict(record) for record in read_jsonl(path)]


def toy_class_scores(
    params: ToyPolicyParams, instance: ToyInstance
) -> Tuple[float, float, float]:
    """The toy policy's score-slot distribution as class probabilities."""
    probs = np.exp(slot_logprobs(params, instance, SCORE))
    return tuple(float(p) for p in probs / probs.sum())  # type: ignore


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold labels, columns predicted labels."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, preds: Sequence[ScoredPrediction]) -> 'ConfusionMatrix':
        return cls(
            confusion_matrix(
                [p.gold for p in preds], [p.pred for p in preds], labels=list(LABELS)
            )
        )

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def to_list(self) -> List[List[int]]:
        return self.counts.astype(int).tolist()


@dataclass
class MetricReport:
    confusion: ConfusionMatrix
    f1: Tuple[float, float, float]
    macro_f1: float
    accuracy: float
    auc_zero_vs_rest: Optional[float] = None
    auc_twoplus_vs_rest: Optional[float] = None
    #: 'probabilities' or 'labels'
    auc_score_source: str = 'labels'
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'confusion_matrix': self.confusion.to_list(),
            'f1': list(self.f1),
            'macro_f1': self.macro_f1,
            'accuracy': self.accuracy,
            'auc_0_12': self.auc_zero_vs_rest,
            'auc_01_2': self.auc_twoplus_vs_rest,
            'auc_score_source': self.auc_score_source,
            'flags': self.flags,
        }


def classification_report(preds: Sequence[ScoredPrediction]) -> MetricReport:
    if not preds:
        raise UndefinedMetricError('No predictions to evaluate')

    confusion = ConfusionMatrix.from_predictions(preds)
    golds = [p.gold for p in preds]
    predicted = [p.pred for p in preds]
    precision, recall, per_class, _ = precision_recall_fscore_support(
        golds, predicted, labels=list(LABELS), average=None, zero_division=0
    )

    flags = []
    for label in LABELS:
        if precision[label] + recall[label] == 0:
            flags.append(f'F1({label}) has precision + recall = 0, reported as 0')
            logger.warning(flags[-1])

    report = MetricReport(
        confusion=confusion,
        f1=tuple(float(v) for v in per_class),  # type: ignore
        macro_f1=float(np.mean(per_class)),
        accuracy=confusion.accuracy,
        auc_score_source=score_source(preds),
        flags=flags,
    )
    for split in AucSplit:
        try:
            value = auc_one_vs_rest(preds, split)
        except UndefinedMetricError as e:
            report.flags.append(f'AUC {split.value} undefined: {e}')
            continue
        if split is AucSplit.ZERO_VS_REST:
            report.auc_zero_vs_rest = value
        else:
            report.auc_twoplus_vs_rest = value
    return report


def score_source(preds: Sequence[ScoredPrediction]) -> str:
    """Class probabilities if every prediction has them, else the labels themselves."""
    if all(p.class_scores is not None for p in preds):
        return 'probabilities'
    return 'labels'


def positive_scores(
    preds: Sequence[ScoredPrediction], split: AucSplit
) -> Tuple[np.ndarray, np.ndarray]:
    """``(is_positive, ranking_score)`` for one side of a one-vs-rest split."""
    split = AucSplit(split)
    use_probs = score_source(preds) == 'probabilities'
    positive = np.asarray(
        [p.gold >= 1 if split is AucSplit.ZERO_VS_REST else p.gold == 2 for p in preds]
    )

    scores = []
    for p in preds:
        if use_probs:
            probs = p.probabilities
            assert probs is not None
            if split is AucSplit.ZERO_VS_REST:
                scores.append(probs[1] + probs[2])
            else:
                scores.append(probs[2])
        else:
            scores.append(float(p.pred))
    return positive, np.asarray(scores, dtype=float)


def _split_sides(preds, split) -> Tuple[np.ndarray, np.ndarray]:
    positive, scores = positive_scores(preds, split)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f'{AucSplit(split).value}: {n_pos} positives and {n_neg} negatives'
        )
    return positive, scores


def auc_one_vs_rest(preds: Sequence[ScoredPrediction], split: AucSplit) -> float:
    """Mann-Whitney ``U / (n_pos * n_neg)`` with average ranks for ties."""
    positive, scores = _split_sides(preds, split)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    ranks = rankdata(scores, method='average')
    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_bruteforce(preds: Sequence[ScoredPrediction], split: AucSplit) -> float:
    if len(preds) > BRUTEFORCE_LIMIT:
        raise InputError(
            f'Brute-force AUC is limited to {BRUTEFORCE_LIMIT} predictions'
        )
    positive, scores = _split_sides(preds, split)
    pos = scores[positive][:, None]
    neg = scores[~positive][None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins) / (pos.size * neg.size)


@dataclass(frozen=True)
class GsbCounts:
    good: int
    same: int
    bad: int

    def __post_init__(self):
        if min(self.good, self.same, self.bad) < 0:
            raise InputError('GSB counts must be non-negative')

    @property
    def total(self) -> int:
        return self.good + self.same + self.bad


def gsb_delta(counts: GsbCounts) -> float:
    """``(good - bad) / total`` as a signed percentage."""
    if counts.total == 0:
        raise UndefinedMetricError('GSB delta of an empty comparison')
    return 100.0 * (counts.good - counts.bad) / counts.total


@dataclass(frozen=True)
class SessionLog:
    session_id: str
    #: (timestamp in seconds, query)
    events: Tuple[Tuple[float, str], ...]

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(tuple(e) for e in self.events))
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise InputError(f'Session {self.session_id}: timestamps decrease')


def read_sessions(path) -> List[SessionLog]:
    """JSONL of ``{session_id, events: [[timestamp, query], ...]}``."""
    sessions = []
    for record in read_jsonl(path):
        try:
            session = SessionLog(str(record['session_id']), tuple(record['events']))
            sessions.append(session)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f'{path}: malformed session record: {e!r}') from e
    return sessions


def requery_rate(
    sessions: Iterable[SessionLog], window_seconds: float = DEFAULT_REQUERY_WINDOW
) -> float:
    """Share of queries followed by another query of the same session in the window."""
    if window_seconds <= 0:
        raise InputError('window_seconds must be positive')
    followed = 0
    total = 0
    for session in sessions:
        times = [t for t, _ in session.events]
        total += len(times)
        followed += sum(1 for a, b in zip(times, times[1:]) if b - a <= window_seconds)
    if total == 0:
        raise UndefinedMetricError('No queries in the session log')
    return followed / total


@dataclass(frozen=True)
class RequeryChange:
    before: float
    after: float

    @property
    def absolute_points(self) -> float:
        """Change in percentage points."""
        return 100.0 * (self.after - self.before)

    @property
    def relative_percent(self) -> float:
        if self.before == 0:
            raise UndefinedMetricError('Relative change from a zero re-query rate')
        return 100.0 * (self.after - self.before) / self.before


def requery_change(before: float, after: float) -> RequeryChange:
    for rate in (before, after):
        if not 0 <= rate <= 1:
            raise InputError(f'Re-query rates must be within [0, 1], got {rate}')
    return RequeryChange(before, after)


TABLE_COLUMNS = ('F1-0', 'F1-1', 'F1-2', 'AUC 0/12', 'AUC 01/2', 'Accuracy')


def render_table(reports: Dict[str, MetricReport]) -> str:
    """Aligned plain-text table, values in percent."""

    def cell(value: Optional[float]) -> str:
        return '-' if value is None else f'{100 * value:.1f}'

    rows = [
        [name]
        + [cell(v) for v in r.f1]
        + [cell(r.auc_zero_vs_rest), cell(r.auc_twoplus_vs_rest), cell(r.accuracy)]
        for name, r in reports.items()
    ]
    header = ['Model', *TABLE_COLUMNS]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = []
    for row in [header, *rows]:
        first = row[0].ljust(widths[0])
        rest = [value.rjust(width) for value, width in zip(row[1:], widths[1:])]
        lines.append('  '.join([first, *rest]))
    lines.insert(1, '  '.join('-' * w for w in widths))
    return '\n'.join(lines)
